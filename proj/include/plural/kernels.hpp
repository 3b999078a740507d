#pragma once

// Dense float32 inner-loop kernels. Every entry has a portable scalar
// reference and, where the CPU supports it, an AVX2+FMA variant. The active
// table is picked once at startup; PLURAL_KERNELS=scalar|avx2 overrides it.

#include <cstddef>
#include <string_view>

namespace plural::kernels {

// Row-major C[M,N] = alpha * op(A)[M,K] * op(B)[K,N] + beta * C.
// op(A) is A^T when trans_a is set (A then stored K x M with leading dim lda).
using GemmFn = void (*)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                        float alpha, const float* a, std::size_t lda, const float* b,
                        std::size_t ldb, float beta, float* c, std::size_t ldc);
using DotFn = float (*)(const float* x, const float* y, std::size_t n);
// y += alpha * x
using AxpyFn = void (*)(std::size_t n, float alpha, const float* x, float* y);
// sum_i (x_i - y_i)^2
using SqDistFn = float (*)(const float* x, const float* y, std::size_t n);

struct KernelTable {
    std::string_view name;
    GemmFn gemm;
    DotFn dot;
    AxpyFn axpy;
    SqDistFn sqdist;
};

const KernelTable& scalar_table();

// nullptr when the build or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

const KernelTable& active();

// Test hook; pass nullptr to restore automatic selection.
void force(const KernelTable* table);

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float beta, float* c, std::size_t ldc) {
    active().gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline float dot(const float* x, const float* y, std::size_t n) { return active().dot(x, y, n); }
inline void axpy(std::size_t n, float alpha, const float* x, float* y) {
    active().axpy(n, alpha, x, y);
}
inline float sqdist(const float* x, const float* y, std::size_t n) {
    return active().sqdist(x, y, n);
}

}  // namespace plural::kernels
