#include "plural/kernels.hpp"

#include <algorithm>
#include <vector>

namespace plural::kernels {
namespace {

void gemm_scalar(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
                 float* c, std::size_t ldc) {
    std::vector<float> row(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0f);
        for (std::size_t p = 0; p < k; ++p) {
            const float av = ta ? a[p * lda + i] : a[i * lda + p];
            if (av == 0.0f) continue;
            if (tb) {
                for (std::size_t j = 0; j < n; ++j) row[j] += av * b[j * ldb + p];
            } else {
                const float* brow = b + p * ldb;
                for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
            }
        }
        float* crow = c + i * ldc;
        if (beta == 0.0f) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = alpha * row[j];
        } else {
            for (std::size_t j = 0; j < n; ++j) crow[j] = alpha * row[j] + beta * crow[j];
        }
    }
}

float dot_scalar(const float* x, const float* y, std::size_t n) {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_scalar(std::size_t n, float alpha, const float* x, float* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

float sqdist_scalar(const float* x, const float* y, std::size_t n) {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        const float d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{"scalar", gemm_scalar, dot_scalar, axpy_scalar, sqdist_scalar};
    return table;
}

}  // namespace plural::kernels
