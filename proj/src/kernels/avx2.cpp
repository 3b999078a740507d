// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the runtime CPU check in dispatch.cpp.

#include "plural/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace plural::kernels {
namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;
constexpr std::size_t kMc = 96;
constexpr std::size_t kKc = 256;
constexpr std::size_t kNc = 2048;

void pack_a(bool ta, const float* a, std::size_t lda, std::size_t i0, std::size_t mc,
            std::size_t p0, std::size_t kc, float* dst) {
    for (std::size_t ip = 0; ip < mc; ip += kMr) {
        const std::size_t rows = std::min(kMr, mc - ip);
        for (std::size_t p = 0; p < kc; ++p) {
            for (std::size_t r = 0; r < kMr; ++r) {
                float v = 0.0f;
                if (r < rows) {
                    const std::size_t i = i0 + ip + r;
                    const std::size_t pp = p0 + p;
                    v = ta ? a[pp * lda + i] : a[i * lda + pp];
                }
                *dst++ = v;
            }
        }
    }
}

void pack_b(bool tb, const float* b, std::size_t ldb, std::size_t p0, std::size_t kc,
            std::size_t j0, std::size_t nc, float* dst) {
    for (std::size_t jp = 0; jp < nc; jp += kNr) {
        const std::size_t cols = std::min(kNr, nc - jp);
        for (std::size_t p = 0; p < kc; ++p) {
            const std::size_t pp = p0 + p;
            if (!tb && cols == kNr) {
                std::memcpy(dst, b + pp * ldb + j0 + jp, kNr * sizeof(float));
                dst += kNr;
                continue;
            }
            for (std::size_t c = 0; c < kNr; ++c) {
                float v = 0.0f;
                if (c < cols) {
                    const std::size_t j = j0 + jp + c;
                    v = tb ? b[j * ldb + pp] : b[pp * ldb + j];
                }
                *dst++ = v;
            }
        }
    }
}

// 6x16 register tile: 12 accumulators, one broadcast per row per k.
void micro_kernel(std::size_t kc, const float* ap, const float* bp, float* c, std::size_t ldc,
                  std::size_t rows, std::size_t cols, float alpha, float beta) {
    __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
    __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
    __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
    __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
    __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
    __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
    for (std::size_t p = 0; p < kc; ++p) {
        const __m256 b0 = _mm256_loadu_ps(bp);
        const __m256 b1 = _mm256_loadu_ps(bp + 8);
        __m256 a = _mm256_broadcast_ss(ap + 0);
        c00 = _mm256_fmadd_ps(a, b0, c00);
        c01 = _mm256_fmadd_ps(a, b1, c01);
        a = _mm256_broadcast_ss(ap + 1);
        c10 = _mm256_fmadd_ps(a, b0, c10);
        c11 = _mm256_fmadd_ps(a, b1, c11);
        a = _mm256_broadcast_ss(ap + 2);
        c20 = _mm256_fmadd_ps(a, b0, c20);
        c21 = _mm256_fmadd_ps(a, b1, c21);
        a = _mm256_broadcast_ss(ap + 3);
        c30 = _mm256_fmadd_ps(a, b0, c30);
        c31 = _mm256_fmadd_ps(a, b1, c31);
        a = _mm256_broadcast_ss(ap + 4);
        c40 = _mm256_fmadd_ps(a, b0, c40);
        c41 = _mm256_fmadd_ps(a, b1, c41);
        a = _mm256_broadcast_ss(ap + 5);
        c50 = _mm256_fmadd_ps(a, b0, c50);
        c51 = _mm256_fmadd_ps(a, b1, c51);
        ap += kMr;
        bp += kNr;
    }
    alignas(32) float tile[kMr * kNr];
    _mm256_store_ps(tile + 0, c00);
    _mm256_store_ps(tile + 8, c01);
    _mm256_store_ps(tile + 16, c10);
    _mm256_store_ps(tile + 24, c11);
    _mm256_store_ps(tile + 32, c20);
    _mm256_store_ps(tile + 40, c21);
    _mm256_store_ps(tile + 48, c30);
    _mm256_store_ps(tile + 56, c31);
    _mm256_store_ps(tile + 64, c40);
    _mm256_store_ps(tile + 72, c41);
    _mm256_store_ps(tile + 80, c50);
    _mm256_store_ps(tile + 88, c51);

    if (cols == kNr) {
        const __m256 va = _mm256_set1_ps(alpha);
        const __m256 vb = _mm256_set1_ps(beta);
        for (std::size_t r = 0; r < rows; ++r) {
            float* crow = c + r * ldc;
            __m256 t0 = _mm256_mul_ps(va, _mm256_load_ps(tile + r * kNr));
            __m256 t1 = _mm256_mul_ps(va, _mm256_load_ps(tile + r * kNr + 8));
            if (beta != 0.0f) {
                t0 = _mm256_fmadd_ps(vb, _mm256_loadu_ps(crow), t0);
                t1 = _mm256_fmadd_ps(vb, _mm256_loadu_ps(crow + 8), t1);
            }
            _mm256_storeu_ps(crow, t0);
            _mm256_storeu_ps(crow + 8, t1);
        }
        return;
    }
    for (std::size_t r = 0; r < rows; ++r) {
        float* crow = c + r * ldc;
        for (std::size_t j = 0; j < cols; ++j) {
            const float v = alpha * tile[r * kNr + j];
            crow[j] = beta == 0.0f ? v : std::fma(beta, crow[j], v);
        }
    }
}

void gemm_avx2(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
               const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
               float* c, std::size_t ldc) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                c[i * ldc + j] = beta == 0.0f ? 0.0f : beta * c[i * ldc + j];
        return;
    }
    thread_local std::vector<float> abuf;
    thread_local std::vector<float> bbuf;
    abuf.resize(kMc * kKc);
    bbuf.resize(kKc * kNc);

    for (std::size_t j0 = 0; j0 < n; j0 += kNc) {
        const std::size_t nc = std::min(kNc, n - j0);
        for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
            const std::size_t kc = std::min(kKc, k - p0);
            const float beta_eff = p0 == 0 ? beta : 1.0f;
            pack_b(tb, b, ldb, p0, kc, j0, nc, bbuf.data());
            for (std::size_t i0 = 0; i0 < m; i0 += kMc) {
                const std::size_t mc = std::min(kMc, m - i0);
                pack_a(ta, a, lda, i0, mc, p0, kc, abuf.data());
                for (std::size_t jp = 0; jp < nc; jp += kNr) {
                    const std::size_t cols = std::min(kNr, nc - jp);
                    const float* bp = bbuf.data() + (jp / kNr) * kc * kNr;
                    for (std::size_t ip = 0; ip < mc; ip += kMr) {
                        const std::size_t rows = std::min(kMr, mc - ip);
                        const float* ap = abuf.data() + (ip / kMr) * kc * kMr;
                        micro_kernel(kc, ap, bp, c + (i0 + ip) * ldc + j0 + jp, ldc, rows, cols,
                                     alpha, beta_eff);
                    }
                }
            }
        }
    }
}

float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

float dot_avx2(const float* x, const float* y, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    float s = hsum(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_avx2(std::size_t n, float alpha, const float* x, float* y) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

float sqdist_avx2(const float* x, const float* y, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i));
        acc = _mm256_fmadd_ps(d, d, acc);
    }
    float s = hsum(acc);
    for (; i < n; ++i) {
        const float d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

}  // namespace

namespace detail {
const KernelTable& avx2_table_unchecked() {
    static const KernelTable table{"avx2", gemm_avx2, dot_avx2, axpy_avx2, sqdist_avx2};
    return table;
}
}  // namespace detail

}  // namespace plural::kernels
