#include "doctest.h"
#include "plural/kernels.hpp"
#include "support/oracles.hpp"

#include <cmath>

using namespace plural;

namespace {

std::vector<const kernels::KernelTable*> variants() {
    std::vector<const kernels::KernelTable*> v{&kernels::scalar_table()};
    if (auto* fast = kernels::avx2_table()) v.push_back(fast);
    return v;
}

float elem(const std::vector<float>& m, bool trans, std::size_t rows, std::size_t cols,
           std::size_t i, std::size_t j) {
    // Logical (i,j) of op(M) where op(M) is rows x cols.
    return trans ? m[j * rows + i] : m[i * cols + j];
}

}  // namespace

TEST_CASE("gemm variants match a double-precision triple loop for all transpose modes") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> ext(1, 70);
    for (const auto* table : variants()) {
        CAPTURE(table->name);
        for (int trial = 0; trial < 120; ++trial) {
            const std::size_t m = ext(rng), n = ext(rng), k = ext(rng) + (trial % 7 == 0 ? 300 : 0);
            const bool ta = trial & 1, tb = trial & 2;
            const float alpha = trial % 5 == 0 ? 0.5f : 1.0f;
            const float beta = trial % 3 == 0 ? 0.0f : (trial % 3 == 1 ? 1.0f : -0.25f);
            auto a = test::random_values(m * k, rng);
            auto b = test::random_values(k * n, rng);
            auto c = test::random_values(m * n, rng);
            if (beta == 0.0f) std::fill(c.begin(), c.end(), std::nanf(""));  // must not be read
            std::vector<float> expect(m * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < k; ++p)
                        s += static_cast<double>(elem(a, ta, m, k, i, p)) * elem(b, tb, k, n, p, j);
                    expect[i * n + j] = static_cast<float>(alpha * s + (beta == 0.0f ? 0.0 : beta * c[i * n + j]));
                }
            table->gemm(ta, tb, m, n, k, alpha, a.data(), ta ? m : k, b.data(), tb ? k : n, beta,
                        c.data(), n);
            const float tol = 1e-5f * std::sqrt(static_cast<float>(k)) * 4.0f;
            REQUIRE(test::max_abs_diff(c, expect) < tol);
        }
    }
}

TEST_CASE("gemm respects leading dimensions larger than the logical extent") {
    for (const auto* table : variants()) {
        // 2x2 blocks embedded in 3-wide rows.
        std::vector<float> a{1, 2, 99, 3, 4, 99};
        std::vector<float> b{5, 6, 99, 7, 8, 99};
        std::vector<float> c(6, 0.0f);
        table->gemm(false, false, 2, 2, 2, 1.0f, a.data(), 3, b.data(), 3, 0.0f, c.data(), 3);
        CHECK(c[0] == 19.0f);
        CHECK(c[1] == 22.0f);
        CHECK(c[3] == 43.0f);
        CHECK(c[4] == 50.0f);
        CHECK(c[2] == 0.0f);
    }
}

TEST_CASE("vector kernels agree across variants") {
    std::mt19937_64 rng(11);
    const auto& ref = kernels::scalar_table();
    for (const auto* table : variants()) {
        for (std::size_t n : {1u, 7u, 8u, 15u, 16u, 33u, 257u}) {
            auto x = test::random_values(n, rng);
            auto y = test::random_values(n, rng);
            const float tol = 1e-5f * static_cast<float>(n);
            CHECK(std::fabs(table->dot(x.data(), y.data(), n) - ref.dot(x.data(), y.data(), n)) < tol);
            CHECK(std::fabs(table->sqdist(x.data(), y.data(), n) - ref.sqdist(x.data(), y.data(), n)) < tol);
            auto y1 = y, y2 = y;
            table->axpy(n, 0.3f, x.data(), y1.data());
            ref.axpy(n, 0.3f, x.data(), y2.data());
            CHECK(test::max_abs_diff(y1, y2) < 1e-6f);
        }
    }
}

TEST_CASE("runtime selection honours the force hook") {
    kernels::force(&kernels::scalar_table());
    CHECK(kernels::active().name == "scalar");
    kernels::force(nullptr);
    if (kernels::avx2_table() && !std::getenv("PLURAL_KERNELS")) CHECK(kernels::active().name == "avx2");
}
