#include "doctest.h"
#include "plural/errors.hpp"
#include "plural/kernels.hpp"
#include "plural/nn.hpp"
#include "plural/ops.hpp"
#include "support/oracles.hpp"

#include <cmath>

using namespace plural;

TEST_CASE("conv2d: ones under full overlap sum to nine") {
    const Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    const Tensor b = Tensor::zeros({1});
    const Tensor y = ops::conv2d(x, w, b, 1, 1);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.at({0, 0, 1, 1}) == 9.0f);
    CHECK(y.at({0, 0, 0, 0}) == 4.0f);
}

TEST_CASE("conv2d: zero weights leave only the bias") {
    std::mt19937_64 rng(1);
    const Tensor x = test::random_tensor({2, 3, 5, 4}, rng);
    const Tensor w = Tensor::zeros({2, 3, 3, 3});
    const Tensor b = Tensor::from({2}, {0.75f, 0.75f});
    const Tensor y = ops::conv2d(x, w, b, 1, 1);
    for (float v : y.data()) CHECK(v == 0.75f);
}

TEST_CASE("conv2d matches the six-loop oracle on randomized shapes") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> ext(1, 6);
    for (int trial = 0; trial < 120; ++trial) {
        const int n = ext(rng) % 3 + 1, c = ext(rng), co = ext(rng);
        const int k = trial % 3 == 0 ? 1 : 3;
        const int h = ext(rng) + k, w = ext(rng) + k;
        const int stride = trial % 4 == 0 ? 2 : 1;
        const int pad = trial % 2 ? (k - 1) / 2 : 0;
        const Tensor x = test::random_tensor({n, c, h, w}, rng);
        const Tensor wt = test::random_tensor({co, c, k, k}, rng);
        const Tensor b = test::random_tensor({co}, rng);
        int ho = 0, wo = 0;
        const auto expect = test::naive_conv2d({x.data().begin(), x.data().end()}, n, c, h, w,
                                               {wt.data().begin(), wt.data().end()}, co, k, k,
                                               {b.data().begin(), b.data().end()}, stride, pad, ho, wo);
        const Tensor y = ops::conv2d(x, wt, b, stride, pad);
        REQUIRE(y.shape() == Shape{n, co, ho, wo});
        REQUIRE(test::max_abs_diff(y.data(), expect) < 1e-5f);
    }
}

TEST_CASE("conv2d names the offending axis on channel mismatch") {
    const Tensor x = Tensor::zeros({1, 2, 4, 4});
    const Tensor w = Tensor::zeros({1, 3, 3, 3});
    try {
        ops::conv2d(x, w, Tensor{}, 1, 1);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
    }
}

TEST_CASE("matmul examples and oracle") {
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor m = Tensor::from({2, 2}, {3, -1, 2, 5});
    CHECK(test::max_abs_diff(ops::matmul(eye, m).data(), m.data()) == 0.0f);

    const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const Tensor b = Tensor::from({2, 1}, {5, 6});
    const Tensor c = ops::matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.data()[0] == 17.0f);
    CHECK(c.data()[1] == 39.0f);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<int> ext(1, 9);
        const int mm = trial == 0 ? 4 : ext(rng), kk = trial == 0 ? 7 : ext(rng), nn = trial == 0 ? 3 : ext(rng);
        const Tensor x = test::random_tensor({mm, kk}, rng);
        const Tensor y = test::random_tensor({kk, nn}, rng);
        const auto expect = test::naive_matmul({x.data().begin(), x.data().end()},
                                               {y.data().begin(), y.data().end()}, mm, kk, nn);
        REQUIRE(test::max_abs_diff(ops::matmul(x, y).data(), expect) < 1e-5f);
    }
    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("softmax examples") {
    const Tensor z = Tensor::from({2}, {2.0f, 0.0f});
    const Tensor p = ops::softmax(z, 1.0f);
    const double e2 = std::exp(2.0);
    CHECK(p.data()[0] == doctest::Approx(e2 / (e2 + 1.0)).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(1.0 / (e2 + 1.0)).epsilon(1e-6));
    CHECK(p.data()[0] == doctest::Approx(0.8808).epsilon(1e-4));

    // Divide convention: t = 0.1 sharpens to exp(20)/(exp(20)+1).
    const Tensor sharp = ops::softmax(z, 0.1f);
    CHECK(sharp.data()[0] > 0.999f);
    CHECK(sharp.data()[0] == doctest::Approx(std::exp(20.0) / (std::exp(20.0) + 1.0)));

    for (float t : {0.05f, 1.0f, 7.0f}) {
        const Tensor u = ops::softmax(Tensor::full({5}, 3.0f), t);
        for (float v : u.data()) CHECK(v == doctest::Approx(0.2f));
    }
    CHECK_THROWS(ops::softmax(z, 0.0f));
    CHECK_THROWS(ops::softmax(z, -1.0f));
}

TEST_CASE("softmax rows sum to one and ignore constant shifts") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor z = test::random_tensor({3, 9}, rng, -8.0f, 8.0f);
        const Tensor p = ops::softmax(z, 0.7f);
        const Tensor q = ops::softmax(ops::add_scalar(z, 5.5f), 0.7f);
        for (int r = 0; r < 3; ++r) {
            double s = 0.0;
            for (int j = 0; j < 9; ++j) {
                s += p.data()[r * 9 + j];
                CHECK(p.data()[r * 9 + j] >= 0.0f);
            }
            CHECK(std::fabs(s - 1.0) < 1e-6);
        }
        CHECK(test::max_abs_diff(p.data(), q.data()) < 1e-6f);
    }
}

TEST_CASE("layer_norm examples") {
    const float eps = 1e-5f;
    const Tensor flat = ops::layer_norm(Tensor::full({2, 4}, 3.0f), -1, eps);
    for (float v : flat.data()) CHECK(v == 0.0f);
    const Tensor y = ops::layer_norm(Tensor::from({2}, {1.0f, 3.0f}), -1, eps);
    const float s = 1.0f / std::sqrt(1.0f + eps);
    CHECK(y.data()[0] == doctest::Approx(-s).epsilon(1e-6));
    CHECK(y.data()[1] == doctest::Approx(s).epsilon(1e-6));

    std::mt19937_64 rng(5);
    const Tensor x = test::random_tensor({2, 6, 3, 3}, rng, -4.0f, 4.0f);
    const Tensor n = ops::layer_norm(x, 1, eps);
    for (int b = 0; b < 2; ++b)
        for (int p = 0; p < 9; ++p) {
            double m = 0.0, v = 0.0;
            for (int c = 0; c < 6; ++c) m += n.data()[(b * 6 + c) * 9 + p];
            m /= 6.0;
            for (int c = 0; c < 6; ++c) v += std::pow(n.data()[(b * 6 + c) * 9 + p] - m, 2);
            CHECK(std::fabs(m) < 1e-5);
            CHECK(v / 6.0 == doctest::Approx(1.0).epsilon(1e-3));
        }
}

TEST_CASE("attention examples and loop oracle") {
    std::mt19937_64 rng(6);
    {
        const Tensor q = test::random_tensor({1, 2, 1, 4}, rng);
        const Tensor k = test::random_tensor({1, 2, 1, 4}, rng);
        const Tensor v = test::random_tensor({1, 2, 1, 4}, rng);
        CHECK(test::max_abs_diff(ops::attention(q, k, v).data(), v.data()) < 1e-7f);
    }
    {
        // Zero queries: all scores equal, output is the mean of the value rows.
        const Tensor q = Tensor::zeros({1, 1, 4, 3});
        const Tensor k = test::random_tensor({1, 1, 4, 3}, rng);
        const Tensor v = test::random_tensor({1, 1, 4, 3}, rng);
        const Tensor o = ops::attention(q, k, v);
        for (int t = 0; t < 3; ++t) {
            double m = 0.0;
            for (int j = 0; j < 4; ++j) m += v.data()[j * 3 + t];
            for (int i = 0; i < 4; ++i) CHECK(o.data()[i * 3 + t] == doctest::Approx(m / 4.0).epsilon(1e-5));
        }
    }
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<int> ext(1, 6);
        const int n = ext(rng) % 2 + 1, h = ext(rng) % 3 + 1, l = ext(rng), d = ext(rng);
        const Tensor q = test::random_tensor({n, h, l, d}, rng);
        const Tensor k = test::random_tensor({n, h, l, d}, rng);
        const Tensor v = test::random_tensor({n, h, l, d}, rng);
        const auto expect = test::naive_attention({q.data().begin(), q.data().end()},
                                                  {k.data().begin(), k.data().end()},
                                                  {v.data().begin(), v.data().end()}, n, h, l, d);
        REQUIRE(test::max_abs_diff(ops::attention(q, k, v).data(), expect) < 1e-5f);
    }
    CHECK_THROWS_AS(ops::attention(Tensor::zeros({1, 1, 2, 3}), Tensor::zeros({1, 1, 3, 3}),
                                   Tensor::zeros({1, 1, 3, 3})),
                    ShapeError);
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::from({1}, {3.0f}, true);
    ops::square(x).backward();
    CHECK(x.grad()[0] == 6.0f);
    // Repeated backward without reset accumulates.
    ops::square(x).backward();
    CHECK(x.grad()[0] == 12.0f);

    Tensor d = x.detach();
    CHECK_FALSE(d.requires_grad());
    Tensor y = Tensor::from({1}, {2.0f}, true);
    ops::mul(d, y).backward();
    CHECK_FALSE(d.has_grad());
    CHECK(y.grad()[0] == 3.0f);

    CHECK_THROWS_AS(ops::mul_scalar(Tensor::zeros({2}, true), 2.0f).backward(), ShapeError);
}

TEST_CASE("backward frees intermediate graph but keeps leaf grads") {
    Tensor w = Tensor::from({2}, {1.0f, -2.0f}, true);
    Tensor h = ops::mul_scalar(w, 3.0f);
    Tensor loss = ops::sum(ops::square(h));
    loss.backward();
    CHECK(h.is_leaf());  // node released
    CHECK_FALSE(h.has_grad());
    CHECK(w.grad()[0] == doctest::Approx(18.0f));
    CHECK(w.grad()[1] == doctest::Approx(-36.0f));
}

TEST_CASE("no-grad guard suppresses graph construction") {
    Tensor w = Tensor::from({2}, {1.0f, 2.0f}, true);
    NoGradGuard guard;
    const Tensor y = ops::mul(w, w);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.is_leaf());
}

TEST_CASE("broadcasting follows numpy rules") {
    const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b = Tensor::from({3}, {10, 20, 30});
    const Tensor c = ops::add(a, b);
    CHECK(c.at({1, 2}) == 36.0f);
    const Tensor col = Tensor::from({2, 1}, {2, 3});
    CHECK(ops::mul(a, col).at({1, 0}) == 12.0f);
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({2})), ShapeError);
}

TEST_CASE("adam examples") {
    {
        Tensor x = Tensor::from({1}, {1.0f}, true);
        nn::Adam opt({{"x", x}}, {.lr = 0.1f});
        ops::square(x).backward();
        opt.step();
        CHECK(std::fabs(x.data()[0]) < 1.0f);
    }
    {
        Tensor x = Tensor::from({2}, {0.5f, -0.5f}, true);
        nn::Adam opt({{"x", x}}, {.lr = 0.1f});
        x.mutable_grad();  // populated, all zeros
        opt.step();
        CHECK(x.data()[0] == 0.5f);
        CHECK(x.data()[1] == -0.5f);
    }
    {
        Tensor x = Tensor::from({2}, {1.5f, -2.0f}, true);
        const Tensor scale = Tensor::from({2}, {1.0f, 4.0f});
        nn::Adam opt({{"x", x}}, {.lr = 0.05f});
        float loss = 0.0f;
        for (int i = 0; i < 200; ++i) {
            opt.zero_grad();
            Tensor l = ops::sum(ops::mul(scale, ops::square(x)));
            loss = l.item();
            l.backward();
            opt.step();
        }
        NoGradGuard ng;
        loss = ops::sum(ops::mul(scale, ops::square(x))).item();
        CHECK(loss < 1e-3f);
    }
    {
        // Missing grad: skipped, untouched.
        Tensor x = Tensor::from({1}, {2.0f}, true);
        nn::Adam opt({{"x", x}}, {.lr = 0.1f});
        opt.step();
        CHECK(x.data()[0] == 2.0f);
    }
}

TEST_CASE("identical inputs give bit-identical outputs") {
    auto run = [] {
        std::mt19937_64 rng(99);
        const Tensor x = test::random_tensor({2, 4, 9, 9}, rng);
        nn::Conv2d conv(4, 5, 3, 1, rng);
        const Tensor y = ops::softmax(ops::reshape(conv.forward(x), {2 * 5 * 81 / 9, 9}), 0.5f);
        return std::vector<float>(y.data().begin(), y.data().end());
    };
    CHECK(run() == run());
}
