#pragma once

// Finite-difference sweep over every differentiable operation. Shared by the
// unit tests and the acceptance binary.

#include "plural/mask.hpp"
#include "plural/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include <string>
#include <vector>

namespace plural::test {

struct GradCase {
    std::string name;
    std::function<Tensor(const std::vector<Tensor>&)> fn;
    std::function<std::vector<Tensor>(std::mt19937_64&)> make_inputs;
};

// Values bounded away from zero so kinks (relu, abs) are never straddled by the
// finite-difference step.
inline Tensor away_from_zero(const Shape& s, std::mt19937_64& rng) {
    Tensor t = random_tensor(s, rng, 0.1f, 1.0f);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.mutable_data())
        if (sign(rng)) v = -v;
    return t;
}

inline MaskGrid random_mask_grid(int h, int w, std::mt19937_64& rng, double p_visible = 0.6) {
    MaskGrid m(h, w);
    std::bernoulli_distribution vis(p_visible);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(y, x, vis(rng));
    return m;
}

inline std::vector<GradCase> gradient_cases() {
    using V = std::vector<Tensor>;
    auto rt = [](Shape s) { return [s](std::mt19937_64& r) { return V{random_tensor(s, r)}; }; };
    auto rt2 = [](Shape a, Shape b) {
        return [a, b](std::mt19937_64& r) { return V{random_tensor(a, r), random_tensor(b, r)}; };
    };
    std::vector<GradCase> c;
    c.push_back({"add_broadcast", [](const V& x) { return ops::add(x[0], x[1]); }, rt2({3, 4}, {4})});
    c.push_back({"sub_broadcast", [](const V& x) { return ops::sub(x[0], x[1]); }, rt2({2, 1, 3}, {4, 1})});
    c.push_back({"mul_broadcast", [](const V& x) { return ops::mul(x[0], x[1]); }, rt2({2, 3, 4, 4}, {1, 3, 1, 1})});
    c.push_back({"div", [](const V& x) { return ops::div(x[0], x[1]); },
                 [](std::mt19937_64& r) { return V{random_tensor({3, 5}, r), random_tensor({3, 5}, r, 0.5f, 2.0f)}; }});
    c.push_back({"add_scalar", [](const V& x) { return ops::add_scalar(x[0], 0.3f); }, rt({7})});
    c.push_back({"mul_scalar", [](const V& x) { return ops::mul_scalar(x[0], -1.7f); }, rt({7})});
    c.push_back({"relu", [](const V& x) { return ops::relu(x[0]); }, [](std::mt19937_64& r) { return V{away_from_zero({4, 5}, r)}; }});
    c.push_back({"leaky_relu", [](const V& x) { return ops::leaky_relu(x[0], 0.2f); }, [](std::mt19937_64& r) { return V{away_from_zero({4, 5}, r)}; }});
    c.push_back({"silu", [](const V& x) { return ops::silu(x[0]); }, rt({4, 5})});
    c.push_back({"gelu", [](const V& x) { return ops::gelu(x[0]); }, rt({4, 5})});
    c.push_back({"sigmoid", [](const V& x) { return ops::sigmoid(x[0]); }, rt({4, 5})});
    c.push_back({"tanh", [](const V& x) { return ops::tanh(x[0]); }, rt({4, 5})});
    c.push_back({"exp", [](const V& x) { return ops::exp(x[0]); }, rt({4, 5})});
    c.push_back({"log", [](const V& x) { return ops::log(x[0]); },
                 [](std::mt19937_64& r) { return V{random_tensor({4, 5}, r, 0.5f, 3.0f)}; }});
    c.push_back({"abs", [](const V& x) { return ops::abs(x[0]); }, [](std::mt19937_64& r) { return V{away_from_zero({4, 5}, r)}; }});
    c.push_back({"square", [](const V& x) { return ops::square(x[0]); }, rt({4, 5})});
    c.push_back({"softplus", [](const V& x) { return ops::softplus(x[0]); },
                 [](std::mt19937_64& r) { return V{random_tensor({4, 5}, r, -4.0f, 4.0f)}; }});
    c.push_back({"sum", [](const V& x) { return ops::sum(x[0]); }, rt({3, 3})});
    c.push_back({"mean", [](const V& x) { return ops::mean(x[0]); }, rt({3, 3})});
    c.push_back({"reshape", [](const V& x) { return ops::reshape(x[0], {6, 2}); }, rt({3, 4})});
    c.push_back({"permute", [](const V& x) { return ops::permute(x[0], {2, 0, 3, 1}); }, rt({2, 3, 4, 2})});
    c.push_back({"concat", [](const V& x) { return ops::concat({x[0], x[1]}, 1); }, rt2({2, 3, 2}, {2, 1, 2})});
    c.push_back({"matmul", [](const V& x) { return ops::matmul(x[0], x[1]); }, rt2({4, 7}, {7, 3})});
    for (int mode = 0; mode < 4; ++mode) {
        const bool ta = mode & 1, tb = mode & 2;
        c.push_back({"bmm_t" + std::to_string(mode), [ta, tb](const V& x) { return ops::bmm(x[0], x[1], ta, tb); },
                     rt2(ta ? Shape{2, 5, 3} : Shape{2, 3, 5}, tb ? Shape{2, 4, 5} : Shape{2, 5, 4})});
    }
    c.push_back({"linear", [](const V& x) { return ops::linear(x[0], x[1], x[2]); },
                 [](std::mt19937_64& r) { return V{random_tensor({2, 3, 5}, r), random_tensor({4, 5}, r), random_tensor({4}, r)}; }});
    c.push_back({"conv2d_3x3", [](const V& x) { return ops::conv2d(x[0], x[1], x[2], 1, 1); },
                 [](std::mt19937_64& r) { return V{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r), random_tensor({3}, r)}; }});
    c.push_back({"conv2d_stride2", [](const V& x) { return ops::conv2d(x[0], x[1], x[2], 2, 1); },
                 [](std::mt19937_64& r) { return V{random_tensor({1, 3, 6, 7}, r), random_tensor({2, 3, 3, 3}, r), random_tensor({2}, r)}; }});
    c.push_back({"conv2d_1x1", [](const V& x) { return ops::conv2d(x[0], x[1], x[2], 1, 0); },
                 [](std::mt19937_64& r) { return V{random_tensor({2, 3, 4, 4}, r), random_tensor({5, 3, 1, 1}, r), random_tensor({5}, r)}; }});
    c.push_back({"avg_pool2d", [](const V& x) { return ops::avg_pool2d(x[0], 2); }, rt({2, 2, 4, 6})});
    c.push_back({"upsample", [](const V& x) { return ops::upsample_nearest2d(x[0], 2); }, rt({1, 2, 3, 3})});
    c.push_back({"softmax_t", [](const V& x) { return ops::softmax(x[0], 0.7f); }, rt({3, 6})});
    c.push_back({"log_softmax", [](const V& x) { return ops::log_softmax(x[0]); }, rt({3, 6})});
    c.push_back({"layer_norm_last", [](const V& x) { return ops::layer_norm(x[0], -1); }, rt({3, 6})});
    c.push_back({"layer_norm_channels", [](const V& x) { return ops::layer_norm(x[0], 1); }, rt({2, 5, 3, 3})});
    c.push_back({"cross_entropy",
                 [](const V& x) {
                     const std::vector<int> y{0, 3, 5, 2};
                     const std::vector<float> w{1.0f, 0.0f, 1.0f, 1.0f};
                     return ops::cross_entropy(x[0], y, w);
                 },
                 rt({4, 6})});
    c.push_back({"embedding",
                 [](const V& x) {
                     const std::vector<int> ids{2, 0, 2, 4};
                     return ops::embedding(x[0], ids);
                 },
                 rt({5, 3})});
    c.push_back({"attention",
                 [](const V& x) { return ops::attention(x[0], x[1], x[2]); },
                 [](std::mt19937_64& r) { return V{random_tensor({1, 2, 4, 3}, r), random_tensor({1, 2, 4, 3}, r), random_tensor({1, 2, 4, 3}, r)}; }});
    c.push_back({"attention_masked_causal",
                 [](const V& x) {
                     ops::AttentionOptions o;
                     o.key_bias = Tensor::from({1, 1, 1, 5}, {0.0f, -1e9f, 0.0f, 0.0f, -1e9f});
                     o.causal = true;
                     return ops::attention(x[0], x[1], x[2], o);
                 },
                 [](std::mt19937_64& r) { return V{random_tensor({1, 1, 5, 4}, r), random_tensor({1, 1, 5, 4}, r), random_tensor({1, 1, 5, 4}, r)}; }});
    c.push_back({"mse", [](const V& x) { return ops::mse(x[0], x[1]); }, rt2({3, 4}, {3, 4})});
    c.push_back({"l1",
                 [](const V& x) { return ops::l1(x[0], x[1]); },
                 [](std::mt19937_64& r) {
                     Tensor a = random_tensor({3, 4}, r);
                     Tensor d = away_from_zero({3, 4}, r);
                     return V{a, ops::add(a, d).detach()};
                 }});
    c.push_back({"partial_conv",
                 [](const V& x) {
                     std::mt19937_64 mr(5);
                     const MaskGrid m = random_mask_grid(5, 6, mr);
                     return partial_conv(x[0], m, x[1], x[2], 1, 1).features;
                 },
                 [](std::mt19937_64& r) { return V{random_tensor({1, 2, 5, 6}, r), random_tensor({3, 2, 3, 3}, r), random_tensor({3}, r)}; }});
    c.push_back({"restrictive_conv",
                 [](const V& x) {
                     std::mt19937_64 mr(6);
                     const MaskGrid m = random_mask_grid(6, 6, mr);
                     return restrictive_conv(x[0], m, x[1], x[2], 0.5f);
                 },
                 [](std::mt19937_64& r) { return V{random_tensor({1, 2, 6, 6}, r), random_tensor({2, 2, 3, 3}, r), random_tensor({2}, r)}; }});
    return c;
}

struct GradSuiteReport {
    int cases = 0;
    int failures = 0;
    double worst = 0.0;
    std::string worst_name;
};

inline GradSuiteReport run_gradient_suite(int reps, double tol = 1e-3) {
    GradSuiteReport rep;
    const auto cases = gradient_cases();
    for (int r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < cases.size(); ++i) {
            std::mt19937_64 rng(1000 + 97 * r + i);
            const auto res = gradcheck(cases[i].fn, cases[i].make_inputs(rng), 17 + r * 31 + i);
            ++rep.cases;
            if (!(res.rel_error < tol)) ++rep.failures;
            if (!(res.rel_error <= rep.worst)) {
                rep.worst = res.rel_error;
                rep.worst_name = cases[i].name;
            }
        }
    return rep;
}

}  // namespace plural::test
