#include "doctest.h"
#include "plural/nn.hpp"
#include "support/grad_suite.hpp"

using namespace plural;

TEST_CASE("every differentiable op matches central differences") {
    for (const auto& c : test::gradient_cases()) {
        for (int rep = 0; rep < 3; ++rep) {
            std::mt19937_64 rng(500 + rep * 13);
            const auto res = test::gradcheck(c.fn, c.make_inputs(rng), 77 + rep);
            CAPTURE(c.name);
            CAPTURE(res.rel_error);
            CHECK(res.rel_error < 1e-3);
        }
    }
}

TEST_CASE("conv2d weight gradient of sum(conv) matches finite differences") {
    std::mt19937_64 rng(21);
    const Tensor x = test::random_tensor({2, 3, 6, 6}, rng);
    const Tensor w = test::random_tensor({4, 3, 3, 3}, rng);
    const auto res = test::gradcheck(
        [&](const std::vector<Tensor>& in) { return ops::sum(ops::conv2d(x, in[0], Tensor{}, 1, 1)); },
        {w}, 3);
    CHECK(res.rel_error < 1e-3);
}

TEST_CASE("layer norm module with affine parameters") {
    std::mt19937_64 rng(22);
    nn::LayerNorm ln(4, nn::LayerNorm::Axis::Channels);
    nn::init_normal(ln.gamma, 1.0f, rng);
    nn::init_normal(ln.beta, 1.0f, rng);
    const auto res = test::gradcheck(
        [&](const std::vector<Tensor>& in) {
            nn::LayerNorm l = ln;
            l.gamma = in[1];
            l.beta = in[2];
            return l.forward(in[0]);
        },
        {test::random_tensor({2, 4, 3, 3}, rng), ln.gamma.clone(), ln.beta.clone()}, 5);
    CHECK(res.rel_error < 1e-3);
}
