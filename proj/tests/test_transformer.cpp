#include "doctest.h"
#include "plural/errors.hpp"
#include "plural/sampler.hpp"
#include "support/oracles.hpp"

#include <cmath>

using namespace plural;
using plural::test::random_tensor;

namespace {

TransformerConfig tiny(bool causal = false) {
    TransformerConfig c;
    c.grid_size = 4;
    c.codebook_size = 8;
    c.n_z = 4;
    c.dim = 16;
    c.layers = 2;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.causal = causal;
    return c;
}

Codebook codebook(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Codebook{random_tensor({8, 4}, rng)};
}

std::vector<TokenGrid> random_grids(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<TokenGrid> out;
    for (int i = 0; i < n; ++i) {
        std::vector<int> l(16);
        for (auto& v : l) v = static_cast<int>(rng() % 8);
        out.emplace_back(4, 4, 8, l);
    }
    return out;
}

}  // namespace

TEST_CASE("untrained transformer is uniform everywhere") {
    BidirectionalTransformer m(tiny(), codebook(1), 1);
    TokenGrid g = random_grids(1, 1).front();
    g.set(3, 8);
    const Tensor logits = m.predict(g);
    CHECK(logits.shape() == Shape{16, 8});
    for (float v : logits.data()) CHECK(v == 0.0f);
    const Tensor p = ops::softmax(logits);
    for (float v : p.data()) CHECK(v == doctest::Approx(0.125));
}

TEST_CASE("grid without MASK cells still yields logits") {
    BidirectionalTransformer m(tiny(), codebook(2), 2);
    const TokenGrid g = random_grids(1, 2).front();
    CHECK(m.predict(g).shape() == Shape{16, 8});
}

TEST_CASE("extent mismatches are rejected") {
    BidirectionalTransformer m(tiny(), codebook(3), 3);
    CHECK_THROWS_AS(m.predict(TokenGrid(5, 5, 8, 0)), ShapeError);
    CHECK_THROWS_AS(BidirectionalTransformer(tiny(), Codebook{Tensor::zeros({9, 4})}, 1), ShapeError);
    TransformerConfig bad = tiny();
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("transformer loss closed forms") {
    const TokenGrid target = random_grids(1, 4).front();
    std::mt19937_64 rng(4);
    TokenGrid input = mask_tokens(target, 0.5, rng);
    REQUIRE(input.missing_count() == 8);
    SUBCASE("uniform gives ln K") {
        const Tensor logits = Tensor::zeros({1, 16, 8});
        CHECK(std::abs(transformer_loss(logits, std::span(&target, 1), std::span(&input, 1)).item() - std::log(8.0)) < 1e-6);
        const Tensor wide = Tensor::zeros({1, 16, 64});
        const TokenGrid t64(4, 4, 64, 5);
        TokenGrid in64 = t64;
        in64.set(0, 64);
        CHECK(std::abs(transformer_loss(wide, std::span(&t64, 1), std::span(&in64, 1)).item() - std::log(64.0)) < 1e-6);
    }
    SUBCASE("perfect predictions give 0") {
        Tensor logits = Tensor::zeros({1, 16, 8});
        for (int i = 0; i < 16; ++i) logits.mutable_data()[static_cast<std::size_t>(i * 8 + target.label(i))] = 200.0f;
        CHECK(transformer_loss(logits, std::span(&target, 1), std::span(&input, 1)).item() == doctest::Approx(0.0));
    }
    SUBCASE("visible-position logits do not matter") {
        Tensor a = random_tensor({1, 16, 8}, rng);
        Tensor b = a.clone();
        for (int i : input.visible_cells())
            for (int k = 0; k < 8; ++k) b.mutable_data()[static_cast<std::size_t>(i * 8 + k)] = 50.0f * (k % 3);
        CHECK(transformer_loss(a, std::span(&target, 1), std::span(&input, 1)).item() ==
              transformer_loss(b, std::span(&target, 1), std::span(&input, 1)).item());
    }
    SUBCASE("no MASK cell gives 0") {
        CHECK(transformer_loss(Tensor::zeros({1, 16, 8}), std::span(&target, 1), std::span(&target, 1)).item() == 0.0f);
    }
}

TEST_CASE("encoder and transformer index sets partition the grid") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        MaskGrid m(32, 32, true);
        for (int i = 0; i < 400; ++i) m.set(static_cast<int>(rng() % 32), static_cast<int>(rng() % 32), false);
        const MaskGrid tm = build_pyramid(m, 0.5f, 2).token_mask();
        TokenGrid grid(8, 8, 64, 1);
        for (int i = 0; i < 64; ++i)
            if (!tm.values()[static_cast<std::size_t>(i)]) grid.set(i, 64);
        int both = 0, neither = 0;
        for (int i = 0; i < 64; ++i) {
            const bool enc = tm.values()[static_cast<std::size_t>(i)] != 0;
            const bool tr = grid.is_mask(i);
            both += enc && tr;
            neither += !enc && !tr;
        }
        CHECK(both == 0);
        CHECK(neither == 0);
    }
}

TEST_CASE("mask ratio draws stay in range with mean near 0.45") {
    Rng rng(6);
    double sum = 0.0, lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double r = sample_mask_ratio(rng, 0.15, 0.75);
        sum += r;
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    CHECK(lo >= 0.15);
    CHECK(hi <= 0.75);
    CHECK(sum / 10000.0 == doctest::Approx(0.45).epsilon(0.02));
}

TEST_CASE("mask_tokens masks ceil(r * cells) cells") {
    const TokenGrid t = random_grids(1, 7).front();
    Rng rng(7);
    for (double r : {0.15, 0.3, 0.5, 0.75, 1.0}) {
        CHECK(mask_tokens(t, r, rng).missing_count() == static_cast<int>(std::ceil(r * 16 - 1e-9)));
        const TokenGrid b = mask_tokens(t, r, rng, true);
        CHECK(b.missing_count() == static_cast<int>(std::ceil(r * 16 - 1e-9)));
        for (int i : b.visible_cells()) CHECK(b.label(i) == t.label(i));
    }
}

TEST_CASE("inference is deterministic and training dropout is not") {
    TransformerConfig cfg = tiny();
    BidirectionalTransformer m(cfg, codebook(8), 8);
    const auto grids = random_grids(8, 8);
    TransformerTrainConfig tc;
    tc.steps = 20;
    tc.batch = 4;
    tc.lr = 1e-2f;
    train_transformer(m, grids, tc);
    TokenGrid g = grids.front();
    g.set(2, 8);
    const Tensor a = m.predict(g), b = m.predict(g);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    Rng r1(1), r2(2);
    const Tensor t1 = m.forward(std::span(&g, 1), &r1);
    const Tensor t2 = m.forward(std::span(&g, 1), &r2);
    CHECK_FALSE(std::equal(t1.data().begin(), t1.data().end(), t2.data().begin()));
}

TEST_CASE("trained toy model: overfits fixed masks, is position sensitive, differs from causal ablation") {
    const auto grids = random_grids(8, 9);
    TransformerTrainConfig tc;
    tc.steps = 600;
    tc.batch = 8;
    tc.lr = 3e-3f;
    tc.fixed_masks = true;
    TransformerConfig cfg = tiny();
    cfg.dropout = 0.0f;
    BidirectionalTransformer m(cfg, codebook(9), 9);
    train_transformer(m, grids, tc);
    const std::vector<TokenGrid> inputs = fixed_mask_inputs(grids, tc);
    const double loss = evaluate_transformer(m, inputs, grids);
    CHECK(loss < 0.1);

    TokenGrid swapped = inputs.front();
    const auto vis = swapped.visible_cells();
    REQUIRE(vis.size() >= 2);
    int a = -1, b = -1;
    for (std::size_t i = 0; i < vis.size() && b < 0; ++i)
        for (std::size_t j = i + 1; j < vis.size(); ++j)
            if (swapped.label(vis[i]) != swapped.label(vis[j])) {
                a = vis[i];
                b = vis[j];
                break;
            }
    REQUIRE(b >= 0);
    const int la = swapped.label(a);
    swapped.set(a, swapped.label(b));
    swapped.set(b, la);
    const Tensor p = m.predict(inputs.front()), q = m.predict(swapped);
    CHECK_FALSE(std::equal(p.data().begin(), p.data().end(), q.data().begin()));

    TransformerConfig ccfg = cfg;
    ccfg.causal = true;
    BidirectionalTransformer causal(ccfg, codebook(9), 9);
    train_transformer(causal, grids, tc);
    CHECK(evaluate_transformer(causal, inputs, grids) != doctest::Approx(loss));
}

TEST_CASE("transformer checkpoint round trip") {
    BidirectionalTransformer a(tiny(), codebook(10), 10), b(tiny(), codebook(11), 11);
    const std::string bytes = encode_checkpoint(a.checkpoint_entries());
    b.load(decode_checkpoint(bytes));
    CHECK(encode_checkpoint(b.checkpoint_entries()) == bytes);
    TransformerConfig wide = tiny();
    wide.dim = 32;
    BidirectionalTransformer c(wide, codebook(10), 1);
    CHECK_THROWS_AS(c.load(decode_checkpoint(bytes)), CheckpointError);
}
