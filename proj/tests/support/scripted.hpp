#pragma once

// Deterministic stand-in for the transformer: logits hash the whole input grid,
// so later sampling steps see different distributions than earlier ones.

#include "plural/sampler.hpp"

#include <numeric>

namespace plural::test {

class ScriptedPredictor : public TokenPredictor {
public:
    ScriptedPredictor(int k, float scale) : k_(k), scale_(scale) {}
    Tensor predict(const TokenGrid& grid) const override {
        std::uint64_t h = 1469598103934665603ULL;
        for (int l : grid.labels()) h = (h ^ static_cast<std::uint64_t>(l)) * 1099511628211ULL;
        std::vector<float> v(static_cast<std::size_t>(grid.cells() * k_));
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = scale_ * static_cast<float>(static_cast<double>(mix_seed(h + i) >> 11) * 0x1.0p-53 - 0.5);
        return Tensor::from({grid.cells(), k_}, std::move(v));
    }
    int codebook_size() const override { return k_; }

private:
    int k_;
    float scale_;
};

// Random labels with `missing` cells set to MASK.
inline TokenGrid holey_grid(int side, int k, int missing, std::uint64_t seed) {
    TokenGrid g(side, side, k, 0);
    Rng rng(seed);
    for (int i = 0; i < g.cells(); ++i) g.set(i, static_cast<int>(rng() % static_cast<std::uint64_t>(k)));
    std::vector<int> order(static_cast<std::size_t>(g.cells()));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (int i = 0; i < missing; ++i) g.set(order[static_cast<std::size_t>(i)], k);
    return g;
}

// Top-n commitment over `runs` randomized sample_all calls: every step keeps
// exactly f(i) draws and none of them scores below an uncommitted draw.
struct TopNSummary {
    int runs = 0, steps = 0, violations = 0;
};

inline TopNSummary check_top_n(int runs, std::uint64_t seed) {
    TopNSummary s;
    ScriptedPredictor model(12, 5.0f);
    for (int run = 0; run < runs; ++run, ++s.runs) {
        const int missing = 1 + run % 36;
        const TokenGrid g = holey_grid(6, 12, missing, derive_seed(seed, static_cast<std::uint64_t>(run)));
        const SampleSchedule sch = make_schedule(missing, 1 + run % 8, 1.0, 0.9);
        std::vector<StepTrace> traces;
        const TokenGrid out = sample_all(g, model, sch, derive_seed(seed, {1, static_cast<std::uint64_t>(run)}), &traces);
        int remaining = missing;
        std::size_t step = 0;
        for (const auto& t : traces) {
            while (sch.keep_counts[step] == 0) ++step;
            ++s.steps;
            double worst_kept = 2.0, best_left = -1.0;
            int kept = 0;
            for (std::size_t c = 0; c < t.cells.size(); ++c) {
                if (t.committed[c]) {
                    worst_kept = std::min(worst_kept, t.scores[c]);
                    ++kept;
                } else {
                    best_left = std::max(best_left, t.scores[c]);
                }
            }
            if (static_cast<int>(t.cells.size()) != remaining || kept != sch.keep_counts[step] || worst_kept < best_left)
                ++s.violations;
            remaining -= kept;
            ++step;
        }
        if (remaining != 0 || out.missing_count() != 0) ++s.violations;
        for (int i : g.visible_cells())
            if (out.label(i) != g.label(i)) ++s.violations;
    }
    return s;
}

}  // namespace plural::test
