#include "plural/sampler.hpp"

#include "plural/errors.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace plural {

std::vector<int> cosine_schedule(int missing, int k) {
    if (missing < 0) throw ConfigError("missing count must be >= 0");
    if (k < 1) throw ConfigError("step count k must be >= 1");
    std::vector<int> f(static_cast<std::size_t>(k), 0);
    int prev = 0;
    for (int i = 0; i < k; ++i) {
        const double frac = 1.0 - std::cos(std::numbers::pi * (i + 1) / (2.0 * k));
        int c = static_cast<int>(std::ceil(missing * frac - 1e-9));
        if (missing >= k)
            c = std::clamp(c, prev + 1, missing - (k - 1 - i));
        else
            c = std::clamp(c, prev, missing);
        if (i == k - 1) c = missing;
        f[static_cast<std::size_t>(i)] = c - prev;
        prev = c;
    }
    return f;
}

SampleSchedule make_schedule(int missing, int k, double t0, double anneal) {
    if (!(t0 > 0.0)) throw ConfigError(fmt::format("starting temperature {} must be > 0", t0));
    if (!(anneal > 0.0 && anneal <= 1.0)) throw ConfigError(fmt::format("anneal factor {} outside (0, 1]", anneal));
    SampleSchedule s;
    s.k = k;
    s.anneal = anneal;
    s.keep_counts = cosine_schedule(missing, k);
    for (int i = 0; i < k; ++i) s.temperatures.push_back(t0 * std::pow(anneal, i));
    return s;
}

std::vector<double> tempered_softmax(std::span<const float> logits, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError(fmt::format("temperature {} must be > 0", temperature));
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] = std::exp((logits[j] - top) / temperature);
        sum += p[j];
    }
    for (auto& v : p) v /= sum;
    return p;
}

TokenGrid sample_step(const TokenGrid& grid, const TokenPredictor& model, int keep, double temperature,
                      std::uint64_t seed, StepTrace* trace) {
    const auto cells = grid.missing_cells();
    if (keep > static_cast<int>(cells.size())) {
        spdlog::warn("keep {} exceeds {} MASK cells; clamping", keep, cells.size());
        keep = static_cast<int>(cells.size());
    }
    if (keep < 0) throw ConfigError("keep count must be >= 0");
    if (cells.empty()) return grid;
    const Tensor logits = model.predict(grid);
    const int k = model.codebook_size();
    if (logits.dim() != 2 || logits.size(0) != grid.cells() || logits.size(1) != k)
        throw ShapeError(fmt::format("predictor returned {} for a {}-cell grid", to_string(logits.shape()), grid.cells()));
    const auto all = logits.data();

    std::vector<int> drawn(cells.size());
    std::vector<double> scores(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto row = all.subspan(static_cast<std::size_t>(cells[c]) * static_cast<std::size_t>(k), static_cast<std::size_t>(k));
        const auto p = tempered_softmax(row, temperature);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cells[c])));
        const double u = uniform01(rng);
        double acc = 0.0;
        int label = k - 1;
        for (int j = 0; j < k; ++j) {
            acc += p[static_cast<std::size_t>(j)];
            if (u < acc) {
                label = j;
                break;
            }
        }
        // Guard against rounding landing on a zero-probability tail label.
        while (p[static_cast<std::size_t>(label)] == 0.0 && label > 0) --label;
        drawn[c] = label;
        scores[c] = p[static_cast<std::size_t>(label)];
    }
    std::vector<std::size_t> order(cells.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<bool> commit(cells.size(), false);
    for (int i = 0; i < keep; ++i) commit[order[static_cast<std::size_t>(i)]] = true;

    TokenGrid out = grid;
    for (std::size_t c = 0; c < cells.size(); ++c)
        if (commit[c]) out.set(cells[c], drawn[c]);
    if (trace) *trace = StepTrace{cells, drawn, scores, commit};
    return out;
}

TokenGrid sample_all(const TokenGrid& grid, const TokenPredictor& model, const SampleSchedule& schedule,
                     std::uint64_t seed, std::vector<StepTrace>* traces) {
    const int missing = grid.missing_count();
    const int planned = std::accumulate(schedule.keep_counts.begin(), schedule.keep_counts.end(), 0);
    if (planned != missing)
        throw ShapeError(fmt::format("schedule commits {} cells but the grid has {} MASK cells", planned, missing));
    if (schedule.temperatures.size() != schedule.keep_counts.size())
        throw ShapeError("schedule has mismatched keep-count and temperature lengths");
    if (traces) traces->clear();
    TokenGrid g = grid;
    for (std::size_t i = 0; i < schedule.keep_counts.size(); ++i) {
        if (schedule.keep_counts[i] == 0) continue;
        StepTrace t;
        g = sample_step(g, model, schedule.keep_counts[i], schedule.temperatures[i], derive_seed(seed, i),
                        traces ? &t : nullptr);
        if (traces) traces->push_back(std::move(t));
    }
    return g;
}

}  // namespace plural
