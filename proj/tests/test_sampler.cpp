#include "doctest.h"
#include "plural/errors.hpp"
#include "plural/sampler.hpp"
#include "support/scripted.hpp"

#include <cmath>
#include <numeric>

using namespace plural;

using test::holey_grid;
using test::ScriptedPredictor;

TEST_CASE("cosine schedule worked example") {
    CHECK(cosine_schedule(10, 5) == std::vector<int>{1, 1, 3, 2, 3});
    CHECK(cosine_schedule(0, 5) == std::vector<int>{0, 0, 0, 0, 0});
    CHECK(cosine_schedule(7, 1) == std::vector<int>{7});
    CHECK_THROWS_AS(cosine_schedule(-1, 5), ConfigError);
    CHECK_THROWS_AS(cosine_schedule(3, 0), ConfigError);
}

TEST_CASE("cosine schedule sums exactly and stays back-loaded") {
    for (int k = 1; k <= 8; ++k)
        for (int missing = 0; missing <= 256; ++missing) {
            const auto f = cosine_schedule(missing, k);
            REQUIRE(static_cast<int>(f.size()) == k);
            CHECK(std::accumulate(f.begin(), f.end(), 0) == missing);
            int c = 0;
            for (int i = 0; i < k; ++i) {
                c += f[static_cast<std::size_t>(i)];
                CHECK(f[static_cast<std::size_t>(i)] >= 0);
                CHECK(c <= missing);
                if (missing >= k) CHECK(f[static_cast<std::size_t>(i)] >= 1);
            }
        }
}

TEST_CASE("anneal sequence is geometric") {
    const SampleSchedule s = make_schedule(10, 5, 1.0, 0.9);
    const double expect[5] = {1.0, 0.9, 0.81, 0.729, 0.6561};
    for (int i = 0; i < 5; ++i) {
        CHECK(std::abs(s.temperatures[static_cast<std::size_t>(i)] - expect[i]) < 1e-12);
        CHECK(s.temperatures[static_cast<std::size_t>(i)] == 1.0 * std::pow(0.9, i));
        if (i) CHECK(std::abs(s.temperatures[static_cast<std::size_t>(i)] - 0.9 * s.temperatures[static_cast<std::size_t>(i - 1)]) < 1e-15);
    }
    const SampleSchedule long_run = make_schedule(256, 8, 2.5, 0.7);
    for (int i = 0; i < 8; ++i) CHECK(long_run.temperatures[static_cast<std::size_t>(i)] == 2.5 * std::pow(0.7, i));
    CHECK_THROWS_AS(make_schedule(10, 5, 0.0, 0.9), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 5, 1.0, 1.5), ConfigError);
}

TEST_CASE("temperature semantics") {
    const std::vector<float> z{2.0f, 0.5f, -1.0f, 0.0f};
    double prev = -1.0;
    for (double t : {0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 50.0}) {
        const auto p = tempered_softmax(z, t);
        double h = 0.0;
        for (double v : p)
            if (v > 0) h -= v * std::log(v);
        CHECK(h >= prev - 1e-12);
        prev = h;
    }
    const std::vector<float> flat(6, 1.5f);
    for (double t : {0.01, 1.0, 10.0})
        for (double v : tempered_softmax(flat, t)) CHECK(v == doctest::Approx(1.0 / 6.0));
    CHECK_THROWS_AS(tempered_softmax(z, 0.0), ConfigError);
}

TEST_CASE("keep = |D| completes the grid in one step") {
    ScriptedPredictor model(16, 4.0f);
    const TokenGrid g = holey_grid(4, 16, 9, 1);
    const TokenGrid out = sample_step(g, model, 9, 1.0, 5);
    CHECK(out.missing_count() == 0);
    for (int i : g.visible_cells()) CHECK(out.label(i) == g.label(i));
}

TEST_CASE("near-zero temperature draws the argmax") {
    ScriptedPredictor model(16, 4.0f);
    const TokenGrid g = holey_grid(4, 16, 10, 2);
    const Tensor logits = model.predict(g);
    const TokenGrid out = sample_step(g, model, 10, 1e-4, 6);
    for (int i : g.missing_cells()) {
        const auto row = logits.data().subspan(static_cast<std::size_t>(i * 16), 16);
        const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        CHECK(out.label(i) == arg);
    }
}

TEST_CASE("sampling is deterministic per seed and clamps oversized keeps") {
    ScriptedPredictor model(8, 3.0f);
    const TokenGrid g = holey_grid(4, 8, 8, 3);
    CHECK(sample_step(g, model, 3, 1.0, 42) == sample_step(g, model, 3, 1.0, 42));
    CHECK(sample_step(g, model, 99, 1.0, 42).missing_count() == 0);
    const SampleSchedule s = make_schedule(8, 5, 1.0, 0.9);
    CHECK(sample_all(g, model, s, 7) == sample_all(g, model, s, 7));
}

TEST_CASE("committed draws outscore every uncommitted draw") {
    ScriptedPredictor model(12, 5.0f);
    for (int run = 0; run < 100; ++run) {
        const int missing = 1 + run % 36;
        const TokenGrid g = holey_grid(6, 12, missing, static_cast<std::uint64_t>(run));
        const SampleSchedule s = make_schedule(missing, 5, 1.0, 0.9);
        std::vector<StepTrace> traces;
        const TokenGrid out = sample_all(g, model, s, static_cast<std::uint64_t>(run) * 31 + 1, &traces);
        int remaining = missing;
        std::size_t step = 0;
        for (const auto& t : traces) {
            while (s.keep_counts[step] == 0) ++step;
            CHECK(static_cast<int>(t.cells.size()) == remaining);
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
            CHECK(kept == s.keep_counts[step]);
            CHECK(worst_kept >= best_left);
            remaining -= kept;
            ++step;
        }
        CHECK(remaining == 0);
        CHECK(out.missing_count() == 0);
        for (int i : g.visible_cells()) CHECK(out.label(i) == g.label(i));
    }
}

TEST_CASE("sample_all edge cases") {
    ScriptedPredictor model(8, 2.0f);
    const TokenGrid full = holey_grid(4, 8, 0, 4);
    CHECK(sample_all(full, model, make_schedule(0, 5, 1.0, 0.9), 1) == full);
    const TokenGrid g = holey_grid(4, 8, 6, 5);
    CHECK_THROWS_AS(sample_all(g, model, make_schedule(7, 5, 1.0, 0.9), 1), ShapeError);
}

TEST_CASE("different seeds give different completions at t0 = 1") {
    ScriptedPredictor model(16, 1.0f);
    const TokenGrid g = holey_grid(8, 16, 40, 6);
    const SampleSchedule s = make_schedule(40, 5, 1.0, 0.9);
    int differ = 0;
    for (std::uint64_t i = 0; i < 50; ++i) differ += !(sample_all(g, model, s, 2 * i) == sample_all(g, model, s, 2 * i + 1));
    CHECK(differ >= 45);
}

TEST_CASE("top-n commitment holds for every k from 1 to 8") {
    const auto s = test::check_top_n(100, 17);
    CHECK(s.runs == 100);
    CHECK(s.steps >= 100);
    CHECK(s.violations == 0);
}
