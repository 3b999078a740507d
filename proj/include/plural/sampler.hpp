#pragma once

// Iterative parallel decoding of MASK cells.
//
// Each step draws a label at every MASK cell from softmax(z / t), scores the
// draw by its own tempered probability, and keeps the f(i) best draws (ties to
// the lowest flat index). Everything else reverts to MASK. Committed cells are
// never redrawn.

#include "plural/transformer.hpp"

#include <cstdint>
#include <vector>

namespace plural {

// f(0..k-1) from the ceil-cosine cumulative reveal; sums to `missing`.
std::vector<int> cosine_schedule(int missing, int k);

struct SampleSchedule {
    int k = 5;
    std::vector<int> keep_counts;
    std::vector<double> temperatures;  // t_{i+1} = anneal * t_i
    double anneal = 0.9;
};

SampleSchedule make_schedule(int missing, int k, double t0, double anneal);

struct StepTrace {
    std::vector<int> cells;       // MASK cells at the start of the step
    std::vector<int> drawn;       // label drawn per cell
    std::vector<double> scores;   // tempered probability of each draw
    std::vector<bool> committed;  // per cell
};

// seed drives per-cell draws via derived streams, so results do not depend on
// the order cells are visited.
TokenGrid sample_step(const TokenGrid& grid, const TokenPredictor& model, int keep, double temperature,
                      std::uint64_t seed, StepTrace* trace = nullptr);

TokenGrid sample_all(const TokenGrid& grid, const TokenPredictor& model, const SampleSchedule& schedule,
                     std::uint64_t seed, std::vector<StepTrace>* traces = nullptr);

// Tempered probabilities of one logit row, computed in double.
std::vector<double> tempered_softmax(std::span<const float> logits, double temperature);

}  // namespace plural
