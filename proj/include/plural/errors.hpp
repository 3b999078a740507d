#pragma once

#include <stdexcept>
#include <string>

namespace plural {

// Shape or extent mismatch between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad configuration value or unknown option (CLI exit code 2).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Checkpoint missing, corrupt, or dimensionally inconsistent (CLI exit code 3).
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf during training or evaluation (CLI exit code 4).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace plural
