#pragma once

#include <stdexcept>
#include <string>

namespace dlspf {

// Error classes map onto the CLI exit codes: config 2, degenerate
// ensemble 3, training divergence 4, I/O 5.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateEnsembleError : std::runtime_error {
    explicit DegenerateEnsembleError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingDivergenceError : std::runtime_error {
    explicit TrainingDivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SimulationBlowupError : std::runtime_error {
    explicit SimulationBlowupError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dlspf
