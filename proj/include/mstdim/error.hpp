#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mstdim {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad shapes, out-of-range arguments, malformed configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// NaN/Inf produced or consumed by a numeric op.
struct NumericError : Error {
    using Error::Error;
};

/// Optimization failed (non-finite loss or gradient) at a known step.
struct TrainingError : Error {
    TrainingError(std::size_t step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Dataset directory or checkpoint file could not be read back.
struct IngestionError : Error {
    IngestionError(std::string file, std::string field, const std::string& what)
        : Error(file + " [" + field + "]: " + what), file_(std::move(file)), field_(std::move(field)) {}

    const std::string& file() const noexcept { return file_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::string file_;
    std::string field_;
};

}  // namespace mstdim
