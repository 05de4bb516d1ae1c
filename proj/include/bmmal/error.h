#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bmmal {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration values or inconsistent dimensions in a config.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input vectors or matrices that do not match the model or dataset shape.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Failure while reading a dataset, checkpoint or metrics file. `row()` is the
/// 1-based line number of the offending line, or 0 when the error is not tied
/// to a line.
class LoadError : public Error {
public:
    LoadError(const std::string& message, std::size_t row = 0)
        : Error(row == 0 ? message : "row " + std::to_string(row) + ": " + message), row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

} // namespace bmmal
