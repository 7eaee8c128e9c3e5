#pragma once

#include <stdexcept>
#include <string>

namespace popgcn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (CSV contents, labels, demographics).
class DataError : public Error {
public:
    using Error::Error;
};

/// Matrix or list dimensions that do not chain.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A configuration value outside its allowed domain. `field()` is a dotted
/// path such as "train.dropout_rate".
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Optimisation diverged (non-finite loss).
class TrainingError : public Error {
public:
    TrainingError(int epoch, const std::string& message)
        : Error("epoch " + std::to_string(epoch) + ": " + message), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace popgcn
