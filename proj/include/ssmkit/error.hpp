#pragma once

#include <stdexcept>
#include <string>

namespace ssm {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes or lengths that do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, rank deficiency, divergence and other numerical failures.
class NumericalError : public Error {
public:
    using Error::Error;
};

class RankDeficientError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SpectralGapViolation : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, long step)
        : NumericalError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

/// Insufficient excitation of an input channel.
class ExcitationError : public NumericalError {
public:
    ExcitationError(const std::string& what, int channel)
        : NumericalError(what), channel_(channel) {}
    int channel() const noexcept { return channel_; }

private:
    int channel_;
};

class OptimizationError : public NumericalError {
public:
    OptimizationError(const std::string& what, int iteration)
        : NumericalError(what + " (iteration " + std::to_string(iteration) + ")"),
          iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

/// Invalid configuration; the message carries the offending field path.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace ssm
