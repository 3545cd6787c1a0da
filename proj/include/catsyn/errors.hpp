#pragma once

#include <stdexcept>
#include <string>

namespace catsyn {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operator/state dimensions are invalid or do not match a layout.
struct DimensionError : Error {
    using Error::Error;
};

/// Fock truncation is too small for the requested object or evolution.
struct TruncationError : Error {
    double measured;
    TruncationError(const std::string& what, double measured_value)
        : Error(what), measured(measured_value) {}
};

/// Integrator step size collapsed before reaching the end time.
struct StiffnessError : Error {
    double time_reached;
    StiffnessError(const std::string& what, double t) : Error(what), time_reached(t) {}
};

/// Trace drift exceeded the accuracy gate.
struct AccuracyError : Error {
    double drift;
    AccuracyError(const std::string& what, double d) : Error(what), drift(d) {}
};

/// A physical precondition (unitarity, probability range, ...) is violated.
struct ValidityError : Error {
    using Error::Error;
};

/// Bad experiment configuration (unknown id, unknown field, bad value).
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace catsyn
