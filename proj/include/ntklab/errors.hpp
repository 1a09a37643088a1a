#pragma once

#include <stdexcept>
#include <string>

namespace ntk {

// Base of every error raised by the library. The CLI maps each subclass to a
// distinct process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or length disagreement between arguments.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration or argument value (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed, truncated or mismatched input data (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

// Divergence, non-convergence or a violated numerical invariant (exit code 4).
class NumericalError : public Error {
public:
    using Error::Error;
};

void require_dims(bool ok, const std::string& what);

}  // namespace ntk
