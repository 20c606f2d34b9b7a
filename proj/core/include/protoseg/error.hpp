#pragma once

#include <stdexcept>
#include <string>

namespace protoseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape, channel or resolution disagreement between inputs.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated files in the interchange format.
class FormatError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace protoseg
