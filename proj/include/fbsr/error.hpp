#pragma once

#include <stdexcept>
#include <string>

namespace fbsr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes, lengths or dimensions of two arguments disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input points cannot be triangulated (too few, duplicated or collinear).
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Missing, unreadable or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite value detected during optimisation.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace fbsr
