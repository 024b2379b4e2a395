#pragma once

#include <stdexcept>
#include <string>

namespace facefit {

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Array shapes or counts that do not match the model or each other.
class DimensionError : public Error
{
public:
    using Error::Error;
};

/// NaN/Inf inputs, or an energy that became non-finite during a fit.
class NumericError : public Error
{
public:
    using Error::Error;
};

/// Malformed container, mesh or CSV data.
class FormatError : public Error
{
public:
    using Error::Error;
};

/// Invalid configuration values or unknown configuration keys.
class ConfigError : public Error
{
public:
    using Error::Error;
};

/// Inputs that violate a geometric precondition (e.g. collinear keypoints).
class GeometryError : public Error
{
public:
    using Error::Error;
};

} // namespace facefit
