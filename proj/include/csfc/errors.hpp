#pragma once

#include <stdexcept>
#include <string>

namespace csfc {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unknown axis name or axis-name collision.
struct AxisError : Error {
    using Error::Error;
};

// Axis sizes that do not line up.
struct ShapeError : Error {
    using Error::Error;
};

// NaN or other numeric-domain violations.
struct NumericError : Error {
    using Error::Error;
};

// Index outside a table or vocabulary.
struct IndexError : Error {
    using Error::Error;
};

// Bad hyperparameters, malformed config files, invalid usage.
struct ConfigError : Error {
    using Error::Error;
};

// Unreadable or malformed input data (source files, datasets, checkpoints).
struct DataError : Error {
    using Error::Error;
};

// Id sets that should align but do not (predictions vs references etc).
struct MismatchError : Error {
    using Error::Error;
};

} // namespace csfc
