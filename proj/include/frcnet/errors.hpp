#pragma once

#include <stdexcept>
#include <string>

namespace frcnet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or parameter combination. CLI exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shapes that do not satisfy an operation's preconditions.
class ShapeError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Missing, unreadable or malformed dataset content. CLI exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures (unwritable outputs, truncated checkpoints).
class IoError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite losses or gradients during training. CLI exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

inline int exit_code_for(const Error& e) {
    if (dynamic_cast<const NumericError*>(&e)) return 3;
    if (dynamic_cast<const DataError*>(&e)) return 2;
    return 1;
}

} // namespace frcnet
