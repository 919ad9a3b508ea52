#pragma once

#include <stdexcept>
#include <string>

namespace avfp {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation (log of a
/// non-positive value, probability outside (0,1), negative RUL, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf appeared in a tensor produced by a public operation.
class NumericError : public Error {
public:
    using Error::Error;
};

class TapeError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Raised when training sees too many consecutive non-finite batches.
class TrainingAborted : public Error {
public:
    using Error::Error;
};

}  // namespace avfp
