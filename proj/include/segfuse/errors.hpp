#pragma once

#include <stdexcept>
#include <string>

namespace segfuse {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Contract violations on shapes and configurations.
class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset content problems (missing modality, empty set, bad labels).
class DataError : public Error {
public:
    using Error::Error;
};

// Two models that cannot be combined (class count, window).
class ModelMismatchError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Binary file format failures. Each has its own type so callers can tell them
// apart without parsing messages.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

class UnknownDtypeError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace segfuse
