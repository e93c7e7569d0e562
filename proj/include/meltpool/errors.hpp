#pragma once

#include <stdexcept>
#include <string>

namespace meltpool {

// Error taxonomy. The CLI maps each family onto a stable exit code.

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public IoError {
   public:
    using IoError::IoError;
};

class ChecksumError : public CheckpointError {
   public:
    using CheckpointError::CheckpointError;
};

class VersionError : public CheckpointError {
   public:
    using CheckpointError::CheckpointError;
};

// A checkpoint whose parameter table disagrees with the architecture it names.
class CheckpointShapeError : public CheckpointError {
   public:
    using CheckpointError::CheckpointError;
};

}  // namespace meltpool
