#pragma once

#include <stdexcept>
#include <string>

namespace cardiofuse {

// Bad user-supplied values (specs, configs, flags). CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Malformed ECV1 payloads.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset loading: missing files, duplicate ids, bad rows.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training could not proceed (single-class split, NaN loss). CLI exit code 3.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation applied to the wrong model kind. CLI exit code 4.
class KindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cardiofuse
