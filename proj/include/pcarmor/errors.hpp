#pragma once

#include <stdexcept>
#include <string>

namespace pcarmor {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input is structurally valid but geometrically unusable (e.g. all points equal).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied value violates a precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The feature database was built from different model weights.
class StaleDatabaseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A file was readable but its content does not match the expected layout.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace pcarmor
