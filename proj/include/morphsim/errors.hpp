#pragma once

#include <stdexcept>
#include <string>

namespace morphsim {

// Vector or matrix sizes that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what)
      : std::invalid_argument("dimension error: " + what) {}
};

// Input violates a documented invariant (box bounds, unit vectors, schema).
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what)
      : std::invalid_argument("validation error: " + what) {}
};

// The simulator produced or was fed non-finite numbers.
class IntegrationError : public std::runtime_error {
 public:
  explicit IntegrationError(const std::string& what)
      : std::runtime_error("integration error: " + what) {}
};

// Training or optimization could not proceed (non-finite loss, empty data).
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what)
      : std::runtime_error("training error: " + what) {}
};

// A file is missing, unreadable or unwritable.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error("io error: " + what) {}
};

// A document does not follow its schema.
class FormatError : public std::invalid_argument {
 public:
  explicit FormatError(const std::string& what)
      : std::invalid_argument("format error: " + what) {}
};

}  // namespace morphsim
