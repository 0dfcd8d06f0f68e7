#pragma once

#include <stdexcept>
#include <string>

namespace cmow {

// Error categories map one-to-one onto the C API status codes and the CLI
// exit codes (structural 1, config 2, data 3, numerical 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or index violations: mismatched dimensions, out-of-range ids.
class StructuralError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or parameters.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmow
