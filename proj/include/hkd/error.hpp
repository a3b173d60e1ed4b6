#pragma once

#include <stdexcept>
#include <string>

namespace hkd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for the requested op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An op produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace hkd
