#pragma once

#include <stdexcept>
#include <string>

namespace dalign {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an API call was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MissingClassError : public Error {
 public:
  using Error::Error;
};

}  // namespace dalign
