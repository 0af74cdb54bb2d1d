#ifndef LIGHTSAE_ERROR_HPP_
#define LIGHTSAE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace lightsae {

// Base for every error thrown by the library. The CLI maps the concrete
// type to an exit code (input errors -> 2, configuration errors -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated (non-scalar loss, bad threshold, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// The embedding variant does not support the requested operation.
class VariantError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Dataset too short for the requested split protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace lightsae

#endif  // LIGHTSAE_ERROR_HPP_
