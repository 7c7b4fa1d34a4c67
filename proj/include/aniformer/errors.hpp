#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aniformer {

// Base for every error the library raises deliberately.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or mesh extents that do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller-side precondition of an operation is violated (window length,
// frame count, topology agreement, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid data: non-finite coordinates, bad face indices, non-bijective
// permutations, negative amplitudes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed where finiteness is required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace aniformer
