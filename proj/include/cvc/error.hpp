#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cvc {

// Each category maps onto a CLI exit code (see tools/cvc.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents between operands or against a configuration.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid model/training configuration (divisibility, ranges, unknown keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or mismatched files and streams.
class DataError : public Error {
 public:
  using Error::Error;
};

// Range-coder failure at a known byte offset of the payload.
class DecodeError : public DataError {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Non-finite loss or activation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cvc
