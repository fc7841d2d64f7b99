#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gip {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Dimensions that do not compose or do not match a declared shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Values outside the allowed domain (gates outside [0,1], non-finite inputs,
// non-positive temperatures, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed network, or a trace that does not belong to the network it is
// used with.
class StructureError : public Error {
 public:
  using Error::Error;
};

// Correlation requested on fewer than two points or on constant data.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Container or image file could not be decoded; carries the byte offset at
// which decoding stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Path enumeration would exceed the configured cap; carries the exact count.
class OracleTooLargeError : public Error {
 public:
  OracleTooLargeError(const std::string& what, std::uint64_t path_count)
      : Error(what), path_count_(path_count) {}

  std::uint64_t path_count() const { return path_count_; }

 private:
  std::uint64_t path_count_;
};

// Network kind the path oracle does not cover (anything non-dense).
class OracleUnsupportedError : public Error {
 public:
  using Error::Error;
};

// Batch-norm statistics with var + eps <= 0.
class InvalidStatisticsError : public Error {
 public:
  using Error::Error;
};

}  // namespace gip
