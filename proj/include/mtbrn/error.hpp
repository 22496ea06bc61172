#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtbrn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input row. `line` and `field` are 1-based; field 0 means the row
// as a whole (e.g. wrong column count).
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, std::size_t field, const std::string& what);

  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }
  std::size_t field() const { return field_; }

 private:
  std::string source_;
  std::size_t line_;
  std::size_t field_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A tensor op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtbrn
