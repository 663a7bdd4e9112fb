#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ckd {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor op received incompatible operand shapes. Carries the op name and
// both shapes so callers can report exactly which op rejected what.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::vector<std::size_t> lhs, std::vector<std::size_t> rhs)
      : Error(format(op, lhs, rhs)), op_name(std::move(op)), lhs_shape(std::move(lhs)), rhs_shape(std::move(rhs)) {}

  std::string op_name;
  std::vector<std::size_t> lhs_shape;
  std::vector<std::size_t> rhs_shape;

 private:
  static std::string format(const std::string& op, const std::vector<std::size_t>& a,
                            const std::vector<std::size_t>& b) {
    auto dims = [](const std::vector<std::size_t>& s) {
      std::string out = "[";
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
      }
      return out + "]";
    };
    return "shape mismatch in " + op + ": " + dims(a) + " vs " + dims(b);
  }
};

// Event-file parsing failures, classified so tests and the CLI can tell
// malformed headers apart from short reads and bad records.
class ParseError : public Error {
 public:
  enum class Kind { UnrecognizedFormat, UnexpectedEndOfStream, InvalidRecord };

  ParseError(Kind k, const std::string& msg, std::uint64_t where = 0)
      : Error(msg), kind(k), location(where) {}

  Kind kind;
  std::uint64_t location;  // byte offset or record index depending on kind
};

// Bad run configuration or CLI arguments.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace ckd
