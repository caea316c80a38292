#pragma once

#include <stdexcept>
#include <string>

namespace ntklab {

// Every failure the library can signal. The numeric values double as the
// C API status codes and line up with the CLI exit codes where one exists.
enum class ErrorKind : int {
  kInvalidArgument = 2,
  kDivergence = 3,
  kPlanInfeasible = 4,
  kUnsupportedDimension = 5,
  kLabelBound = 6,
  kInvalidWidth = 7,
  kDimensionMismatch = 8,
  kDomain = 9,
  kNonFinite = 10,
  kSeries = 11,
  kQuadrature = 12,
  kOverflow = 13,
  kScale = 14,
  kInvalidEigenvalue = 15,
  kIo = 16,
  kFormat = 17,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by the flow engine when an Euler step produces non-finite weights.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& what)
      : Error(ErrorKind::kDivergence, what), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace ntklab
