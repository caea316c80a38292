#include "ntklab/rng.hpp"

#include <cmath>
#include <numbers>

#include "ntklab/error.hpp"

namespace ntklab {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::split(std::string_view label) const {
  return Rng(FromKey{}, mix64(key_ ^ mix64(fnv1a64(label))));
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(FromKey{}, mix64(key_ ^ mix64(index + 0x2545f4914f6cdd1dULL)));
}

double Rng::normal() {
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kPlanInfeasible: return "plan-infeasible";
    case ErrorKind::kUnsupportedDimension: return "unsupported-dimension";
    case ErrorKind::kLabelBound: return "label-bound";
    case ErrorKind::kInvalidWidth: return "invalid-width";
    case ErrorKind::kDimensionMismatch: return "dimension-mismatch";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kNonFinite: return "non-finite";
    case ErrorKind::kSeries: return "series";
    case ErrorKind::kQuadrature: return "quadrature";
    case ErrorKind::kOverflow: return "overflow";
    case ErrorKind::kScale: return "scale";
    case ErrorKind::kInvalidEigenvalue: return "invalid-eigenvalue";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
  }
  return "unknown";
}

}  // namespace ntklab
