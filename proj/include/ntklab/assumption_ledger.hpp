#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace ntklab {

inline constexpr int kConditionCount = 13;
inline constexpr int kMaxU = 64;

// n and m are whole numbers held as doubles: the conditions only become
// jointly satisfiable at widths far beyond 64-bit integers.
struct ParamTuple {
  double n = 0;
  double m = 0;
  int d = 0;
  double epsilon = 0.0;         // (0, 2]; epsilon = 2 gives T = 0
  double delta = 0.0;           // (0, 1)
  double lambda_epsilon = 0.0;  // (0, 1/(4d)]
  std::optional<int> U;         // auto-selected when absent
  double C = 1.0;               // constant of condition (ii)
};

void validate_params(const ParamTuple& p);

// (2 / lambda) log(2 / epsilon)
double derived_T(const ParamTuple& p);

struct Condition {
  double log_lhs = 0.0;
  double log_rhs = 0.0;
  double margin = 0.0;  // log(rhs / lhs); +-inf when one side vanishes
  bool holds = false;
};

struct AssumptionReport {
  ParamTuple params;
  double T_epsilon = 0.0;
  int U = 0;                  // value the conditions were evaluated at
  bool U_auto = false;
  bool U_feasible = true;     // false when no U <= 64 satisfies (viii)
  std::array<Condition, kConditionCount> conditions{};
  bool all_hold = false;
};

// Roman label of condition index 0..12.
const char* condition_label(int index);

AssumptionReport check(const ParamTuple& params);

// Smallest U in [1, U_max] with condition (viii) holding.
std::optional<int> auto_select_U(const ParamTuple& params, int U_max = kMaxU);

// Condition indices ordered by margin, most binding first.
std::vector<int> binding_constraints(const AssumptionReport& report);

// Failing conditions only, same order.
std::vector<int> failing_constraints(const AssumptionReport& report);

// Strict JSON reader (unknown keys rejected) and report writer.
ParamTuple params_from_json(const std::string& text);
std::string report_json(const AssumptionReport& report);

}  // namespace ntklab
