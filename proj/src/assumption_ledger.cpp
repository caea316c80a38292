#include "ntklab/assumption_ledger.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "json.hpp"
#include "ntklab/error.hpp"

namespace ntklab {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = std::numbers::pi;

constexpr const char* kLabels[kConditionCount] = {
    "i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x", "xi", "xii",
    "xiii"};

// log(sum exp(terms)) with a compensated inner sum; empty -> -inf.
double log_sum_exp(const std::vector<double>& terms) {
  double top = -kInf;
  for (double t : terms) top = std::max(top, t);
  if (top == -kInf) return -kInf;
  if (top == kInf) return kInf;
  double sum = 0.0, comp = 0.0;
  for (double t : terms) {
    const double v = std::exp(t - top);
    const double s = sum + v;
    comp += std::abs(sum) >= v ? (sum - s) + v : (v - s) + sum;
    sum = s;
  }
  return top + std::log(sum + comp);
}

double log_factorial(int u) { return std::lgamma(u + 1.0); }

// log(2T): -inf when T = 0.
double log_or_neg_inf(double x) { return x > 0.0 ? std::log(x) : -kInf; }

Condition make(double log_lhs, double log_rhs) {
  Condition c;
  c.log_lhs = log_lhs;
  c.log_rhs = log_rhs;
  if (log_lhs == -kInf) {
    c.margin = kInf;
  } else if (log_lhs == kInf) {
    c.margin = -kInf;
  } else {
    c.margin = log_rhs - log_lhs;
  }
  c.holds = c.margin >= 0.0;
  return c;
}

double log_viii_lhs(double T, int d, int U) {
  return U * (log_or_neg_inf(8.0 * T) - std::log(double(d))) - log_factorial(U);
}

nlohmann::ordered_json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "+inf" : "-inf";
}

}  // namespace

const char* condition_label(int index) {
  require(index >= 0 && index < kConditionCount, ErrorKind::kInvalidArgument,
          "condition index out of range");
  return kLabels[index];
}

void validate_params(const ParamTuple& p) {
  require(std::isfinite(p.n) && p.n >= 1 && std::floor(p.n) == p.n,
          ErrorKind::kInvalidArgument, "n must be a whole number >= 1");
  require(std::isfinite(p.m) && p.m >= 2 && std::floor(p.m) == p.m &&
              (p.m >= 0x1p53 || std::fmod(p.m, 2.0) == 0.0),
          ErrorKind::kInvalidWidth, "m must be an even whole number >= 2");
  require(p.d >= 3, ErrorKind::kUnsupportedDimension, "d must be >= 3");
  require(std::isfinite(p.epsilon) && p.epsilon > 0.0 && p.epsilon <= 2.0,
          ErrorKind::kInvalidArgument, "epsilon must lie in (0, 2]");
  require(std::isfinite(p.delta) && p.delta > 0.0 && p.delta < 1.0,
          ErrorKind::kInvalidArgument, "delta must lie in (0, 1)");
  require(std::isfinite(p.lambda_epsilon) && p.lambda_epsilon > 0.0,
          ErrorKind::kInvalidEigenvalue, "lambda_epsilon must be > 0");
  require(p.lambda_epsilon <= 1.0 / (4.0 * p.d) * (1.0 + 1e-15),
          ErrorKind::kInvalidEigenvalue,
          "lambda_epsilon exceeds the top eigenvalue 1/(4d)");
  require(!p.U || (*p.U >= 1 && *p.U <= kMaxU), ErrorKind::kInvalidArgument,
          "U must lie in [1, 64]");
  require(std::isfinite(p.C) && p.C > 0.0, ErrorKind::kInvalidArgument,
          "C must be > 0");
}

double derived_T(const ParamTuple& p) {
  return (2.0 / p.lambda_epsilon) * std::log(2.0 / p.epsilon);
}

std::optional<int> auto_select_U(const ParamTuple& params, int U_max) {
  validate_params(params);
  require(U_max >= 1 && U_max <= kMaxU, ErrorKind::kInvalidArgument,
          "U_max must lie in [1, 64]");
  const double T = derived_T(params);
  const double rhs = std::log(params.epsilon / 14.0);
  for (int U = 1; U <= U_max; ++U) {
    if (log_viii_lhs(T, params.d, U) <= rhs) return U;
  }
  return std::nullopt;
}

AssumptionReport check(const ParamTuple& params) {
  validate_params(params);
  AssumptionReport r;
  r.params = params;
  const double n = params.n;
  const double m = params.m;
  const double d = double(params.d);
  const double eps = params.epsilon;
  const double lam = params.lambda_epsilon;
  const double T = derived_T(params);
  r.T_epsilon = T;
  if (params.U) {
    r.U = *params.U;
  } else {
    r.U_auto = true;
    const auto U = auto_select_U(params);
    r.U_feasible = U.has_value();
    r.U = U.value_or(kMaxU);
  }
  const int U = r.U;
  const double log_delta6 = std::log(params.delta / 6.0);
  const double log_eps14 = std::log(eps / 14.0);
  const double log_T = log_or_neg_inf(T);
  auto& c = r.conditions;

  // (i) m e^{-d/16} <= delta/6
  c[0] = make(std::log(m) - d / 16.0, log_delta6);
  // (ii) sqrt(n) - C sqrt(d) >= (2/sqrt5) sqrt(n), i.e.
  //      C sqrt(d) <= (1 - 2/sqrt5) sqrt(n)
  c[1] = make(std::log(params.C) + 0.5 * std::log(d),
              std::log(1.0 - 2.0 / std::sqrt(5.0)) + 0.5 * std::log(n));
  // (iii) n e^{-2d} <= delta/6
  c[2] = make(std::log(n) - 2.0 * d, log_delta6);
  // (iv) n (e/2)^{-md/(40n)} <= delta/6
  c[3] = make(std::log(n) - (m * d / (40.0 * n)) * (1.0 - std::log(2.0)),
              log_delta6);
  // (v) 12 d^{1/4} / m^{1/4} <= sqrt(1/10) - 1/4
  c[4] = make(std::log(12.0) + 0.25 * (std::log(d) - std::log(m)),
              std::log(std::sqrt(0.1) - 0.25));
  // (vi) d/2 - 8/(m lambda^2 d) >= 1, i.e. 8/(m lambda^2 d) <= d/2 - 1
  c[5] = make(std::log(8.0) - std::log(m) - 2.0 * std::log(lam) - std::log(d),
              std::log(d / 2.0 - 1.0));
  // (vii) lambda >= 20 sqrt(log(2m)/m) + 16 / ((md)^{1/4} sqrt(pi lambda))
  c[6] = make(log_sum_exp({std::log(20.0) + 0.5 * (std::log(std::log(2.0 * m)) -
                                                   std::log(m)),
                           std::log(16.0) - 0.25 * std::log(m * d) -
                               0.5 * std::log(kPi * lam)}),
              std::log(lam));
  // (viii) (8T)^U / (d^U U!) <= eps/14
  c[7] = make(log_viii_lhs(T, params.d, U), log_eps14);
  // (ix) (32 sqrt2 / (sqrt(m) pi lambda)) sum_{u=2}^U T^u / (u! d^{u-1/2})
  {
    std::vector<double> terms;
    for (int u = 2; u <= U; ++u) {
      terms.push_back(u * log_T - log_factorial(u) - (u - 0.5) * std::log(d));
    }
    const double pre =
        std::log(32.0 * std::sqrt(2.0)) - 0.5 * std::log(m) - std::log(kPi * lam);
    c[8] = make(pre + log_sum_exp(terms), log_eps14);
  }
  // (x) (6 / (md)^{1/4}) sum_{u=2}^U (8T)^u / (d^u u!)
  {
    std::vector<double> terms;
    for (int u = 2; u <= U; ++u) terms.push_back(log_viii_lhs(T, params.d, u));
    c[9] = make(std::log(6.0) - 0.25 * std::log(m * d) + log_sum_exp(terms),
                log_eps14);
  }
  // (xi) 24 T / (m d^3)^{1/4}
  c[10] = make(std::log(24.0) + log_T - 0.25 * (std::log(m) + 3.0 * std::log(d)),
               log_eps14);
  // (xii) 4 T / ((m d^3)^{1/4} sqrt(pi lambda))
  c[11] = make(std::log(4.0) + log_T - 0.25 * (std::log(m) + 3.0 * std::log(d)) -
                   0.5 * std::log(kPi * lam),
               log_eps14);
  // (xiii) 2 sum_{u=1}^U (2T)^u / (u! d^u sqrt(floor(n/u)))
  {
    std::vector<double> terms;
    bool empty_block = false;
    for (int u = 1; u <= U; ++u) {
      const double blocks = std::floor(n / u);
      if (blocks == 0.0) {
        empty_block = true;
        break;
      }
      terms.push_back(u * (log_or_neg_inf(2.0 * T) - std::log(d)) -
                      log_factorial(u) - 0.5 * std::log(blocks));
    }
    c[12] = empty_block ? make(kInf, log_eps14)
                        : make(std::log(2.0) + log_sum_exp(terms), log_eps14);
  }

  r.all_hold = r.U_feasible &&
               std::all_of(c.begin(), c.end(),
                           [](const Condition& x) { return x.holds; });
  return r;
}

std::vector<int> binding_constraints(const AssumptionReport& report) {
  std::vector<int> order(kConditionCount);
  for (int i = 0; i < kConditionCount; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return report.conditions[a].margin < report.conditions[b].margin;
  });
  return order;
}

std::vector<int> failing_constraints(const AssumptionReport& report) {
  std::vector<int> out;
  for (int i : binding_constraints(report)) {
    if (!report.conditions[i].holds) out.push_back(i);
  }
  return out;
}

ParamTuple params_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kFormat, "parameter file must be an object");
  static const std::set<std::string> known = {
      "n", "m", "d", "epsilon", "delta", "lambda_epsilon", "U", "C"};
  for (const auto& [key, value] : j.items()) {
    require(known.count(key) == 1, ErrorKind::kFormat,
            "unknown parameter key '" + key + "'");
  }
  for (const char* key : {"n", "m", "d", "epsilon", "delta", "lambda_epsilon"}) {
    require(j.contains(key), ErrorKind::kFormat,
            std::string("missing parameter '") + key + "'");
  }
  auto integer = [&](const char* key) -> long {
    const auto& v = j.at(key);
    require(v.is_number_integer(), ErrorKind::kFormat,
            std::string("parameter '") + key + "' must be an integer");
    return v.get<long>();
  };
  auto real = [&](const char* key) -> double {
    const auto& v = j.at(key);
    require(v.is_number(), ErrorKind::kFormat,
            std::string("parameter '") + key + "' must be a number");
    return v.get<double>();
  };
  auto whole = [&](const char* key) -> double {
    const auto& v = j.at(key);
    require(v.is_number(), ErrorKind::kFormat,
            std::string("parameter '") + key + "' must be a number");
    const double x = v.get<double>();
    require(std::isfinite(x) && std::floor(x) == x, ErrorKind::kFormat,
            std::string("parameter '") + key + "' must be a whole number");
    return x;
  };
  ParamTuple p;
  p.n = whole("n");
  p.m = whole("m");
  const long d = integer("d");
  require(d >= 0 && d <= 1'000'000, ErrorKind::kInvalidArgument, "d out of range");
  p.d = int(d);
  p.epsilon = real("epsilon");
  p.delta = real("delta");
  p.lambda_epsilon = real("lambda_epsilon");
  if (j.contains("U") && !j.at("U").is_null()) {
    const long U = integer("U");
    require(U >= 1 && U <= kMaxU, ErrorKind::kInvalidArgument,
            "U must lie in [1, 64]");
    p.U = int(U);
  }
  if (j.contains("C")) p.C = real("C");
  validate_params(p);
  return p;
}

std::string report_json(const AssumptionReport& r) {
  nlohmann::ordered_json out;
  nlohmann::ordered_json params;
  auto whole = [](double x) {
    return x < 0x1p53 ? nlohmann::ordered_json(static_cast<long>(x))
                      : nlohmann::ordered_json(x);
  };
  params["n"] = whole(r.params.n);
  params["m"] = whole(r.params.m);
  params["d"] = r.params.d;
  params["epsilon"] = r.params.epsilon;
  params["delta"] = r.params.delta;
  params["lambda_epsilon"] = r.params.lambda_epsilon;
  params["U"] = r.params.U ? nlohmann::ordered_json(*r.params.U) : nullptr;
  params["C"] = r.params.C;
  out["params"] = params;
  out["C_note"] = "C is not pinned numerically; default 1.0 is a configuration choice";
  out["T_epsilon"] = r.T_epsilon;
  out["chosen_U"] = r.U_feasible ? nlohmann::ordered_json(r.U)
                                 : nlohmann::ordered_json("infeasible");
  out["U_auto"] = r.U_auto;
  nlohmann::ordered_json conds = nlohmann::ordered_json::array();
  for (int i = 0; i < kConditionCount; ++i) {
    const auto& c = r.conditions[i];
    nlohmann::ordered_json e;
    e["id"] = kLabels[i];
    e["holds"] = c.holds;
    e["margin"] = number_or_string(c.margin);
    e["lhs"] = number_or_string(std::exp(c.log_lhs));
    e["rhs"] = number_or_string(std::exp(c.log_rhs));
    conds.push_back(e);
  }
  out["conditions"] = conds;
  nlohmann::ordered_json binding = nlohmann::ordered_json::array();
  for (int i : binding_constraints(r)) binding.push_back(kLabels[i]);
  out["binding"] = binding;
  nlohmann::ordered_json failing = nlohmann::ordered_json::array();
  for (int i : failing_constraints(r)) failing.push_back(kLabels[i]);
  out["failing"] = failing;
  out["all_hold"] = r.all_hold;
  return out.dump(2) + "\n";
}

}  // namespace ntklab
