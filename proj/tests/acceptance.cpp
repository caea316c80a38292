// Acceptance run: one PASS/FAIL line per criterion at the stated tolerances.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ledger_oracle.hpp"
#include "ntklab/assumption_ledger.hpp"
#include "ntklab/flow_engine.hpp"
#include "ntklab/ntk_kernel.hpp"
#include "ntklab/ntk_spectrum.hpp"
#include "ntklab/relu_net.hpp"
#include "ntklab/sphere_data.hpp"
#include "ntklab/verify_harness.hpp"

using namespace ntklab;

namespace {

int g_failures = 0;

void line(const std::string& id, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

const CheckResult& find(const SuiteReport& r, const std::string& name) {
  for (const auto& c : r.checks)
    if (c.name == name) return c;
  throw std::runtime_error("missing check " + name);
}

std::string freq(const CheckResult& c) {
  std::ostringstream os;
  os << "frequency " << c.value << " (need >= " << c.threshold << ")";
  return os.str();
}

std::string runtime(double s, double limit) {
  std::ostringstream os;
  os << "runtime " << s << " s (limit " << limit << " s)";
  return os.str();
}

// ------------------------------------------------------------------ 1

void spectrum_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_rel = 0.0, worst_abs = 0.0;
  bool h1_exact = true, h0_below = true;
  for (int d : {3, 4, 5, 10, 32}) {
    for (int h = 0; h <= 8; ++h) {
      const double c = eigenvalue_closed_form(h, d);
      const double q = eigenvalue_quadrature(h, d);
      if (h >= 3 && h % 2 == 1) {
        worst_abs = std::max({worst_abs, std::abs(q), std::abs(c)});
      } else {
        worst_rel = std::max(worst_rel, std::abs(c - q) / c);
      }
    }
    h1_exact = h1_exact && eigenvalue_closed_form(1, d) == 1.0 / (4.0 * d);
    h0_below = h0_below && eigenvalue_closed_form(0, d) < eigenvalue_closed_form(1, d);
  }
  const double secs = seconds_since(t0);
  line("1 spectrum closed form vs quadrature", worst_rel <= 1e-6 && worst_abs <= 1e-10,
       fmt("max relative error %.3g (tol 1e-6)", worst_rel) +
           fmt(", max |odd h>=3| %.3g (tol 1e-10)", worst_abs));
  line("1 spectrum h=1 equals 1/(4d) exactly", h1_exact, "d in {3,4,5,10,32}");
  line("1 spectrum value(h=0) < value(h=1)", h0_below, "d in {3,4,5,10,32}");
  line("1 spectrum runtime", secs < 30.0, runtime(secs, 30));
}

// ------------------------------------------------------------------ 2

void structural_identities() {
  const NetworkState s = init_antisymmetric(1024, 10, 1);
  const RowMatrix P = sample_sphere(10, 10000, 2);
  const double zero = forward_batch(s, P).cwiseAbs().maxCoeff();
  line("2 network zero at initialization", zero <= 1e-12,
       fmt("max |f_W(0)(x)| over 1e4 probes = %.3g (tol 1e-12)", zero));

  double worst_gram = 0.0, worst_kappa = 0.0;
  for (int t = 0; t < 20; ++t) {
    const int m = 2 * (1 + t % 16), d = 3 + t % 6, n = 2 + t % 11;
    RowMatrix W = init_antisymmetric(m, d, 100 + t).weights();
    Rng jit(200 + t);
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < d; ++k) W(j, k) += 0.3 * jit.normal();
    const NetworkState st = init_antisymmetric(m, d, 100 + t).with_weights(W);
    const RowMatrix X = sample_sphere(d, n, 300 + t);
    const Eigen::MatrixXd G = gradient_matrix(st, X);
    const Eigen::MatrixXd H = gram_matrix(st, X).H;
    worst_gram = std::max(worst_gram, (G.transpose() * G - H).cwiseAbs().maxCoeff());
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        const std::span<const double> xi(X.row(i).data(), d), xk(X.row(k).data(), d);
        const RowMatrix gi = gradient(st, xi), gk = gradient(st, xk);
        const double inner = (gi.array() * gk.array()).sum();
        worst_kappa = std::max(worst_kappa, std::abs(kappa_empirical(st, xi, xk) - inner));
      }
    }
  }
  line("2 G^T G = H_W", worst_gram <= 1e-10,
       fmt("max-abs gap over 20 instances %.3g (tol 1e-10)", worst_gram));
  line("2 kappa_W = <G(x), G(x')>_F", worst_kappa <= 1e-12,
       fmt("max-abs gap %.3g (tol 1e-12)", worst_kappa));
}

// ------------------------------------------------------------------ 3-8

void events_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport r = run_suite("events", Json(), 100, 0, jobs());
  const double secs = seconds_since(t0);
  const char* names[] = {"data_norm", "lambda_min", "lambda0_min", "boundary_count",
                         "weight_norm"};
  bool all = true;
  for (const char* n : names) {
    const auto& c = find(r, n);
    all = all && c.pass;
    line(std::string("3 event ") + n + " [" + c.bound + "]", c.pass, freq(c));
  }
  std::vector<double> lam, lam0, wmin;
  for (const auto& s : r.per_seed) {
    lam.push_back(s.values["lambda_min"].get<double>());
    lam0.push_back(s.values["lambda0_min"].get<double>());
    wmin.push_back(s.values["min_weight_norm"].get<double>());
  }
  std::ostringstream os;
  os << "median lambda_min " << median(lam) << " vs n/(5d) = " << 512.0 / 80.0
     << "; median lambda0_min " << median(lam0) << " vs n/(10d) = " << 512.0 / 160.0
     << "; median min_j ||w_j|| " << median(wmin) << " vs sqrt(d/2) = " << std::sqrt(8.0);
  line("3 event-frequency suite (all five events)", all && secs < 600.0,
       os.str() + "; " + runtime(secs, 600));
}

void kernel_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport r = run_suite("kernel", Json(), 50, 0, jobs());
  const double secs = seconds_since(t0);
  const auto& mono = find(r, "median_decreasing_in_m");
  const auto& env = find(r, "envelope");
  line("4 kernel median decreasing in m", mono.pass,
       "medians " + r.summary["median_estimates"].dump() + " at m " + r.summary["widths"].dump());
  line("4 kernel envelope 5 sqrt(log(2m)/m)", env.pass, freq(env));
  line("4 kernel runtime", secs < 900.0, runtime(secs, 900));
}

void overfit_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport r = run_suite("overfit", Json(), 10, 0, jobs());
  const double secs = seconds_since(t0);
  const auto& fin = find(r, "final_risk");
  const auto& mono = find(r, "nonincreasing");
  const auto& env = find(r, "envelope");
  std::vector<double> risks;
  for (const auto& s : r.per_seed) risks.push_back(s.values["final_risk"].get<double>());
  line("5 overfit R(f^_T) <= 0.1", fin.pass,
       freq(fin) + fmt(", median final risk %.4g", median(risks)));
  line("5 overfit risk non-increasing at checkpoints (all seeds)", mono.pass, freq(mono));
  line("5 overfit exp(-t/4d) envelope", env.pass, freq(env));
  line("5 overfit runtime", secs < 1200.0, runtime(secs, 1200));
}

void approx_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport r = run_suite("approx", Json(), 10, 0, jobs());
  const double secs = seconds_since(t0);
  const auto& fin = find(r, "final");
  const auto& mv = find(r, "movement");
  std::vector<double> z;
  for (const auto& s : r.per_seed) z.push_back(s.values["final_zeta_norm"].get<double>());
  line("6 approx ||zeta_T|| <= eps/2 + 3 stderr", fin.pass,
       freq(fin) + fmt(", median ||zeta_T|| %.4g (eps/2 = 0.1)", median(z)));
  line("6 approx movement radius 2 sqrt2/(lambda sqrt(md))", mv.pass, freq(mv));
  line("6 approx runtime", secs < 1800.0, runtime(secs, 1800));
}

void estimation_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport r = run_suite("estimation", Json(), 10, 0, jobs());
  const double secs = seconds_since(t0);
  const auto& zero = find(r, "gap_zero_at_start");
  const auto& mono = find(r, "median_gap_decreasing");
  line("7 estimation gap(0) = 0 in all runs", zero.pass, freq(zero));
  line("7 estimation median gap decreasing along n ladder [surrogate]", mono.pass,
       "medians " + r.summary["median_gap_final"].dump() + " at n " + r.summary["ladder"].dump());
  line("7 estimation runtime", secs < 2700.0, runtime(secs, 2700));
}

void benign_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport r = run_suite("benign", Json(), 10, 0, jobs());
  const double secs = seconds_since(t0);
  const auto& c = find(r, "conjunction");
  line("8 benign conjunction [surrogate: true]", c.pass && c.surrogate, freq(c));
  line("8 benign runtime", secs < 2700.0, runtime(secs, 2700));
}

// ------------------------------------------------------------------ 9

void ledger() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto flips = ledger_oracle::monotonicity_flips(100, 2024);
  line("9 ledger monotonicity (100 ladders)", flips.empty(),
       std::to_string(flips.size()) + " flips" + (flips.empty() ? "" : ": " + flips.front()));
  const auto cmp = ledger_oracle::compare_direct(400, 42);
  line("9 ledger log-space vs direct", cmp.worst_rel <= 1e-12 && cmp.verdict_mismatches == 0,
       fmt("max relative gap %.3g (tol 1e-12) over ", cmp.worst_rel) +
           std::to_string(cmp.compared) + " sides");
  ParamTuple p;
  p.n = 1000;
  p.m = 1e6;
  p.d = 4;
  p.epsilon = 0.2;
  p.delta = 0.1;
  p.lambda_epsilon = 1.0 / 16.0;
  const AssumptionReport r = check(p);
  const auto failing = failing_constraints(r);
  const auto binding = binding_constraints(r);
  const bool v_failing = std::find(failing.begin(), failing.end(), 4) != failing.end();
  const int rank = int(std::find(binding.begin(), binding.end(), 4) - binding.begin());
  std::ostringstream os;
  os << "all_hold " << r.all_hold << ", (v) failing " << v_failing << ", (v) binding rank "
     << rank + 1 << " of 13, most binding (" << condition_label(binding.front()) << ")";
  line("9 ledger d=4, m=1e6 fails with (v) binding", !r.all_hold && v_failing, os.str());
  const double secs = seconds_since(t0);
  line("9 ledger runtime", secs < 60.0, runtime(secs, 60));
}

// ------------------------------------------------------------------ 10

std::string train_bytes(const std::string& mode) {
  const int d = 6;
  Vector beta = Vector::Zero(d);
  beta(0) = 0.7;
  const auto f = RegressionFunction::linear(beta);
  const Dataset data = make_dataset(f, NoiseModel::uniform(0.1), d, 60, 5);
  const NetworkState s0 = init_antisymmetric(256, d, 6);
  FlowConfig c;
  c.t_end = 10.0;
  c.pop_batch = 512;
  c.mc_risk = 4000;
  c.seed = 7;
  Trajectory t;
  if (mode == "empirical") t = run_empirical(s0, data, c, &f);
  else if (mode == "population") t = run_population(s0, f, c);
  else t = run_joint(s0, data, f, c);
  std::ostringstream os;
  write_trajectory_csv(os, t);
  write_checkpoint(os, *t.final_state);
  return os.str();
}

void determinism() {
  bool ok = true;
  std::string detail;
  for (const std::string mode : {"empirical", "population", "joint"}) {
    const bool same = train_bytes(mode) == train_bytes(mode);
    ok = ok && same;
    detail += "train " + mode + (same ? " identical; " : " DIFFERS; ");
  }
  const std::vector<std::pair<std::string, Json>> small = {
      {"events", Json{{"n", 64}, {"m", 1024}}},
      {"kernel", Json{{"probes", 128}, {"widths", {64, 256}}}},
      {"overfit", Json{{"d", 5}, {"n", 20}, {"m", 256}, {"epsilon", 0.5}}},
      {"approx", Json{{"d", 5}, {"m", 128}, {"epsilon", 0.5}, {"pop_batch", 256},
                      {"mc_risk", 1000}, {"proxy_samples", 1000}}},
      {"estimation", Json{{"d", 5}, {"m", 128}, {"epsilon", 0.5}, {"ladder", {10, 20}},
                          {"pop_batch", 256}, {"mc_risk", 1000}}},
      {"benign", Json{{"d", 5}, {"n", 20}, {"m", 128}, {"epsilon", 0.5}, {"mc_risk", 1000}}},
  };
  for (const auto& [suite, ov] : small) {
    const std::string a = suite_report_json(run_suite(suite, ov, 3, 11, 1));
    const std::string b = suite_report_json(run_suite(suite, ov, 3, 11, 3));
    ok = ok && a == b;
    detail += "verify " + suite + (a == b ? " identical; " : " DIFFERS; ");
  }
  line("10 determinism (repeat with identical config and seeds)", ok, detail);
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void()>>> criteria = {
      {"1", spectrum_correctness}, {"2", structural_identities}, {"3", events_suite},
      {"4", kernel_suite},         {"5", overfit_suite},         {"6", approx_suite},
      {"7", estimation_suite},     {"8", benign_suite},          {"9", ledger},
      {"10", determinism}};
  for (const auto& [id, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      line(std::string(id) + " (exception)", false, e.what());
    }
  }
  std::printf("%d failing line(s)\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
