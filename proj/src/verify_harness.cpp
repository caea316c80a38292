#include "ntklab/verify_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <thread>

#include "ntklab/error.hpp"
#include "ntklab/flow_engine.hpp"
#include "ntklab/ntk_kernel.hpp"
#include "ntklab/ntk_spectrum.hpp"
#include "ntklab/relu_net.hpp"
#include "ntklab/sphere_data.hpp"

namespace ntklab {
namespace {

using SeedFn = std::function<SeedResult(const Json&, std::uint64_t)>;

int geti(const Json& c, const char* key) { return c.at(key).get<int>(); }
double getd(const Json& c, const char* key) { return c.at(key).get<double>(); }

Rng suite_stream(const std::string& suite, std::uint64_t seed) {
  return Rng(seed).split("suite/" + suite);
}

std::uint64_t derive_seed(Rng stream) { return stream(); }

Vector random_beta(int d, double norm, Rng stream) {
  const RowMatrix u = sample_sphere(d, 1, stream);
  return u.row(0).transpose() * norm;
}

NoiseModel noise_model(const Json& c) {
  const double b = getd(c, "noise");
  if (b == 0.0) return NoiseModel::none();
  const std::string kind = c.at("noise_kind").get<std::string>();
  if (kind == "two_point") return NoiseModel::two_point(b);
  require(kind == "uniform", ErrorKind::kInvalidArgument,
          "noise_kind must be uniform or two_point");
  return NoiseModel::uniform(b);
}

FlowConfig flow_config(const Json& c, double t_end, std::uint64_t seed) {
  FlowConfig f;
  f.eta = getd(c, "eta");
  f.t_end = t_end;
  f.checkpoint_every = c.at("checkpoint_every").get<long>();
  if (c.contains("pop_batch")) f.pop_batch = geti(c, "pop_batch");
  if (c.contains("mc_risk")) f.mc_risk = geti(c, "mc_risk");
  f.seed = seed;
  return f;
}

Json to_json_array(const std::vector<double>& v) {
  Json out = Json::array();
  for (double x : v) out.push_back(x);
  return out;
}

CheckResult frequency_check(const std::string& name, const std::string& bound,
                            const std::vector<SeedResult>& seeds,
                            const char* flag, double threshold) {
  CheckResult c;
  c.name = name;
  c.bound = bound;
  c.threshold = threshold;
  std::size_t hits = 0;
  for (const auto& s : seeds) hits += s.values.at(flag).get<bool>() ? 1 : 0;
  c.value = seeds.empty() ? 0.0 : double(hits) / double(seeds.size());
  c.pass = c.value >= threshold;
  return c;
}

// ---------------------------------------------------------------- events

SeedResult events_seed(const Json& c, std::uint64_t seed) {
  const int d = geti(c, "d"), n = geti(c, "n"), m = geti(c, "m");
  const Rng s = suite_stream("events", seed);
  Rng data_rng = s.split("data");
  Rng init_rng = s.split("init");
  const RowMatrix X = sample_sphere(d, n, data_rng);
  const NetworkState state = init_antisymmetric(m, d, init_rng);

  const double x_norm = data_spectral_norm(X);
  const double x_bound = 2.0 * std::sqrt(double(n) / d);
  const GramMatrix H = gram_analytical(X);
  const double lam = min_eigenvalue(H);
  const double lam_bound = double(n) / (5.0 * d);
  const double lam0 = min_eigenvalue(gram_matrix(state, X));
  const double lam0_bound = double(n) / (10.0 * d);
  const double radius = getd(c, "boundary_radius_factor") * std::sqrt(double(d) / m);
  const std::vector<int> counts = active_boundary_count(state, X, radius);
  const int max_count = *std::max_element(counts.begin(), counts.end());
  const double count_bound = 33.0 * std::sqrt(double(m) * d);
  const double min_w = state.weights().rowwise().norm().minCoeff();
  const double w_bound = std::sqrt(d / 2.0);

  SeedResult r;
  r.seed = seed;
  auto& v = r.values;
  v["x_norm"] = x_norm;
  v["x_norm_bound"] = x_bound;
  v["x_norm_event"] = x_norm <= x_bound;
  v["lambda_min"] = lam;
  v["lambda_min_bound"] = lam_bound;
  v["lambda_min_event"] = lam >= lam_bound;
  v["lambda0_min"] = lam0;
  v["lambda0_min_bound"] = lam0_bound;
  v["lambda0_min_event"] = lam0 >= lam0_bound;
  // lambda_min <= trace / n = 1/2 for the analytical Gram.
  v["gram_trace_over_n"] = H.H.trace() / n;
  v["boundary_radius"] = radius;
  v["max_boundary"] = max_count;
  v["boundary_bound"] = count_bound;
  v["boundary_event"] = max_count <= count_bound;
  v["min_weight_norm"] = min_w;
  v["weight_norm_bound"] = w_bound;
  v["weight_norm_event"] = min_w >= w_bound;
  r.pass = v["x_norm_event"].get<bool>() && v["lambda_min_event"].get<bool>() &&
           v["lambda0_min_event"].get<bool>() && v["boundary_event"].get<bool>() &&
           v["weight_norm_event"].get<bool>();
  return r;
}

void events_aggregate(const Json& c, SuiteReport& rep) {
  const double th = getd(c, "threshold");
  rep.thresholds["event_frequency"] = th;
  rep.checks.push_back(frequency_check("data_norm", "||X||_2 <= 2 sqrt(n/d)",
                                       rep.per_seed, "x_norm_event", th));
  rep.checks.push_back(frequency_check("lambda_min", "lambda_min(H) >= n/(5d)",
                                       rep.per_seed, "lambda_min_event", th));
  rep.checks.push_back(frequency_check("lambda0_min",
                                       "lambda_min(H_0) >= n/(10d)",
                                       rep.per_seed, "lambda0_min_event", th));
  rep.checks.push_back(frequency_check("boundary_count",
                                       "max_i |B_i| <= 33 sqrt(md)",
                                       rep.per_seed, "boundary_event", th));
  rep.checks.push_back(frequency_check("weight_norm",
                                       "min_j ||w_j(0)||_2 >= sqrt(d/2)",
                                       rep.per_seed, "weight_norm_event", th));
  std::vector<double> lam, lam0;
  for (const auto& s : rep.per_seed) {
    lam.push_back(s.values.at("lambda_min").get<double>());
    lam0.push_back(s.values.at("lambda0_min").get<double>());
  }
  rep.summary["median_lambda_min"] = median(lam);
  rep.summary["median_lambda0_min"] = median(lam0);
}

// ---------------------------------------------------------------- kernel

SeedResult kernel_seed(const Json& c, std::uint64_t seed) {
  const int d = geti(c, "d"), probes = geti(c, "probes");
  const Rng s = suite_stream("kernel", seed);
  SeedResult r;
  r.seed = seed;
  std::vector<double> est, bound;
  bool ok = true;
  for (const auto& mj : c.at("widths")) {
    const int m = mj.get<int>();
    Rng init_rng = s.split("init").split(std::uint64_t(m));
    Rng probe_rng = s.split("probes").split(std::uint64_t(m));
    const NetworkState state = init_antisymmetric(m, d, init_rng);
    const double e = operator_norm_diff(state, probes, probe_rng);
    const double b = 5.0 * std::sqrt(std::log(2.0 * m) / m);
    est.push_back(e);
    bound.push_back(b);
    ok = ok && e <= b;
  }
  r.values["estimates"] = to_json_array(est);
  r.values["bounds"] = to_json_array(bound);
  r.values["envelope_event"] = ok;
  r.pass = ok;
  return r;
}

void kernel_aggregate(const Json& c, SuiteReport& rep) {
  const double th = getd(c, "threshold");
  rep.thresholds["envelope_frequency"] = th;
  const auto widths = c.at("widths");
  std::vector<double> med;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    std::vector<double> v;
    for (const auto& s : rep.per_seed) v.push_back(s.values["estimates"][k].get<double>());
    med.push_back(median(v));
  }
  bool decreasing = true;
  for (std::size_t k = 1; k < med.size(); ++k) decreasing = decreasing && med[k] < med[k - 1];
  rep.summary["widths"] = widths;
  rep.summary["median_estimates"] = to_json_array(med);
  CheckResult mono;
  mono.name = "median_decreasing_in_m";
  mono.bound = "median Nystrom ||H_0 - H||_2 strictly decreasing along the width ladder";
  mono.value = decreasing ? 1.0 : 0.0;
  mono.threshold = 1.0;
  mono.pass = decreasing;
  rep.checks.push_back(mono);
  rep.checks.push_back(frequency_check("envelope",
                                       "estimate <= 5 sqrt(log(2m)/m) for every m",
                                       rep.per_seed, "envelope_event", th));
}

// ---------------------------------------------------------------- overfit

SeedResult overfit_seed(const Json& c, std::uint64_t seed) {
  const int d = geti(c, "d"), n = geti(c, "n"), m = geti(c, "m");
  const double eps = getd(c, "epsilon");
  const Rng s = suite_stream("overfit", seed);
  const RegressionFunction f =
      RegressionFunction::linear(random_beta(d, getd(c, "beta_norm"), s.split("target")));
  const Dataset data = make_dataset(f, noise_model(c), d, n, derive_seed(s.split("data")));
  Rng init_rng = s.split("init");
  const NetworkState state0 = init_antisymmetric(m, d, init_rng);
  const double T = 8.0 * d * std::log(2.0 / eps);
  FlowConfig fc = flow_config(c, T, derive_seed(s.split("flow")));
  fc.gradient_drift = true;
  const Trajectory tr = run_empirical(state0, data, fc);

  bool monotone = true, envelope = true, movement = true, drift = true;
  const double move_bound = 32.0 * std::sqrt(double(d) / m);
  const double drift_bound = 12.0 * std::sqrt(double(n)) / std::pow(double(m) * d, 0.25);
  std::vector<double> env;
  double worst_drift = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double e = std::exp(-tr.times[i] / (4.0 * d));
    env.push_back(e);
    if (i > 0 && tr.empirical_risk[i] > tr.empirical_risk[i - 1]) monotone = false;
    if (tr.empirical_risk[i] > e) envelope = false;
    if (tr.max_move[i] > move_bound) movement = false;
    worst_drift = std::max(worst_drift, tr.gradient_drift[i]);
  }
  drift = worst_drift <= drift_bound;
  const double final_risk = tr.empirical_risk.back();

  SeedResult r;
  r.seed = seed;
  auto& v = r.values;
  v["T"] = T;
  v["steps"] = tr.total_steps;
  v["initial_risk"] = tr.empirical_risk.front();
  v["final_risk"] = final_risk;
  v["final_risk_event"] = final_risk <= eps;
  v["checkpoints_nonincreasing"] = monotone;
  v["step_descent_violations"] = tr.descent_violations;
  v["envelope_event"] = envelope;
  v["times"] = to_json_array(tr.times);
  v["risk_curve"] = to_json_array(tr.empirical_risk);
  v["envelope"] = to_json_array(env);
  v["max_move"] = *std::max_element(tr.max_move.begin(), tr.max_move.end());
  v["movement_bound"] = move_bound;
  v["movement_event"] = movement;
  v["max_gradient_drift"] = worst_drift;
  v["gradient_drift_bound"] = drift_bound;
  v["gradient_drift_event"] = drift;
  r.pass = final_risk <= eps && monotone;
  return r;
}

void overfit_aggregate(const Json& c, SuiteReport& rep) {
  const double th = getd(c, "threshold");
  const double env_th = getd(c, "envelope_threshold");
  rep.thresholds["final_risk_frequency"] = th;
  rep.thresholds["nonincreasing_frequency"] = 1.0;
  rep.thresholds["envelope_frequency"] = env_th;
  rep.checks.push_back(frequency_check("final_risk", "R(f^_T) <= epsilon",
                                       rep.per_seed, "final_risk_event", th));
  rep.checks.push_back(frequency_check("nonincreasing",
                                       "empirical risk non-increasing at every checkpoint",
                                       rep.per_seed, "checkpoints_nonincreasing", 1.0));
  rep.checks.push_back(frequency_check("envelope",
                                       "R(f^_t) <= exp(-t/(4d)) at every checkpoint",
                                       rep.per_seed, "envelope_event", env_th));
  auto movement = frequency_check("movement", "max_j ||w_j(t) - w_j(0)|| <= 32 sqrt(d/m)",
                                  rep.per_seed, "movement_event", 0.9);
  movement.informational = true;
  rep.checks.push_back(movement);
  auto drift = frequency_check("gradient_drift",
                               "||G^_0 - G^_t||_2 <= 12 sqrt(n)/(md)^{1/4}",
                               rep.per_seed, "gradient_drift_event", 0.9);
  drift.informational = true;
  rep.checks.push_back(drift);
}

// ---------------------------------------------------------------- approx

SeedResult approx_seed(const Json& c, std::uint64_t seed) {
  const int d = geti(c, "d"), m = geti(c, "m");
  const double eps = getd(c, "epsilon");
  const Rng s = suite_stream("approx", seed);
  const RegressionFunction f =
      RegressionFunction::linear(random_beta(d, getd(c, "beta_norm"), s.split("target")));
  const EpsilonPlan plan = plan_epsilon(f, d, eps, build_spectrum(d, 8), 0, 0);
  Rng init_rng = s.split("init");
  const NetworkState state0 = init_antisymmetric(m, d, init_rng);
  const FlowConfig fc = flow_config(c, plan.T_epsilon, derive_seed(s.split("flow")));
  const Trajectory tr = run_population(state0, f, fc);

  const double lam = plan.lambda_epsilon;
  const double move_bound = 2.0 * std::sqrt(2.0) / (lam * std::sqrt(double(m) * d));
  bool envelope = true, movement = true;
  std::vector<double> root, root_se;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const L2Estimate z{std::sqrt(tr.excess_risk[i]),
                       tr.excess_risk[i] > 0.0
                           ? tr.excess_risk_stderr[i] / (2.0 * std::sqrt(tr.excess_risk[i]))
                           : 0.0};
    root.push_back(z.estimate);
    root_se.push_back(z.stderr);
    if (z.estimate > std::exp(-lam * tr.times[i] / 2.0) + 3.0 * z.stderr) envelope = false;
    if (tr.max_move[i] > move_bound) movement = false;
  }
  const bool final_ok = root.back() <= eps / 2.0 + 3.0 * root_se.back();

  // Degree <= 2 residual of zeta_T beyond the covered orders (informational
  // proxy for the T' guard).
  Rng proxy_rng = s.split("proxy");
  const RowMatrix P = sample_sphere(d, geti(c, "proxy_samples"), proxy_rng);
  const Vector zeta = f.evaluate(P) - forward_batch(*tr.final_state, P);
  const HarmonicMasses masses = project_degree2(P, zeta);
  double tail = masses.residual;
  for (int h = 0; h < 3; ++h) {
    if (std::find(plan.orders_covered.begin(), plan.orders_covered.end(), h) ==
        plan.orders_covered.end()) {
      tail += masses.energy[h];
    }
  }

  SeedResult r;
  r.seed = seed;
  auto& v = r.values;
  v["lambda_epsilon"] = lam;
  v["T_epsilon"] = plan.T_epsilon;
  v["steps"] = tr.total_steps;
  v["times"] = to_json_array(tr.times);
  v["zeta_norm"] = to_json_array(root);
  v["zeta_norm_stderr"] = to_json_array(root_se);
  v["final_zeta_norm"] = root.back();
  v["final_bound"] = eps / 2.0;
  v["final_event"] = final_ok;
  v["envelope_event"] = envelope;
  v["max_move"] = *std::max_element(tr.max_move.begin(), tr.max_move.end());
  v["movement_bound"] = move_bound;
  v["movement_event"] = movement;
  v["tail_proxy"] = std::sqrt(tail);
  r.pass = final_ok && envelope && movement;
  return r;
}

void approx_aggregate(const Json& c, SuiteReport& rep) {
  const double th = getd(c, "threshold");
  rep.thresholds["final_frequency"] = th;
  rep.thresholds["envelope_frequency"] = th;
  rep.thresholds["movement_frequency"] = th;
  rep.thresholds["stderr_multiplier"] = 3.0;
  rep.checks.push_back(frequency_check("final", "||zeta_T||_2 <= epsilon/2 + 3 stderr",
                                       rep.per_seed, "final_event", th));
  rep.checks.push_back(frequency_check("envelope",
                                       "||zeta_t||_2 <= exp(-lambda t/2) + 3 stderr at every checkpoint",
                                       rep.per_seed, "envelope_event", th));
  rep.checks.push_back(frequency_check("movement",
                                       "max_move <= 2 sqrt2 / (lambda sqrt(md)) at every checkpoint",
                                       rep.per_seed, "movement_event", th));
  std::vector<double> proxy;
  for (const auto& s : rep.per_seed) proxy.push_back(s.values.at("tail_proxy").get<double>());
  rep.summary["median_tail_proxy"] = median(proxy);
}

// ---------------------------------------------------------------- estimation

SeedResult estimation_seed(const Json& c, std::uint64_t seed) {
  const int d = geti(c, "d"), m = geti(c, "m");
  const double eps = getd(c, "epsilon");
  const Rng s = suite_stream("estimation", seed);
  const RegressionFunction f =
      RegressionFunction::linear(random_beta(d, getd(c, "beta_norm"), s.split("target")));
  const EpsilonPlan plan = plan_epsilon(f, d, eps, build_spectrum(d, 8), 0, 0);
  std::vector<Dataset> datasets;
  for (const auto& nj : c.at("ladder")) {
    const int n = nj.get<int>();
    datasets.push_back(make_dataset(f, noise_model(c), d, n,
                                    derive_seed(s.split("data").split(std::uint64_t(n)))));
  }
  std::vector<const Dataset*> ptrs;
  for (const auto& ds : datasets) ptrs.push_back(&ds);
  Rng init_rng = s.split("init");
  const NetworkState state0 = init_antisymmetric(m, d, init_rng);
  const FlowConfig fc = flow_config(c, plan.T_epsilon, derive_seed(s.split("flow")));
  const JointRun run = run_joint_ladder(state0, ptrs, f, fc);

  std::vector<double> gap0, gapT, seT, riskT;
  bool zero_start = true;
  for (const auto& tr : run.empirical) {
    gap0.push_back(tr.estimation_gap.front());
    gapT.push_back(tr.estimation_gap.back());
    seT.push_back(tr.estimation_gap_stderr.back());
    riskT.push_back(tr.empirical_risk.back());
    zero_start = zero_start && tr.estimation_gap.front() == 0.0;
  }
  bool decreasing = true;
  for (std::size_t k = 1; k < gapT.size(); ++k) {
    const double slack = 2.0 * std::hypot(seT[k], seT[k - 1]);
    decreasing = decreasing && gapT[k] < gapT[k - 1] + slack;
  }
  SeedResult r;
  r.seed = seed;
  auto& v = r.values;
  v["T_epsilon"] = plan.T_epsilon;
  v["ladder"] = c.at("ladder");
  v["gap_initial"] = to_json_array(gap0);
  v["gap_final"] = to_json_array(gapT);
  v["gap_final_stderr"] = to_json_array(seT);
  v["empirical_risk_final"] = to_json_array(riskT);
  v["population_excess_final"] = run.population.excess_risk.back();
  v["gap_zero_at_start"] = zero_start;
  v["gap_decreasing"] = decreasing;
  v["gap_within_half_epsilon"] = gapT.back() <= eps / 2.0;
  r.pass = zero_start && decreasing;
  return r;
}

void estimation_aggregate(const Json& c, SuiteReport& rep) {
  rep.thresholds["gap_zero_frequency"] = 1.0;
  rep.thresholds["stderr_multiplier"] = 2.0;
  rep.checks.push_back(frequency_check("gap_zero_at_start", "estimation_gap(0) = 0 exactly",
                                       rep.per_seed, "gap_zero_at_start", 1.0));
  const std::size_t K = c.at("ladder").size();
  std::vector<double> med, med_se;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> g, se;
    for (const auto& s : rep.per_seed) {
      g.push_back(s.values["gap_final"][k].get<double>());
      se.push_back(s.values["gap_final_stderr"][k].get<double>());
    }
    med.push_back(median(g));
    med_se.push_back(median(se));
  }
  bool decreasing = true;
  for (std::size_t k = 1; k < K; ++k) {
    decreasing = decreasing && med[k] < med[k - 1] + 2.0 * std::hypot(med_se[k], med_se[k - 1]);
  }
  rep.summary["ladder"] = c.at("ladder");
  rep.summary["median_gap_final"] = to_json_array(med);
  rep.summary["median_gap_stderr"] = to_json_array(med_se);
  rep.summary["half_epsilon"] = getd(c, "epsilon") / 2.0;
  CheckResult mono;
  mono.name = "median_gap_decreasing";
  mono.bound = "median estimation_gap(T) strictly decreasing along the n ladder (2 stderr slack)";
  mono.value = decreasing ? 1.0 : 0.0;
  mono.threshold = 1.0;
  mono.pass = decreasing;
  mono.surrogate = true;
  rep.checks.push_back(mono);
  auto absolute = frequency_check("gap_within_half_epsilon",
                                  "estimation_gap(T) <= epsilon/2 at the largest n",
                                  rep.per_seed, "gap_within_half_epsilon", 1.0);
  absolute.informational = true;
  rep.checks.push_back(absolute);
  rep.surrogate_flags["median_gap_decreasing"] = true;
}

// ---------------------------------------------------------------- benign

struct BenignOutcome {
  double risk = 0.0;
  double excess = 0.0;
  double excess_se = 0.0;
  double T = 0.0;
};

BenignOutcome benign_run(const Json& c, const Rng& s, double beta_norm,
                         const NoiseModel& noise) {
  const int d = geti(c, "d"), n = geti(c, "n"), m = geti(c, "m");
  const double eps = getd(c, "epsilon");
  const RegressionFunction f =
      RegressionFunction::linear(random_beta(d, beta_norm, s.split("target")));
  const EpsilonPlan plan = plan_epsilon(f, d, eps, build_spectrum(d, 8), 0, 0);
  const Dataset data = make_dataset(f, noise, d, n, derive_seed(s.split("data")));
  Rng init_rng = s.split("init");
  const NetworkState state0 = init_antisymmetric(m, d, init_rng);
  const FlowConfig fc = flow_config(c, plan.T_epsilon, derive_seed(s.split("flow")));
  const Trajectory tr = run_empirical(state0, data, fc, &f);
  return {tr.empirical_risk.back(), tr.excess_risk.back(),
          tr.excess_risk_stderr.back(), plan.T_epsilon};
}

SeedResult benign_seed(const Json& c, std::uint64_t seed) {
  const double eps = getd(c, "epsilon");
  const Rng s = suite_stream("benign", seed);
  const BenignOutcome o = benign_run(c, s, getd(c, "beta_norm"), noise_model(c));
  SeedResult r;
  r.seed = seed;
  auto& v = r.values;
  v["T_epsilon"] = o.T;
  v["empirical_risk"] = o.risk;
  v["excess_risk"] = o.excess;
  v["excess_risk_stderr"] = o.excess_se;
  v["empirical_event"] = o.risk <= eps;
  v["excess_event"] = o.excess <= eps + 3.0 * o.excess_se;
  v["conjunction_event"] = v["empirical_event"].get<bool>() && v["excess_event"].get<bool>();
  r.pass = v["conjunction_event"].get<bool>();
  return r;
}

void benign_aggregate(const Json& c, SuiteReport& rep) {
  const double th = getd(c, "threshold");
  rep.thresholds["conjunction_frequency"] = th;
  rep.thresholds["stderr_multiplier"] = 3.0;
  auto conj = frequency_check("conjunction",
                              "R(f^_T) <= epsilon and ||f^_T - f*||^2 <= epsilon + 3 stderr",
                              rep.per_seed, "conjunction_event", th);
  conj.surrogate = true;
  rep.checks.push_back(conj);
  rep.surrogate_flags["conjunction"] = true;
  if (c.at("large_noise_trace").get<bool>() && !rep.per_seed.empty()) {
    // Observation run: noise b = 0.5 with the target shrunk to keep |y| <= 1.
    const Rng s = suite_stream("benign", rep.per_seed.front().seed).split("large-noise");
    const BenignOutcome o = benign_run(c, s, 0.5, NoiseModel::uniform(0.5));
    Json trace;
    trace["beta_norm"] = 0.5;
    trace["noise"] = 0.5;
    trace["empirical_risk"] = o.risk;
    trace["excess_risk"] = o.excess;
    trace["excess_risk_stderr"] = o.excess_se;
    rep.summary["large_noise_trace"] = trace;
  }
}

// ---------------------------------------------------------------- registry

struct SuiteDef {
  std::string name;
  Json defaults;
  SeedFn seed_fn;
  std::function<void(const Json&, SuiteReport&)> aggregate;
  std::function<void(const Json&)> validate;
};

void require_positive_int(const Json& c, const char* key, long max_value) {
  require(c.at(key).is_number_integer(), ErrorKind::kInvalidArgument,
          std::string("'") + key + "' must be an integer");
  const long v = c.at(key).get<long>();
  require(v >= 1 && v <= max_value, ErrorKind::kInvalidArgument,
          std::string("'") + key + "' out of range");
}

void require_number(const Json& c, const char* key, double lo, double hi) {
  require(c.at(key).is_number(), ErrorKind::kInvalidArgument,
          std::string("'") + key + "' must be a number");
  const double v = c.at(key).get<double>();
  require(std::isfinite(v) && v >= lo && v <= hi, ErrorKind::kInvalidArgument,
          std::string("'") + key + "' out of range");
}

void validate_common(const Json& c) {
  for (const char* key : {"d", "m", "n"}) {
    if (c.contains(key)) require_positive_int(c, key, 1 << 20);
  }
  if (c.contains("d")) {
    require(geti(c, "d") >= kMinDimension, ErrorKind::kUnsupportedDimension,
            "d must be >= 3");
  }
  if (c.contains("m")) {
    require(geti(c, "m") % 2 == 0, ErrorKind::kInvalidWidth, "m must be even");
  }
  if (c.contains("epsilon")) require_number(c, "epsilon", 1e-9, 1.0 - 1e-12);
  if (c.contains("threshold")) require_number(c, "threshold", 0.0, 1.0);
  if (c.contains("beta_norm")) require_number(c, "beta_norm", 0.0, 1.0);
  if (c.contains("noise")) require_number(c, "noise", 0.0, 1.0);
  if (c.contains("eta")) require_number(c, "eta", 1e-9, 1e9);
  if (c.contains("checkpoint_every")) {
    require(c.at("checkpoint_every").is_number_integer() &&
                c.at("checkpoint_every").get<long>() >= 0,
            ErrorKind::kInvalidArgument, "'checkpoint_every' must be >= 0");
  }
  for (const char* key : {"pop_batch", "mc_risk", "probes", "proxy_samples"}) {
    if (c.contains(key)) require_positive_int(c, key, 10'000'000);
  }
  if (c.contains("noise_kind")) {
    require(c.at("noise_kind").is_string(), ErrorKind::kInvalidArgument,
            "'noise_kind' must be a string");
  }
}

const std::vector<SuiteDef>& registry() {
  static const std::vector<SuiteDef> defs = [] {
    std::vector<SuiteDef> v;
    v.push_back({"events",
                 Json{{"seeds", 100}, {"d", 16}, {"n", 512}, {"m", 16384},
                      {"boundary_radius_factor", 32.0}, {"threshold", 0.95}},
                 events_seed, events_aggregate, [](const Json& c) {
                   require(geti(c, "n") <= 2048 && geti(c, "m") <= 65536,
                           ErrorKind::kScale,
                           "events suite capped at n <= 2048, m <= 65536");
                 }});
    v.push_back({"kernel",
                 Json{{"seeds", 50}, {"d", 16}, {"probes", 2048},
                      {"widths", Json::array({256, 1024, 4096, 16384})},
                      {"threshold", 0.9}},
                 kernel_seed, kernel_aggregate, [](const Json& c) {
                   require(c.at("widths").is_array() && !c.at("widths").empty(),
                           ErrorKind::kInvalidArgument, "'widths' must be a non-empty array");
                   for (const auto& w : c.at("widths")) {
                     require(w.is_number_integer() && w.get<long>() >= 2 &&
                                 w.get<long>() % 2 == 0 && w.get<long>() <= 65536,
                             ErrorKind::kInvalidWidth, "widths must be even, in [2, 65536]");
                   }
                   require(geti(c, "probes") >= 64 && geti(c, "probes") <= kMaxGramSize,
                           ErrorKind::kInvalidArgument, "'probes' must lie in [64, 4096]");
                 }});
    v.push_back({"overfit",
                 Json{{"seeds", 10}, {"d", 10}, {"n", 200}, {"m", 4096},
                      {"eta", 0.25}, {"epsilon", 0.1}, {"beta_norm", 0.9},
                      {"noise", 0.1}, {"noise_kind", "uniform"},
                      {"checkpoint_every", 0}, {"threshold", 0.9},
                      {"envelope_threshold", 0.8}},
                 overfit_seed, overfit_aggregate, [](const Json& c) {
                   require_number(c, "envelope_threshold", 0.0, 1.0);
                 }});
    v.push_back({"approx",
                 Json{{"seeds", 10}, {"d", 10}, {"m", 4096}, {"eta", 0.25},
                      {"epsilon", 0.2}, {"beta_norm", 0.9}, {"pop_batch", 4096},
                      {"mc_risk", 100000}, {"checkpoint_every", 0},
                      {"proxy_samples", 20000}, {"threshold", 0.9}},
                 approx_seed, approx_aggregate, [](const Json&) {}});
    v.push_back({"estimation",
                 Json{{"seeds", 10}, {"d", 10}, {"m", 4096}, {"eta", 0.25},
                      {"epsilon", 0.2}, {"beta_norm", 0.9}, {"noise", 0.0},
                      {"noise_kind", "uniform"},
                      {"ladder", Json::array({50, 200, 800})},
                      {"pop_batch", 4096}, {"mc_risk", 20000},
                      {"checkpoint_every", 0}},
                 estimation_seed, estimation_aggregate, [](const Json& c) {
                   require(c.at("ladder").is_array() && c.at("ladder").size() >= 2,
                           ErrorKind::kInvalidArgument, "'ladder' needs at least two sizes");
                   for (const auto& n : c.at("ladder")) {
                     require(n.is_number_integer() && n.get<long>() >= 1 &&
                                 n.get<long>() <= kMaxGramSize,
                             ErrorKind::kInvalidArgument, "ladder sizes must lie in [1, 4096]");
                   }
                 }});
    v.push_back({"benign",
                 Json{{"seeds", 10}, {"d", 10}, {"n", 800}, {"m", 8192},
                      {"eta", 0.25}, {"epsilon", 0.25}, {"beta_norm", 0.9},
                      {"noise", 0.1}, {"noise_kind", "uniform"},
                      {"mc_risk", 100000}, {"checkpoint_every", 0},
                      {"threshold", 0.8}, {"large_noise_trace", true}},
                 benign_seed, benign_aggregate, [](const Json& c) {
                   require(c.at("large_noise_trace").is_boolean(),
                           ErrorKind::kInvalidArgument,
                           "'large_noise_trace' must be a boolean");
                 }});
    return v;
  }();
  return defs;
}

const SuiteDef& find_suite(const std::string& name) {
  for (const auto& def : registry()) {
    if (def.name == name) return def;
  }
  fail(ErrorKind::kInvalidArgument, "unknown suite '" + name + "'");
}

std::vector<SeedResult> run_seeds(const SeedFn& fn, const Json& config,
                                  const std::vector<std::uint64_t>& seeds,
                                  int jobs) {
  std::vector<SeedResult> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        results[i] = fn(config, seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, int(seeds.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& def : registry()) v.push_back(def.name);
    return v;
  }();
  return names;
}

Json default_suite_config(const std::string& suite) {
  return find_suite(suite).defaults;
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorKind::kInvalidArgument, "median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t k = values.size() / 2;
  return values.size() % 2 == 1 ? values[k] : 0.5 * (values[k - 1] + values[k]);
}

SuiteReport run_suite(const std::string& suite, const Json& overrides,
                      int seeds, std::uint64_t base_seed, int jobs) {
  const SuiteDef& def = find_suite(suite);
  Json config = def.defaults;
  if (!overrides.is_null()) {
    require(overrides.is_object(), ErrorKind::kFormat,
            "suite configuration must be a JSON object");
    for (const auto& [key, value] : overrides.items()) {
      require(config.contains(key), ErrorKind::kFormat,
              "unknown key '" + key + "' for suite " + suite);
      config[key] = value;
    }
  }
  if (seeds >= 0) config["seeds"] = seeds;
  require(config.at("seeds").is_number_integer() && config.at("seeds").get<long>() >= 1 &&
              config.at("seeds").get<long>() <= 100000,
          ErrorKind::kInvalidArgument, "'seeds' must lie in [1, 100000]");
  validate_common(config);
  def.validate(config);

  std::vector<std::uint64_t> seed_list;
  for (long k = 0; k < config.at("seeds").get<long>(); ++k) {
    seed_list.push_back(base_seed + std::uint64_t(k));
  }
  SuiteReport rep;
  rep.suite = suite;
  rep.config = config;
  rep.config["base_seed"] = base_seed;
  rep.per_seed = run_seeds(def.seed_fn, config, seed_list, jobs);
  std::sort(rep.per_seed.begin(), rep.per_seed.end(),
            [](const SeedResult& a, const SeedResult& b) { return a.seed < b.seed; });
  std::size_t passed = 0;
  for (const auto& s : rep.per_seed) passed += s.pass ? 1 : 0;
  rep.frequency = double(passed) / double(rep.per_seed.size());
  def.aggregate(config, rep);
  rep.verdict = std::all_of(rep.checks.begin(), rep.checks.end(),
                            [](const CheckResult& c) { return c.informational || c.pass; });
  for (const auto& c : rep.checks) {
    if (c.surrogate) rep.surrogate_flags[c.name] = true;
  }
  return rep;
}

std::string suite_report_json(const SuiteReport& r) {
  Json out;
  out["suite"] = r.suite;
  out["config"] = r.config;
  out["thresholds"] = r.thresholds;
  Json seeds = Json::array();
  for (const auto& s : r.per_seed) {
    Json e;
    e["seed"] = s.seed;
    e["pass"] = s.pass;
    e["values"] = s.values;
    seeds.push_back(std::move(e));
  }
  out["per_seed"] = std::move(seeds);
  out["frequency"] = r.frequency;
  out["verdict"] = r.verdict;
  out["surrogate_flags"] = r.surrogate_flags;
  Json checks = Json::array();
  for (const auto& c : r.checks) {
    Json e;
    e["name"] = c.name;
    e["bound"] = c.bound;
    e["value"] = c.value;
    e["threshold"] = c.threshold;
    e["pass"] = c.pass;
    e["surrogate"] = c.surrogate;
    e["informational"] = c.informational;
    checks.push_back(std::move(e));
  }
  out["checks"] = std::move(checks);
  out["summary"] = r.summary;
  return out.dump(2) + "\n";
}

}  // namespace ntklab
