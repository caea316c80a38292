#include "ntklab/ntklab.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "ntklab/assumption_ledger.hpp"
#include "ntklab/error.hpp"
#include "ntklab/flow_engine.hpp"
#include "ntklab/ntk_kernel.hpp"
#include "ntklab/ntk_spectrum.hpp"
#include "ntklab/relu_net.hpp"
#include "ntklab/sphere_data.hpp"
#include "ntklab/verify_harness.hpp"

using ntklab::ErrorKind;
using ntklab::fail;
using ntklab::require;
using OJson = nlohmann::ordered_json;

struct ntklab_network {
  ntklab::NetworkState state;
};

struct ntklab_run {
  ntklab::Trajectory trajectory;
  OJson config;
  std::uint64_t seed = 0;
};

namespace {

constexpr const char* kVersion = "0.1.0";

thread_local std::string g_last_error;
thread_local long g_divergence_step = -1;

template <class F>
int guarded(F&& body) {
  g_last_error.clear();
  g_divergence_step = -1;
  try {
    body();
    return NTKLAB_OK;
  } catch (const ntklab::DivergenceError& e) {
    g_last_error = e.what();
    g_divergence_step = e.step();
    return NTKLAB_ERR_DIVERGENCE;
  } catch (const ntklab::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("config: ") + e.what();
    return NTKLAB_ERR_FORMAT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return NTKLAB_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NTKLAB_ERR_INTERNAL;
  }
}

void need(const void* p, const char* name) {
  require(p != nullptr, ErrorKind::kInvalidArgument,
          std::string(name) + " must not be null");
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_object(const char* text, const char* what) {
  need(text, what);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed JSON in ") + what + ": " + e.what());
  }
  require(j.is_object(), ErrorKind::kFormat, std::string(what) + " must be a JSON object");
  return j;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& known,
                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    require(known.count(key) == 1, ErrorKind::kFormat,
            "unknown key '" + key + "' in " + where);
  }
}

long get_int(const nlohmann::json& j, const char* key, long lo, long hi) {
  const auto& v = j.at(key);
  require(v.is_number_integer(), ErrorKind::kFormat,
          std::string("'") + key + "' must be an integer");
  const long x = v.get<long>();
  require(x >= lo && x <= hi, ErrorKind::kInvalidArgument,
          std::string("'") + key + "' out of range [" + std::to_string(lo) + ", " +
              std::to_string(hi) + "]");
  return x;
}

double get_num(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  require(v.is_number(), ErrorKind::kFormat, std::string("'") + key + "' must be a number");
  const double x = v.get<double>();
  require(std::isfinite(x), ErrorKind::kNonFinite, std::string("'") + key + "' is not finite");
  return x;
}

bool get_bool(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  require(v.is_boolean(), ErrorKind::kFormat, std::string("'") + key + "' must be a boolean");
  return v.get<bool>();
}

std::uint64_t get_seed(const nlohmann::json& j) {
  const auto& v = j.at("seed");
  require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long>() >= 0),
          ErrorKind::kFormat, "'seed' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

ntklab::Vector to_vector(const nlohmann::json& v, const char* key, int d) {
  require(v.is_array() && int(v.size()) == d, ErrorKind::kDimensionMismatch,
          std::string("'") + key + "' must be an array of length d");
  ntklab::Vector out(d);
  for (int k = 0; k < d; ++k) {
    require(v[k].is_number(), ErrorKind::kFormat, std::string("'") + key + "' entries must be numbers");
    out(k) = v[k].get<double>();
  }
  return out;
}

ntklab::Vector get_vector(const nlohmann::json& j, const char* key, int d) {
  return to_vector(j.at(key), key, d);
}

// Zonal harmonic of order 3 in x_0: x^3 - 3x/(d+2).
double zonal_cubic(double x, int d) { return x * x * x - 3.0 * x / (d + 2.0); }

ntklab::RegressionFunction parse_target(const nlohmann::json& t, int d,
                                        const ntklab::Rng& root) {
  require(t.is_object(), ErrorKind::kFormat, "'target' must be an object");
  require(t.contains("kind") && t.at("kind").is_string(), ErrorKind::kFormat,
          "'target.kind' is required");
  const std::string kind = t.at("kind").get<std::string>();
  if (kind == "zero") {
    check_keys(t, {"kind"}, "target");
    return ntklab::RegressionFunction::zero(d);
  }
  if (kind == "linear") {
    check_keys(t, {"kind", "beta", "beta_norm"}, "target");
    require(t.contains("beta") != t.contains("beta_norm"), ErrorKind::kFormat,
            "linear target needs exactly one of 'beta' or 'beta_norm'");
    if (t.contains("beta")) return ntklab::RegressionFunction::linear(get_vector(t, "beta", d));
    const double norm = get_num(t, "beta_norm");
    require(norm >= 0.0 && norm <= 1.0, ErrorKind::kLabelBound, "'beta_norm' must lie in [0, 1]");
    ntklab::Rng rng = root.split("target");
    const ntklab::RowMatrix u = ntklab::sample_sphere(d, 1, rng);
    return ntklab::RegressionFunction::linear(u.row(0).transpose() * norm);
  }
  if (kind == "harmonic") {
    check_keys(t, {"kind", "c0", "beta", "quadratic"}, "target");
    const double c0 = t.contains("c0") ? get_num(t, "c0") : 0.0;
    const ntklab::Vector beta =
        t.contains("beta") ? get_vector(t, "beta", d) : ntklab::Vector::Zero(d);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
    if (t.contains("quadratic")) {
      const auto& q = t.at("quadratic");
      require(q.is_array() && int(q.size()) == d, ErrorKind::kDimensionMismatch,
              "'quadratic' must be a d x d array");
      for (int i = 0; i < d; ++i) A.row(i) = to_vector(q[i], "quadratic", d).transpose();
    }
    return ntklab::RegressionFunction::harmonic(c0, beta, A);
  }
  if (kind == "custom") {
    check_keys(t, {"kind", "profile", "scale"}, "target");
    require(t.contains("profile") && t.at("profile").is_string(), ErrorKind::kFormat,
            "custom target needs a 'profile'");
    const std::string profile = t.at("profile").get<std::string>();
    const double scale = t.contains("scale") ? get_num(t, "scale") : 1.0;
    require(scale >= 0.0 && scale <= 1.0, ErrorKind::kLabelBound, "'scale' must lie in [0, 1]");
    if (profile == "abs") {
      return ntklab::RegressionFunction::custom(
          d, [scale](std::span<const double> x) { return scale * std::abs(x[0]); }, scale,
          "abs");
    }
    if (profile == "relu") {
      return ntklab::RegressionFunction::custom(
          d, [scale](std::span<const double> x) { return scale * std::max(0.0, x[0]); },
          scale, "relu");
    }
    if (profile == "cubic") {
      return ntklab::RegressionFunction::custom(
          d, [scale, d](std::span<const double> x) { return scale * zonal_cubic(x[0], d); },
          scale * (d - 1.0) / (d + 2.0), "cubic");
    }
    fail(ErrorKind::kInvalidArgument, "unknown custom profile '" + profile +
                                          "' (abs, relu, cubic)");
  }
  fail(ErrorKind::kInvalidArgument, "unknown target kind '" + kind + "'");
}

ntklab::NoiseModel parse_noise(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::kFormat, "'noise' must be an object");
  check_keys(j, {"kind", "b"}, "noise");
  const std::string kind = j.value("kind", std::string("none"));
  if (kind == "none") return ntklab::NoiseModel::none();
  const double b = get_num(j, "b");
  require(b >= 0.0 && b <= 1.0, ErrorKind::kLabelBound, "'noise.b' must lie in [0, 1]");
  if (kind == "uniform") return ntklab::NoiseModel::uniform(b);
  if (kind == "two_point") return ntklab::NoiseModel::two_point(b);
  fail(ErrorKind::kInvalidArgument, "unknown noise kind '" + kind + "'");
}

void check_io(const nlohmann::json& io) {
  require(io.is_object(), ErrorKind::kFormat, "'io' must be an object");
  check_keys(io, {"out_dir", "format", "overwrite"}, "io");
  if (io.contains("out_dir")) {
    require(io.at("out_dir").is_string(), ErrorKind::kFormat, "'io.out_dir' must be a string");
  }
  if (io.contains("format")) {
    require(io.at("format").is_string(), ErrorKind::kFormat, "'io.format' must be a string");
    const std::string f = io.at("format").get<std::string>();
    require(f == "csv" || f == "json", ErrorKind::kInvalidArgument,
            "'io.format' must be csv or json");
  }
  if (io.contains("overwrite")) get_bool(io, "overwrite");
}

struct DataSpec {
  int d = 0;
  int n = 0;
  std::uint64_t seed = 0;
  ntklab::Rng root;
};

DataSpec parse_data_header(const nlohmann::json& j, bool need_n) {
  DataSpec s;
  s.d = int(get_int(j, "d", ntklab::kMinDimension, 4096));
  if (need_n) s.n = int(get_int(j, "n", 1, 1 << 22));
  require(j.contains("seed"), ErrorKind::kFormat, "'seed' is required");
  s.seed = get_seed(j);
  s.root = ntklab::Rng(s.seed);
  return s;
}

OJson trajectory_json(const ntklab::Trajectory& t) {
  auto column = [](const std::vector<double>& v) {
    OJson a = OJson::array();
    for (double x : v) {
      if (std::isfinite(x)) a.push_back(x);
      else a.push_back(nullptr);
    }
    return a;
  };
  OJson out;
  out["t"] = column(t.times);
  out["step"] = t.steps;
  out["empirical_risk"] = column(t.empirical_risk);
  out["excess_risk"] = column(t.excess_risk);
  out["excess_risk_stderr"] = column(t.excess_risk_stderr);
  out["estimation_gap"] = column(t.estimation_gap);
  out["estimation_gap_stderr"] = column(t.estimation_gap_stderr);
  out["max_move"] = column(t.max_move);
  out["gram_min_eig"] = column(t.gram_min_eig);
  out["descent_violations"] = t.descent_violations;
  out["max_risk_increase"] = t.max_risk_increase;
  out["total_steps"] = t.total_steps;
  out["eta_effective"] = t.eta_effective;
  return out;
}

std::string dump(const OJson& j) { return j.dump(2) + "\n"; }

}  // namespace

extern "C" {

const char* ntklab_version(void) { return kVersion; }

const char* ntklab_last_error(void) { return g_last_error.c_str(); }

long ntklab_last_divergence_step(void) { return g_divergence_step; }

void ntklab_free(void* ptr) { std::free(ptr); }

int ntklab_spectrum(int d, int h_max, int oracle, char** json, double* max_rel_error) {
  return guarded([&] {
    need(json, "json");
    *json = nullptr;
    const ntklab::SpectrumTable table = ntklab::build_spectrum(d, h_max);
    *json = copy_string(ntklab::spectrum_json(table, oracle != 0, max_rel_error));
  });
}

int ntklab_check(const char* params_json, char** report_json, int* all_hold) {
  return guarded([&] {
    need(params_json, "params_json");
    need(report_json, "report_json");
    *report_json = nullptr;
    const ntklab::AssumptionReport r = ntklab::check(ntklab::params_from_json(params_json));
    *report_json = copy_string(ntklab::report_json(r));
    if (all_hold != nullptr) *all_hold = r.all_hold ? 1 : 0;
  });
}

int ntklab_data(const char* config_json, char** csv) {
  return guarded([&] {
    need(csv, "csv");
    *csv = nullptr;
    const nlohmann::json j = parse_object(config_json, "data config");
    check_keys(j, {"d", "n", "target", "noise", "seed", "io"}, "data config");
    if (j.contains("io")) check_io(j.at("io"));
    const DataSpec s = parse_data_header(j, true);
    require(j.contains("target"), ErrorKind::kFormat, "'target' is required");
    const auto f = parse_target(j.at("target"), s.d, s.root);
    const auto noise = j.contains("noise") ? parse_noise(j.at("noise")) : ntklab::NoiseModel::none();
    const ntklab::Dataset data = ntklab::make_dataset(f, noise, s.d, s.n, s.root.split("data")());
    std::ostringstream os;
    ntklab::write_dataset_csv(os, data);
    *csv = copy_string(os.str());
  });
}

int ntklab_train(const char* config_json, const char* mode_c, ntklab_run** run) {
  return guarded([&] {
    need(run, "run");
    need(mode_c, "mode");
    *run = nullptr;
    const std::string mode = mode_c;
    require(mode == "empirical" || mode == "population" || mode == "joint",
            ErrorKind::kInvalidArgument, "mode must be empirical, population or joint");
    const nlohmann::json j = parse_object(config_json, "train config");
    check_keys(j, {"d", "n", "m", "target", "noise", "epsilon", "t_end", "eta",
                   "checkpoint_every", "pop_batch", "mc_risk", "plan_samples", "seed",
                   "gram_diagnostics", "gradient_drift", "io"},
               "train config");
    if (j.contains("io")) check_io(j.at("io"));
    const bool uses_data = mode != "population";
    const DataSpec s = parse_data_header(j, uses_data);
    const int m = int(get_int(j, "m", 2, 1 << 20));
    require(m % 2 == 0, ErrorKind::kInvalidWidth, "m must be even");
    require(j.contains("target"), ErrorKind::kFormat, "'target' is required");
    const auto f = parse_target(j.at("target"), s.d, s.root);
    const auto noise = j.contains("noise") ? parse_noise(j.at("noise")) : ntklab::NoiseModel::none();

    ntklab::FlowConfig cfg;
    if (j.contains("eta")) cfg.eta = get_num(j, "eta");
    if (j.contains("checkpoint_every")) cfg.checkpoint_every = get_int(j, "checkpoint_every", 0, 1L << 40);
    if (j.contains("pop_batch")) cfg.pop_batch = int(get_int(j, "pop_batch", 1, 1 << 24));
    if (j.contains("mc_risk")) cfg.mc_risk = int(get_int(j, "mc_risk", 1, 1 << 26));
    if (j.contains("gram_diagnostics")) cfg.gram_diagnostics = get_bool(j, "gram_diagnostics");
    if (j.contains("gradient_drift")) cfg.gradient_drift = get_bool(j, "gradient_drift");
    const long plan_samples = j.contains("plan_samples") ? get_int(j, "plan_samples", 1000, 1L << 24) : 200000;
    cfg.seed = s.root.split("flow")();

    require(j.contains("epsilon") || j.contains("t_end"), ErrorKind::kFormat,
            "one of 'epsilon' or 't_end' is required");
    std::optional<ntklab::EpsilonPlan> plan;
    if (j.contains("epsilon")) {
      const double eps = get_num(j, "epsilon");
      plan = ntklab::plan_epsilon(f, s.d, eps, ntklab::build_spectrum(s.d, 8), plan_samples,
                                  s.root.split("plan")());
    }
    cfg.t_end = j.contains("t_end") ? get_num(j, "t_end") : plan->T_epsilon;
    require(cfg.t_end > 0.0, ErrorKind::kInvalidArgument, "horizon must be positive");
    ntklab::validate_config(cfg, s.d);

    ntklab::Rng init_rng = s.root.split("init");
    const ntklab::NetworkState state0 = ntklab::init_antisymmetric(m, s.d, init_rng);
    auto out = std::make_unique<ntklab_run>();
    out->seed = s.seed;
    if (mode == "population") {
      out->trajectory = ntklab::run_population(state0, f, cfg);
    } else {
      const ntklab::Dataset data =
          ntklab::make_dataset(f, noise, s.d, s.n, s.root.split("data")());
      out->trajectory = mode == "joint" ? ntklab::run_joint(state0, data, f, cfg)
                                        : ntklab::run_empirical(state0, data, cfg, &f);
    }

    OJson c;
    c["mode"] = mode;
    c["d"] = s.d;
    if (uses_data) c["n"] = s.n;
    c["m"] = m;
    c["target"] = OJson::parse(j.at("target").dump());
    c["noise"] = j.contains("noise") ? OJson::parse(j.at("noise").dump()) : OJson{{"kind", "none"}};
    if (plan) {
      OJson p;
      p["epsilon"] = plan->epsilon;
      p["L_epsilon"] = plan->L_epsilon;
      p["lambda_epsilon"] = plan->lambda_epsilon;
      p["T_epsilon"] = plan->T_epsilon;
      p["tail_mass"] = plan->tail_mass;
      p["tail_stderr"] = plan->tail_stderr;
      p["certified"] = plan->certified;
      p["mc_samples"] = plan->mc_samples;
      p["orders_covered"] = plan->orders_covered;
      c["plan"] = p;
    }
    c["t_end"] = cfg.t_end;
    c["eta"] = cfg.eta;
    c["eta_effective"] = ntklab::step_size(cfg);
    c["steps"] = ntklab::step_count(cfg);
    c["checkpoint_every"] = cfg.checkpoint_every;
    c["pop_batch"] = cfg.pop_batch;
    c["mc_risk"] = cfg.mc_risk;
    c["plan_samples"] = plan_samples;
    c["gram_diagnostics"] = cfg.gram_diagnostics;
    c["gradient_drift"] = cfg.gradient_drift;
    c["seed"] = s.seed;
    c["flow_seed"] = cfg.seed;
    if (j.contains("io")) c["io"] = OJson::parse(j.at("io").dump());
    out->config = std::move(c);
    *run = out.release();
  });
}

void ntklab_run_free(ntklab_run* run) { delete run; }

int ntklab_run_trajectory_csv(const ntklab_run* run, char** csv) {
  return guarded([&] {
    need(run, "run");
    need(csv, "csv");
    std::ostringstream os;
    ntklab::write_trajectory_csv(os, run->trajectory);
    *csv = copy_string(os.str());
  });
}

int ntklab_run_trajectory_json(const ntklab_run* run, char** json) {
  return guarded([&] {
    need(run, "run");
    need(json, "json");
    *json = copy_string(dump(trajectory_json(run->trajectory)));
  });
}

int ntklab_run_config_json(const ntklab_run* run, char** json) {
  return guarded([&] {
    need(run, "run");
    need(json, "json");
    *json = copy_string(dump(run->config));
  });
}

int ntklab_run_checkpoint(const ntklab_run* run, unsigned char** bytes, size_t* size) {
  return guarded([&] {
    need(run, "run");
    need(bytes, "bytes");
    need(size, "size");
    require(run->trajectory.final_state.has_value(), ErrorKind::kInvalidArgument,
            "run has no final state");
    std::ostringstream os(std::ios::binary);
    ntklab::write_checkpoint(os, *run->trajectory.final_state);
    const std::string s = os.str();
    auto* out = static_cast<unsigned char*>(std::malloc(s.size() == 0 ? 1 : s.size()));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.data(), s.size());
    *bytes = out;
    *size = s.size();
  });
}

int ntklab_run_checkpoint_sidecar(const ntklab_run* run, char** json) {
  return guarded([&] {
    need(run, "run");
    need(json, "json");
    const auto& t = run->trajectory;
    *json = copy_string(ntklab::checkpoint_sidecar_json(
        run->seed, t.total_steps, t.times.empty() ? 0.0 : t.times.back()));
  });
}

int ntklab_network_init(int m, int d, uint64_t seed, ntklab_network** net) {
  return guarded([&] {
    need(net, "net");
    *net = new ntklab_network{ntklab::init_antisymmetric(m, d, seed)};
  });
}

int ntklab_network_from_run(const ntklab_run* run, ntklab_network** net) {
  return guarded([&] {
    need(run, "run");
    need(net, "net");
    require(run->trajectory.final_state.has_value(), ErrorKind::kInvalidArgument,
            "run has no final state");
    *net = new ntklab_network{*run->trajectory.final_state};
  });
}

int ntklab_network_load(const unsigned char* bytes, size_t size, ntklab_network** net) {
  return guarded([&] {
    need(bytes, "bytes");
    need(net, "net");
    std::istringstream is(std::string(reinterpret_cast<const char*>(bytes), size),
                          std::ios::binary);
    *net = new ntklab_network{ntklab::read_checkpoint(is)};
  });
}

void ntklab_network_free(ntklab_network* net) { delete net; }

int ntklab_network_shape(const ntklab_network* net, int* m, int* d) {
  return guarded([&] {
    need(net, "net");
    if (m != nullptr) *m = net->state.m();
    if (d != nullptr) *d = net->state.d();
  });
}

int ntklab_network_forward(const ntklab_network* net, const double* x, int count,
                           double* out) {
  return guarded([&] {
    need(net, "net");
    need(x, "x");
    need(out, "out");
    require(count >= 0, ErrorKind::kInvalidArgument, "count must be >= 0");
    const int d = net->state.d();
    for (int i = 0; i < count; ++i) {
      out[i] = ntklab::forward(net->state, std::span<const double>(x + std::size_t(i) * d, d));
    }
  });
}

int ntklab_suite_names(char** json) {
  return guarded([&] {
    need(json, "json");
    OJson a = ntklab::suite_names();
    *json = copy_string(a.dump() + "\n");
  });
}

int ntklab_suite_defaults(const char* suite, char** json) {
  return guarded([&] {
    need(suite, "suite");
    need(json, "json");
    *json = copy_string(dump(ntklab::default_suite_config(suite)));
  });
}

int ntklab_verify(const char* suite, const char* overrides_json, int seeds,
                  uint64_t base_seed, int jobs, char** report_json, int* verdict) {
  return guarded([&] {
    need(suite, "suite");
    need(report_json, "report_json");
    *report_json = nullptr;
    ntklab::Json overrides;
    if (overrides_json != nullptr) {
      const nlohmann::json j = parse_object(overrides_json, "suite overrides");
      overrides = ntklab::Json::parse(j.dump());
    }
    const ntklab::SuiteReport r =
        ntklab::run_suite(suite, overrides, seeds, base_seed, jobs < 1 ? 1 : jobs);
    *report_json = copy_string(ntklab::suite_report_json(r));
    if (verdict != nullptr) *verdict = r.verdict ? 1 : 0;
  });
}

}  // extern "C"
