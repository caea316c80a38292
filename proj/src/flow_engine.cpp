#include "ntklab/flow_engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ntklab/error.hpp"
#include "ntklab/ntk_kernel.hpp"

namespace ntklab {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr Eigen::Index kBlock = 32;

// One blocked pass over the rows of X. Per block, Z = W X_b^T gives the
// outputs; the residual target - f is formed (when target is given) and then
// Z is overwritten in place by 1{Z > 0} * coef so that Z X_b accumulates
//   sum_i coef_i 1{w_j . x_i > 0} x_i^T   (row j, before the a_j factor).
// coef is the residual itself, or the supplied coefficients.
struct Pass {
  Vector outputs;
  Vector residual;
  RowMatrix direction;  // sum_i coef_i (a .* 1{W x_i > 0}) x_i^T
  RowMatrix second;     // same with coef_i^2 and x_i squared entrywise
};

Pass blocked_pass(const RowMatrix& W, const Vector& a, const RowMatrix& X,
                  const Vector* target, const Vector* coef, bool direction,
                  bool second) {
  const Eigen::Index m = W.rows(), d = W.cols(), n = X.rows();
  const double inv_sqrt_m = 1.0 / std::sqrt(double(m));
  Pass p;
  p.outputs.resize(n);
  if (target != nullptr) p.residual.resize(n);
  Eigen::MatrixXd acc, acc2;
  if (direction) acc = Eigen::MatrixXd::Zero(m, d);
  if (second) acc2 = Eigen::MatrixXd::Zero(m, d);
  Eigen::MatrixXd Z(m, kBlock), Z2;
  if (second) Z2.resize(m, kBlock);
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - start);
    auto Zb = Z.leftCols(len);
    const auto Xb = X.middleRows(start, len);
    Zb.noalias() = W * Xb.transpose();
    for (Eigen::Index i = 0; i < len; ++i) {
      const double f = Zb.col(i).cwiseMax(0.0).dot(a) * inv_sqrt_m;
      p.outputs(start + i) = f;
      if (target != nullptr) p.residual(start + i) = (*target)(start + i) - f;
    }
    if (!direction) continue;
    for (Eigen::Index i = 0; i < len; ++i) {
      const double c = coef != nullptr ? (*coef)(start + i) : p.residual(start + i);
      auto col = Zb.col(i);
      if (second) {
        const double c2 = c * c;
        Z2.col(i) = (col.array() > 0.0).select(c2, Eigen::ArrayXd::Zero(m));
      }
      col = (col.array() > 0.0).select(c, Eigen::ArrayXd::Zero(m));
    }
    acc.noalias() += Zb * Xb;
    if (second) acc2.noalias() += Z2.leftCols(len) * Xb.cwiseAbs2();
  }
  if (direction) p.direction = a.asDiagonal() * acc;
  if (second) p.second = acc2;
  return p;
}

void require_finite_weights(const RowMatrix& W, long step) {
  if (!W.allFinite()) {
    throw DivergenceError(step, "divergence: non-finite weights after step " +
                                    std::to_string(step) +
                                    " (reduce eta)");
  }
}

PopulationDirection population_direction_raw(const RowMatrix& W,
                                             const Vector& a,
                                             const RegressionFunction& f,
                                             int pop_batch, Rng& rng,
                                             bool with_stderr) {
  require(pop_batch >= 256, ErrorKind::kInvalidArgument,
          "pop_batch must be >= 256");
  require(f.dim() == W.cols(), ErrorKind::kDimensionMismatch,
          "target and network disagree on dimension");
  const RowMatrix P = sample_sphere(int(W.cols()), pop_batch, rng);
  const Vector target = f.evaluate(P);
  const Pass pass = blocked_pass(W, a, P, &target, nullptr, true, with_stderr);
  const double inv_sqrt_m = 1.0 / std::sqrt(double(W.rows()));
  PopulationDirection out;
  out.direction = pass.direction * (2.0 * inv_sqrt_m / pop_batch);
  if (with_stderr) {
    // Per-sample entries are 2 zeta_i a_j 1{z_ji > 0} x_ik / sqrt(m).
    const RowMatrix second =
        pass.second * (4.0 / (double(W.rows()) * pop_batch));
    const RowMatrix var =
        (second - out.direction.cwiseAbs2()).cwiseMax(0.0) / double(pop_batch - 1);
    out.stderr_fro = std::sqrt(var.sum());
  }
  return out;
}

struct EmpiricalChain {
  const Dataset* data = nullptr;
  RowMatrix W;
  RowMatrix direction;
  Vector residual;
  double risk = 0.0;
  double prev_risk = std::numeric_limits<double>::infinity();
  Trajectory traj;
};

struct PopulationChain {
  RowMatrix W;
  Rng rng;
  Trajectory traj;
};

void evaluate(EmpiricalChain& c, const Vector& a, long step) {
  const Dataset& data = *c.data;
  Pass pass = blocked_pass(c.W, a, data.X, &data.y, nullptr, true, false);
  c.residual = std::move(pass.residual);
  c.direction = std::move(pass.direction);
  c.risk = c.residual.squaredNorm() / double(data.n());
  if (!std::isfinite(c.risk)) {
    throw DivergenceError(step, "divergence: non-finite empirical risk at step " +
                                    std::to_string(step));
  }
  if (step > 0) {
    const double rise = c.risk - c.prev_risk;
    if (rise > 1e-12 * c.prev_risk) {
      ++c.traj.descent_violations;
      c.traj.max_risk_increase = std::max(c.traj.max_risk_increase, rise);
    }
  }
  c.prev_risk = c.risk;
}

void advance(EmpiricalChain& c, const Vector& a, double eta, long step) {
  const double n = double(c.data->n());
  const double scale = eta * 2.0 / (n * std::sqrt(double(c.W.rows())));
  c.W += scale * c.direction;
  require_finite_weights(c.W, step + 1);
}

void push_row(Trajectory& t, double time, long step) {
  t.times.push_back(time);
  t.steps.push_back(step);
  t.empirical_risk.push_back(kNaN);
  t.excess_risk.push_back(kNaN);
  t.excess_risk_stderr.push_back(kNaN);
  t.estimation_gap.push_back(kNaN);
  t.estimation_gap_stderr.push_back(kNaN);
  t.max_move.push_back(kNaN);
  t.gram_min_eig.push_back(kNaN);
  t.gradient_drift.push_back(kNaN);
}

double max_row_distance(const RowMatrix& a, const RowMatrix& b) {
  return (a - b).rowwise().norm().maxCoeff();
}

// Mean square of diff with the standard error of that mean.
std::pair<double, double> mean_square(const Vector& diff) {
  const Eigen::ArrayXd sq = diff.array().square();
  const double n = double(sq.size());
  const double mean = sq.mean();
  const double var = n > 1 ? (sq - mean).square().sum() / (n - 1) : 0.0;
  return {mean, std::sqrt(var / n)};
}

JointRun run_chains(const NetworkState& state0,
                    const std::vector<const Dataset*>& datasets,
                    const RegressionFunction* f, bool with_population,
                    const FlowConfig& config) {
  const int d = state0.d();
  validate_config(config, d);
  if (f != nullptr) {
    require(f->dim() == d, ErrorKind::kDimensionMismatch,
            "target and network disagree on dimension");
  }
  for (const Dataset* data : datasets) {
    require(data != nullptr && data->d() == d, ErrorKind::kDimensionMismatch,
            "dataset and network disagree on dimension");
  }
  const long N = step_count(config);
  const double eta = step_size(config);
  const long every = config.checkpoint_every > 0
                         ? config.checkpoint_every
                         : std::max<long>(1, (N + 19) / 20);
  const Vector& a = state0.signs();
  const Rng root(config.seed);
  const Rng probe_root = root.split("probe");

  std::vector<EmpiricalChain> chains(datasets.size());
  for (std::size_t c = 0; c < datasets.size(); ++c) {
    chains[c].data = datasets[c];
    chains[c].W = state0.weights();
  }
  std::optional<PopulationChain> pop;
  if (with_population) {
    require(f != nullptr, ErrorKind::kInvalidArgument,
            "population flow needs a target function");
    pop = PopulationChain{state0.weights(), root.split("population"), {}};
  }

  long checkpoint = 0;
  for (long k = 0;; ++k) {
    for (auto& c : chains) evaluate(c, a, k);
    if (k % every == 0 || k == N) {
      const double t = k == N ? config.t_end : double(k) * eta;
      for (auto& c : chains) {
        push_row(c.traj, t, k);
        c.traj.empirical_risk.back() = c.risk;
        c.traj.max_move.back() = max_row_distance(c.W, state0.weights());
        if (config.gram_diagnostics) {
          c.traj.gram_min_eig.back() = min_eigenvalue(
              gram_matrix(NetworkState(c.W, a), c.data->X));
        }
        if (config.gradient_drift) {
          c.traj.gradient_drift.back() = gradient_matrix_drift(
              state0, NetworkState(c.W, a), c.data->X);
        }
      }
      if (pop) {
        push_row(pop->traj, t, k);
        pop->traj.max_move.back() = max_row_distance(pop->W, state0.weights());
      }
      if (f != nullptr) {
        Rng probe_rng = probe_root.split(std::uint64_t(checkpoint));
        const RowMatrix P = sample_sphere(d, config.mc_risk, probe_rng);
        const Vector target = f->evaluate(P);
        Vector pop_out;
        if (pop) {
          pop_out = blocked_pass(pop->W, a, P, nullptr, nullptr, false, false).outputs;
          const auto [ms, se] = mean_square(pop_out - target);
          pop->traj.excess_risk.back() = ms;
          pop->traj.excess_risk_stderr.back() = se;
        }
        for (auto& c : chains) {
          const Vector out =
              blocked_pass(c.W, a, P, nullptr, nullptr, false, false).outputs;
          const auto [ms, se] = mean_square(out - target);
          c.traj.excess_risk.back() = ms;
          c.traj.excess_risk_stderr.back() = se;
          if (pop) {
            const L2Estimate gap = l2_from_differences(out - pop_out);
            c.traj.estimation_gap.back() = gap.estimate;
            c.traj.estimation_gap_stderr.back() = gap.stderr;
          }
        }
      }
      ++checkpoint;
    }
    if (k == N) break;
    if (pop) {
      Rng step_rng = pop->rng.split(std::uint64_t(k));
      pop->W += eta * population_direction_raw(pop->W, a, *f, config.pop_batch,
                                               step_rng, false)
                          .direction;
      require_finite_weights(pop->W, k + 1);
    }
    for (auto& c : chains) advance(c, a, eta, k);
  }

  JointRun out;
  for (auto& c : chains) {
    c.traj.total_steps = N;
    c.traj.eta_effective = eta;
    c.traj.final_state = NetworkState(std::move(c.W), a);
    out.empirical.push_back(std::move(c.traj));
  }
  if (pop) {
    pop->traj.total_steps = N;
    pop->traj.eta_effective = eta;
    pop->traj.final_state = NetworkState(std::move(pop->W), a);
    out.population = std::move(pop->traj);
  }
  return out;
}

void write_field(std::ostream& os, double v) {
  if (std::isnan(v)) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace

void validate_config(const FlowConfig& config, int d) {
  require(std::isfinite(config.eta) && config.eta > 0.0 &&
              config.eta <= d / 4.0,
          ErrorKind::kInvalidArgument,
          "eta must lie in (0, d/4] for stability");
  require(std::isfinite(config.t_end) && config.t_end >= 0.0,
          ErrorKind::kInvalidArgument, "t_end must be finite and >= 0");
  require(config.t_end / config.eta <= 1e8, ErrorKind::kScale,
          "step count t_end / eta exceeds 1e8");
  require(config.checkpoint_every >= 0, ErrorKind::kInvalidArgument,
          "checkpoint_every must be >= 0");
  require(config.pop_batch >= 256, ErrorKind::kInvalidArgument,
          "pop_batch must be >= 256");
  require(config.mc_risk >= 1000, ErrorKind::kInvalidArgument,
          "mc_risk must be >= 1000");
}

long step_count(const FlowConfig& config) {
  return long(std::ceil(config.t_end / config.eta - 1e-9));
}

double step_size(const FlowConfig& config) {
  const long N = step_count(config);
  return N > 0 ? config.t_end / double(N) : config.eta;
}

RowMatrix empirical_direction(const NetworkState& state, const Dataset& data) {
  require(data.d() == state.d(), ErrorKind::kDimensionMismatch,
          "dataset and network disagree on dimension");
  const Pass pass = blocked_pass(state.weights(), state.signs(), data.X,
                                 &data.y, nullptr, true, false);
  return pass.direction * (2.0 / (data.n() * std::sqrt(double(state.m()))));
}

PopulationDirection population_direction(const NetworkState& state,
                                         const RegressionFunction& f,
                                         int pop_batch, Rng& rng,
                                         bool with_stderr) {
  return population_direction_raw(state.weights(), state.signs(), f, pop_batch,
                                  rng, with_stderr);
}

NetworkState step_empirical(const NetworkState& state, const Dataset& data,
                            double eta) {
  require(eta > 0.0, ErrorKind::kInvalidArgument, "eta must be > 0");
  RowMatrix W = state.weights() + eta * empirical_direction(state, data);
  require_finite_weights(W, 1);
  return state.with_weights(std::move(W));
}

NetworkState step_population(const NetworkState& state,
                             const RegressionFunction& f, int pop_batch,
                             double eta, Rng& rng) {
  require(eta > 0.0, ErrorKind::kInvalidArgument, "eta must be > 0");
  RowMatrix W = state.weights() +
                eta * population_direction(state, f, pop_batch, rng).direction;
  require_finite_weights(W, 1);
  return state.with_weights(std::move(W));
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t,empirical_risk,excess_risk,excess_risk_stderr,estimation_gap,"
        "estimation_gap_stderr,max_move,gram_min_eig\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double row[] = {traj.times[i],
                          traj.empirical_risk[i],
                          traj.excess_risk[i],
                          traj.excess_risk_stderr[i],
                          traj.estimation_gap[i],
                          traj.estimation_gap_stderr[i],
                          traj.max_move[i],
                          traj.gram_min_eig[i]};
    for (std::size_t c = 0; c < std::size(row); ++c) {
      if (c > 0) os << ',';
      write_field(os, row[c]);
    }
    os << '\n';
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "failed to write trajectory");
}

Trajectory run_empirical(const NetworkState& state0, const Dataset& data,
                         const FlowConfig& config,
                         const RegressionFunction* f) {
  return std::move(run_chains(state0, {&data}, f, false, config).empirical[0]);
}

Trajectory run_population(const NetworkState& state0,
                          const RegressionFunction& f,
                          const FlowConfig& config) {
  return std::move(run_chains(state0, {}, &f, true, config).population);
}

JointRun run_joint_ladder(const NetworkState& state0,
                          const std::vector<const Dataset*>& datasets,
                          const RegressionFunction& f,
                          const FlowConfig& config) {
  require(!datasets.empty(), ErrorKind::kInvalidArgument,
          "joint run needs at least one dataset");
  return run_chains(state0, datasets, &f, true, config);
}

Trajectory run_joint(const NetworkState& state0, const Dataset& data,
                     const RegressionFunction& f, const FlowConfig& config) {
  return std::move(run_joint_ladder(state0, {&data}, f, config).empirical[0]);
}

Movement weight_movement(const NetworkState& state_t,
                         const NetworkState& state_0) {
  require(state_t.m() == state_0.m() && state_t.d() == state_0.d(),
          ErrorKind::kDimensionMismatch, "states differ in shape");
  Movement out;
  out.per_neuron = (state_t.weights() - state_0.weights()).rowwise().norm();
  out.max = out.per_neuron.maxCoeff();
  return out;
}

L2Estimate l2_from_differences(const Vector& diff) {
  require(diff.size() > 0, ErrorKind::kInvalidArgument, "no Monte Carlo samples");
  const auto [ms, se] = mean_square(diff);
  L2Estimate out;
  out.estimate = std::sqrt(ms);
  out.stderr = out.estimate > 0.0 ? se / (2.0 * out.estimate) : 0.0;
  return out;
}

L2Estimate l2_distance(const NetworkState& a, const NetworkState& b, int mc,
                       Rng& rng) {
  require(mc >= 1000, ErrorKind::kInvalidArgument, "mc must be >= 1000");
  require(a.d() == b.d(), ErrorKind::kDimensionMismatch,
          "states differ in dimension");
  const RowMatrix P = sample_sphere(a.d(), mc, rng);
  return l2_from_differences(forward_batch(a, P) - forward_batch(b, P));
}

L2Estimate l2_distance(const NetworkState& a, const RegressionFunction& f,
                       int mc, Rng& rng) {
  require(mc >= 1000, ErrorKind::kInvalidArgument, "mc must be >= 1000");
  require(a.d() == f.dim(), ErrorKind::kDimensionMismatch,
          "state and target differ in dimension");
  const RowMatrix P = sample_sphere(a.d(), mc, rng);
  return l2_from_differences(forward_batch(a, P) - f.evaluate(P));
}

double gradient_matrix_drift(const NetworkState& state_0,
                             const NetworkState& state_t, const RowMatrix& X) {
  require(state_0.m() == state_t.m() && state_0.d() == state_t.d(),
          ErrorKind::kDimensionMismatch, "states differ in shape");
  require(X.rows() <= kMaxGramSize, ErrorKind::kScale,
          "gradient drift limited to n <= 4096");
  // (G_0 - G_t)^T (G_0 - G_t) has entries
  //   (x_i.x_k / m) sum_j (p0_ij - pt_ij)(p0_kj - pt_kj)
  // which expands into four popcounts of the activation patterns.
  const ActivationPattern p0 = activation_pattern(state_0, X);
  const ActivationPattern pt = activation_pattern(state_t, X);
  const Eigen::MatrixXd inner = X * X.transpose();
  const int n = int(X.rows());
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t* a0 = p0.row(i);
    const std::uint64_t* at = pt.row(i);
    for (int k = 0; k <= i; ++k) {
      const std::uint64_t* b0 = p0.row(k);
      const std::uint64_t* bt = pt.row(k);
      long s = 0;
      for (int w = 0; w < p0.words; ++w) {
        s += std::popcount(a0[w] & b0[w]) - std::popcount(a0[w] & bt[w]) -
             std::popcount(at[w] & b0[w]) + std::popcount(at[w] & bt[w]);
      }
      M(i, k) = M(k, i) = inner(i, k) * double(s) / double(p0.m);
    }
  }
  return std::sqrt(std::max(0.0, symmetric_spectral_norm(M)));
}

double vstat_concentration_on(const NetworkState& state0, const Dataset& data,
                              const RegressionFunction& f, double T, int U,
                              const RowMatrix& oracle_points) {
  require(U >= 1, ErrorKind::kInvalidArgument, "U must be >= 1");
  require(U <= 3, ErrorKind::kScale, "U > 3 is beyond desk scale");
  require(T >= 0.0, ErrorKind::kInvalidArgument, "T must be >= 0");
  require(data.d() == state0.d() && oracle_points.cols() == state0.d() &&
              f.dim() == state0.d(),
          ErrorKind::kDimensionMismatch, "inputs disagree on dimension");
  const int m = state0.m();
  const int d = state0.d();
  const Vector& a = state0.signs();
  const double n = double(data.n());
  const double M = double(oracle_points.rows());

  const RowMatrix& W = state0.weights();
  const Vector xi =
      blocked_pass(W, a, data.X, &data.y, nullptr, false, false).residual;
  const Vector target = f.evaluate(oracle_points);
  const Vector zeta =
      blocked_pass(W, a, oracle_points, &target, nullptr, false, false).residual;
  const Eigen::MatrixXd Hx = U > 1 ? gram_matrix(state0, data.X).H : Eigen::MatrixXd();
  const Eigen::MatrixXd Hp =
      U > 1 ? gram_matrix(state0, oracle_points).H : Eigen::MatrixXd();

  const double inv_sqrt_m = 1.0 / std::sqrt(double(m));
  Vector vx = xi;    // H^{u-1} xi / n^{u-1}
  Vector vp = zeta;  // (H_P / M)^{u-1} zeta
  double total = 0.0;
  double log_coef = 0.0;  // log((2T)^u / u!)
  for (int u = 1; u <= U; ++u) {
    if (u > 1) {
      vx = Hx * vx / n;
      vp = Hp * vp / M;
    }
    log_coef += std::log(2.0 * T) - std::log(double(u));
    const RowMatrix emp =
        blocked_pass(W, a, data.X, nullptr, &vx, true, false).direction *
        (inv_sqrt_m / n);
    const RowMatrix popl =
        blocked_pass(W, a, oracle_points, nullptr, &vp, true, false).direction *
        (inv_sqrt_m / M);
    const double norm = (emp - popl).norm();
    if (norm > 0.0) total += std::exp(log_coef) * norm;
  }
  return total / std::sqrt(double(d));
}

double vstat_concentration(const NetworkState& state0, const Dataset& data,
                           const RegressionFunction& f,
                           const EpsilonPlan& plan, int U, int oracle_size,
                           std::uint64_t seed) {
  require(U <= 3, ErrorKind::kScale, "U > 3 is beyond desk scale");
  require(oracle_size >= 4096, ErrorKind::kInvalidArgument,
          "oracle_size must be >= 4096");
  require(oracle_size <= kMaxGramSize || U == 1, ErrorKind::kScale,
          "oracle_size above the Gram cap needs U = 1");
  Rng rng = Rng(seed).split("vstat-oracle");
  const RowMatrix P = sample_sphere(state0.d(), oracle_size, rng);
  return vstat_concentration_on(state0, data, f, plan.T_epsilon, U, P);
}

}  // namespace ntklab
