#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "ntklab/ntk_spectrum.hpp"
#include "ntklab/relu_net.hpp"
#include "ntklab/rng.hpp"
#include "ntklab/sphere_data.hpp"

namespace ntklab {

struct FlowConfig {
  double eta = 0.25;          // largest Euler step
  double t_end = 0.0;
  long checkpoint_every = 0;  // steps; 0 picks about 20 checkpoints
  int pop_batch = 4096;
  int mc_risk = 100000;
  std::uint64_t seed = 0;
  bool gram_diagnostics = false;   // min eigenvalue of the empirical Gram
  bool gradient_drift = false;     // ||G_0 - G_t||_2 on the training inputs
};

// Throws kInvalidArgument unless 0 < eta <= d/4, t_end >= 0, pop_batch >= 256
// and mc_risk >= 1000.
void validate_config(const FlowConfig& config, int d);

// Number of Euler steps: t_end / eta rounded up (within 1e-9), so the actual
// step t_end / N never exceeds eta and the run ends exactly at t_end.
long step_count(const FlowConfig& config);
double step_size(const FlowConfig& config);

// -grad of the empirical risk: (2/n) reshape(G_W xi_W), m x d.
RowMatrix empirical_direction(const NetworkState& state, const Dataset& data);

struct PopulationDirection {
  RowMatrix direction;      // Monte Carlo mean of 2 zeta(x) G_W(x)
  double stderr_fro = 0.0;  // Frobenius norm of the entrywise standard errors
};

// -grad of the population risk from pop_batch fresh sphere points.
PopulationDirection population_direction(const NetworkState& state,
                                         const RegressionFunction& f,
                                         int pop_batch, Rng& rng,
                                         bool with_stderr = false);

NetworkState step_empirical(const NetworkState& state, const Dataset& data,
                            double eta);
NetworkState step_population(const NetworkState& state,
                             const RegressionFunction& f, int pop_batch,
                             double eta, Rng& rng);

struct Trajectory {
  std::vector<double> times;
  std::vector<long> steps;
  std::vector<double> empirical_risk;
  std::vector<double> excess_risk;  // ||f_t - f*||_2^2, Monte Carlo
  std::vector<double> excess_risk_stderr;
  std::vector<double> estimation_gap;  // ||f^_t - f_t||_2, joint runs
  std::vector<double> estimation_gap_stderr;
  std::vector<double> max_move;
  std::vector<double> gram_min_eig;
  std::vector<double> gradient_drift;

  // Per-step descent bookkeeping for empirical chains.
  long descent_violations = 0;
  double max_risk_increase = 0.0;

  long total_steps = 0;
  double eta_effective = 0.0;
  std::optional<NetworkState> final_state;

  std::size_t size() const { return times.size(); }
};

// Columns t,empirical_risk,excess_risk,excess_risk_stderr,estimation_gap,
// estimation_gap_stderr,max_move,gram_min_eig; NaN fields are left empty.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

// With f given, excess_risk tracks ||f^_t - f*||^2 on fresh probes.
Trajectory run_empirical(const NetworkState& state0, const Dataset& data,
                         const FlowConfig& config,
                         const RegressionFunction* f = nullptr);

Trajectory run_population(const NetworkState& state0,
                          const RegressionFunction& f,
                          const FlowConfig& config);

// One population chain and one empirical chain per dataset, advanced in
// lockstep from the same state0 and probed on common random points.
struct JointRun {
  Trajectory population;
  std::vector<Trajectory> empirical;  // excess_risk is ||f^_t - f*||^2
};

JointRun run_joint_ladder(const NetworkState& state0,
                          const std::vector<const Dataset*>& datasets,
                          const RegressionFunction& f,
                          const FlowConfig& config);

// Single-dataset joint run; returns the empirical chain's trajectory with the
// estimation gap filled in.
Trajectory run_joint(const NetworkState& state0, const Dataset& data,
                     const RegressionFunction& f, const FlowConfig& config);

struct Movement {
  Vector per_neuron;
  double max = 0.0;
};

Movement weight_movement(const NetworkState& state_t,
                         const NetworkState& state_0);

struct L2Estimate {
  double estimate = 0.0;
  double stderr = 0.0;
};

// Monte Carlo ||f_a - f_b||_2 over mc fresh sphere points. The standard
// error is propagated from the mean square by the delta method.
L2Estimate l2_distance(const NetworkState& a, const NetworkState& b, int mc,
                       Rng& rng);
L2Estimate l2_distance(const NetworkState& a, const RegressionFunction& f,
                       int mc, Rng& rng);
L2Estimate l2_from_differences(const Vector& diff);

// ||G_0 - G_t||_2 for the md x n gradient matrices on X.
double gradient_matrix_drift(const NetworkState& state_0,
                             const NetworkState& state_t, const RowMatrix& X);

// (1/sqrt d) sum_{u<=U} ((2T)^u / u!) ||(1/n^u) G_0 H_0^{u-1} xi_0
//   - <G_0, H_0^{u-1} zeta_0>||_F, population inner products by Nystrom on
// oracle_size fresh points.
double vstat_concentration(const NetworkState& state0, const Dataset& data,
                           const RegressionFunction& f,
                           const EpsilonPlan& plan, int U, int oracle_size,
                           std::uint64_t seed);

// Same sum with the population side discretized on a given point set.
double vstat_concentration_on(const NetworkState& state0, const Dataset& data,
                              const RegressionFunction& f, double T, int U,
                              const RowMatrix& oracle_points);

}  // namespace ntklab
