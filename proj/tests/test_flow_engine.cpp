#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "ntklab/error.hpp"
#include "ntklab/flow_engine.hpp"
#include "ntklab/ntk_kernel.hpp"

using namespace ntklab;

namespace {

Dataset small_data(int d, int n, std::uint64_t seed, double noise = 0.0) {
  Vector beta = Vector::Zero(d);
  beta(0) = 0.6;
  beta(1) = -0.3;
  return make_dataset(RegressionFunction::linear(beta),
                      noise > 0 ? NoiseModel::uniform(noise) : NoiseModel::none(), d, n, seed);
}

double risk(const NetworkState& s, const Dataset& data) {
  return (data.y - forward_batch(s, data.X)).squaredNorm() / data.n();
}

NetworkState jitter(const NetworkState& s, double scale, std::uint64_t seed) {
  RowMatrix W = s.weights();
  Rng rng(seed);
  for (int j = 0; j < W.rows(); ++j)
    for (int k = 0; k < W.cols(); ++k) W(j, k) += scale * rng.normal();
  return s.with_weights(W);
}

FlowConfig config(double t_end, double eta = 0.25) {
  FlowConfig c;
  c.t_end = t_end;
  c.eta = eta;
  c.pop_batch = 1024;
  c.mc_risk = 4000;
  c.seed = 17;
  return c;
}

}  // namespace

TEST(Steps, CountAndSize) {
  FlowConfig c = config(10.0);
  EXPECT_EQ(step_count(c), 40);
  EXPECT_DOUBLE_EQ(step_size(c), 0.25);
  c.t_end = 10.1;
  EXPECT_EQ(step_count(c), 41);
  EXPECT_DOUBLE_EQ(step_size(c), 10.1 / 41.0);
  EXPECT_LE(step_size(c), c.eta);
  c.t_end = 0.0;
  EXPECT_EQ(step_count(c), 0);
}

TEST(Steps, ValidateRejectsBadConfigs) {
  FlowConfig c = config(1.0);
  EXPECT_NO_THROW(validate_config(c, 4));
  c.eta = 1.5;
  EXPECT_THROW(validate_config(c, 4), Error);
  c = config(1.0);
  c.eta = 0.0;
  EXPECT_THROW(validate_config(c, 4), Error);
  c = config(1.0);
  c.pop_batch = 10;
  EXPECT_THROW(validate_config(c, 4), Error);
}

TEST(Direction, EmpiricalIsNegativeRiskGradient) {
  const Dataset data = small_data(4, 12, 1);
  const NetworkState s = jitter(init_antisymmetric(10, 4, 2), 0.4, 3);
  const RowMatrix D = empirical_direction(s, data);
  const double h = 1e-6;
  for (int j = 0; j < s.m(); ++j) {
    for (int k = 0; k < 4; ++k) {
      RowMatrix Wp = s.weights(), Wm = s.weights();
      Wp(j, k) += h;
      Wm(j, k) -= h;
      const double fd = (risk(s.with_weights(Wp), data) - risk(s.with_weights(Wm), data)) / (2 * h);
      EXPECT_NEAR(D(j, k), -fd, 1e-7);
    }
  }
}

TEST(Direction, EmpiricalMatchesGradientMatrixProduct) {
  const Dataset data = small_data(5, 30, 4, 0.1);
  const NetworkState s = jitter(init_antisymmetric(70, 5, 5), 0.2, 6);
  const Vector xi = data.y - forward_batch(s, data.X);
  const Vector g = gradient_matrix(s, data.X) * xi * (2.0 / data.n());
  const RowMatrix D = empirical_direction(s, data);
  for (int j = 0; j < s.m(); ++j)
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(D(j, k), g(j * 5 + k), 1e-13);
}

TEST(Direction, PopulationEstimatesAgreeWithinStderr) {
  Vector beta = Vector::Zero(5);
  beta(0) = 0.8;
  const auto f = RegressionFunction::linear(beta);
  const NetworkState s = init_antisymmetric(64, 5, 7);
  Rng r1(1), r2(2);
  const auto a = population_direction(s, f, 40000, r1, true);
  const auto b = population_direction(s, f, 40000, r2, true);
  EXPECT_GT(a.stderr_fro, 0.0);
  const double diff = (a.direction - b.direction).norm();
  EXPECT_LT(diff, 4.0 * std::hypot(a.stderr_fro, b.stderr_fro));
}

TEST(Direction, PopulationMatchesEmpiricalOnLargeSample) {
  // At f = 0 both directions equal 2 E[f*(x) G(x)]; a 200k-point empirical
  // sample is an independent estimate of the same mean.
  const int d = 4;
  Vector beta = Vector::Zero(d);
  beta(1) = 0.5;
  const auto f = RegressionFunction::linear(beta);
  const NetworkState s = init_antisymmetric(16, d, 8);
  const Dataset big = make_dataset(f, NoiseModel::none(), d, 200000, 9);
  Rng rng(10);
  const auto pop = population_direction(s, f, 200000, rng, true);
  const RowMatrix emp = empirical_direction(s, big);
  EXPECT_LT((pop.direction - emp).norm(), 5.0 * std::sqrt(2.0) * pop.stderr_fro);
}

TEST(Run, EmpiricalRiskDecreasesToHorizon) {
  const Dataset data = small_data(6, 40, 11, 0.05);
  const NetworkState s0 = init_antisymmetric(512, 6, 12);
  const Trajectory t = run_empirical(s0, data, config(30.0));
  ASSERT_GE(t.size(), 2u);
  EXPECT_DOUBLE_EQ(t.times.front(), 0.0);
  EXPECT_DOUBLE_EQ(t.times.back(), 30.0);
  EXPECT_EQ(t.total_steps, 120);
  EXPECT_EQ(t.descent_violations, 0);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LE(t.empirical_risk[i], t.empirical_risk[i - 1]);
  EXPECT_NEAR(t.empirical_risk.front(), data.y.squaredNorm() / data.n(), 1e-15);
  ASSERT_TRUE(t.final_state.has_value());
  EXPECT_NEAR(t.empirical_risk.back(), risk(*t.final_state, data), 1e-14);
}

TEST(Run, MatchesManualSteps) {
  const Dataset data = small_data(4, 20, 13);
  const NetworkState s0 = init_antisymmetric(32, 4, 14);
  FlowConfig c = config(1.0, 0.25);
  const Trajectory t = run_empirical(s0, data, c);
  NetworkState s = s0;
  for (int k = 0; k < 4; ++k) s = step_empirical(s, data, 0.25);
  EXPECT_LE((t.final_state->weights() - s.weights()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Run, IsDeterministic) {
  const Dataset data = small_data(5, 30, 15, 0.1);
  const NetworkState s0 = init_antisymmetric(128, 5, 16);
  Vector beta = Vector::Zero(5);
  beta(0) = 0.6;
  beta(1) = -0.3;
  const auto f = RegressionFunction::linear(beta);
  std::ostringstream a, b;
  write_trajectory_csv(a, run_joint(s0, data, f, config(5.0)));
  write_trajectory_csv(b, run_joint(s0, data, f, config(5.0)));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Run, JointGapStartsAtZero) {
  const Dataset data = small_data(5, 30, 17);
  Vector beta = Vector::Zero(5);
  beta(0) = 0.6;
  beta(1) = -0.3;
  const auto f = RegressionFunction::linear(beta);
  const Trajectory t = run_joint(init_antisymmetric(128, 5, 18), data, f, config(5.0));
  EXPECT_EQ(t.estimation_gap.front(), 0.0);
  EXPECT_GT(t.estimation_gap.back(), 0.0);
  EXPECT_TRUE(std::isfinite(t.excess_risk.back()));
}

TEST(Run, PopulationReducesExcessRisk) {
  Vector beta = Vector::Zero(5);
  beta(2) = 0.9;
  const auto f = RegressionFunction::linear(beta);
  const Trajectory t = run_population(init_antisymmetric(256, 5, 19), f, config(40.0));
  EXPECT_NEAR(t.excess_risk.front(), 0.81 / 5.0, 4.0 * t.excess_risk_stderr.front() + 1e-3);
  EXPECT_LT(t.excess_risk.back(), 0.5 * t.excess_risk.front());
}

TEST(Run, NonFiniteWeightsDiverge) {
  const Dataset data = small_data(4, 10, 20);
  RowMatrix W = init_antisymmetric(8, 4, 21).weights();
  W(0, 0) = W(4, 0) = std::numeric_limits<double>::infinity();
  Vector a(8);
  a << 1, 1, -1, 1, -1, -1, 1, -1;
  const NetworkState s(W, a);
  try {
    run_empirical(s, data, config(1.0));
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
    EXPECT_GE(e.step(), 0);
  }
}

TEST(Csv, HeaderAndEmptyFields) {
  const Dataset data = small_data(4, 10, 22);
  const Trajectory t = run_empirical(init_antisymmetric(16, 4, 23), data, config(1.0));
  std::ostringstream os;
  write_trajectory_csv(os, t);
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  EXPECT_EQ(header,
            "t,empirical_risk,excess_risk,excess_risk_stderr,estimation_gap,"
            "estimation_gap_stderr,max_move,gram_min_eig");
  std::getline(is, row);
  EXPECT_NE(row.find(",,"), std::string::npos);
}

TEST(Movement, PerNeuronNorms) {
  const NetworkState s0 = init_antisymmetric(6, 3, 24);
  RowMatrix W = s0.weights();
  W(2, 1) += 0.3;
  W(5, 0) -= 0.4;
  const Movement mv = weight_movement(s0.with_weights(W), s0);
  EXPECT_DOUBLE_EQ(mv.max, 0.4);
  EXPECT_NEAR(mv.per_neuron(2), 0.3, 1e-15);
  EXPECT_EQ(mv.per_neuron(0), 0.0);
}

TEST(L2, SameNetworkHasZeroDistance) {
  const NetworkState s = jitter(init_antisymmetric(20, 4, 25), 0.3, 26);
  Rng rng(27);
  const L2Estimate e = l2_distance(s, s, 2000, rng);
  EXPECT_EQ(e.estimate, 0.0);
}

TEST(L2, ZeroNetworkAgainstLinearTarget) {
  Vector beta = Vector::Zero(4);
  beta(0) = 0.8;
  Rng rng(28);
  const L2Estimate e =
      l2_distance(init_antisymmetric(20, 4, 29), RegressionFunction::linear(beta), 200000, rng);
  EXPECT_NEAR(e.estimate, 0.8 / 2.0, 4.0 * e.stderr);
}

TEST(Drift, MatchesDenseSpectralNorm) {
  const NetworkState s0 = init_antisymmetric(40, 4, 30);
  const NetworkState st = jitter(s0, 0.5, 31);
  const RowMatrix X = sample_sphere(4, 15, 32);
  const Eigen::MatrixXd D = gradient_matrix(s0, X) - gradient_matrix(st, X);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(D);
  EXPECT_NEAR(gradient_matrix_drift(s0, st, X), svd.singularValues()(0), 1e-10);
}

TEST(VStat, ZeroHorizonGivesZero) {
  const Dataset data = small_data(4, 10, 33);
  Vector beta = Vector::Zero(4);
  beta(0) = 0.6;
  beta(1) = -0.3;
  const RowMatrix P = sample_sphere(4, 256, 34);
  EXPECT_EQ(vstat_concentration_on(init_antisymmetric(16, 4, 35), data,
                                   RegressionFunction::linear(beta), 0.0, 3, P),
            0.0);
}
