#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ntklab/error.hpp"
#include "ntklab/ntk_kernel.hpp"
#include "ntklab/relu_net.hpp"

using namespace ntklab;

namespace {

// Direct sum, independent of the blocked batch path.
double naive_forward(const NetworkState& s, const Vector& x) {
  double acc = 0.0;
  for (int j = 0; j < s.m(); ++j) {
    acc += s.signs()(j) * std::max(0.0, s.weights().row(j).dot(x));
  }
  return acc / std::sqrt(double(s.m()));
}

}  // namespace

TEST(Init, AntisymmetricPairs) {
  const NetworkState s = init_antisymmetric(64, 5, 7);
  for (int j = 0; j < 32; ++j) {
    EXPECT_EQ(s.weights().row(j), s.weights().row(j + 32));
    EXPECT_EQ(s.signs()(j), -s.signs()(j + 32));
  }
}

TEST(Init, NetworkIsZeroAtInitialization) {
  const NetworkState s = init_antisymmetric(512, 8, 3);
  const RowMatrix P = sample_sphere(8, 10000, 4);
  const Vector out = forward_batch(s, P);
  EXPECT_LE(out.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Init, RejectsOddWidth) {
  EXPECT_THROW(init_antisymmetric(7, 4, 0), Error);
  try {
    init_antisymmetric(7, 4, 0);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidWidth);
  }
}

TEST(Forward, BatchMatchesNaiveSum) {
  Rng rng(5);
  const NetworkState s0 = init_antisymmetric(100, 6, rng);
  RowMatrix W = s0.weights();
  Rng perturb(6);
  for (int j = 0; j < W.rows(); ++j)
    for (int k = 0; k < W.cols(); ++k) W(j, k) += 0.3 * perturb.normal();
  const NetworkState s = s0.with_weights(W);
  const RowMatrix P = sample_sphere(6, 300, 8);
  const Vector out = forward_batch(s, P);
  for (int i = 0; i < P.rows(); ++i) {
    const Vector x = P.row(i).transpose();
    EXPECT_NEAR(out(i), naive_forward(s, x), 1e-13);
    EXPECT_NEAR(forward(s, std::span<const double>(x.data(), x.size())), out(i), 1e-13);
  }
}

TEST(Forward, RejectsNonUnitInput) {
  const NetworkState s = init_antisymmetric(4, 3, 1);
  const double x[3] = {1.0, 1.0, 0.0};
  EXPECT_THROW(forward(s, x), Error);
}

TEST(Gradient, MatchesCentralDifferences) {
  const NetworkState s0 = init_antisymmetric(20, 4, 9);
  RowMatrix W = s0.weights();
  Rng perturb(10);
  for (int j = 0; j < 10; ++j)
    for (int k = 0; k < 4; ++k) W(j, k) += 0.5 * perturb.normal();
  const NetworkState s = s0.with_weights(W);
  const RowMatrix P = sample_sphere(4, 1, 11);
  const Vector x = P.row(0).transpose();
  const RowMatrix G = gradient(s, std::span<const double>(x.data(), 4));
  const double h = 1e-6;
  for (int j = 0; j < s.m(); ++j) {
    for (int k = 0; k < 4; ++k) {
      RowMatrix Wp = W, Wm = W;
      Wp(j, k) += h;
      Wm(j, k) -= h;
      const double fd = (naive_forward(s.with_weights(Wp), x) -
                         naive_forward(s.with_weights(Wm), x)) / (2 * h);
      EXPECT_NEAR(G(j, k), fd, 1e-7);
    }
  }
}

TEST(Gradient, ReluDerivativeIsZeroAtZero) {
  RowMatrix W(2, 3);
  W << 1.0, 0.0, 0.0, 1.0, 0.0, 0.0;
  Vector a(2);
  a << 1.0, -1.0;
  const NetworkState s(W, a);
  const double x[3] = {0.0, 1.0, 0.0};
  EXPECT_EQ(gradient(s, x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradientMatrix, GramIdentityOnRandomInstances) {
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 2 * (2 + trial % 7), d = 3 + trial % 4, n = 3 + trial % 9;
    const NetworkState s = init_antisymmetric(m, d, 100 + trial);
    const RowMatrix X = sample_sphere(d, n, 200 + trial);
    const Eigen::MatrixXd G = gradient_matrix(s, X);
    ASSERT_EQ(G.rows(), m * d);
    ASSERT_EQ(G.cols(), n);
    const Eigen::MatrixXd H = gram_matrix(s, X).H;
    EXPECT_LE((G.transpose() * G - H).cwiseAbs().maxCoeff(), 1e-10) << "trial " << trial;
  }
}

TEST(GradientMatrix, ColumnIsVectorizedGradient) {
  const NetworkState s = init_antisymmetric(6, 3, 2);
  const RowMatrix X = sample_sphere(3, 4, 3);
  const Eigen::MatrixXd G = gradient_matrix(s, X);
  for (int i = 0; i < 4; ++i) {
    const RowMatrix g = gradient(s, std::span<const double>(X.row(i).data(), 3));
    for (int j = 0; j < 6; ++j)
      for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(G(j * 3 + k, i), g(j, k));
  }
}

TEST(ActivationPattern, MatchesSigns) {
  const NetworkState s = init_antisymmetric(130, 5, 4);
  const RowMatrix X = sample_sphere(5, 17, 5);
  const ActivationPattern p = activation_pattern(s, X);
  EXPECT_EQ(p.words, 3);
  for (int i = 0; i < 17; ++i)
    for (int j = 0; j < 130; ++j)
      EXPECT_EQ(p.active(i, j), s.weights().row(j).dot(X.row(i)) > 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const NetworkState s = init_antisymmetric(40, 7, 12);
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_checkpoint(ss, s);
  const NetworkState back = read_checkpoint(ss);
  EXPECT_EQ(back.weights(), s.weights());
  EXPECT_EQ(back.signs(), s.signs());
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream ss("not a checkpoint at all");
  try {
    read_checkpoint(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  }
}
