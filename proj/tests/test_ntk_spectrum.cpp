#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "json.hpp"
#include "ntklab/error.hpp"
#include "ntklab/ntk_kernel.hpp"
#include "ntklab/ntk_spectrum.hpp"

using namespace ntklab;

namespace {

// Gegenbauer recurrence normalized so that P(1) = 1.
double legendre_oracle(int h, int d, double z) {
  const double a = (d - 2) / 2.0;
  double c0 = 1.0, c1 = 2.0 * a * z;
  double n0 = 1.0, n1 = 2.0 * a;
  if (h == 0) return 1.0;
  for (int k = 2; k <= h; ++k) {
    const double c2 = (2.0 * z * (k + a - 1) * c1 - (k + 2 * a - 2) * c0) / k;
    const double n2 = (2.0 * (k + a - 1) * n1 - (k + 2 * a - 2) * n0) / k;
    c0 = c1;
    c1 = c2;
    n0 = n1;
    n1 = n2;
  }
  return c1 / n1;
}

// Composite Simpson in theta of the Funk-Hecke integral.
double eigen_oracle(int h, int d) {
  const int panels = 20000;
  const double pi = std::numbers::pi;
  auto g = [&](double th) {
    const double z = std::cos(th);
    return kappa_analytical(z) * legendre_oracle(h, d, z) * std::pow(std::sin(th), d - 2);
  };
  double s = g(0.0) + g(pi);
  for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * g(pi * i / panels);
  const double integral = s * pi / (3.0 * panels);
  const double norm = std::exp(std::lgamma(d / 2.0) - std::lgamma((d - 1) / 2.0)) /
                      std::sqrt(pi);
  return integral * norm;
}

std::uint64_t binom(int n, int k) {
  if (k < 0 || k > n) return 0;
  long double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return static_cast<std::uint64_t>(std::llround(r));
}

}  // namespace

TEST(Legendre, ClassicalCaseMatchesStd) {
  for (int h = 0; h <= 8; ++h)
    for (double z : {-0.9, -0.3, 0.0, 0.41, 0.77, 1.0})
      EXPECT_NEAR(legendre(h, 3, z), std::legendre(h, z), 1e-13) << h << " " << z;
}

TEST(Legendre, MatchesGegenbauerRecurrence) {
  for (int d : {4, 5, 10, 32})
    for (int h = 0; h <= 8; ++h)
      for (double z : {-0.8, 0.1, 0.6})
        EXPECT_NEAR(legendre(h, d, z), legendre_oracle(h, d, z), 1e-12);
}

TEST(Multiplicity, MatchesBinomialFormula) {
  for (int d : {3, 4, 5, 10, 32})
    for (int h = 0; h <= 10; ++h)
      EXPECT_EQ(multiplicity(h, d), binom(h + d - 1, d - 1) - binom(h + d - 3, d - 1));
  EXPECT_EQ(multiplicity(5, 3), 11u);
  EXPECT_EQ(multiplicity(1, 17), 17u);
}

TEST(Eigenvalue, OrderOneIsExact) {
  for (int d : {3, 4, 5, 10, 32, 200}) EXPECT_EQ(eigenvalue_closed_form(1, d), 1.0 / (4.0 * d));
}

TEST(Eigenvalue, OrderZeroBelowOrderOne) {
  for (int d : {3, 4, 5, 10, 32, 100}) {
    EXPECT_GT(eigenvalue_closed_form(0, d), 0.0);
    EXPECT_LT(eigenvalue_closed_form(0, d), eigenvalue_closed_form(1, d));
  }
}

TEST(Eigenvalue, ClosedFormMatchesIndependentQuadrature) {
  for (int d : {3, 4, 5, 10, 32}) {
    for (int h = 0; h <= 8; ++h) {
      const double c = eigenvalue_closed_form(h, d);
      const double o = eigen_oracle(h, d);
      if (h >= 3 && h % 2 == 1) {
        EXPECT_EQ(c, 0.0);
        EXPECT_LE(std::abs(o), 1e-10);
      } else {
        EXPECT_NEAR(c, o, 1e-8 * c) << "d=" << d << " h=" << h;
      }
    }
  }
}

TEST(Eigenvalue, ClosedFormMatchesLibraryQuadrature) {
  for (int d : {3, 4, 5, 10, 32}) {
    for (int h = 0; h <= 8; ++h) {
      const double c = eigenvalue_closed_form(h, d);
      const double q = eigenvalue_quadrature(h, d);
      if (c == 0.0) EXPECT_LE(std::abs(q), 1e-10);
      else EXPECT_NEAR(q, c, 1e-8 * c);
    }
  }
}

TEST(Eigenvalue, TraceIdentity) {
  // sum_h N(d,h) mu_h = kappa(1) = 1/2. At d = 3, N mu_h ~ h^{-2}, so the
  // remainder after order H shrinks like 1/H.
  const int d = 3;
  auto partial = [&](int H) {
    double s = 0.0;
    for (int h = 0; h <= H; ++h) s += double(multiplicity(h, d)) * eigenvalue_closed_form(h, d);
    return s;
  };
  const double s60 = partial(60), s120 = partial(120);
  EXPECT_LT(s60, s120);
  EXPECT_LT(s120, 0.5);
  EXPECT_NEAR(s120, 0.5, 2e-3);
  EXPECT_NEAR((0.5 - s120) / (0.5 - s60), 0.5, 0.05);
}

TEST(Spectrum, TableSortedAndContiguous) {
  const SpectrumTable t = build_spectrum(5, 8);
  ASSERT_FALSE(t.entries.empty());
  EXPECT_DOUBLE_EQ(t.lambda_1(), 1.0 / 20.0);
  std::uint64_t next = 1;
  for (std::size_t i = 0; i < t.entries.size(); ++i) {
    const auto& e = t.entries[i];
    if (i > 0) {
      EXPECT_LE(e.value, t.entries[i - 1].value);
    }
    EXPECT_EQ(e.l_start, next);
    EXPECT_EQ(e.l_end - e.l_start + 1, e.multiplicity);
    next = e.l_end + 1;
    EXPECT_DOUBLE_EQ(t.eigenvalue_at(e.l_start), e.value);
  }
}

TEST(Spectrum, RejectsDimensionTwo) {
  try {
    build_spectrum(2, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnsupportedDimension);
  }
}

TEST(Spectrum, JsonShape) {
  double worst = 1.0;
  const auto j = nlohmann::json::parse(spectrum_json(build_spectrum(4, 6), true, &worst));
  EXPECT_EQ(j["d"], 4);
  EXPECT_EQ(j["h_max"], 6);
  bool found = false;
  for (const auto& e : j["entries"]) {
    if (e["h"] == 1) {
      EXPECT_DOUBLE_EQ(e["value"].get<double>(), 0.0625);
      EXPECT_EQ(e["multiplicity"], 4);
      found = true;
    }
  }
  EXPECT_TRUE(found);
  EXPECT_LE(worst, 1e-6);
}

TEST(Plan, LinearTargetArithmetic) {
  Vector beta = Vector::Zero(4);
  beta(0) = 0.7;
  const auto plan = plan_epsilon(RegressionFunction::linear(beta), 4, 0.2,
                                 build_spectrum(4, 8), 0, 0);
  EXPECT_DOUBLE_EQ(plan.lambda_epsilon, 1.0 / 16.0);
  EXPECT_NEAR(plan.T_epsilon, 32.0 * std::log(10.0), 1e-12);
  EXPECT_EQ(plan.L_epsilon, 4u);
  EXPECT_TRUE(plan.certified);
}

TEST(Plan, ZeroTargetTakesSmallestCutoff) {
  const auto plan = plan_epsilon(RegressionFunction::zero(6), 6, 0.3, build_spectrum(6, 8), 0, 0);
  EXPECT_EQ(plan.tail_mass, 0.0);
  EXPECT_EQ(plan.L_epsilon, 6u);
}

TEST(Plan, HarmonicOrderOneMatchesLinear) {
  Vector beta = Vector::Zero(5);
  beta(2) = -0.5;
  const auto table = build_spectrum(5, 8);
  const auto a = plan_epsilon(RegressionFunction::linear(beta), 5, 0.1, table, 0, 0);
  const auto b = plan_epsilon(
      RegressionFunction::harmonic(0.0, beta, Eigen::MatrixXd::Zero(5, 5)), 5, 0.1, table, 0, 0);
  EXPECT_EQ(a.L_epsilon, b.L_epsilon);
  EXPECT_EQ(a.lambda_epsilon, b.lambda_epsilon);
  EXPECT_EQ(a.T_epsilon, b.T_epsilon);
}

TEST(Plan, ConstantTermPullsInOrderZero) {
  const int d = 5;
  const auto plan = plan_epsilon(
      RegressionFunction::harmonic(0.5, Vector::Zero(d), Eigen::MatrixXd::Zero(d, d)), d, 0.1,
      build_spectrum(d, 8), 0, 0);
  EXPECT_DOUBLE_EQ(plan.lambda_epsilon, eigenvalue_closed_form(0, d));
}

TEST(Plan, HighOrderCustomTargetIsInfeasible) {
  const int d = 4;
  const auto f = RegressionFunction::custom(
      d, [d](std::span<const double> x) { return x[0] * x[0] * x[0] - 3.0 * x[0] / (d + 2.0); },
      1.0, "cubic");
  try {
    plan_epsilon(f, d, 0.1, build_spectrum(d, 8), 20000, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPlanInfeasible);
  }
}

TEST(TimeHorizon, IdentityAndMonotone) {
  for (int d : {3, 10}) {
    for (double eps : {0.01, 0.1, 0.5}) {
      EXPECT_NEAR(time_horizon(1.0 / (4 * d), eps), 8.0 * d * std::log(2.0 / eps),
                  1e-12 * d * 100);
    }
  }
  double prev = time_horizon(0.05, 0.01);
  for (double eps = 0.02; eps < 1.0; eps += 0.01) {
    const double t = time_horizon(0.05, eps);
    EXPECT_LT(t, prev);
    prev = t;
  }
}

TEST(Projection, RecoversPolynomialEnergies) {
  const int d = 4;
  Vector beta = Vector::Zero(d);
  beta(0) = 0.4;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
  A(1, 2) = A(2, 1) = 0.3;
  const auto f = RegressionFunction::harmonic(0.2, beta, A);
  const RowMatrix X = sample_sphere(d, 200000, 3);
  const HarmonicMasses m = project_degree2(X, f.evaluate(X));
  const auto e = f.order_energy();
  for (int h = 0; h < 3; ++h) EXPECT_NEAR(m.energy[h], e[h], 5e-3 * (e[0] + e[1] + e[2]));
  EXPECT_LT(m.residual, 1e-10);
}
