#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>

#include "ntklab/rng.hpp"

namespace ntklab {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr int kMinDimension = 3;

// n points drawn independently and uniformly from the unit sphere in R^d,
// one per row.
RowMatrix sample_sphere(int d, int n, Rng& rng);
RowMatrix sample_sphere(int d, int n, std::uint64_t seed);

// Target f* for the regression problem. Linear and harmonic kinds are
// polynomials of degree <= 2 restricted to the sphere:
//   f(x) = c0 + beta.x + x^T A x,  A symmetric and traceless,
// so each piece lies in a single spherical-harmonic order (0, 1, 2) and the
// per-order L2 masses are known in closed form. Custom kinds wrap an
// arbitrary evaluator together with a certified bound on |f|.
class RegressionFunction {
 public:
  enum class Kind { kLinear, kHarmonic, kCustom };
  using Evaluator = std::function<double(std::span<const double>)>;

  static RegressionFunction zero(int d);
  static RegressionFunction linear(Vector beta);
  static RegressionFunction harmonic(double c0, Vector beta,
                                     Eigen::MatrixXd quadratic);
  static RegressionFunction custom(int d, Evaluator f, double sup_bound,
                                   std::string name);

  double operator()(std::span<const double> x) const;
  Vector evaluate(const RowMatrix& X) const;

  Kind kind() const { return kind_; }
  int dim() const { return d_; }
  double sup_bound() const { return sup_bound_; }
  const std::string& name() const { return name_; }

  double constant() const { return c0_; }
  const Vector& beta() const { return beta_; }
  const Eigen::MatrixXd& quadratic() const { return quad_; }

  // Squared L2(uniform sphere) norm carried by harmonic orders 0, 1, 2.
  // Only defined for the polynomial kinds.
  std::array<double, 3> order_energy() const;

 private:
  RegressionFunction() = default;

  Kind kind_ = Kind::kLinear;
  int d_ = 0;
  double c0_ = 0.0;
  Vector beta_;
  Eigen::MatrixXd quad_;
  Evaluator custom_;
  double sup_bound_ = 0.0;
  std::string name_;
};

struct NoiseModel {
  enum class Kind { kNone, kUniform, kTwoPoint };

  Kind kind = Kind::kNone;
  double half_width = 0.0;

  static NoiseModel none() { return {}; }
  static NoiseModel uniform(double b) { return {Kind::kUniform, b}; }
  static NoiseModel two_point(double b) { return {Kind::kTwoPoint, b}; }

  // Effective bound on |xi|; zero for kNone regardless of half_width.
  double bound() const { return kind == Kind::kNone ? 0.0 : half_width; }
  double sample(Rng& rng) const;
};

struct Dataset {
  RowMatrix X;  // n x d, unit rows
  Vector y;     // labels, |y_i| <= 1
  Vector noise; // xi*_i = y_i - f*(x_i)

  int n() const { return static_cast<int>(X.rows()); }
  int d() const { return static_cast<int>(X.cols()); }
};

Dataset make_dataset(const RegressionFunction& f, const NoiseModel& noise,
                     int d, int n, std::uint64_t seed);

// Largest singular value of X.
double data_spectral_norm(const RowMatrix& X);

// CSV with header x_0,...,x_{d-1},y,xi_star and 17 significant digits.
void write_dataset_csv(std::ostream& os, const Dataset& data);
Dataset read_dataset_csv(std::istream& is);

}  // namespace ntklab
