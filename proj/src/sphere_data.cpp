#include "ntklab/sphere_data.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ntklab/error.hpp"

namespace ntklab {
namespace {

void require_dimension(int d) {
  require(d >= kMinDimension, ErrorKind::kUnsupportedDimension,
          "dimension d=" + std::to_string(d) + " unsupported (need d >= 3)");
}

}  // namespace

RowMatrix sample_sphere(int d, int n, Rng& rng) {
  require_dimension(d);
  require(n >= 1, ErrorKind::kInvalidArgument, "sample count must be >= 1");
  RowMatrix X(n, d);
  for (int i = 0; i < n; ++i) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (int k = 0; k < d; ++k) {
        const double g = rng.normal();
        X(i, k) = g;
        norm2 += g * g;
      }
    } while (norm2 == 0.0);
    X.row(i) /= std::sqrt(norm2);
  }
  return X;
}

RowMatrix sample_sphere(int d, int n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_sphere(d, n, rng);
}

RegressionFunction RegressionFunction::zero(int d) {
  require_dimension(d);
  return linear(Vector::Zero(d));
}

RegressionFunction RegressionFunction::linear(Vector beta) {
  require_dimension(static_cast<int>(beta.size()));
  RegressionFunction f;
  f.kind_ = Kind::kLinear;
  f.d_ = static_cast<int>(beta.size());
  f.sup_bound_ = beta.norm();
  f.quad_ = Eigen::MatrixXd::Zero(f.d_, f.d_);
  f.beta_ = std::move(beta);
  f.name_ = "linear";
  return f;
}

RegressionFunction RegressionFunction::harmonic(double c0, Vector beta,
                                                Eigen::MatrixXd quadratic) {
  const int d = static_cast<int>(beta.size());
  require_dimension(d);
  require(quadratic.rows() == d && quadratic.cols() == d,
          ErrorKind::kDimensionMismatch, "quadratic part must be d x d");
  const double scale = std::max(1.0, quadratic.cwiseAbs().maxCoeff());
  require((quadratic - quadratic.transpose()).cwiseAbs().maxCoeff() <=
              1e-12 * scale,
          ErrorKind::kInvalidArgument, "quadratic part must be symmetric");
  require(std::abs(quadratic.trace()) <= 1e-12 * scale * d,
          ErrorKind::kInvalidArgument,
          "quadratic part must be traceless (pure order-2 harmonic)");
  RegressionFunction f;
  f.kind_ = Kind::kHarmonic;
  f.d_ = d;
  f.c0_ = c0;
  // |x^T A x| <= spectral radius of A on the unit sphere.
  double quad_sup = 0.0;
  if (quadratic.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        quadratic, Eigen::EigenvaluesOnly);
    quad_sup = es.eigenvalues().cwiseAbs().maxCoeff();
  }
  f.sup_bound_ = std::abs(c0) + beta.norm() + quad_sup;
  f.beta_ = std::move(beta);
  f.quad_ = std::move(quadratic);
  f.name_ = "harmonic";
  return f;
}

RegressionFunction RegressionFunction::custom(int d, Evaluator eval,
                                              double sup_bound,
                                              std::string name) {
  require_dimension(d);
  require(static_cast<bool>(eval), ErrorKind::kInvalidArgument,
          "custom regression function needs an evaluator");
  require(sup_bound >= 0.0 && std::isfinite(sup_bound),
          ErrorKind::kInvalidArgument, "sup bound must be finite and >= 0");
  RegressionFunction f;
  f.kind_ = Kind::kCustom;
  f.d_ = d;
  f.custom_ = std::move(eval);
  f.sup_bound_ = sup_bound;
  f.name_ = std::move(name);
  return f;
}

double RegressionFunction::operator()(std::span<const double> x) const {
  require(static_cast<int>(x.size()) == d_, ErrorKind::kDimensionMismatch,
          "input dimension does not match regression function");
  if (kind_ == Kind::kCustom) return custom_(x);
  const Eigen::Map<const Vector> v(x.data(), d_);
  double value = c0_ + beta_.dot(v);
  if (kind_ == Kind::kHarmonic) value += v.dot(quad_ * v);
  return value;
}

Vector RegressionFunction::evaluate(const RowMatrix& X) const {
  require(X.cols() == d_, ErrorKind::kDimensionMismatch,
          "input dimension does not match regression function");
  const auto n = X.rows();
  if (kind_ == Kind::kCustom) {
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i) = custom_(std::span<const double>(X.row(i).data(), d_));
    }
    return out;
  }
  Vector out = X * beta_;
  out.array() += c0_;
  if (kind_ == Kind::kHarmonic) {
    out += (X * quad_).cwiseProduct(X).rowwise().sum();
  }
  return out;
}

std::array<double, 3> RegressionFunction::order_energy() const {
  require(kind_ != Kind::kCustom, ErrorKind::kInvalidArgument,
          "order energies are only known for polynomial targets");
  const double d = d_;
  // E[(beta.x)^2] = |beta|^2/d; for traceless A, E[(x^T A x)^2] =
  // 2 tr(A^2) / (d(d+2)).
  return {c0_ * c0_, beta_.squaredNorm() / d,
          2.0 * (quad_ * quad_).trace() / (d * (d + 2.0))};
}

double NoiseModel::sample(Rng& rng) const {
  switch (kind) {
    case Kind::kNone:
      return 0.0;
    case Kind::kUniform:
      return half_width * (2.0 * rng.uniform() - 1.0);
    case Kind::kTwoPoint:
      return (rng() >> 63) ? half_width : -half_width;
  }
  return 0.0;
}

Dataset make_dataset(const RegressionFunction& f, const NoiseModel& noise,
                     int d, int n, std::uint64_t seed) {
  require(f.dim() == d, ErrorKind::kDimensionMismatch,
          "regression function dimension differs from d");
  require(noise.half_width >= 0.0, ErrorKind::kInvalidArgument,
          "noise half-width must be >= 0");
  const double bound = f.sup_bound() + noise.bound();
  require(bound <= 1.0 + 1e-12, ErrorKind::kLabelBound,
          "label bound violated: sup|f*| + noise half-width = " +
              std::to_string(bound) + " > 1");
  const Rng root(seed);
  Rng sphere_rng = root.split("sphere");
  Rng noise_rng = root.split("noise");

  Dataset data;
  data.X = sample_sphere(d, n, sphere_rng);
  data.noise.resize(n);
  for (int i = 0; i < n; ++i) data.noise(i) = noise.sample(noise_rng);
  const Vector fx = f.evaluate(data.X);
  data.y = fx + data.noise;
  data.noise = data.y - fx;
  return data;
}

double data_spectral_norm(const RowMatrix& X) {
  require(X.rows() > 0 && X.cols() > 0, ErrorKind::kInvalidArgument,
          "data matrix is empty");
  // Work on the smaller Gram side.
  Eigen::MatrixXd gram;
  if (X.rows() >= X.cols()) {
    gram = X.transpose() * X;
  } else {
    gram = X * X.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram,
                                                    Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

void write_dataset_csv(std::ostream& os, const Dataset& data) {
  const int d = data.d();
  for (int k = 0; k < d; ++k) os << "x_" << k << ',';
  os << "y,xi_star\n";
  std::ostringstream line;
  line.precision(17);
  for (int i = 0; i < data.n(); ++i) {
    line.str({});
    for (int k = 0; k < d; ++k) line << data.X(i, k) << ',';
    line << data.y(i) << ',' << data.noise(i) << '\n';
    os << line.str();
  }
}

Dataset read_dataset_csv(std::istream& is) {
  std::string header;
  require(static_cast<bool>(std::getline(is, header)), ErrorKind::kFormat,
          "dataset CSV is empty");
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  require(cols.size() >= 2 + kMinDimension && cols[cols.size() - 2] == "y" &&
              cols.back() == "xi_star",
          ErrorKind::kFormat, "unexpected dataset CSV header");
  const int d = static_cast<int>(cols.size()) - 2;
  for (int k = 0; k < d; ++k) {
    require(cols[k] == "x_" + std::to_string(k), ErrorKind::kFormat,
            "unexpected dataset CSV header");
  }
  std::vector<double> values;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int count = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorKind::kFormat, "bad number in dataset CSV: " + cell);
      }
      ++count;
    }
    require(count == d + 2, ErrorKind::kFormat, "ragged dataset CSV row");
    ++n;
  }
  Dataset data;
  data.X.resize(n, d);
  data.y.resize(n);
  data.noise.resize(n);
  for (int i = 0; i < n; ++i) {
    const double* row = values.data() + static_cast<std::size_t>(i) * (d + 2);
    for (int k = 0; k < d; ++k) data.X(i, k) = row[k];
    data.y(i) = row[d];
    data.noise(i) = row[d + 1];
  }
  return data;
}

}  // namespace ntklab
