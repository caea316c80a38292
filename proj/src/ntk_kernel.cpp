#include "ntklab/ntk_kernel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "ntklab/error.hpp"

namespace ntklab {
namespace {

void require_gram_size(Eigen::Index n) {
  require(n <= kMaxGramSize, ErrorKind::kScale,
          "Gram size " + std::to_string(n) + " exceeds the cap of " +
              std::to_string(kMaxGramSize));
}

void require_finite(const Eigen::MatrixXd& A) {
  require(A.allFinite(), ErrorKind::kNonFinite, "matrix has non-finite entries");
}

}  // namespace

double kappa_analytical(double u) {
  require(std::abs(u) <= 1.0 + 1e-12, ErrorKind::kDomain,
          "kernel argument outside [-1, 1]");
  u = std::clamp(u, -1.0, 1.0);
  return u * (0.5 - std::acos(u) / (2.0 * std::numbers::pi));
}

double kappa_empirical(const NetworkState& state, std::span<const double> x,
                       std::span<const double> xp) {
  require(static_cast<int>(x.size()) == state.d() &&
              static_cast<int>(xp.size()) == state.d(),
          ErrorKind::kDimensionMismatch, "input dimension does not match");
  const Eigen::Map<const Vector> u(x.data(), state.d());
  const Eigen::Map<const Vector> v(xp.data(), state.d());
  const Vector zu = state.weights() * u;
  const Vector zv = state.weights() * v;
  long count = 0;
  for (int j = 0; j < state.m(); ++j) count += (zu(j) > 0.0 && zv(j) > 0.0);
  return u.dot(v) * double(count) / double(state.m());
}

GramMatrix gram_analytical(const RowMatrix& X) {
  require_gram_size(X.rows());
  const Eigen::MatrixXd inner = X * X.transpose();
  const Eigen::Index n = X.rows();
  GramMatrix g;
  g.provenance = GramMatrix::Provenance::kAnalytical;
  g.H.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g.H(i, i) = 0.5;
    for (Eigen::Index k = 0; k < i; ++k) {
      const double v = kappa_analytical(std::clamp(inner(i, k), -1.0, 1.0));
      g.H(i, k) = v;
      g.H(k, i) = v;
    }
  }
  return g;
}

GramMatrix gram_from_pattern(const ActivationPattern& pattern,
                             const RowMatrix& X) {
  require(pattern.n == X.rows(), ErrorKind::kDimensionMismatch,
          "activation pattern and data disagree on n");
  require_gram_size(X.rows());
  const Eigen::MatrixXd inner = X * X.transpose();
  const int n = pattern.n;
  const double inv_m = 1.0 / double(pattern.m);
  GramMatrix g;
  g.provenance = GramMatrix::Provenance::kEmpirical;
  g.H.resize(n, n);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t* ri = pattern.row(i);
    for (int k = 0; k <= i; ++k) {
      const std::uint64_t* rk = pattern.row(k);
      long count = 0;
      for (int w = 0; w < pattern.words; ++w) count += std::popcount(ri[w] & rk[w]);
      const double v = inner(i, k) * double(count) * inv_m;
      g.H(i, k) = v;
      g.H(k, i) = v;
    }
  }
  return g;
}

GramMatrix gram_matrix(const NetworkState& state, const RowMatrix& X) {
  require_gram_size(X.rows());
  return gram_from_pattern(activation_pattern(state, X), X);
}

double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
  require(symmetric.rows() == symmetric.cols() && symmetric.rows() > 0,
          ErrorKind::kInvalidArgument, "min_eigenvalue needs a square matrix");
  require_gram_size(symmetric.rows());
  require_finite(symmetric);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetric,
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double min_eigenvalue(const GramMatrix& gram) { return min_eigenvalue(gram.H); }

double symmetric_spectral_norm(const Eigen::MatrixXd& A, double rel_tol) {
  require(A.rows() == A.cols(), ErrorKind::kInvalidArgument,
          "spectral norm needs a square matrix");
  require_finite(A);
  const Eigen::Index n = A.rows();
  if (n == 0) return 0.0;
  if (n <= 128) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  const Eigen::Index k_max = std::min<Eigen::Index>(n, 400);
  Eigen::MatrixXd Q(n, k_max);
  std::vector<double> alpha, beta;
  Rng start(0x1a2c705ULL);
  Vector q(n);
  for (Eigen::Index i = 0; i < n; ++i) q(i) = start.normal();
  q.normalize();
  double best = 0.0;
  for (Eigen::Index k = 0; k < k_max; ++k) {
    Q.col(k) = q;
    Vector w = A * q;
    alpha.push_back(q.dot(w));
    // Full reorthogonalization, applied twice.
    for (int pass = 0; pass < 2; ++pass) {
      const Vector proj = Q.leftCols(k + 1).transpose() * w;
      w.noalias() -= Q.leftCols(k + 1) * proj;
    }
    const double b = w.norm();
    const bool exhausted = b <= 1e-14 * std::max(1.0, std::abs(alpha.back()));
    const bool check = exhausted || k + 1 == k_max || (k + 1) % 8 == 0;
    if (check) {
      const Eigen::Index size = k + 1;
      Vector diag = Eigen::Map<const Vector>(alpha.data(), size);
      Vector sub = size > 1 ? Vector(Eigen::Map<const Vector>(beta.data(), size - 1))
                            : Vector();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
      tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
      const Vector& theta = tri.eigenvalues();
      Eigen::Index idx = 0;
      theta.cwiseAbs().maxCoeff(&idx);
      best = std::abs(theta(idx));
      const double residual = b * std::abs(tri.eigenvectors()(size - 1, idx));
      if (exhausted || residual <= rel_tol * best) return best;
    }
    beta.push_back(b);
    q = w / b;
  }
  return best;
}

double nystrom_norm_diff(const GramMatrix& a, const GramMatrix& b) {
  require(a.n() == b.n() && a.n() > 0, ErrorKind::kDimensionMismatch,
          "Nystrom matrices must share the same probes");
  const Eigen::MatrixXd diff = a.H - b.H;
  return symmetric_spectral_norm(diff) / double(a.n());
}

double operator_norm_diff(const NetworkState& state, int probes, Rng& rng) {
  require(probes >= 64, ErrorKind::kInvalidArgument,
          "operator_norm_diff needs at least 64 probes");
  const RowMatrix P = sample_sphere(state.d(), probes, rng);
  return nystrom_norm_diff(gram_matrix(state, P), gram_analytical(P));
}

std::vector<int> active_boundary_count(const NetworkState& state_init,
                                       const RowMatrix& X, double radius) {
  require(X.cols() == state_init.d(), ErrorKind::kDimensionMismatch,
          "input dimension does not match network");
  require(radius >= 0.0, ErrorKind::kInvalidArgument, "radius must be >= 0");
  const Eigen::MatrixXd Z = X * state_init.weights().transpose();  // n x m
  std::vector<int> counts(X.rows(), 0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    int c = 0;
    for (Eigen::Index j = 0; j < Z.cols(); ++j) c += std::abs(Z(i, j)) <= radius;
    counts[i] = c;
  }
  return counts;
}

double default_boundary_radius(int m, int d) {
  return 32.0 * std::sqrt(double(d) / double(m));
}

}  // namespace ntklab
