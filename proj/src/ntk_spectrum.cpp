#include "ntklab/ntk_spectrum.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "ntklab/error.hpp"

namespace ntklab {
namespace {

constexpr double kPi = std::numbers::pi;

void require_order(int h, int d) {
  require(d >= kMinDimension, ErrorKind::kUnsupportedDimension,
          "dimension d=" + std::to_string(d) + " unsupported (need d >= 3)");
  require(h >= 0, ErrorKind::kInvalidArgument, "harmonic order must be >= 0");
}

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// ln(n!!) for n >= -1.
double log_double_factorial(int n) {
  if (n <= 0) return 0.0;
  if (n % 2 == 0) {
    const int k = n / 2;
    return k * std::log(2.0) + std::lgamma(k + 1.0);
  }
  const int k = (n - 1) / 2;
  return std::lgamma(n + 1.0) - k * std::log(2.0) - std::lgamma(k + 1.0);
}

long double legendre_l(int h, int d, long double z) {
  const long double half = 0.5L * (d - 1);
  const long double base = std::lgamma((long double)h + 1) + std::lgamma(half);
  const long double one_minus = std::max(0.0L, 1.0L - z * z);
  long double sum = 0.0L;
  for (int r = 0; 2 * r <= h; ++r) {
    const long double log_coef =
        base - std::lgamma((long double)r + 1) -
        std::lgamma((long double)(h - 2 * r) + 1) - std::lgamma(r + half) -
        r * std::log(4.0L);
    const long double mag = std::exp(log_coef) * std::pow(one_minus, r) *
                            std::pow(z, h - 2 * r);
    sum += (r % 2 == 0) ? mag : -mag;
  }
  return sum;
}

// 20-point Gauss-Legendre rule on [-1, 1], computed once by Newton's method.
struct GaussLegendre {
  static constexpr int kPoints = 20;
  std::array<long double, kPoints> nodes{};
  std::array<long double, kPoints> weights{};

  GaussLegendre() {
    const int n = kPoints;
    for (int i = 0; i < n; ++i) {
      long double x = std::cos(std::numbers::pi_v<long double> * (i + 0.75L) /
                               (n + 0.5L));
      long double dp = 0.0L;
      for (int it = 0; it < 100; ++it) {
        long double p0 = 1.0L, p1 = x;
        for (int k = 2; k <= n; ++k) {
          const long double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0L);
        const long double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-19L) break;
      }
      {
        long double p0 = 1.0L, p1 = x;
        for (int k = 2; k <= n; ++k) {
          const long double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0L);
      }
      nodes[i] = x;
      weights[i] = 2.0L / ((1.0L - x * x) * dp * dp);
    }
  }

  template <class F>
  long double integrate(F&& f, long double a, long double b) const {
    const long double mid = 0.5L * (a + b);
    const long double half = 0.5L * (b - a);
    long double s = 0.0L;
    for (int i = 0; i < kPoints; ++i) s += weights[i] * f(mid + half * nodes[i]);
    return s * half;
  }
};

const GaussLegendre& gauss_legendre() {
  static const GaussLegendre rule;
  return rule;
}

template <class F>
long double adaptive(F&& f, long double a, long double b, long double whole,
                     long double tol, int depth) {
  const auto& rule = gauss_legendre();
  const long double mid = 0.5L * (a + b);
  const long double left = rule.integrate(f, a, mid);
  const long double right = rule.integrate(f, mid, b);
  const long double floor = 1e-15L * std::abs(left + right);
  if (std::abs(left + right - whole) <= std::max(tol, floor)) return left + right;
  require(depth < 40, ErrorKind::kQuadrature,
          "adaptive quadrature failed to converge");
  return adaptive(f, a, mid, left, 0.5L * tol, depth + 1) +
         adaptive(f, mid, b, right, 0.5L * tol, depth + 1);
}

// lgamma(a + b) - lgamma(a) without cancellation for large a.
long double lgamma_diff(long double a, long double b) {
  if (a < 50.0L) return std::lgamma(a + b) - std::lgamma(a);
  auto series = [](long double z) {
    const long double z2 = z * z;
    return (1.0L / 12.0L - (1.0L / 360.0L - (1.0L / 1260.0L - 1.0L / (1680.0L * z2)) / z2) / z2) /
           z;
  };
  return (a - 0.5L) * std::log1p(b / a) + b * std::log(a + b) - b + series(a + b) - series(a);
}

// Log of term r of the even-order series (without the h-dependent
// prefactor), as a smooth function of real r:
//   C(2r+2, h) / (B(1/2, r) r (1 + 2r)) * B(r + 3/2 - h/2, h + (d-1)/2)
long double even_series_log_term(int h, int d, long double r) {
  const long double c = h + 0.5L * (d - 1);
  return lgamma_diff(2.0L * r + 3.0L - h, h) - std::lgamma(h + 1.0L) -
         std::lgamma(0.5L) + lgamma_diff(r, 0.5L) - std::log(r) -
         std::log(1.0L + 2.0L * r) + std::lgamma(c) -
         lgamma_diff(r + 1.5L - 0.5L * h, c);
}

// Sum of the even-order series. Terms are positive and decay like
// r^{-(d+2)/2}, far too slowly to truncate at small d, so after an explicit
// block the remainder comes from Euler-Maclaurin:
//   sum_{k > R} t_k = int_R^inf t - t(R)/2 - t'(R)/12 + O(t'''(R))
// with the integral taken by quadrature in s = log(x / R).
double even_series_sum(int h, int d) {
  const long r0 = std::max(1, h / 2 - 1);
  // Corrections to the power-law decay are O(h^2 / r).
  const long kExplicit = std::max(512L, 2L * h * h);
  constexpr long double kStop = 1e-18L;
  long double sum = 0.0L;
  long double term = 0.0L;
  long r = r0;
  for (; r < r0 + kExplicit; ++r) {
    term = std::exp(even_series_log_term(h, d, (long double)r));
    require(std::isfinite((double)term), ErrorKind::kSeries,
            "non-finite eigenvalue series term");
    sum += term;
    if (term <= kStop * sum) return double(sum);
  }
  const long double R = (long double)(r - 1);
  const long double step = 1e-4L * R;
  const long double slope =
      (even_series_log_term(h, d, R + step) - even_series_log_term(h, d, R - step)) /
      (2.0L * step);
  require(slope < -1.0L / R, ErrorKind::kSeries,
          "eigenvalue series terms do not decay fast enough");
  // t(R e^s) R e^s decays like exp(-(p - 1) s) with p = -R slope.
  const long double rate = -R * slope - 1.0L;
  const long double s_max = 45.0L / rate;
  auto integrand = [&](long double s) {
    const long double x = R * std::exp(s);
    return std::exp(even_series_log_term(h, d, x)) * x;
  };
  const auto& rule = gauss_legendre();
  long double integral = 0.0L;
  constexpr int kPanels = 64;
  for (int i = 0; i < kPanels; ++i) {
    const long double a = s_max * i / kPanels, b = s_max * (i + 1) / kPanels;
    integral += adaptive(integrand, a, b, rule.integrate(integrand, a, b),
                         1e-17L * sum / kPanels, 0);
  }
  const long double tail = integral - 0.5L * term - term * slope / 12.0L;
  return double(sum + tail);
}

}  // namespace

double legendre(int h, int d, double z) {
  require_order(h, d);
  require(std::abs(z) <= 1.0, ErrorKind::kDomain,
          "Legendre argument outside [-1, 1]");
  const double half = 0.5 * (d - 1);
  const double base = std::lgamma(h + 1.0) + std::lgamma(half);
  const double one_minus = std::max(0.0, 1.0 - z * z);
  double sum = 0.0;
  for (int r = 0; 2 * r <= h; ++r) {
    const double log_coef = base - std::lgamma(r + 1.0) -
                            std::lgamma(h - 2.0 * r + 1.0) -
                            std::lgamma(r + half) - r * std::log(4.0);
    const double mag =
        std::exp(log_coef) * std::pow(one_minus, r) * std::pow(z, h - 2 * r);
    sum += (r % 2 == 0) ? mag : -mag;
  }
  return sum;
}

std::uint64_t multiplicity(int h, int d) {
  require_order(h, d);
  if (h == 0) return 1;
  if (h == 1) return std::uint64_t(d);
  // N = (2h + d - 2) * C(h + d - 3, h) / (d - 2)
  using u128 = unsigned __int128;
  const u128 limit = ~std::uint64_t{0};
  u128 binom = 1;
  const int top = h + d - 3;
  const int k = std::min(h, d - 3);
  for (int i = 1; i <= k; ++i) {
    binom = binom * u128(top - k + i) / u128(i);
    require(binom <= limit, ErrorKind::kOverflow,
            "multiplicity N(d,h) overflows 64 bits");
  }
  const u128 num = binom * u128(2 * h + d - 2);
  const u128 n = num / u128(d - 2);
  require(num / u128(2 * h + d - 2) == binom && n <= limit,
          ErrorKind::kOverflow, "multiplicity N(d,h) overflows 64 bits");
  return std::uint64_t(n);
}

double log_surface_ratio(int d) { return -log_beta(0.5 * (d - 1), 0.5); }

double eigenvalue_closed_form(int h, int d) {
  require_order(h, d);
  if (h == 0) {
    const double log_ratio =
        log_double_factorial(d - 2) - log_double_factorial(d - 1);
    const double denom = (d % 2 == 0) ? kPi : 2.0;
    const double v = std::exp(log_ratio) / denom;
    return v * v;
  }
  if (h == 1) return 1.0 / (4.0 * d);
  if (h % 2 == 1) return 0.0;
  const double a = 0.5 * (d - 1);
  if (h == 2) {
    const double lead = std::exp(log_beta(a, 2.0) - log_beta(a, 0.5)) / (8.0 * kPi);
    return lead * (std::exp(log_beta(0.5 * d, 0.5)) +
                   std::exp(log_beta(0.5 * d + 1.0, 0.5)));
  }
  const double log_prefactor = std::log(double(h)) + log_beta(h, a) -
                               (h + 1) * std::log(2.0) - std::log(kPi) -
                               log_beta(a, 0.5);
  return std::exp(log_prefactor) * even_series_sum(h, d);
}

double eigenvalue_quadrature(int h, int d) {
  require_order(h, d);
  require(h <= 12 && d <= 64, ErrorKind::kInvalidArgument,
          "quadrature oracle limited to h <= 12, d <= 64");
  // z = cos(theta) turns the weight (1 - z^2)^{(d-3)/2} dz into
  // sin^{d-2}(theta) dtheta and arccos(z) into theta: smooth on [0, pi].
  constexpr long double pi = std::numbers::pi_v<long double>;
  auto integrand = [h, d](long double theta) {
    const long double z = std::cos(theta);
    const long double kappa = z * (0.5L - theta / (2.0L * pi));
    return legendre_l(h, d, z) * kappa * std::pow(std::sin(theta), d - 2);
  };
  auto magnitude = [&](long double theta) { return std::abs(integrand(theta)); };
  // Tolerance scaled by the integral of |integrand| so tiny eigenvalues keep
  // their relative accuracy; floor at 1e-10 of the normalized value.
  const auto& rule = gauss_legendre();
  long double scale = 0.0L;
  for (int s = 0; s < 64; ++s) {
    scale += rule.integrate(magnitude, pi * s / 64, pi * (s + 1) / 64);
  }
  const long double norm = std::exp((long double)log_surface_ratio(d));
  const long double tol =
      std::min<long double>(1e-10L / norm, std::max<long double>(scale * 1e-17L, 1e-300L));
  long double total = 0.0L;
  for (int s = 0; s < 16; ++s) {
    const long double a = pi * s / 16, b = pi * (s + 1) / 16;
    total += adaptive(integrand, a, b, rule.integrate(integrand, a, b),
                      tol / 16, 0);
  }
  return double(total * norm);
}

const SpectrumEntry& SpectrumTable::order(int h) const {
  for (const auto& e : entries) {
    if (e.h == h) return e;
  }
  fail(ErrorKind::kInvalidArgument,
       "order h=" + std::to_string(h) + " not in spectrum table");
}

double SpectrumTable::eigenvalue_at(std::uint64_t l) const {
  for (const auto& e : entries) {
    if (l >= e.l_start && l <= e.l_end) return e.value;
  }
  fail(ErrorKind::kInvalidArgument,
       "index l=" + std::to_string(l) + " outside spectrum table");
}

SpectrumTable build_spectrum(int d, int h_max) {
  require(d >= kMinDimension, ErrorKind::kUnsupportedDimension,
          "dimension d=" + std::to_string(d) + " unsupported (need d >= 3)");
  require(h_max >= 2, ErrorKind::kInvalidArgument, "h_max must be >= 2");
  SpectrumTable table;
  table.d = d;
  table.h_max = h_max;
  for (int h = 0; h <= h_max; ++h) {
    SpectrumEntry e;
    e.h = h;
    e.value = eigenvalue_closed_form(h, d);
    e.multiplicity = multiplicity(h, d);
    table.entries.push_back(e);
  }
  std::stable_sort(table.entries.begin(), table.entries.end(),
                   [](const SpectrumEntry& a, const SpectrumEntry& b) {
                     return a.value > b.value;
                   });
  std::uint64_t next = 1;
  for (auto& e : table.entries) {
    e.l_start = next;
    require(e.multiplicity <= ~std::uint64_t{0} - next, ErrorKind::kOverflow,
            "cumulative spectrum index overflows 64 bits");
    e.l_end = next + e.multiplicity - 1;
    next = e.l_end + 1;
  }
  require(table.order(0).value < table.order(1).value, ErrorKind::kSeries,
          "order-0 eigenvalue not below order-1 eigenvalue");
  return table;
}

std::string spectrum_json(const SpectrumTable& table, bool oracle,
                          double* max_rel_error) {
  nlohmann::ordered_json out;
  out["d"] = table.d;
  out["h_max"] = table.h_max;
  out["lambda_1"] = table.lambda_1();
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  double worst = 0.0;
  for (const auto& e : table.entries) {
    nlohmann::ordered_json j;
    j["h"] = e.h;
    j["value"] = e.value;
    j["multiplicity"] = e.multiplicity;
    j["l_start"] = e.l_start;
    j["l_end"] = e.l_end;
    if (oracle) {
      if (e.h <= 12 && table.d <= 64) {
        const double q = eigenvalue_quadrature(e.h, table.d);
        // Vanishing orders are compared in absolute terms.
        const double err = e.value == 0.0 ? std::abs(q)
                                          : std::abs(q - e.value) / e.value;
        worst = std::max(worst, err);
        j["quadrature"] = q;
        j["rel_error"] = err;
      } else {
        j["quadrature"] = nullptr;
        j["rel_error"] = nullptr;
      }
    }
    entries.push_back(std::move(j));
  }
  out["entries"] = std::move(entries);
  if (oracle) out["max_rel_error"] = worst;
  if (max_rel_error != nullptr) *max_rel_error = worst;
  return out.dump(2) + "\n";
}

double time_horizon(double lambda_epsilon, double epsilon) {
  require(lambda_epsilon > 0.0, ErrorKind::kInvalidEigenvalue,
          "lambda_epsilon must be positive");
  require(epsilon > 0.0, ErrorKind::kInvalidArgument, "epsilon must be > 0");
  return (2.0 / lambda_epsilon) * std::log(2.0 / epsilon);
}

HarmonicMasses project_degree2(const RowMatrix& X, const Vector& y) {
  const Eigen::Index N = X.rows();
  const int d = int(X.cols());
  require(d >= kMinDimension, ErrorKind::kUnsupportedDimension,
          "dimension d must be >= 3");
  require(y.size() == N, ErrorKind::kDimensionMismatch,
          "values and points disagree on count");
  const int quad_cols = d * (d - 1) / 2 + (d - 1);
  const int cols = 1 + d + quad_cols;
  require(N >= 4 * cols, ErrorKind::kInvalidArgument,
          "too few points for the degree-2 projection");
  Eigen::MatrixXd B(N, cols);
  B.col(0).setOnes();
  for (int k = 0; k < d; ++k) B.col(1 + k) = X.col(k);
  int c = 1 + d;
  for (int j = 0; j < d; ++j) {
    for (int k = j + 1; k < d; ++k) B.col(c++) = X.col(j).cwiseProduct(X.col(k));
  }
  for (int k = 0; k + 1 < d; ++k) {
    B.col(c++) = X.col(k).cwiseAbs2().array() - 1.0 / d;
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(B);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(N, cols);
  const Vector coef = Q.transpose() * y / std::sqrt(double(N));
  HarmonicMasses out;
  out.samples = long(N);
  out.energy[0] = coef.head(1).squaredNorm();
  out.energy[1] = coef.segment(1, d).squaredNorm();
  out.energy[2] = coef.tail(quad_cols).squaredNorm();
  const double total = y.squaredNorm() / double(N);
  out.residual =
      std::max(0.0, total - out.energy[0] - out.energy[1] - out.energy[2]);
  const Eigen::ArrayXd sq = y.array().square();
  const double var = (sq - sq.mean()).square().sum() / double(N - 1);
  out.stderr_total = std::sqrt(var / double(N));
  return out;
}

EpsilonPlan plan_epsilon(const RegressionFunction& f, int d, double epsilon,
                         const SpectrumTable& table, long mc_budget,
                         std::uint64_t seed) {
  require(epsilon > 0.0 && epsilon < 1.0, ErrorKind::kInvalidArgument,
          "epsilon must lie in (0, 1)");
  require(f.dim() == d && table.d == d, ErrorKind::kDimensionMismatch,
          "target, table and d disagree on dimension");
  HarmonicMasses masses;
  bool certified = false;
  if (f.kind() == RegressionFunction::Kind::kCustom) {
    require(mc_budget >= 1000, ErrorKind::kInvalidArgument,
            "Monte Carlo projection needs at least 1000 samples");
    Rng rng = Rng(seed).split("plan-projection");
    const RowMatrix X = sample_sphere(d, int(mc_budget), rng);
    masses = project_degree2(X, f.evaluate(X));
  } else {
    masses.energy = f.order_energy();
    certified = true;
  }
  EpsilonPlan plan;
  plan.epsilon = epsilon;
  plan.certified = certified;
  plan.mc_samples = masses.samples;

  // Walk the sorted spectrum; each prefix ending at an eigenspace boundary is
  // a candidate cutoff. Only orders <= 2 have measurable mass, so the walk
  // stops once all three are covered.
  std::array<bool, 3> covered{};
  const double target = epsilon / 4.0;
  for (const auto& e : table.entries) {
    if (e.h <= 2) covered[e.h] = true;
    if (e.value <= 0.0) break;
    plan.orders_covered.push_back(e.h);
    double uncovered = masses.residual;
    for (int h = 0; h < 3; ++h) {
      if (!covered[h]) uncovered += masses.energy[h];
    }
    const double tail = std::sqrt(uncovered);
    if (tail <= target) {
      plan.L_epsilon = e.l_end;
      plan.lambda_epsilon = e.value;
      plan.T_epsilon = time_horizon(e.value, epsilon);
      plan.tail_mass = tail;
      plan.tail_stderr =
          tail > 0.0 ? masses.stderr_total / (2.0 * tail) : masses.stderr_total;
      return plan;
    }
    if (covered[0] && covered[1] && covered[2]) break;
  }
  double uncovered = masses.residual;
  for (int h = 0; h < 3; ++h) {
    if (!covered[h]) uncovered += masses.energy[h];
  }
  fail(ErrorKind::kPlanInfeasible,
       "plan infeasible: spectral tail " + std::to_string(std::sqrt(uncovered)) +
           " exceeds epsilon/4 = " + std::to_string(target) +
           " after covering harmonic orders <= 2");
}

}  // namespace ntklab
