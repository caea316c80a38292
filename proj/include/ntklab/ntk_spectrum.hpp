#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ntklab/rng.hpp"
#include "ntklab/sphere_data.hpp"

namespace ntklab {

// Legendre polynomial of order h in d dimensions, P_h(d; z), from its
// explicit finite sum with log-gamma coefficients.
double legendre(int h, int d, double z);

// Dimension N(d, h) of the order-h spherical harmonics in d dimensions.
// Exact integer arithmetic; throws kOverflow beyond 64 bits.
std::uint64_t multiplicity(int h, int d);

// Eigenvalue of the analytical NTK integral operator on order-h harmonics,
// i.e. mu_h / |S^{d-1}|, from the closed forms.
double eigenvalue_closed_form(int h, int d);

// Same quantity from the Funk-Hecke integral by adaptive Gauss-Legendre
// quadrature. Oracle only: h <= 12, d <= 64.
double eigenvalue_quadrature(int h, int d);

// ln |S^{d-2}| / |S^{d-1}| = -ln B((d-1)/2, 1/2)
double log_surface_ratio(int d);

struct SpectrumEntry {
  int h = 0;
  double value = 0.0;
  std::uint64_t multiplicity = 0;
  std::uint64_t l_start = 0;  // 1-based, inclusive
  std::uint64_t l_end = 0;
};

struct SpectrumTable {
  int d = 0;
  int h_max = 0;
  std::vector<SpectrumEntry> entries;  // sorted by value, descending

  double lambda_1() const { return entries.front().value; }
  const SpectrumEntry& order(int h) const;
  // Eigenvalue at 1-based global index l (must lie inside the table).
  double eigenvalue_at(std::uint64_t l) const;
};

SpectrumTable build_spectrum(int d, int h_max);

// JSON form used by the spectrum subcommand. With oracle = true each entry
// gains the quadrature value and relative error (orders within oracle range).
std::string spectrum_json(const SpectrumTable& table, bool oracle,
                          double* max_rel_error = nullptr);

// Squared L2 mass of y (sampled at uniform sphere points X) carried by
// harmonic orders 0, 1, 2, from a Gram-Schmidt (QR) of the basis
// {1}, {x_k}, {x_j x_k, x_k^2 - 1/d} in the empirical inner product.
struct HarmonicMasses {
  std::array<double, 3> energy{};
  double residual = 0.0;      // mass beyond order 2
  double stderr_total = 0.0;  // standard error of the total mass
  long samples = 0;
};

HarmonicMasses project_degree2(const RowMatrix& X, const Vector& y);

struct EpsilonPlan {
  double epsilon = 0.0;
  std::uint64_t L_epsilon = 0;
  double lambda_epsilon = 0.0;
  double T_epsilon = 0.0;
  double tail_mass = 0.0;
  double tail_stderr = 0.0;   // Monte Carlo uncertainty, custom targets only
  long mc_samples = 0;
  bool certified = false;     // tail_mass known analytically
  std::vector<int> orders_covered;
};

// (2 / lambda) log(2 / epsilon)
double time_horizon(double lambda_epsilon, double epsilon);

EpsilonPlan plan_epsilon(const RegressionFunction& f, int d, double epsilon,
                         const SpectrumTable& table, long mc_budget,
                         std::uint64_t seed);

}  // namespace ntklab
