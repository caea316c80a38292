#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "ntklab/relu_net.hpp"
#include "ntklab/rng.hpp"
#include "ntklab/sphere_data.hpp"

namespace ntklab {

// Largest n accepted by the dense Gram / eigen routines.
inline constexpr int kMaxGramSize = 4096;

struct GramMatrix {
  enum class Provenance { kAnalytical, kEmpirical };

  Eigen::MatrixXd H;
  Provenance provenance = Provenance::kAnalytical;

  int n() const { return static_cast<int>(H.rows()); }
};

// kappa(u) = u (1/2 - arccos(u) / (2 pi)), the analytical NTK as a function
// of the inner product. Inputs within 1e-12 of [-1, 1] are clamped.
double kappa_analytical(double u);

// (x.x'/m) * #{j : w_j.x > 0 and w_j.x' > 0}
double kappa_empirical(const NetworkState& state, std::span<const double> x,
                       std::span<const double> xp);

GramMatrix gram_analytical(const RowMatrix& X);
GramMatrix gram_matrix(const NetworkState& state, const RowMatrix& X);

// Same as gram_matrix but from a precomputed activation pattern.
GramMatrix gram_from_pattern(const ActivationPattern& pattern,
                             const RowMatrix& X);

// Smallest eigenvalue of a symmetric matrix (dense solver).
double min_eigenvalue(const GramMatrix& gram);
double min_eigenvalue(const Eigen::MatrixXd& symmetric);

// Largest |eigenvalue| of a symmetric matrix. Small inputs go to the dense
// solver; larger ones use Lanczos with full reorthogonalization, stopped once
// the Ritz residual of the extreme pair falls below rel_tol.
double symmetric_spectral_norm(const Eigen::MatrixXd& symmetric,
                               double rel_tol = 1e-10);

// Nystrom estimate of the L2 operator norm of the difference of two kernels
// sampled on the same probes: ||A - B||_2 / M.
double nystrom_norm_diff(const GramMatrix& a, const GramMatrix& b);

// Draws M fresh sphere points and returns the Nystrom estimate of
// ||H_state - H||_2.
double operator_norm_diff(const NetworkState& state, int probes, Rng& rng);

// For each sample i, #{j : |w_j . x_i| <= radius}.
std::vector<int> active_boundary_count(const NetworkState& state_init,
                                       const RowMatrix& X, double radius);

// 32 sqrt(d/m), the neuron-movement radius used for the boundary sets.
double default_boundary_radius(int m, int d);

}  // namespace ntklab
