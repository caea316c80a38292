#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ntklab/rng.hpp"
#include "ntklab/sphere_data.hpp"

namespace ntklab {

// Hidden weights W (m x d, row j = w_j) and frozen output signs a.
// Immutable once built; training produces new states.
class NetworkState {
 public:
  NetworkState(RowMatrix weights, Vector signs);

  int m() const { return static_cast<int>(w_.rows()); }
  int d() const { return static_cast<int>(w_.cols()); }
  const RowMatrix& weights() const { return w_; }
  const Vector& signs() const { return a_; }

  // Same signs, new weights.
  NetworkState with_weights(RowMatrix weights) const;

 private:
  RowMatrix w_;
  Vector a_;
};

// First m/2 rows i.i.d. N(0, I_d), signs uniform on {-1, +1}; the second
// half mirrors the weights and flips the signs so the network is zero.
NetworkState init_antisymmetric(int m, int d, Rng& rng);
NetworkState init_antisymmetric(int m, int d, std::uint64_t seed);

// (1/sqrt m) sum_j a_j relu(w_j . x); x must be a unit vector.
double forward(const NetworkState& state, std::span<const double> x);
Vector forward_batch(const NetworkState& state, const RowMatrix& X);

// (1/sqrt m)(a .* relu'(W x)) x^T with relu'(0) = 0.
RowMatrix gradient(const NetworkState& state, std::span<const double> x);

// md x n; column i is the row-major vectorization of gradient(state, x_i),
// i.e. entry (j*d + k, i). G^T G equals the empirical Gram matrix.
Eigen::MatrixXd gradient_matrix(const NetworkState& state, const RowMatrix& X);

// Bit (i, j) set iff w_j . x_i > 0. Rows padded to whole 64-bit words.
struct ActivationPattern {
  int n = 0;
  int m = 0;
  int words = 0;
  std::vector<std::uint64_t> bits;

  const std::uint64_t* row(int i) const {
    return bits.data() + static_cast<std::size_t>(i) * words;
  }
  bool active(int i, int j) const {
    return (row(i)[j / 64] >> (j % 64)) & 1ULL;
  }
};

ActivationPattern activation_pattern(const NetworkState& state,
                                     const RowMatrix& X);

// Binary checkpoint: magic "NTKLABW1", u32 version, u32 m, u32 d,
// m*d little-endian f64 weights (row-major), m signed bytes for the signs.
void write_checkpoint(std::ostream& os, const NetworkState& state);
NetworkState read_checkpoint(std::istream& is);

// JSON sidecar stored next to a checkpoint.
std::string checkpoint_sidecar_json(std::uint64_t seed, long step, double time);

}  // namespace ntklab
