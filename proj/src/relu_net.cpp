#include "ntklab/relu_net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "json.hpp"

#include "ntklab/error.hpp"

namespace ntklab {
namespace {

constexpr char kMagic[8] = {'N', 'T', 'K', 'L', 'A', 'B', 'W', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr Eigen::Index kBlock = 256;

void require_unit(std::span<const double> x) {
  double norm2 = 0.0;
  for (double v : x) norm2 += v * v;
  require(std::abs(std::sqrt(norm2) - 1.0) <= 1e-9, ErrorKind::kDomain,
          "network input must be a unit vector");
}

void require_input(const NetworkState& state, std::span<const double> x) {
  require(static_cast<int>(x.size()) == state.d(),
          ErrorKind::kDimensionMismatch,
          "input has dimension " + std::to_string(x.size()) + ", network has " +
              std::to_string(state.d()));
  require_unit(x);
}

}  // namespace

NetworkState::NetworkState(RowMatrix weights, Vector signs)
    : w_(std::move(weights)), a_(std::move(signs)) {
  require(w_.rows() == a_.size(), ErrorKind::kDimensionMismatch,
          "weights and signs disagree on width");
  require(w_.rows() >= 2 && w_.rows() % 2 == 0, ErrorKind::kInvalidWidth,
          "width m must be even and >= 2, got " + std::to_string(w_.rows()));
  require(w_.cols() >= kMinDimension, ErrorKind::kUnsupportedDimension,
          "dimension d must be >= 3");
  const Eigen::Index half = w_.rows() / 2;
  for (Eigen::Index j = 0; j < a_.size(); ++j) {
    require(a_(j) == 1.0 || a_(j) == -1.0, ErrorKind::kInvalidArgument,
            "output signs must be +1 or -1");
    if (j < half) {
      require(a_(j + half) == -a_(j), ErrorKind::kInvalidArgument,
              "output signs must be antisymmetrically paired");
    }
  }
}

NetworkState NetworkState::with_weights(RowMatrix weights) const {
  require(weights.rows() == w_.rows() && weights.cols() == w_.cols(),
          ErrorKind::kDimensionMismatch, "weight shape changed");
  return NetworkState(std::move(weights), a_);
}

NetworkState init_antisymmetric(int m, int d, Rng& rng) {
  require(m >= 2 && m % 2 == 0, ErrorKind::kInvalidWidth,
          "width m must be even and >= 2, got " + std::to_string(m));
  require(d >= kMinDimension, ErrorKind::kUnsupportedDimension,
          "dimension d must be >= 3");
  const int half = m / 2;
  RowMatrix W(m, d);
  Vector a(m);
  Rng weight_rng = rng.split("weights");
  Rng sign_rng = rng.split("signs");
  for (int j = 0; j < half; ++j) {
    for (int k = 0; k < d; ++k) W(j, k) = weight_rng.normal();
    a(j) = (sign_rng() >> 63) ? 1.0 : -1.0;
  }
  W.bottomRows(half) = W.topRows(half);
  a.tail(half) = -a.head(half);
  return NetworkState(std::move(W), std::move(a));
}

NetworkState init_antisymmetric(int m, int d, std::uint64_t seed) {
  Rng rng(seed);
  return init_antisymmetric(m, d, rng);
}

double forward(const NetworkState& state, std::span<const double> x) {
  require_input(state, x);
  const Eigen::Map<const Vector> v(x.data(), state.d());
  const Vector z = state.weights() * v;
  return state.signs().dot(z.cwiseMax(0.0)) / std::sqrt(double(state.m()));
}

Vector forward_batch(const NetworkState& state, const RowMatrix& X) {
  require(X.cols() == state.d(), ErrorKind::kDimensionMismatch,
          "input dimension does not match network");
  const Eigen::Index n = X.rows();
  const double scale = 1.0 / std::sqrt(double(state.m()));
  Vector out(n);
  Eigen::MatrixXd Z;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - start);
    Z.noalias() = state.weights() * X.middleRows(start, len).transpose();
    out.segment(start, len).noalias() =
        Z.cwiseMax(0.0).transpose() * state.signs();
  }
  return out * scale;
}

RowMatrix gradient(const NetworkState& state, std::span<const double> x) {
  require_input(state, x);
  const Eigen::Map<const Vector> v(x.data(), state.d());
  const Vector z = state.weights() * v;
  const double scale = 1.0 / std::sqrt(double(state.m()));
  Vector coef(state.m());
  for (int j = 0; j < state.m(); ++j) {
    coef(j) = z(j) > 0.0 ? state.signs()(j) * scale : 0.0;
  }
  return coef * v.transpose();
}

Eigen::MatrixXd gradient_matrix(const NetworkState& state,
                                const RowMatrix& X) {
  require(X.cols() == state.d(), ErrorKind::kDimensionMismatch,
          "input dimension does not match network");
  const int m = state.m();
  const int d = state.d();
  const double scale = 1.0 / std::sqrt(double(m));
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(Eigen::Index(m) * d, X.rows());
  const Eigen::MatrixXd Z = state.weights() * X.transpose();  // m x n
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (int j = 0; j < m; ++j) {
      if (Z(j, i) > 0.0) {
        const double c = state.signs()(j) * scale;
        for (int k = 0; k < d; ++k) G(Eigen::Index(j) * d + k, i) = c * X(i, k);
      }
    }
  }
  return G;
}

ActivationPattern activation_pattern(const NetworkState& state,
                                     const RowMatrix& X) {
  require(X.cols() == state.d(), ErrorKind::kDimensionMismatch,
          "input dimension does not match network");
  ActivationPattern p;
  p.n = static_cast<int>(X.rows());
  p.m = state.m();
  p.words = (p.m + 63) / 64;
  p.bits.assign(static_cast<std::size_t>(p.n) * p.words, 0);
  Eigen::MatrixXd Z;
  for (Eigen::Index start = 0; start < X.rows(); start += kBlock) {
    const Eigen::Index len = std::min(kBlock, X.rows() - start);
    // len x m, row-major access by sample below
    Z.noalias() = X.middleRows(start, len) * state.weights().transpose();
    for (Eigen::Index r = 0; r < len; ++r) {
      std::uint64_t* row =
          p.bits.data() + static_cast<std::size_t>(start + r) * p.words;
      for (int j = 0; j < p.m; ++j) {
        if (Z(r, j) > 0.0) row[j / 64] |= 1ULL << (j % 64);
      }
    }
  }
  return p;
}

void write_checkpoint(std::ostream& os, const NetworkState& state) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint format assumes a little-endian host");
  const std::uint32_t header[3] = {kVersion, std::uint32_t(state.m()),
                                   std::uint32_t(state.d())};
  os.write(kMagic, sizeof kMagic);
  os.write(reinterpret_cast<const char*>(header), sizeof header);
  os.write(reinterpret_cast<const char*>(state.weights().data()),
           std::streamsize(sizeof(double)) * state.weights().size());
  std::vector<std::int8_t> signs(state.m());
  for (int j = 0; j < state.m(); ++j) signs[j] = state.signs()(j) > 0 ? 1 : -1;
  os.write(reinterpret_cast<const char*>(signs.data()), state.m());
  require(static_cast<bool>(os), ErrorKind::kIo, "failed to write checkpoint");
}

NetworkState read_checkpoint(std::istream& is) {
  char magic[8];
  std::uint32_t header[3];
  is.read(magic, sizeof magic);
  is.read(reinterpret_cast<char*>(header), sizeof header);
  require(static_cast<bool>(is) && std::memcmp(magic, kMagic, 8) == 0,
          ErrorKind::kFormat, "not a network checkpoint");
  require(header[0] == kVersion, ErrorKind::kFormat,
          "unsupported checkpoint version " + std::to_string(header[0]));
  const std::uint32_t m = header[1];
  const std::uint32_t d = header[2];
  require(m >= 2 && m % 2 == 0 && m <= (1u << 24) && d >= 3 && d <= 1u << 16,
          ErrorKind::kFormat, "checkpoint header out of range");
  RowMatrix W(m, d);
  is.read(reinterpret_cast<char*>(W.data()),
          std::streamsize(sizeof(double)) * W.size());
  std::vector<std::int8_t> signs(m);
  is.read(reinterpret_cast<char*>(signs.data()), m);
  require(static_cast<bool>(is), ErrorKind::kFormat, "truncated checkpoint");
  Vector a(m);
  for (std::uint32_t j = 0; j < m; ++j) a(j) = signs[j];
  return NetworkState(std::move(W), std::move(a));
}

std::string checkpoint_sidecar_json(std::uint64_t seed, long step,
                                    double time) {
  nlohmann::ordered_json j;
  j["format"] = "ntklab-checkpoint";
  j["version"] = kVersion;
  j["seed"] = seed;
  j["step"] = step;
  j["time"] = time;
  return j.dump(2) + "\n";
}

}  // namespace ntklab
