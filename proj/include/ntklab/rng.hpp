#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace ntklab {

// Counter-based generator: output k of a stream is mix64(key + k * gamma),
// i.e. SplitMix64 with the counter made explicit. Streams are split by
// hashing a label into the key, so any (seed, label path) names an
// independent, reproducible stream regardless of evaluation order.
//
// Satisfies UniformRandomBitGenerator, so <random> distributions work on it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : key_(mix64(seed ^ kSeedSalt)) {}

  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

  result_type operator()() {
    ++counter_;
    return mix64(key_ + counter_ * kGamma);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes exactly two outputs.
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  struct FromKey {};
  Rng(FromKey, std::uint64_t key) : key_(key) {}

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kSeedSalt = 0x6e746b6c61622d31ULL;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// FNV-1a, used for stream labels and config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace ntklab
