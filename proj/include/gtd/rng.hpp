#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace gtd {

/// Counter-based pseudo-random generator (SplitMix64 output function over a
/// keyed counter). The i-th draw of a stream is a pure function of
/// (master_seed, stream, i), so substreams can be handed to concurrent runs
/// and every run replays bit-identically regardless of execution order.
class SplitMixRng {
 public:
  SplitMixRng() : SplitMixRng(0) {}

  explicit SplitMixRng(std::uint64_t seed) : SplitMixRng(seed, 0) {}

  /// Substream `stream` of master seed `seed`.
  SplitMixRng(std::uint64_t seed, std::uint64_t stream)
      : key_(mix(mix(seed ^ 0x8af3'5c12'9d02'77b1ULL) + kGamma * (stream + 1))) {}

  std::uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Index sampled from an (unnormalized is rejected) probability vector.
  int categorical(std::span<const double> probs) {
    const double u = uniform01();
    double acc = 0.0;
    int last_positive = -1;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
      if (probs[i] > 0.0) last_positive = i;
      acc += probs[i];
      if (u < acc) return i;
    }
    if (last_positive < 0) throw std::invalid_argument("categorical: all-zero weights");
    return last_positive;  // u landed in the rounding gap below 1
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e37'79b9'7f4a'7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58'476d'1ce4'e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d0'49bb'1331'11ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace gtd
