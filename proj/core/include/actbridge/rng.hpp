#pragma once

#include <cstdint>
#include <cmath>

namespace actbridge {

// Splittable counter-based generator. Every stream is identified by a
// 64-bit key derived from its parent, so independent consumers (data
// loading, noise sampling, placement randomization) never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

  // Derive an independent stream. Deterministic in (parent, stream_id).
  Rng split(std::uint64_t stream_id) const {
    return Rng(mix(state_ + mix(stream_id + kGolden)));
  }

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Index in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller; second branch discarded to keep the stream position
  // a pure function of the draw count.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace actbridge
