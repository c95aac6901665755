#pragma once

#include <cmath>
#include <cstdint>

namespace rdet {

// SplitMix64. Every stochastic choice in the project flows through this
// generator so that results are bit-reproducible across platforms; the
// standard library distributions are implementation-defined and unusable
// for pinned-seed tests.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed = 0) : state_(seed), origin_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Child stream, a pure function of (construction seed, key): draws on
  // either generator never disturb the other, so keyed per-item streams
  // stay deterministic regardless of evaluation order.
  SplitMix64 split(uint64_t key) const {
    SplitMix64 mixer(origin_ ^ (0xA0761D6478BD642FULL + key));
    mixer.next();
    return SplitMix64(mixer.next());
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next() % span);
  }

  // Standard normal via Box-Muller; draws two uniforms per call.
  double normal() {
    const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  uint64_t state_;
  uint64_t origin_;
};

}  // namespace rdet
