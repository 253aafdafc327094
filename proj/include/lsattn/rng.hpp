#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace lsattn {

// Counter-based generator built on the splitmix64 output function.
// The i-th output is a pure function of (seed, stream, i), so any draw can
// be reproduced on any platform from those three integers alone, and
// independent streams can be handed to independent consumers.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(derive_key(seed, stream)) {}

  uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  // Uniform on (0,1), clamped one representable step away from both ends so
  // -log(-log(u)) stays finite.
  double next_uniform() {
    double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    if (u < 0x1.0p-53) u = 0x1.0p-53;
    if (u > 1.0 - 0x1.0p-53) u = 1.0 - 0x1.0p-53;
    return u;
  }

  double next_gumbel() { return -std::log(-std::log(next_uniform())); }

  // Box-Muller without a cached spare, keeping the state a plain counter.
  double next_normal() {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n) by rejection-free scaling (n is tiny here;
  // modulo bias at 64 bits is far below every tolerance in this project).
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  Rng split(uint64_t stream) const { return Rng(seed_, stream); }

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

 private:
  static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static uint64_t derive_key(uint64_t seed, uint64_t stream) {
    return mix(mix(seed + kGamma) + stream * 0xD1B54A32D192ED03ULL);
  }

  uint64_t seed_;
  uint64_t stream_;
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace lsattn
