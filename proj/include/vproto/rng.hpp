#ifndef VPROTO_RNG_HPP
#define VPROTO_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace vproto {

/// PCG32 (XSH-RR variant) with a 64-bit LCG state.
///
///   state' = state * 6364136223846793005 + inc        (mod 2^64)
///   output = rotr32(((state ^ (state >> 18)) >> 27), state >> 59)
///
/// inc is (seed_stream << 1) | 1 with seed_stream = 0xda3e39cb94b95bdb, and the
/// state is seeded with the standard pcg32_srandom procedure. Doubles take 53
/// bits from two consecutive outputs, so every sequence is reproducible in any
/// language that implements the same integer arithmetic.
class Rng {
 public:
  static constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
  static constexpr std::uint64_t kStream = 0xda3e39cb94b95bdbULL;

  explicit Rng(std::uint64_t seed) : seed_(seed), inc_((kStream << 1u) | 1u) {
    state_ = 0;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint32_t next_u32() {
    const std::uint64_t old = state_;
    state_ = old * kMultiplier + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    const std::uint64_t hi = next_u32() >> 5;  // 27 bits
    const std::uint64_t lo = next_u32() >> 6;  // 26 bits
    return static_cast<double>((hi << 26) | lo) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint32_t below(std::uint32_t n) {
    if (n <= 1) return 0;
    const std::uint32_t threshold = (0u - n) % n;
    for (;;) {
      const std::uint32_t r = next_u32();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller; the second deviate of each pair is cached.
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_ = 0;
  std::uint64_t inc_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace vproto

#endif  // VPROTO_RNG_HPP
