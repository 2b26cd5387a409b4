#pragma once

// Deterministic counter-based random number generation ("dsrng v1").
//
// All randomness in the library flows through SplitMix64 streams so that a
// (seed, purpose) pair fully determines every drawn value, bit for bit, and
// so that other-language reimplementations can reproduce runs exactly.  The
// full stream definition is documented in docs/formats.md.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace distill {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer (Steele, Lea, Flood 2014).
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

// 64-bit FNV-1a, also used for PTEN blob digests.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<std::uint64_t>(p[i]);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

/// Counter-based PRNG stream: state advances by the golden gamma, outputs
/// are the mix64 finalizer of the state.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += kGoldenGamma;
    return mix64(state_);
  }

  // Uniform in [0, 1), 53 mantissa bits.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  // Integer in [0, n). Modulo reduction; bias is irrelevant at our scales
  // and keeps the stream definition trivial to restate.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (cosine branch only). Consumes exactly
  // two 64-bit draws per sample.
  double next_gaussian() {
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    constexpr double kTwoPi = 6.283185307179586476925287;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

 private:
  std::uint64_t state_;
};

// Stream derivation: distinct salts give statistically independent streams
// from one run seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return mix64(base + kGoldenGamma * (salt + 1));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return derive_seed(base, fnv1a64(tag));
}

// Fisher-Yates, high index down, j = next_u64() % (i + 1).
template <typename T>
void seeded_shuffle(std::vector<T>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace distill
