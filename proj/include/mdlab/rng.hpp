#pragma once

#include <cstdint>

// Counter-based deterministic randomness. Every draw is a pure function of
// (key, counter), so independent streams can be split by tag without any
// shared state, and identical seeds reproduce identical outputs everywhere.

namespace mdlab {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash2(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b ^ kGolden));
}

inline std::uint64_t hash3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return hash2(hash2(a, b), c);
}

// Uniform double in [0, 1) from 53 high bits.
inline double to_u01(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Position-indexed uniform draw: pure in (seed, tag, index).
inline double indexed_u01(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return to_u01(hash3(seed, tag, index));
}

// Sequential stream over a hashed key. Splittable; copying forks the stream.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : key_(mix64(seed)) {}
  Stream(std::uint64_t seed, std::uint64_t tag) : key_(hash2(seed, tag)) {}

  std::uint64_t next_u64() { return hash2(key_, ctr_++); }

  double next_u01() { return to_u01(next_u64()); }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_u01(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  Stream split(std::uint64_t tag) const { return Stream(key_, tag); }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

}  // namespace mdlab
