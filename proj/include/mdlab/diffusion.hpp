#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mdlab/rng.hpp"

// Masked-diffusion primitives: vocabulary, masked sequences, the linear
// noise schedule, forward corruption, bridge (further) corruption and the
// replace operation. All operations are pure and value-semantic.

namespace mdlab {

// Sentinel for a not-yet-generated position; never a valid vocabulary id.
inline constexpr int kMask = -1;

struct Vocab {
  int size = 0;          // valid token ids are [0, size)
  int eos_id = 0;        // end-of-sequence token, in [0, size)
  int mask_id = kMask;   // reserved sentinel, outside [0, size)

  Vocab() = default;
  Vocab(int size_, int eos_id_) : size(size_), eos_id(eos_id_) {
    if (size < 2) throw std::invalid_argument("Vocab: size must be >= 2");
    if (eos_id < 0 || eos_id >= size) throw std::invalid_argument("Vocab: eos_id out of range");
  }
};

struct MaskedSeq {
  std::vector<int> tokens;

  MaskedSeq() = default;
  explicit MaskedSeq(std::vector<int> t) : tokens(std::move(t)) {}
  MaskedSeq(std::size_t n, int fill) : tokens(n, fill) {}

  std::size_t size() const { return tokens.size(); }
  int operator[](std::size_t i) const { return tokens[i]; }
  int& operator[](std::size_t i) { return tokens[i]; }
  bool is_masked(std::size_t i) const { return tokens[i] == kMask; }
  bool fully_unmasked() const {
    for (int t : tokens)
      if (t == kMask) return false;
    return true;
  }
  std::size_t masked_count() const {
    std::size_t n = 0;
    for (int t : tokens) n += (t == kMask);
    return n;
  }
  std::vector<int> masked_indices() const {
    std::vector<int> m;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] == kMask) m.push_back(static_cast<int>(i));
    return m;
  }
  bool operator==(const MaskedSeq&) const = default;
};

// Keep-probability of the linear schedule.
double alpha(double t);

// Independently mask each maskable position of a clean sequence with
// probability 1 - alpha(t). Positions with maskable[i] == false are never
// touched. Pure in (x0, t, seed).
MaskedSeq forward_corrupt(const MaskedSeq& x0, const std::vector<std::uint8_t>& maskable,
                          double t, std::uint64_t seed);

// Further corrupt a state at time t to time t + t_fwd. Masked positions stay
// masked; each unmasked maskable position is kept with probability
// alpha(t + t_fwd) / alpha(t). Rejects t + t_fwd > 1 and the degenerate
// t = 1 with t_fwd > 0.
MaskedSeq bridge_corrupt(const MaskedSeq& x_t, const std::vector<std::uint8_t>& maskable,
                         double t, double t_fwd, std::uint64_t seed);

// out[i] = y[i] for i in positions, else x[i]. y must be fully unmasked.
MaskedSeq replace(const MaskedSeq& x, const MaskedSeq& y, const std::vector<int>& positions);

}  // namespace mdlab
