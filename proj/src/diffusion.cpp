#include "mdlab/diffusion.hpp"

namespace mdlab {

namespace {
constexpr std::uint64_t kFwdTag = 0x666f7277'61726421ULL;
constexpr std::uint64_t kBridgeTag = 0x62726964'67652121ULL;

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("time t must lie in [0, 1]");
}
}  // namespace

double alpha(double t) {
  check_time(t);
  return 1.0 - t;
}

MaskedSeq forward_corrupt(const MaskedSeq& x0, const std::vector<std::uint8_t>& maskable,
                          double t, std::uint64_t seed) {
  check_time(t);
  if (maskable.size() != x0.size())
    throw std::invalid_argument("forward_corrupt: maskable size mismatch");
  if (!x0.fully_unmasked())
    throw std::invalid_argument("forward_corrupt: x0 must contain no MASK");

  MaskedSeq out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!maskable[i]) continue;
    if (indexed_u01(seed, kFwdTag, i) < t) out[i] = kMask;
  }
  return out;
}

MaskedSeq bridge_corrupt(const MaskedSeq& x_t, const std::vector<std::uint8_t>& maskable,
                         double t, double t_fwd, std::uint64_t seed) {
  check_time(t);
  if (t_fwd < 0.0) throw std::invalid_argument("bridge_corrupt: t_fwd must be >= 0");
  if (t + t_fwd > 1.0 + 1e-12) throw std::invalid_argument("bridge_corrupt: t + t_fwd exceeds 1");
  if (t >= 1.0 && t_fwd > 0.0)
    throw std::invalid_argument("bridge_corrupt: degenerate bridge from t = 1");
  if (maskable.size() != x_t.size())
    throw std::invalid_argument("bridge_corrupt: maskable size mismatch");

  if (t_fwd == 0.0) return x_t;

  // Conditional mask probability so the composed marginal is alpha(t + t_fwd).
  const double p_mask = t_fwd / (1.0 - t);
  MaskedSeq out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!maskable[i] || out.is_masked(i)) continue;
    if (indexed_u01(seed, kBridgeTag, i) < p_mask) out[i] = kMask;
  }
  return out;
}

MaskedSeq replace(const MaskedSeq& x, const MaskedSeq& y, const std::vector<int>& positions) {
  if (y.size() != x.size()) throw std::invalid_argument("replace: length mismatch");
  if (!y.fully_unmasked()) throw std::invalid_argument("replace: y must be fully unmasked");
  MaskedSeq out = x;
  for (int i : positions) {
    if (i < 0 || static_cast<std::size_t>(i) >= x.size())
      throw std::out_of_range("replace: index out of range");
    out[i] = y[i];
  }
  return out;
}

}  // namespace mdlab
