#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "mdlab/diffusion.hpp"
#include "mdlab/tasks.hpp"

// The mask predictor p(x0 | x_t): per-position categorical posteriors plus
// penultimate features for the correction head.

namespace mdlab {

struct PosteriorGrid {
  int length = 0;
  int vocab_size = 0;
  std::vector<double> p;  // row-major length x vocab_size

  PosteriorGrid() = default;
  PosteriorGrid(int L, int V) : length(L), vocab_size(V), p(static_cast<std::size_t>(L) * V, 0.0) {}
  std::span<double> row(int i) { return {p.data() + static_cast<std::size_t>(i) * vocab_size,
                                         static_cast<std::size_t>(vocab_size)}; }
  std::span<const double> row(int i) const {
    return {p.data() + static_cast<std::size_t>(i) * vocab_size,
            static_cast<std::size_t>(vocab_size)};
  }
  // Highest probability in a row; the confidence used for top-k selection.
  double confidence(int i) const;
  int argmax(int i) const;
};

struct FeatureGrid {
  int length = 0;
  int dim = 0;
  std::vector<double> h;  // row-major length x dim

  FeatureGrid() = default;
  FeatureGrid(int L, int F) : length(L), dim(F), h(static_cast<std::size_t>(L) * F, 0.0) {}
  std::span<const double> row(int i) const {
    return {h.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<double> row(int i) {
    return {h.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

struct PredictOut {
  PosteriorGrid posterior;
  FeatureGrid features;
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual PredictOut predict(const MaskedSeq& x) const = 0;
  virtual int feature_dim() const = 0;
  virtual const Vocab& vocab() const = 0;

  // Independent instrumentation: every predict implementation bumps this.
  std::uint64_t forward_count() const { return forward_count_.load(std::memory_order_relaxed); }
  void reset_forward_count() const { forward_count_.store(0, std::memory_order_relaxed); }

 protected:
  Denoiser() = default;
  // The atomic counter is not copyable; carry its value across copies so
  // derived classes stay movable.
  Denoiser(const Denoiser& o) : forward_count_(o.forward_count()) {}
  Denoiser& operator=(const Denoiser& o) {
    forward_count_.store(o.forward_count(), std::memory_order_relaxed);
    return *this;
  }

  void count_forward() const { forward_count_.fetch_add(1, std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> forward_count_{0};
};

// Exact posterior marginals P(x0^i = v | unmasked evidence) by enumeration
// over the task's completion set. Unmasked rows are point masses. Throws
// std::runtime_error on contradictory evidence (empty completion set).
PosteriorGrid oracle_predict(const Task& task, const MaskedSeq& x_t);

// Deterministic oracle features: one-hot of (token or MASK) concatenated
// with the posterior row, so heads can be trained without a neural network.
FeatureGrid oracle_features(const Vocab& vocab, const MaskedSeq& x_t, const PosteriorGrid& post);

class OracleDenoiser : public Denoiser {
 public:
  // relax_contradictions: when the unmasked evidence admits no completion
  // (possible mid-decode after a dependency error), fall back to the
  // prompt-only posterior instead of throwing.
  explicit OracleDenoiser(const Task& task, bool relax_contradictions = true)
      : task_(task), relax_(relax_contradictions) {}

  PredictOut predict(const MaskedSeq& x) const override;
  int feature_dim() const override { return 2 * task_.vocab().size + 1; }
  const Vocab& vocab() const override { return task_.vocab(); }

 private:
  const Task& task_;
  bool relax_;
};

// Demasking loss: (1/t) * sum over masked maskable positions of
// -log posterior[i][x0[i]]. t below t_min is clamped; *clamped reports it.
double demask_loss(const PosteriorGrid& posterior, const std::vector<int>& x0,
                   const MaskedSeq& x_t, const std::vector<std::uint8_t>& maskable, double t,
                   double t_min = 1e-3, bool* clamped = nullptr);

}  // namespace mdlab
