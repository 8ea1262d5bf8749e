#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

// AdamW with linear warmup and cosine decay, shared by the denoiser and
// head training loops.

namespace mdlab {

struct OptimConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double warmup_ratio = 0.01;
  double eps = 1e-8;
};

class AdamW {
 public:
  AdamW(std::size_t n, const OptimConfig& cfg, int total_steps)
      : cfg_(cfg),
        total_steps_(total_steps),
        warmup_steps_(std::max(1, static_cast<int>(std::ceil(cfg.warmup_ratio * total_steps)))),
        m_(n, 0.0),
        v_(n, 0.0) {}

  double lr_at(int step) const {
    if (step < warmup_steps_) return cfg_.lr * (step + 1) / warmup_steps_;
    const double span = std::max(1, total_steps_ - warmup_steps_);
    const double x = (step - warmup_steps_) / span;
    return cfg_.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
  }

  void step(std::vector<double>& w, const std::vector<double>& g) {
    ++t_;
    const double lr = lr_at(t_ - 1);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }

 private:
  OptimConfig cfg_;
  int total_steps_;
  int warmup_steps_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace mdlab
