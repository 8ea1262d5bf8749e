#include "mdlab/head.hpp"

#include <cmath>
#include <stdexcept>

#include "mdlab/checkpoint.hpp"
#include "mdlab/rng.hpp"
#include "mdlab/stats.hpp"

namespace mdlab {

namespace {
constexpr double kGeluC = 0.7978845608028654;
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}
double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

LearnedHead::LearnedHead(int feature_dim, int hidden, std::uint64_t init_seed)
    : f_(feature_dim), h_(hidden) {
  const std::size_t n = static_cast<std::size_t>(f_) * h_ + h_ + static_cast<std::size_t>(h_) * h_ +
                        h_ + h_ + 1;
  phi_.assign(n, 0.0);
  Stream rng(init_seed, 0x68656164ULL);
  auto gauss = [&rng]() {
    const double u1 = std::max(rng.next_u01(), 1e-12);
    const double u2 = rng.next_u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  };
  // weights only; biases stay zero
  std::size_t off = 0;
  for (int i = 0; i < f_ * h_; ++i) phi_[off + i] = 0.1 * gauss();
  off += static_cast<std::size_t>(f_) * h_ + h_;
  for (int i = 0; i < h_ * h_; ++i) phi_[off + i] = 0.1 * gauss();
  off += static_cast<std::size_t>(h_) * h_ + h_;
  for (int i = 0; i < h_; ++i) phi_[off + i] = 0.1 * gauss();
}

double LearnedHead::prob(std::span<const double> f) const {
  if (static_cast<int>(f.size()) != f_) throw std::invalid_argument("LearnedHead: bad row size");
  const double* w1 = phi_.data();
  const double* b1 = w1 + static_cast<std::size_t>(f_) * h_;
  const double* w2 = b1 + h_;
  const double* b2 = w2 + static_cast<std::size_t>(h_) * h_;
  const double* w3 = b2 + h_;
  const double b3 = w3[h_];

  std::vector<double> a1(h_), a2(h_);
  for (int j = 0; j < h_; ++j) {
    double z = b1[j];
    for (int i = 0; i < f_; ++i) z += f[i] * w1[static_cast<std::size_t>(i) * h_ + j];
    a1[j] = gelu(z);
  }
  for (int j = 0; j < h_; ++j) {
    double z = b2[j];
    for (int i = 0; i < h_; ++i) z += a1[i] * w2[static_cast<std::size_t>(i) * h_ + j];
    a2[j] = gelu(z);
  }
  double logit = b3;
  for (int i = 0; i < h_; ++i) logit += a2[i] * w3[i];
  return sigmoid(logit);
}

CorrectionScores LearnedHead::score(const MaskedSeq& z, const FeatureGrid& feats,
                                    const std::vector<std::uint8_t>& scoreable) const {
  CorrectionScores out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!scoreable[i]) continue;
    out.p_error[i] = prob(feats.row(static_cast<int>(i)));
    out.valid[i] = 1;
  }
  return out;
}

double LearnedHead::bce_batch(const std::vector<const double*>& rows,
                              const std::vector<int>& targets, std::vector<double>* grad,
                              std::vector<double>* dfeat_rows, double positive_weight) const {
  if (rows.size() != targets.size()) throw std::invalid_argument("bce_batch: size mismatch");
  if (rows.empty()) return 0.0;
  const double* w1 = phi_.data();
  const double* b1 = w1 + static_cast<std::size_t>(f_) * h_;
  const double* w2 = b1 + h_;
  const double* b2 = w2 + static_cast<std::size_t>(h_) * h_;
  const double* w3 = b2 + h_;
  const std::size_t off_b1 = static_cast<std::size_t>(f_) * h_;
  const std::size_t off_w2 = off_b1 + h_;
  const std::size_t off_b2 = off_w2 + static_cast<std::size_t>(h_) * h_;
  const std::size_t off_w3 = off_b2 + h_;
  const std::size_t off_b3 = off_w3 + h_;
  const double b3 = phi_[off_b3];

  if (grad && grad->size() != phi_.size())
    throw std::invalid_argument("bce_batch: grad size mismatch");
  if (dfeat_rows) dfeat_rows->assign(rows.size() * f_, 0.0);

  const double inv_n = 1.0 / rows.size();
  double loss = 0.0;
  std::vector<double> z1(h_), a1(h_), z2(h_), a2(h_), da2(h_), dz2(h_), da1(h_), dz1(h_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* f = rows[r];
    for (int j = 0; j < h_; ++j) {
      double z = b1[j];
      for (int i = 0; i < f_; ++i) z += f[i] * w1[static_cast<std::size_t>(i) * h_ + j];
      z1[j] = z;
      a1[j] = gelu(z);
    }
    for (int j = 0; j < h_; ++j) {
      double z = b2[j];
      for (int i = 0; i < h_; ++i) z += a1[i] * w2[static_cast<std::size_t>(i) * h_ + j];
      z2[j] = z;
      a2[j] = gelu(z);
    }
    double logit = b3;
    for (int i = 0; i < h_; ++i) logit += a2[i] * w3[i];
    const double p = sigmoid(logit);
    const int y = targets[r];
    const double w = (y == 1 ? positive_weight : 1.0) * inv_n;
    const double pc = std::clamp(y == 1 ? p : 1.0 - p, 1e-300, 1.0);
    loss -= w * std::log(pc);

    if (!grad && !dfeat_rows) continue;
    const double dlogit = (p - y) * w;
    if (grad) {
      (*grad)[off_b3] += dlogit;
      for (int i = 0; i < h_; ++i) (*grad)[off_w3 + i] += dlogit * a2[i];
    }
    for (int i = 0; i < h_; ++i) da2[i] = dlogit * w3[i];
    for (int i = 0; i < h_; ++i) dz2[i] = da2[i] * gelu_grad(z2[i]);
    if (grad) {
      for (int i = 0; i < h_; ++i) {
        (*grad)[off_b2 + i] += dz2[i];
        for (int a = 0; a < h_; ++a)
          (*grad)[off_w2 + static_cast<std::size_t>(a) * h_ + i] += a1[a] * dz2[i];
      }
    }
    for (int a = 0; a < h_; ++a) {
      double acc = 0.0;
      for (int i = 0; i < h_; ++i) acc += w2[static_cast<std::size_t>(a) * h_ + i] * dz2[i];
      da1[a] = acc;
    }
    for (int a = 0; a < h_; ++a) dz1[a] = da1[a] * gelu_grad(z1[a]);
    if (grad) {
      for (int j = 0; j < h_; ++j) {
        (*grad)[off_b1 + j] += dz1[j];
        for (int i = 0; i < f_; ++i)
          (*grad)[static_cast<std::size_t>(i) * h_ + j] += f[i] * dz1[j];
      }
    }
    if (dfeat_rows) {
      double* df = dfeat_rows->data() + r * f_;
      for (int i = 0; i < f_; ++i) {
        double acc = 0.0;
        for (int j = 0; j < h_; ++j) acc += w1[static_cast<std::size_t>(i) * h_ + j] * dz1[j];
        df[i] = acc;
      }
    }
  }
  return loss;
}

void LearnedHead::save(const std::string& path) const {
  nlohmann::json h;
  h["section"] = "head";
  h["arch"] = {{"feature_dim", f_}, {"hidden", h_}};
  save_checkpoint(path, h, phi_);
}

LearnedHead LearnedHead::load(const std::string& path) {
  std::vector<double> params;
  const auto h = load_checkpoint(path, "head", params);
  LearnedHead head(h.at("arch").at("feature_dim").get<int>(), h.at("arch").at("hidden").get<int>(),
                   0);
  if (params.size() != head.phi_.size())
    throw std::runtime_error("head checkpoint parameter count mismatch in " + path);
  head.phi_ = std::move(params);
  return head;
}

double bayes_error_prob(const Task& task, const MaskedSeq& z, int position, bool* contradiction) {
  if (z.is_masked(position)) throw std::invalid_argument("bayes_error_prob: position is masked");
  if (contradiction) *contradiction = false;
  if (position < task.prompt_len())
    throw std::invalid_argument("bayes_error_prob: prompt position");

  MaskedSeq evidence = z;
  evidence[position] = kMask;
  std::vector<int> prompt(z.tokens.begin(), z.tokens.begin() + task.prompt_len());
  const auto completions = task.enumerate_completions(prompt, evidence);
  if (completions.empty()) {
    if (contradiction) *contradiction = true;
    return 1.0;
  }
  double p_match = 0.0;
  const int j = position - task.prompt_len();
  for (const Completion& c : completions)
    if (c.tokens[j] == z[position]) p_match += c.weight;
  return 1.0 - p_match;
}

CorrectionScores BayesHead::score(const MaskedSeq& z, const FeatureGrid&,
                                  const std::vector<std::uint8_t>& scoreable) const {
  CorrectionScores out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!scoreable[i] || z.is_masked(i)) continue;
    out.p_error[i] = bayes_error_prob(task_, z, static_cast<int>(i));
    out.valid[i] = 1;
  }
  return out;
}

CorrectionScores ScriptedHead::score(const MaskedSeq& z, const FeatureGrid&,
                                     const std::vector<std::uint8_t>& scoreable) const {
  CorrectionScores out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!scoreable[i]) continue;
    const auto it = flags_.find(static_cast<int>(i));
    out.p_error[i] = it != flags_.end() ? it->second : default_prob_;
    out.valid[i] = 1;
  }
  return out;
}

double bce_head_loss(const CorrectionScores& scores, const std::vector<std::int8_t>& labels) {
  if (scores.p_error.size() != labels.size())
    throw std::invalid_argument("bce_head_loss: size mismatch");
  double loss = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kLabelNA) continue;
    if (!scores.valid[i]) throw std::invalid_argument("bce_head_loss: validity masks disagree");
    const double p = scores.p_error[i];
    const double pc = std::clamp(labels[i] == kLabelIncorrect ? p : 1.0 - p, 1e-300, 1.0);
    loss -= std::log(pc);
    ++n;
  }
  return n == 0 ? 0.0 : loss / n;
}

HeadRowSet extract_head_rows(const Denoiser& frozen, const std::vector<LabeledSample>& samples) {
  HeadRowSet rows;
  rows.feature_dim = frozen.feature_dim();
  for (const LabeledSample& s : samples) {
    const PredictOut out = frozen.predict(s.z);
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      if (s.labels[i] == kLabelNA) continue;
      const auto f = out.features.row(static_cast<int>(i));
      rows.features.insert(rows.features.end(), f.begin(), f.end());
      rows.targets.push_back(s.labels[i] == kLabelIncorrect ? 1 : 0);
    }
  }
  return rows;
}

HeadTrainReport train_head_on_rows(const HeadRowSet& rows, LearnedHead& head,
                                   const HeadTrainConfig& cfg, std::uint64_t seed) {
  if (rows.size() == 0) throw std::invalid_argument("train_head_on_rows: no applicable rows");
  const std::size_t n_hold = static_cast<std::size_t>(rows.size() * cfg.holdout_fraction);
  const std::size_t n_train = rows.size() - n_hold;
  if (n_train == 0) throw std::invalid_argument("train_head_on_rows: empty training split");

  HeadTrainReport report;
  report.train_rows = n_train;
  report.holdout_rows = n_hold;

  AdamW opt(head.param_count(), cfg.optim, cfg.steps);
  Stream rng(seed, 0x68747261ULL);
  std::vector<double> grad(head.param_count(), 0.0);
  std::vector<const double*> batch;
  std::vector<int> targets;
  for (int step = 0; step < cfg.steps; ++step) {
    batch.clear();
    targets.clear();
    for (int b = 0; b < cfg.batch_rows; ++b) {
      const std::size_t r = rng.next_below(n_train);
      batch.push_back(rows.row(r));
      targets.push_back(rows.targets[r]);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = head.bce_batch(batch, targets, &grad, nullptr, cfg.positive_weight);
    if (!std::isfinite(loss)) throw std::runtime_error("head training diverged (NaN loss)");
    report.loss_curve.push_back(loss);
    opt.step(head.mutable_params(), grad);
  }

  // Held-out AUC on the tail split (or the whole set when not held out).
  std::vector<double> scores;
  std::vector<int> labels;
  const std::size_t lo = n_hold > 0 ? n_train : 0;
  for (std::size_t r = lo; r < rows.size(); ++r) {
    scores.push_back(head.prob(std::span<const double>(rows.row(r), rows.feature_dim)));
    labels.push_back(rows.targets[r]);
  }
  report.holdout_auc = auc(scores, labels);
  return report;
}

HeadTrainReport train_head_decoupled(const Denoiser& frozen,
                                     const std::vector<LabeledSample>& samples, LearnedHead& head,
                                     const HeadTrainConfig& cfg, std::uint64_t seed) {
  const HeadRowSet rows = extract_head_rows(frozen, samples);
  return train_head_on_rows(rows, head, cfg, seed);
}

double head_auc_on_rows(const LearnedHead& head, const HeadRowSet& rows) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    scores.push_back(head.prob(std::span<const double>(rows.row(r), rows.feature_dim)));
    labels.push_back(rows.targets[r]);
  }
  return auc(scores, labels);
}

}  // namespace mdlab
