#include "mdlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>

#include "mdlab/rng.hpp"

namespace mdlab {
namespace {

constexpr std::uint64_t kTimeTag = 0x7472'6e2d'7431ULL;
constexpr std::uint64_t kCorruptTag = 0x7472'6e2d'6677ULL;
constexpr std::uint64_t kArtifactTag = 0x7472'6e2d'6172ULL;

void softmax_row(std::span<const double> logits, std::vector<double>& out) {
  out.resize(logits.size());
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) sum += (out[v] = std::exp(logits[v] - mx));
  for (double& p : out) p /= sum;
}

// One optimizer step shared by plain and joint training. gamma = 0 (or a
// null head) skips the artifact branch entirely, so the parameter trajectory
// is identical to plain demask training under the same seed.
struct JointTrainer {
  TinyNeuralDenoiser& model;
  LearnedHead* head;
  const std::vector<Instance>& dataset;
  const DenoiserTrainConfig& cfg;
  double gamma;
  const ArtifactPolicy& policy;
  double positive_weight;
  std::uint64_t seed;

  TrainReport run() {
    if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
    const int vsize = model.vocab().size;
    AdamW opt_theta(model.param_count(), cfg.optim, cfg.steps);
    std::vector<double> grad_theta(model.param_count());
    std::unique_ptr<AdamW> opt_phi;
    std::vector<double> grad_phi;
    const bool joint = head != nullptr && gamma > 0.0;
    if (joint) {
      opt_phi = std::make_unique<AdamW>(head->param_count(), cfg.optim, cfg.steps);
      grad_phi.assign(head->param_count(), 0.0);
    }

    TrainReport report;
    ForwardCache cache;
    std::vector<double> probs, dlogits, dfeat, sample_grad_phi, dfeat_rows;
    for (int step = 0; step < cfg.steps; ++step) {
      std::fill(grad_theta.begin(), grad_theta.end(), 0.0);
      std::fill(grad_phi.begin(), grad_phi.end(), 0.0);
      double demask_sum = 0.0;
      bool clamped_step = false;

      for (int b = 0; b < cfg.batch; ++b) {
        const std::uint64_t gidx = static_cast<std::uint64_t>(step) * cfg.batch + b;
        const Instance& inst = dataset[gidx % dataset.size()];
        const double t = indexed_u01(seed, kTimeTag, gidx);
        const MaskedSeq x_t =
            forward_corrupt(MaskedSeq(inst.full), inst.maskable, t, hash3(seed, kCorruptTag, gidx));
        const double teff = std::max(t, cfg.t_min);
        if (t < cfg.t_min) clamped_step = true;

        model.forward(x_t.tokens, cache);
        const int L = cache.L;
        dlogits.assign(static_cast<std::size_t>(L) * vsize, 0.0);
        const double scale = 1.0 / (teff * cfg.batch);
        bool any = false;
        for (int i = 0; i < L; ++i) {
          if (!x_t.is_masked(i) || !inst.maskable[i]) continue;
          any = true;
          softmax_row({cache.logits.data() + static_cast<std::size_t>(i) * vsize,
                       static_cast<std::size_t>(vsize)},
                      probs);
          demask_sum += -std::log(std::max(probs[inst.full[i]], 1e-300)) / teff;
          double* drow = dlogits.data() + static_cast<std::size_t>(i) * vsize;
          for (int v = 0; v < vsize; ++v) drow[v] = probs[v] * scale;
          drow[inst.full[i]] -= scale;
        }
        if (any) model.backward(cache, dlogits, {}, grad_theta);
      }
      demask_sum /= cfg.batch;

      double err_sum = 0.0;
      int err_samples = 0;
      if (joint) {
        // Draw the batch first so the mean weight gamma / n is exact before
        // any gradient is accumulated.
        std::vector<LabeledSample> batch_samples;
        for (int b = 0; b < cfg.batch; ++b) {
          const std::uint64_t gidx = static_cast<std::uint64_t>(step) * cfg.batch + b;
          const Instance& inst = dataset[gidx % dataset.size()];
          auto s = make_artifact_sample(inst, model, policy, hash3(seed, kArtifactTag, gidx));
          if (!s) continue;
          bool usable = false;
          for (std::int8_t l : s->labels) usable |= (l != kLabelNA);
          if (usable) batch_samples.push_back(std::move(*s));
        }
        err_samples = static_cast<int>(batch_samples.size());
        const double w = err_samples > 0 ? gamma / err_samples : 0.0;
        for (const LabeledSample& s : batch_samples) {
          model.forward(s.z.tokens, cache);
          std::vector<const double*> rows;
          std::vector<int> targets;
          std::vector<int> positions;
          for (std::size_t i = 0; i < s.labels.size(); ++i) {
            if (s.labels[i] == kLabelNA) continue;
            rows.push_back(cache.feat.data() + i * model.feature_dim());
            targets.push_back(s.labels[i] == kLabelIncorrect ? 1 : 0);
            positions.push_back(static_cast<int>(i));
          }
          sample_grad_phi.assign(head->param_count(), 0.0);
          dfeat_rows.assign(rows.size() * model.feature_dim(), 0.0);
          const double bce =
              head->bce_batch(rows, targets, &sample_grad_phi, &dfeat_rows, positive_weight);
          err_sum += bce;
          for (std::size_t j = 0; j < grad_phi.size(); ++j) grad_phi[j] += w * sample_grad_phi[j];
          dfeat.assign(static_cast<std::size_t>(cache.L) * model.feature_dim(), 0.0);
          for (std::size_t r = 0; r < positions.size(); ++r) {
            double* dst = dfeat.data() +
                          static_cast<std::size_t>(positions[r]) * model.feature_dim();
            const double* src = dfeat_rows.data() + r * model.feature_dim();
            for (int f = 0; f < model.feature_dim(); ++f) dst[f] += w * src[f];
          }
          dlogits.assign(static_cast<std::size_t>(cache.L) * vsize, 0.0);
          model.backward(cache, dlogits, dfeat, grad_theta);
        }
        if (err_samples > 0) err_sum /= err_samples;
      }

      if (std::isnan(demask_sum) || std::isnan(err_sum))
        throw std::runtime_error("training diverged: loss is NaN at step " + std::to_string(step));

      report.demask_curve.push_back(demask_sum);
      if (joint) report.err_curve.push_back(err_sum);
      if (clamped_step) ++report.clamp_count;

      opt_theta.step(model.mutable_params(), grad_theta);
      if (joint && err_samples > 0) opt_phi->step(head->mutable_params(), grad_phi);
    }
    return report;
  }
};

}  // namespace

TrainReport train_denoiser(TinyNeuralDenoiser& model, const std::vector<Instance>& dataset,
                           const DenoiserTrainConfig& cfg, std::uint64_t seed) {
  const ArtifactPolicy unused = ArtifactPolicy::lbc(1.0 / 8.0);
  JointTrainer trainer{model, nullptr, dataset, cfg, 0.0, unused, 1.0, seed};
  return trainer.run();
}

TrainReport train_joint_baseline(TinyNeuralDenoiser& model, LearnedHead& head,
                                 const std::vector<Instance>& dataset,
                                 const JointTrainConfig& cfg, std::uint64_t seed) {
  if (cfg.gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
  JointTrainer trainer{model, &head,          dataset, cfg.base,
                       cfg.gamma, cfg.artifact, cfg.positive_weight, seed};
  return trainer.run();
}

double masked_token_ce(const Denoiser& denoiser, const std::vector<Instance>& dataset, int draws,
                       std::uint64_t seed) {
  if (dataset.empty() || draws < 1) throw std::invalid_argument("need data and draws >= 1");
  double total = 0.0;
  std::uint64_t n = 0;
  std::uint64_t idx = 0;
  for (const Instance& inst : dataset) {
    for (int d = 0; d < draws; ++d, ++idx) {
      const double t = indexed_u01(seed, kTimeTag, idx);
      const MaskedSeq x_t =
          forward_corrupt(MaskedSeq(inst.full), inst.maskable, t, hash3(seed, kCorruptTag, idx));
      PredictOut out = denoiser.predict(x_t);
      for (std::size_t i = 0; i < inst.full.size(); ++i) {
        if (!x_t.is_masked(i) || !inst.maskable[i]) continue;
        total += -std::log(std::max(out.posterior.row(static_cast<int>(i))[inst.full[i]], 1e-300));
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : total / n;
}

double sft_baseline_eval(const Denoiser& denoiser, const Task& task,
                         const std::vector<Instance>& eval_set, const DecodeConfig& cfg,
                         std::uint64_t seed) {
  if (eval_set.empty()) throw std::invalid_argument("evaluation set is empty");
  DecodeConfig base = cfg;
  base.strategy = Strategy::Confidence;
  int correct = 0;
  std::uint64_t idx = 0;
  for (const Instance& inst : eval_set) {
    DecodeResult res = run_semi_ar(inst.prompt, task.gen_len(), denoiser, nullptr, base,
                                   hash2(seed, idx++));
    correct += task.verify_output(inst.prompt, res.x) ? 1 : 0;
  }
  return static_cast<double>(correct) / eval_set.size();
}

}  // namespace mdlab
