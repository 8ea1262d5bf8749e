#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mdlab/artifacts.hpp"
#include "mdlab/denoiser.hpp"
#include "mdlab/optim.hpp"
#include "mdlab/tasks.hpp"

// Correction heads g(z) -> per-token error probability. The learned head is
// a row-wise MLP on the denoiser's penultimate features; the Bayes head is
// the enumeration-based ground-truth reference.

namespace mdlab {

struct CorrectionScores {
  std::vector<double> p_error;        // sentinel -1 where invalid
  std::vector<std::uint8_t> valid;

  explicit CorrectionScores(std::size_t n = 0) : p_error(n, -1.0), valid(n, 0) {}
};

class CorrectionHead {
 public:
  virtual ~CorrectionHead() = default;
  // Scores the positions flagged in `scoreable` of sequence z; `feats` holds
  // the rows from the denoiser forward pass the caller already ran.
  virtual CorrectionScores score(const MaskedSeq& z, const FeatureGrid& feats,
                                 const std::vector<std::uint8_t>& scoreable) const = 0;
};

// Row-wise MLP, feature_dim -> hidden -> hidden -> 1, GELU, sigmoid output.
// The head predicts P(error): the positive class is "incorrect", the
// complement of the correctness indicator used as the raw label.
class LearnedHead : public CorrectionHead {
 public:
  LearnedHead(int feature_dim, int hidden, std::uint64_t init_seed);

  int feature_dim() const { return f_; }
  int hidden_dim() const { return h_; }

  double prob(std::span<const double> feature_row) const;

  CorrectionScores score(const MaskedSeq& z, const FeatureGrid& feats,
                         const std::vector<std::uint8_t>& scoreable) const override;

  // Mean BCE over a batch of feature rows with 0/1 targets (1 = incorrect).
  // Accumulates parameter gradients into *grad and, when dfeat_rows is
  // non-null, writes per-row feature gradients (rows.size() x feature_dim).
  double bce_batch(const std::vector<const double*>& rows, const std::vector<int>& targets,
                   std::vector<double>* grad, std::vector<double>* dfeat_rows,
                   double positive_weight = 1.0) const;

  std::size_t param_count() const { return phi_.size(); }
  const std::vector<double>& params() const { return phi_; }
  std::vector<double>& mutable_params() { return phi_; }

  void save(const std::string& path) const;
  static LearnedHead load(const std::string& path);

 private:
  int f_, h_;
  // layout: w1[f x h] b1[h] w2[h x h] b2[h] w3[h] b3
  std::vector<double> phi_;
};

// Exact error probability by enumeration, treating every other unmasked
// position as ground truth. Bayes-optimal when at most one artifact exists;
// an explicit approximation otherwise.
double bayes_error_prob(const Task& task, const MaskedSeq& z, int position,
                        bool* contradiction = nullptr);

class BayesHead : public CorrectionHead {
 public:
  explicit BayesHead(const Task& task) : task_(task) {}
  CorrectionScores score(const MaskedSeq& z, const FeatureGrid& feats,
                         const std::vector<std::uint8_t>& scoreable) const override;

 private:
  const Task& task_;
};

// Test/diagnostic head: fixed per-position error probabilities.
class ScriptedHead : public CorrectionHead {
 public:
  explicit ScriptedHead(std::map<int, double> flags, double default_prob = 0.0)
      : flags_(std::move(flags)), default_prob_(default_prob) {}
  CorrectionScores score(const MaskedSeq& z, const FeatureGrid& feats,
                         const std::vector<std::uint8_t>& scoreable) const override;

 private:
  std::map<int, double> flags_;
  double default_prob_;
};

// Mean over applicable positions of BCE(P_error[i], 1[label = incorrect]).
// No applicable positions: 0 (callers may warn).
double bce_head_loss(const CorrectionScores& scores, const std::vector<std::int8_t>& labels);

struct HeadTrainConfig {
  int steps = 1200;
  int batch_rows = 256;
  OptimConfig optim{.lr = 5e-3};
  double holdout_fraction = 0.1;
  double positive_weight = 1.0;  // optional class-imbalance weight
};

struct HeadTrainReport {
  std::vector<double> loss_curve;
  double holdout_auc = 0.0;
  std::size_t train_rows = 0;
  std::size_t holdout_rows = 0;
};

// Extracted per-position training rows: features of the frozen denoiser at
// each applicable position plus the error target.
struct HeadRowSet {
  int feature_dim = 0;
  std::vector<double> features;  // n x feature_dim
  std::vector<int> targets;      // 1 = incorrect
  std::size_t size() const { return targets.size(); }
  const double* row(std::size_t i) const { return features.data() + i * feature_dim; }
};

HeadRowSet extract_head_rows(const Denoiser& frozen, const std::vector<LabeledSample>& samples);

// Optimizes only the head; the denoiser is const and sees no gradient.
HeadTrainReport train_head_decoupled(const Denoiser& frozen,
                                     const std::vector<LabeledSample>& samples, LearnedHead& head,
                                     const HeadTrainConfig& cfg, std::uint64_t seed);

// Same optimizer on a pre-extracted row set (reused by joint training eval).
HeadTrainReport train_head_on_rows(const HeadRowSet& rows, LearnedHead& head,
                                   const HeadTrainConfig& cfg, std::uint64_t seed);

double head_auc_on_rows(const LearnedHead& head, const HeadRowSet& rows);

}  // namespace mdlab
