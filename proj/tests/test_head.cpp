#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <vector>

#include "mdlab/artifacts.hpp"
#include "mdlab/head.hpp"
#include "mdlab/rng.hpp"
#include "mdlab/stats.hpp"
#include "mdlab/tasks.hpp"

using namespace mdlab;

namespace {

// Coin-pair instance layout: GO, run of A or B, maskable eos window, frozen eos tail.
MaskedSeq coin_partial(const CoinPairTask& task, const std::vector<int>& fill) {
  MaskedSeq z(fill.size(), kMask);
  for (std::size_t i = 0; i < fill.size(); ++i)
    if (fill[i] != kMask) z[i] = fill[i];
  return z;
}

}  // namespace

TEST_CASE("bayes error probability matches hand enumeration on coin-pair") {
  CoinPairTask task(3, 8);  // full: GO a a a e e e e e, two completions AAA / BBB
  const int GO = 3, A = 0, B = 1, E = 2;
  // A lone revealed run token is scored against the others-only posterior,
  // which is still the 1/2-1/2 prior: error probability 1/2.
  MaskedSeq z = coin_partial(task, {GO, A, kMask, kMask, kMask, kMask, kMask, kMask});
  CHECK(bayes_error_prob(task, z, 1) == doctest::Approx(0.5));
  // Two positions agreeing: each conditions on the other, so both are certain.
  z = coin_partial(task, {GO, A, A, kMask, kMask, kMask, kMask, kMask});
  CHECK(bayes_error_prob(task, z, 1) == doctest::Approx(0.0));
  CHECK(bayes_error_prob(task, z, 2) == doctest::Approx(0.0));
  // Disagreeing positions: conditioned on the other token, each is wrong for sure.
  z = coin_partial(task, {GO, A, B, kMask, kMask, kMask, kMask, kMask});
  CHECK(bayes_error_prob(task, z, 1) == doctest::Approx(1.0));
  CHECK(bayes_error_prob(task, z, 2) == doctest::Approx(1.0));
  // An eos-window token inside the run region matches no completion.
  z = coin_partial(task, {GO, E, kMask, kMask, kMask, kMask, kMask, kMask});
  CHECK(bayes_error_prob(task, z, 1) == doctest::Approx(1.0));
  // Contradictory *other* positions leave no survivor to condition on.
  bool contradiction = false;
  z = coin_partial(task, {GO, A, B, A, kMask, kMask, kMask, kMask});
  CHECK(bayes_error_prob(task, z, 3, &contradiction) == doctest::Approx(1.0));
  CHECK(contradiction);
  // With nothing else revealed, a run token is correct with probability 1/2.
  z = coin_partial(task, {GO, kMask, A, kMask, kMask, kMask, kMask, kMask});
  CHECK(bayes_error_prob(task, z, 2) == doctest::Approx(0.5));
}

TEST_CASE("scripted and bayes heads honor the scoreable mask and sentinel") {
  CoinPairTask task(3, 8);
  const int GO = 3, A = 0;
  MaskedSeq z = coin_partial(task, {GO, A, A, kMask, kMask, kMask, kMask, kMask});
  FeatureGrid feats(static_cast<int>(z.size()), 4);
  std::vector<std::uint8_t> scoreable(z.size(), 0);
  scoreable[1] = scoreable[2] = 1;

  ScriptedHead scripted({{1, 0.9}}, 0.25);
  CorrectionScores s = scripted.score(z, feats, scoreable);
  CHECK(s.p_error[1] == doctest::Approx(0.9));
  CHECK(s.p_error[2] == doctest::Approx(0.25));
  CHECK(s.valid[0] == 0);
  CHECK(s.p_error[0] == doctest::Approx(-1.0));

  BayesHead bayes(task);
  s = bayes.score(z, feats, scoreable);
  CHECK(s.valid[1] == 1);
  CHECK(s.p_error[1] == doctest::Approx(0.0));
  CHECK(s.valid[5] == 0);
}

TEST_CASE("head BCE loss matches hand computation and validates inputs") {
  CorrectionScores s(4);
  s.p_error = {0.8, 0.3, -1.0, 0.5};
  s.valid = {1, 1, 0, 1};
  std::vector<std::int8_t> labels{kLabelIncorrect, kLabelCorrect, kLabelNA, kLabelNA};
  // Applicable: positions 0 and 1. L = (-log 0.8 + -log(1-0.3)) / 2.
  const double expected = (-std::log(0.8) - std::log(0.7)) / 2.0;
  CHECK(bce_head_loss(s, labels) == doctest::Approx(expected));

  // Valid score on an NA label is fine (skipped); labeled-but-invalid throws.
  labels = {kLabelCorrect, kLabelNA, kLabelIncorrect, kLabelNA};
  CHECK_THROWS(bce_head_loss(s, labels));

  CorrectionScores empty(2);
  CHECK(bce_head_loss(empty, {kLabelNA, kLabelNA}) == doctest::Approx(0.0));
}

TEST_CASE("learned head gradients agree with finite differences") {
  const int F = 5, H = 4;
  LearnedHead head(F, H, 11);
  std::vector<double> rows_data;
  std::vector<int> targets{1, 0, 1};
  Stream rng(7);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < F; ++j) rows_data.push_back(rng.next_uniform(-1.0, 1.0));
  std::vector<const double*> rows;
  for (int r = 0; r < 3; ++r) rows.push_back(rows_data.data() + r * F);

  std::vector<double> grad(head.param_count(), 0.0);
  std::vector<double> dfeat(rows.size() * F, 0.0);
  const double loss = head.bce_batch(rows, targets, &grad, &dfeat, 1.5);
  CHECK(loss > 0.0);

  const double h = 1e-5;
  double worst = 0.0;
  // Parameter gradients.
  for (std::size_t p = 0; p < head.param_count(); p += 3) {
    LearnedHead plus = head, minus = head;
    plus.mutable_params()[p] += h;
    minus.mutable_params()[p] -= h;
    const double fd = (plus.bce_batch(rows, targets, nullptr, nullptr, 1.5) -
                       minus.bce_batch(rows, targets, nullptr, nullptr, 1.5)) /
                      (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[p]), 1e-8});
    worst = std::max(worst, std::abs(fd - grad[p]) / denom);
  }
  // Feature gradients.
  for (std::size_t c = 0; c < rows_data.size(); ++c) {
    std::vector<double> bumped = rows_data;
    bumped[c] += h;
    std::vector<const double*> rp;
    for (int r = 0; r < 3; ++r) rp.push_back(bumped.data() + r * F);
    const double lp = head.bce_batch(rp, targets, nullptr, nullptr, 1.5);
    bumped[c] = rows_data[c] - h;
    const double lm = head.bce_batch(rp, targets, nullptr, nullptr, 1.5);
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(dfeat[c]), 1e-8});
    worst = std::max(worst, std::abs(fd - dfeat[c]) / denom);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("training separates a linearly separable row set; zero steps does not") {
  const int F = 4;
  HeadRowSet rows;
  rows.feature_dim = F;
  Stream rng(13);
  for (int i = 0; i < 600; ++i) {
    const int target = i % 2;
    for (int j = 0; j < F; ++j) {
      const double base = (j == 0) ? (target ? 1.2 : -1.2) : 0.0;
      rows.features.push_back(base + rng.next_uniform(-0.3, 0.3));
    }
    rows.targets.push_back(target);
  }

  LearnedHead untrained(F, 8, 5);
  const std::vector<double> phi0 = untrained.params();
  HeadTrainConfig cfg;
  cfg.steps = 0;
  const HeadTrainReport rep0 = train_head_on_rows(rows, untrained, cfg, 21);
  CHECK(rep0.loss_curve.empty());
  CHECK(untrained.params() == phi0);

  LearnedHead trained(F, 8, 5);
  cfg.steps = 400;
  cfg.batch_rows = 64;
  HeadTrainReport rep = train_head_on_rows(rows, trained, cfg, 21);
  CHECK(rep.loss_curve.size() == 400);
  CHECK(rep.loss_curve.back() < rep.loss_curve.front());
  CHECK(rep.train_rows + rep.holdout_rows == rows.size());
  CHECK(head_auc_on_rows(trained, rows) > 0.95);
  CHECK(rep.holdout_auc > 0.9);
}

TEST_CASE("decoupled training learns from artifacts and leaves the denoiser frozen") {
  CoinPairTask task(6, 12);
  OracleDenoiser den(task);
  const auto data = generate_dataset(task, 24, 3);
  const auto samples = make_artifact_dataset(data, den, ArtifactPolicy::uniform(1.0 / 6.0), 8, 17);
  REQUIRE(samples.size() > 100);

  MaskedSeq probe = forward_corrupt(MaskedSeq(data[0].full), data[0].maskable, 0.5, 99);
  const PredictOut before = den.predict(probe);

  LearnedHead head(den.feature_dim(), 12, 9);
  HeadTrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_rows = 128;
  const HeadTrainReport rep = train_head_decoupled(den, samples, head, cfg, 31);
  // Uniform artifacts on an oracle are mostly detectable: AUC well above chance.
  const HeadRowSet rows = extract_head_rows(den, samples);
  CHECK(rows.feature_dim == head.feature_dim());
  CHECK(head_auc_on_rows(head, rows) > 0.65);
  CHECK(rep.holdout_auc > 0.6);

  const PredictOut after = den.predict(probe);
  CHECK(after.posterior.p == before.posterior.p);
  CHECK(after.features.h == before.features.h);
}

TEST_CASE("learned head round-trips through its checkpoint exactly") {
  LearnedHead head(6, 5, 123);
  const auto path = std::filesystem::temp_directory_path() / "mdlab-head-test.ckpt";
  head.save(path.string());
  const LearnedHead back = LearnedHead::load(path.string());
  std::filesystem::remove(path);
  CHECK(back.feature_dim() == 6);
  CHECK(back.hidden_dim() == 5);
  CHECK(back.params() == head.params());
  std::vector<double> row(6, 0.3);
  CHECK(back.prob(row) == head.prob(row));
}
