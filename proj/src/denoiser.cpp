#include "mdlab/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace mdlab {

double PosteriorGrid::confidence(int i) const {
  double best = 0.0;
  for (double v : row(i)) best = std::max(best, v);
  return best;
}

int PosteriorGrid::argmax(int i) const {
  const auto r = row(i);
  int best = 0;
  for (int v = 1; v < vocab_size; ++v)
    if (r[v] > r[best]) best = v;
  return best;
}

PosteriorGrid oracle_predict(const Task& task, const MaskedSeq& x_t) {
  const Vocab& vocab = task.vocab();
  const int L = task.max_len();
  if (x_t.size() != static_cast<std::size_t>(L))
    throw std::invalid_argument("oracle_predict: length mismatch");

  std::vector<int> prompt(x_t.tokens.begin(), x_t.tokens.begin() + task.prompt_len());
  for (int tok : prompt)
    if (tok == kMask) throw std::invalid_argument("oracle_predict: masked prompt position");

  const auto completions = task.enumerate_completions(prompt, x_t);
  if (completions.empty()) throw std::runtime_error("oracle_predict: contradictory evidence");

  PosteriorGrid post(L, vocab.size);
  for (int i = 0; i < L; ++i) {
    if (!x_t.is_masked(i)) {
      post.row(i)[x_t[i]] = 1.0;  // point mass on observed token
      continue;
    }
    auto r = post.row(i);
    const int j = i - task.prompt_len();
    for (const Completion& c : completions) r[c.tokens[j]] += c.weight;
  }
  return post;
}

FeatureGrid oracle_features(const Vocab& vocab, const MaskedSeq& x_t, const PosteriorGrid& post) {
  const int L = static_cast<int>(x_t.size());
  const int V = vocab.size;
  FeatureGrid feats(L, 2 * V + 1);
  for (int i = 0; i < L; ++i) {
    auto f = feats.row(i);
    if (x_t.is_masked(i))
      f[V] = 1.0;
    else
      f[x_t[i]] = 1.0;
    const auto r = post.row(i);
    for (int v = 0; v < V; ++v) f[V + 1 + v] = r[v];
  }
  return feats;
}

PredictOut OracleDenoiser::predict(const MaskedSeq& x) const {
  count_forward();
  PredictOut out;
  try {
    out.posterior = oracle_predict(task_, x);
  } catch (const std::runtime_error&) {
    if (!relax_) throw;
    // Contradictory evidence: condition on the prompt alone and keep point
    // masses for the unmasked positions.
    MaskedSeq blank = x;
    for (int i = task_.prompt_len(); i < task_.max_len(); ++i) blank[i] = kMask;
    out.posterior = oracle_predict(task_, blank);
    for (int i = task_.prompt_len(); i < task_.max_len(); ++i) {
      if (x.is_masked(i)) continue;
      auto r = out.posterior.row(i);
      std::fill(r.begin(), r.end(), 0.0);
      r[x[i]] = 1.0;
    }
  }
  out.features = oracle_features(task_.vocab(), x, out.posterior);
  return out;
}

double demask_loss(const PosteriorGrid& posterior, const std::vector<int>& x0,
                   const MaskedSeq& x_t, const std::vector<std::uint8_t>& maskable, double t,
                   double t_min, bool* clamped) {
  if (x0.size() != x_t.size() || maskable.size() != x_t.size())
    throw std::invalid_argument("demask_loss: length mismatch");
  if (clamped) *clamped = false;

  double sum = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    if (!x_t.is_masked(i) || !maskable[i]) continue;
    any = true;
    const double p = posterior.row(static_cast<int>(i))[x0[i]];
    sum -= std::log(std::max(p, 1e-300));
  }
  if (!any) return 0.0;
  double tw = t;
  if (tw < t_min) {
    tw = t_min;
    if (clamped) *clamped = true;
  }
  return sum / tw;
}

}  // namespace mdlab
