#include "mdlab/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace mdlab {

namespace {
constexpr int kMaxRetries = 16;

int maskable_count(const std::vector<std::uint8_t>& maskable) {
  int n = 0;
  for (auto f : maskable) n += f;
  return n;
}

// Sample a full sequence from the posterior; unmasked rows are point masses.
MaskedSeq sample_from_posterior(const PosteriorGrid& post, Stream& rng) {
  MaskedSeq y(static_cast<std::size_t>(post.length), 0);
  for (int i = 0; i < post.length; ++i) {
    const auto row = post.row(i);
    const double u = rng.next_u01();
    double acc = 0.0;
    int pick = post.vocab_size - 1;
    for (int v = 0; v < post.vocab_size; ++v) {
      acc += row[v];
      if (u < acc) {
        pick = v;
        break;
      }
    }
    y[i] = pick;
  }
  return y;
}

std::vector<int> select_positions(const PosteriorGrid& post, const std::vector<int>& candidates,
                                  int count, ArtifactSelection sel, Stream& rng) {
  std::vector<int> pool = candidates;
  if (sel == ArtifactSelection::Confidence) {
    // Highest confidence first, ties by lowest index.
    std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) {
      return post.confidence(a) > post.confidence(b);
    });
  } else {
    for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
      const std::size_t j = i + rng.next_below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}
}  // namespace

std::string ArtifactPolicy::tag() const {
  switch (kind) {
    case ArtifactKind::Lbc:
      return "lbc";
    case ArtifactKind::Uniform:
      return "uniform";
    case ArtifactKind::SingleStep:
      return selection == ArtifactSelection::Confidence ? "single-step-confidence"
                                                        : "single-step-random";
  }
  return "unknown";
}

std::vector<std::int8_t> recompute_labels(const MaskedSeq& z, const std::vector<int>& x0,
                                          const std::vector<std::uint8_t>& maskable) {
  std::vector<std::int8_t> labels(z.size(), kLabelNA);
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z.is_masked(i) || !maskable[i]) continue;
    labels[i] = z[i] == x0[i] ? kLabelCorrect : kLabelIncorrect;
  }
  return labels;
}

std::optional<LabeledSample> make_artifact_sample(const Instance& inst, const Denoiser& denoiser,
                                                  const ArtifactPolicy& policy,
                                                  std::uint64_t seed) {
  if (!(policy.dt > 0.0 && policy.dt <= 1.0))
    throw std::invalid_argument("make_artifact_sample: dt must lie in (0, 1]");
  const MaskedSeq x0(inst.full);
  const int gen = maskable_count(inst.maskable);
  const int subset = static_cast<int>(std::ceil(gen * policy.dt));

  Stream rng(seed, 0x61727469ULL);
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    const double t = rng.next_u01();
    double t_fwd;
    if (policy.kind == ArtifactKind::SingleStep) {
      t_fwd = policy.dt;
      if (t + t_fwd > 1.0) continue;
    } else {
      if (1.0 - t < policy.dt) continue;  // empty look-back interval, resample t
      t_fwd = rng.next_uniform(policy.dt, 1.0 - t);
    }

    const std::uint64_t fwd_seed = rng.next_u64();
    const std::uint64_t bridge_seed = rng.next_u64();
    const MaskedSeq x_t = forward_corrupt(x0, inst.maskable, t, fwd_seed);
    const MaskedSeq x_tt = bridge_corrupt(x_t, inst.maskable, t, t_fwd, bridge_seed);

    const std::vector<int> masked = x_tt.masked_indices();
    if (static_cast<int>(masked.size()) < subset) continue;  // bridge left too few masks

    const PredictOut pred = denoiser.predict(x_tt);
    MaskedSeq y;
    if (policy.kind == ArtifactKind::Uniform) {
      y = MaskedSeq(x_tt.size(), 0);
      const int V = denoiser.vocab().size;
      for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(V)));
    } else {
      y = sample_from_posterior(pred.posterior, rng);
    }

    const ArtifactSelection sel =
        policy.kind == ArtifactKind::Uniform ? ArtifactSelection::Random : policy.selection;
    const std::vector<int> m = select_positions(pred.posterior, masked, subset, sel, rng);

    LabeledSample s;
    s.z = replace(x_t, y, m);
    s.x0 = inst.full;
    s.t = t;
    s.t_fwd = t_fwd;
    s.artifact_positions = m;
    s.labels = recompute_labels(s.z, s.x0, inst.maskable);
    s.policy = policy.tag();
    return s;
  }
  return std::nullopt;
}

std::optional<LabeledSample> make_lbc_sample(const Instance& inst, const Denoiser& frozen,
                                             double dt, std::uint64_t seed) {
  return make_artifact_sample(inst, frozen, ArtifactPolicy::lbc(dt), seed);
}

std::optional<LabeledSample> make_uniform_sample(const Instance& inst, const Denoiser& denoiser,
                                                 double rate, std::uint64_t seed) {
  return make_artifact_sample(inst, denoiser, ArtifactPolicy::uniform(rate), seed);
}

std::optional<LabeledSample> make_single_step_sample(const Instance& inst, const Denoiser& denoiser,
                                                     double dt, ArtifactSelection selection,
                                                     std::uint64_t seed) {
  return make_artifact_sample(inst, denoiser, ArtifactPolicy::single_step(dt, selection), seed);
}

std::vector<LabeledSample> make_artifact_dataset(const std::vector<Instance>& data,
                                                 const Denoiser& denoiser,
                                                 const ArtifactPolicy& policy, int per_instance,
                                                 std::uint64_t seed) {
  std::vector<LabeledSample> out;
  out.reserve(data.size() * per_instance);
  Stream root(seed, 0x61646174ULL);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int r = 0; r < per_instance; ++r) {
      const std::uint64_t s = root.next_u64();
      if (auto sample = make_artifact_sample(data[i], denoiser, policy, s))
        out.push_back(std::move(*sample));
    }
  }
  return out;
}

std::string sample_to_jsonl(const LabeledSample& s) {
  nlohmann::json j;
  j["z"] = s.z.tokens;  // kMask is already -1 on the wire
  j["x0"] = s.x0;
  j["t"] = s.t;
  j["labels"] = std::vector<int>(s.labels.begin(), s.labels.end());
  j["m"] = s.artifact_positions;
  j["policy"] = s.policy;
  return j.dump();
}

LabeledSample sample_from_jsonl(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  LabeledSample s;
  s.z = MaskedSeq(j.at("z").get<std::vector<int>>());
  s.x0 = j.at("x0").get<std::vector<int>>();
  s.t = j.at("t").get<double>();
  for (int v : j.at("labels").get<std::vector<int>>()) s.labels.push_back(static_cast<std::int8_t>(v));
  s.artifact_positions = j.at("m").get<std::vector<int>>();
  s.policy = j.at("policy").get<std::string>();
  return s;
}

void write_samples_jsonl(const std::string& path, const std::vector<LabeledSample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& s : samples) out << sample_to_jsonl(s) << '\n';
}

std::vector<LabeledSample> read_samples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<LabeledSample> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(sample_from_jsonl(line));
  return out;
}

}  // namespace mdlab
