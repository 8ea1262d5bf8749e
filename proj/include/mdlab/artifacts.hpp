#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mdlab/denoiser.hpp"
#include "mdlab/diffusion.hpp"
#include "mdlab/tasks.hpp"

// Construction of labeled correction-head training samples: look-back
// (artifacts predicted from a much more corrupted state), uniform artifact
// tokens, and single-step artifacts with t' fixed at dt.

namespace mdlab {

// Per-position label values.
inline constexpr std::int8_t kLabelIncorrect = 0;
inline constexpr std::int8_t kLabelCorrect = 1;
inline constexpr std::int8_t kLabelNA = -1;  // masked / prompt / frozen padding

enum class ArtifactKind { Lbc, Uniform, SingleStep };
enum class ArtifactSelection { Confidence, Random };

struct ArtifactPolicy {
  ArtifactKind kind = ArtifactKind::Lbc;
  double dt = 1.0 / 32.0;  // subset-size rate; also t' floor (LBC) or exact t' (single-step)
  ArtifactSelection selection = ArtifactSelection::Confidence;

  static ArtifactPolicy lbc(double dt) { return {ArtifactKind::Lbc, dt, ArtifactSelection::Confidence}; }
  static ArtifactPolicy uniform(double rate) {
    return {ArtifactKind::Uniform, rate, ArtifactSelection::Random};
  }
  static ArtifactPolicy single_step(double dt, ArtifactSelection sel) {
    return {ArtifactKind::SingleStep, dt, sel};
  }
  std::string tag() const;
};

struct LabeledSample {
  MaskedSeq z;                        // x_t with artifacts replacing positions in m
  std::vector<int> x0;                // clean sequence
  double t = 0.0;
  double t_fwd = 0.0;                 // realized t'
  std::vector<std::int8_t> labels;    // kLabelCorrect / kLabelIncorrect / kLabelNA
  std::vector<int> artifact_positions;
  std::string policy;
};

// Builds one sample. Resamples t up to 16 times when the look-back interval
// is empty or the bridge left fewer masked positions than the subset size;
// returns nullopt if every retry fails.
std::optional<LabeledSample> make_artifact_sample(const Instance& inst, const Denoiser& denoiser,
                                                  const ArtifactPolicy& policy, std::uint64_t seed);

std::optional<LabeledSample> make_lbc_sample(const Instance& inst, const Denoiser& frozen,
                                             double dt, std::uint64_t seed);
std::optional<LabeledSample> make_uniform_sample(const Instance& inst, const Denoiser& denoiser,
                                                 double rate, std::uint64_t seed);
std::optional<LabeledSample> make_single_step_sample(const Instance& inst, const Denoiser& denoiser,
                                                     double dt, ArtifactSelection selection,
                                                     std::uint64_t seed);

std::vector<LabeledSample> make_artifact_dataset(const std::vector<Instance>& data,
                                                 const Denoiser& denoiser,
                                                 const ArtifactPolicy& policy, int per_instance,
                                                 std::uint64_t seed);

// Recomputes labels from (z, x0, maskability) by direct comparison.
std::vector<std::int8_t> recompute_labels(const MaskedSeq& z, const std::vector<int>& x0,
                                          const std::vector<std::uint8_t>& maskable);

std::string sample_to_jsonl(const LabeledSample& s);
LabeledSample sample_from_jsonl(const std::string& line);
void write_samples_jsonl(const std::string& path, const std::vector<LabeledSample>& samples);
std::vector<LabeledSample> read_samples_jsonl(const std::string& path);

}  // namespace mdlab
