#pragma once

#include <cstdint>
#include <vector>

#include "mdlab/artifacts.hpp"
#include "mdlab/decode.hpp"
#include "mdlab/head.hpp"
#include "mdlab/optim.hpp"
#include "mdlab/tasks.hpp"
#include "mdlab/transformer.hpp"

// Denoiser training on the demasking objective, plus the joint variant that
// adds gamma times the correction-head error loss, with gradients flowing
// through the shared features. Randomness for the two branches comes from
// independently keyed streams, so gamma = 0 reproduces plain denoiser
// training bit for bit.

namespace mdlab {

struct DenoiserTrainConfig {
  int steps = 800;
  int batch = 16;
  double t_min = 1e-3;
  OptimConfig optim{.lr = 3e-3};
};

struct TrainReport {
  std::vector<double> demask_curve;  // per-step demask loss
  std::vector<double> err_curve;     // per-step head BCE (joint runs only)
  int clamp_count = 0;               // steps where some t was clamped to t_min
};

// Minimizes the demasking loss; throws std::runtime_error on NaN loss.
TrainReport train_denoiser(TinyNeuralDenoiser& model, const std::vector<Instance>& dataset,
                           const DenoiserTrainConfig& cfg, std::uint64_t seed);

struct JointTrainConfig {
  double gamma = 0.1;
  DenoiserTrainConfig base;
  ArtifactPolicy artifact = ArtifactPolicy::lbc(1.0 / 8.0);
  double positive_weight = 1.0;
};

// Optimizes demask loss + gamma * error BCE over (model, head) together.
// Artifact samples are drawn from the current model each step.
TrainReport train_joint_baseline(TinyNeuralDenoiser& model, LearnedHead& head,
                                 const std::vector<Instance>& dataset,
                                 const JointTrainConfig& cfg, std::uint64_t seed);

// Mean -log p(x0_i | x_t) per masked maskable token over `draws` corruption
// draws of each instance (unweighted by 1/t); the held-out quality metric.
double masked_token_ce(const Denoiser& denoiser, const std::vector<Instance>& dataset, int draws,
                       std::uint64_t seed);

// Verifier accuracy of plain confidence decoding over the evaluation set;
// the frozen-fidelity reference for all correction strategies.
double sft_baseline_eval(const Denoiser& denoiser, const Task& task,
                         const std::vector<Instance>& eval_set, const DecodeConfig& cfg,
                         std::uint64_t seed);

}  // namespace mdlab
