#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdlab/decode.hpp"
#include "mdlab/head.hpp"
#include "mdlab/tasks.hpp"
#include "mdlab/train.hpp"

// Experiment orchestration: strategy x tokens-per-step sweeps, the
// accuracy-vs-iterations Pareto report, and the three directional ablation
// reproductions (joint-vs-decoupled fidelity, look-back vs uniform artifact
// heads, targeted vs random remasking).

namespace mdlab {

struct ResultRow {
  std::string task;
  std::string strategy;
  int k = 1;
  double accuracy = 0.0;
  double iter_avg = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;

  bool operator==(const ResultRow&) const = default;
};

inline constexpr const char* kResultsCsvHeader =
    "task,strategy,tokens_per_step,accuracy,iter_avg,n,seed,wall_ms";

std::string rows_to_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> rows_from_csv(const std::string& csv);
void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(const std::string& path);

struct SweepSpec {
  std::vector<Strategy> strategies{Strategy::Confidence, Strategy::Dsc};
  std::vector<int> ks{1, 2, 4};
  std::vector<std::uint64_t> seeds{1};
  int n_eval = 200;
  DecodeConfig decode;          // strategy and k are overridden per point
  std::uint64_t data_seed = 7;  // evaluation instances, shared by all points
  bool measure_wall = false;    // off by default so re-runs are byte-stable
  int threads = 1;
};

struct EvalPoint {
  double accuracy = 0.0;
  double iter_avg = 0.0;
};

// Decodes every instance (in parallel when threads > 1, with per-instance
// split seeds) and aggregates verifier accuracy and mean forward passes.
EvalPoint evaluate_strategy(const Task& task, const Denoiser& denoiser,
                            const CorrectionHead* head, const DecodeConfig& cfg,
                            const std::vector<Instance>& eval_set, std::uint64_t seed,
                            int threads = 1);

std::vector<ResultRow> run_experiment(const Task& task, const Denoiser& denoiser,
                                      const CorrectionHead* head, const SweepSpec& spec);

// Mean accuracy / iter_avg per (strategy, k) across seeds.
struct PointStat {
  std::string strategy;
  int k = 0;
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_iter = 0.0, std_iter = 0.0;
  int n_seeds = 0;
};
std::vector<PointStat> aggregate_rows(const std::vector<ResultRow>& rows);

// Non-dominated set per strategy on (iter_avg down, accuracy up), verdicts
// for every k shared between strategy pairs, and the best cross-over
// statement "A at k=a matches B at k=b accuracy with X% fewer iterations".
nlohmann::json pareto_report(const std::vector<ResultRow>& rows);

// True when, at every k present for both strategies, `a` has accuracy >= `b`
// minus eps and iter_avg <= `b` plus eps.
bool weakly_dominates_at_shared_k(const std::vector<ResultRow>& rows, const std::string& a,
                                  const std::string& b, double eps = 1e-9);

// Rows harvested from confidence-decoding rollouts: intermediate states are
// reconstructed from the trace, every unmasked generated token is labeled by
// the task's exact error probability (definitive 0/1 labels only), and the
// denoiser features at that state become the row. The held-out evaluation
// set for head-quality comparisons.
HeadRowSet harvest_rollout_rows(const Task& task, const Denoiser& denoiser, int n_rollouts, int k,
                                int max_states_per_rollout, std::uint64_t seed);

// Overrides for one arm of the ablation suite: the head comparison (b) and
// the iteration-cost comparison (c) may each run on their own task, decode
// configuration, and artifact budget. Empty/zero fields fall back to the
// suite-level values.
struct AblationArmConfig {
  std::string task;
  DecodeConfig decode;
  std::vector<int> ks;
  int artifacts_per_instance = 0;
};

struct AblationSuiteConfig {
  std::string task = "modular-chain";
  int size_scale = 1;
  std::string denoiser_ckpt;  // empty: train a fresh model in place
  std::vector<double> gammas{0.01, 0.1, 0.5};
  int seeds = 5;
  std::uint64_t base_seed = 1;
  int train_instances = 384;
  int n_eval = 200;
  int artifacts_per_instance = 2;
  double artifact_dt = 0.5;  // look-back gap; also the artifact budget per sample
  // Training depth for the shared frozen model used by the head comparison
  // and iteration-cost parts; 0 falls back to denoiser_train.steps. The
  // fidelity part retrains many models, so its budget stays small, but an
  // under-trained frozen model produces junk rollout errors that favour
  // neither artifact recipe in a representative way.
  int frozen_steps = 0;
  DenoiserTrainConfig denoiser_train;
  HeadTrainConfig head_train;
  DecodeConfig decode;
  std::vector<int> ks{1, 2, 4};
  std::optional<AblationArmConfig> head_arm;  // part (b)
  std::optional<AblationArmConfig> cost_arm;  // part (c)
  int threads = 1;
};

// Three directional reproductions: (a) decoupled head training leaves the
// frozen no-remask accuracy bit-identical while joint training does not beat
// it; (b) look-back artifact heads beat uniform artifact heads on
// rollout-harvested errors; (c) targeted remasking needs fewer iterations
// than random remasking at matched accuracy. Missing checkpoint paths are
// reported before any work starts.
nlohmann::json reproduce_ablations(const AblationSuiteConfig& cfg);

}  // namespace mdlab
