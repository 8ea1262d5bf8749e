#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "mdlab/denoiser.hpp"
#include "mdlab/head.hpp"

// Inference engines: confidence baseline, dynamic self-correction with
// budget/threshold/stride/anti-oscillation controls, and random remasking,
// all under a semi-autoregressive block driver with EoS early stopping and
// exact forward-pass accounting.

namespace mdlab {

enum class Strategy { Confidence, Dsc, RandomRemask };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct DecodeConfig {
  Strategy strategy = Strategy::Confidence;
  int k = 1;              // tokens demasked per step
  int remask_budget = 2;  // K
  double tau = 0.75;      // error-probability gate
  int stride = 4;         // d: trigger period in steps
  int buffer = 4;         // B: anti-oscillation FIFO capacity
  int block_len = 0;      // 0 = single block over the whole generation region
  int max_iters = 0;      // 0 = derived bound; exceeding it flags incomplete
  bool greedy = false;    // argmax instead of sampling at demask

  // Throws unless k >= 1, tau >= 0, stride >= 1, buffer >= 0 and, for
  // remasking strategies with K > 0, k * stride > K (termination guard).
  void validate() const;
};

struct TraceEvent {
  enum class Kind { Demask, Remask, EosStop };
  Kind kind;
  int step = 0;
  std::vector<int> positions;
  std::vector<int> tokens;     // demask: filled tokens; eos_stop: fill token
  std::vector<double> scores;  // remask: error probabilities
  double t_before = 0.0;
  double t_after = 0.0;
};

struct DecodeTrace {
  std::vector<TraceEvent> events;
  std::uint64_t forward_passes = 0;
  bool incomplete = false;
};

struct DecodeResult {
  MaskedSeq x;
  DecodeTrace trace;
};

// Decodes block by block left to right. The prompt occupies the first
// prompt.size() positions; the generation region is gen_len positions, all
// initially MASK, with the full sequence always given to the denoiser as
// context. head may be null for the confidence strategy.
DecodeResult run_semi_ar(const std::vector<int>& prompt, int gen_len, const Denoiser& denoiser,
                         const CorrectionHead* head, const DecodeConfig& cfg, std::uint64_t seed);

// Worst-case steps for one block of length Lb under the termination guard.
int termination_bound(int block_len, const DecodeConfig& cfg);

// Replays trace events from the all-MASK initial state; used to audit traces.
MaskedSeq replay_trace(const std::vector<int>& prompt, int gen_len, const DecodeTrace& trace);

std::string trace_to_jsonl(const DecodeTrace& trace);

}  // namespace mdlab
