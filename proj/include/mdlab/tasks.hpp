#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mdlab/diffusion.hpp"
#include "mdlab/rng.hpp"

// Synthetic, exactly-enumerable sequence tasks with verifiers. Each task
// defines a prompt distribution, a weighted set of valid completions per
// prompt, and an output verifier. Sequences are laid out as
// prompt || target || EoS padding up to max_len.

namespace mdlab {

inline constexpr int kEnumerationCap = 4096;

struct Instance {
  std::vector<int> prompt;
  std::vector<int> target;
  std::vector<int> full;                 // prompt || target || EoS padding
  std::vector<std::uint8_t> maskable;    // corruption policy flags for `full`
};

struct Completion {
  std::vector<int> tokens;  // generation region: target followed by EoS fill
  double weight = 0.0;
};

class Task {
 public:
  virtual ~Task() = default;

  const std::string& name() const { return name_; }
  const Vocab& vocab() const { return vocab_; }
  int prompt_len() const { return prompt_len_; }
  int target_len() const { return target_len_; }
  int max_len() const { return max_len_; }
  int eos_window() const { return eos_window_; }
  int gen_len() const { return max_len_ - prompt_len_; }

  virtual std::vector<int> sample_prompt(Stream& rng) const = 0;
  virtual std::vector<int> sample_target(const std::vector<int>& prompt, Stream& rng) const = 0;

  // All valid targets for a prompt with normalized weights. Throws if the
  // support exceeds kEnumerationCap.
  virtual std::vector<Completion> enumerate_targets(const std::vector<int>& prompt) const = 0;

  // Constraint-satisfaction check on a completion (EoS padding stripped).
  virtual bool verify(const std::vector<int>& prompt, const std::vector<int>& completion) const = 0;

  // Full-length completions (target || EoS fill) consistent with every
  // unmasked generation-region position of `partial`, weights renormalized.
  // Empty result signals contradictory evidence.
  std::vector<Completion> enumerate_completions(const std::vector<int>& prompt,
                                                const MaskedSeq& partial) const;

  Instance make_instance(Stream& rng) const;

  // Verifies the generation region of a decoded sequence: tokens up to the
  // first EoS must form a valid completion and nothing may remain masked.
  bool verify_output(const std::vector<int>& prompt, const MaskedSeq& decoded) const;

 protected:
  Task(std::string name, Vocab vocab, int prompt_len, int target_len, int max_len, int eos_window);

  std::string name_;
  Vocab vocab_;
  int prompt_len_;
  int target_len_;
  int max_len_;
  int eos_window_;
};

// Completion is c^n for one symbol c drawn uniformly from {A, B}. Marginals
// are 50/50 per position but the joint is degenerate, so parallel decoding
// produces dependency errors at will.
class CoinPairTask : public Task {
 public:
  CoinPairTask(int run_len, int max_len, int eos_window = 4);
  static constexpr int kTokenA = 0;
  static constexpr int kTokenB = 1;
  static constexpr int kTokenGo = 3;

  std::vector<int> sample_prompt(Stream& rng) const override;
  std::vector<int> sample_target(const std::vector<int>& prompt, Stream& rng) const override;
  std::vector<Completion> enumerate_targets(const std::vector<int>& prompt) const override;
  bool verify(const std::vector<int>& prompt, const std::vector<int>& completion) const override;
};

// First two completion tokens are free digits in [0, m) subject to the
// prompt's checksum (a0 + a1 = c mod m); every later token is
// (prev + prevprev) mod m.
class ModularChainTask : public Task {
 public:
  ModularChainTask(int modulus, int chain_len, int max_len, int eos_window = 4);
  int modulus() const { return modulus_; }

  std::vector<int> sample_prompt(Stream& rng) const override;
  std::vector<int> sample_target(const std::vector<int>& prompt, Stream& rng) const override;
  std::vector<Completion> enumerate_targets(const std::vector<int>& prompt) const override;
  bool verify(const std::vector<int>& prompt, const std::vector<int>& completion) const override;

 private:
  int modulus_;
};

// Prompt lists key->value pairs plus a query key; the completion is the
// queried value repeated `repeat` times.
class KvRetrievalTask : public Task {
 public:
  KvRetrievalTask(int n_keys, int n_values, int n_pairs, int repeat, int max_len,
                  int eos_window = 4);

  std::vector<int> sample_prompt(Stream& rng) const override;
  std::vector<int> sample_target(const std::vector<int>& prompt, Stream& rng) const override;
  std::vector<Completion> enumerate_targets(const std::vector<int>& prompt) const override;
  bool verify(const std::vector<int>& prompt, const std::vector<int>& completion) const override;

 private:
  int value_of(const std::vector<int>& prompt) const;
  int n_keys_, n_values_, n_pairs_, repeat_;
};

// Pads with eos_id up to max_len. The first eos_window padding tokens are
// maskable; the remainder stays permanently unmasked. Original positions are
// all flagged maskable (callers clear prompt flags afterwards).
std::pair<std::vector<int>, std::vector<std::uint8_t>> pad_with_eos(const std::vector<int>& full,
                                                                    int max_len, int eos_window,
                                                                    int eos_id);

std::vector<Instance> generate_dataset(const Task& task, int n, std::uint64_t seed);

std::string instance_to_jsonl(const Instance& inst);
Instance instance_from_jsonl(const std::string& line);
void write_dataset_jsonl(const std::string& path, const std::vector<Instance>& data);
std::vector<Instance> read_dataset_jsonl(const std::string& path);

// Task construction from a name plus parameter map (used by the CLI config).
std::unique_ptr<Task> make_task(const std::string& name, int size_scale = 1);

}  // namespace mdlab
