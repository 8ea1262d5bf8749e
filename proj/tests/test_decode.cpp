#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <vector>

#include "mdlab/decode.hpp"
#include "mdlab/denoiser.hpp"
#include "mdlab/head.hpp"
#include "mdlab/tasks.hpp"

using namespace mdlab;

namespace {

int count_remasks(const DecodeTrace& trace) {
  int n = 0;
  for (const TraceEvent& ev : trace.events) n += ev.kind == TraceEvent::Kind::Remask;
  return n;
}

// Audits t_before/t_after on every event of a single-block run against a
// recomputed masked count.
void check_timeline(const DecodeTrace& trace, int lb) {
  int masked = lb;
  for (const TraceEvent& ev : trace.events) {
    if (ev.kind == TraceEvent::Kind::EosStop) continue;
    CHECK(std::lround(ev.t_before * lb) == masked);
    if (ev.kind == TraceEvent::Kind::Demask)
      masked -= static_cast<int>(ev.positions.size());
    else
      masked += static_cast<int>(ev.positions.size());
    CHECK(std::lround(ev.t_after * lb) == masked);
  }
}

}  // namespace

TEST_CASE("config validation enforces the termination guard") {
  DecodeConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.k = 0;
  CHECK_THROWS(cfg.validate());
  cfg.k = 1;
  cfg.stride = 0;
  CHECK_THROWS(cfg.validate());
  cfg.stride = 2;
  cfg.buffer = -1;
  CHECK_THROWS(cfg.validate());
  cfg.buffer = 0;
  cfg.strategy = Strategy::Dsc;
  cfg.remask_budget = 2;  // k * stride = 2 is not > 2
  CHECK_THROWS(cfg.validate());
  cfg.remask_budget = 1;
  CHECK_NOTHROW(cfg.validate());
  // Confidence never remasks, so the guard does not apply.
  cfg.strategy = Strategy::Confidence;
  cfg.remask_budget = 100;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("confidence decoding with an oracle solves a deterministic task exactly") {
  KvRetrievalTask task(4, 4, 3, 3, 16);
  OracleDenoiser den(task);
  Stream rng(3);
  const Instance inst = task.make_instance(rng);
  const int gen = static_cast<int>(inst.full.size() - inst.prompt.size());

  for (int k : {1, 2, 5}) {
    DecodeConfig cfg;
    cfg.k = k;
    cfg.greedy = true;
    const DecodeResult res = run_semi_ar(inst.prompt, gen, den, nullptr, cfg, 7);
    CHECK_FALSE(res.trace.incomplete);
    CHECK(res.x.fully_unmasked());
    CHECK(task.verify_output(inst.prompt, res.x));
    // One forward pass per step, ceil(gen / k) steps, no early stop possible
    // with a single block.
    CHECK(res.trace.forward_passes == static_cast<std::uint64_t>((gen + k - 1) / k));
    check_timeline(res.trace, gen);
  }

  // k >= region: everything demasks in one pass.
  DecodeConfig cfg;
  cfg.k = gen;
  cfg.greedy = true;
  const DecodeResult res = run_semi_ar(inst.prompt, gen, den, nullptr, cfg, 7);
  CHECK(res.trace.forward_passes == 1);
  CHECK(res.trace.events.size() == 1);
  CHECK(task.verify_output(inst.prompt, res.x));
}

TEST_CASE("a zero remask budget reduces both remasking strategies to the baseline") {
  CoinPairTask task(6, 14);
  OracleDenoiser den(task);
  Stream rng(5);
  const Instance inst = task.make_instance(rng);
  const int gen = static_cast<int>(inst.full.size() - inst.prompt.size());
  BayesHead head(task);

  DecodeConfig base;
  base.k = 1;
  const DecodeResult ref = run_semi_ar(inst.prompt, gen, den, nullptr, base, 11);

  for (Strategy s : {Strategy::Dsc, Strategy::RandomRemask}) {
    DecodeConfig cfg = base;
    cfg.strategy = s;
    cfg.remask_budget = 0;
    const DecodeResult res = run_semi_ar(inst.prompt, gen, den, &head, cfg, 11);
    CHECK(res.x == ref.x);
    CHECK(res.trace.forward_passes == ref.trace.forward_passes);
    CHECK(trace_to_jsonl(res.trace) == trace_to_jsonl(ref.trace));
  }
}

TEST_CASE("a scripted head oscillates without a buffer and settles with one") {
  KvRetrievalTask task(4, 4, 2, 4, 14);
  OracleDenoiser den(task);
  Stream rng(9);
  const Instance inst = task.make_instance(rng);
  const int prompt_len = static_cast<int>(inst.prompt.size());
  const int gen = static_cast<int>(inst.full.size()) - prompt_len;

  // Flag the first generated position with certainty-of-error.
  ScriptedHead head({{prompt_len, 0.9}}, 0.0);
  DecodeConfig cfg;
  cfg.strategy = Strategy::Dsc;
  cfg.k = 1;
  cfg.stride = 2;
  cfg.remask_budget = 1;
  cfg.tau = 0.5;
  cfg.greedy = true;

  cfg.buffer = 0;
  const DecodeResult osc = run_semi_ar(inst.prompt, gen, den, &head, cfg, 1);
  CHECK(count_remasks(osc.trace) >= 2);
  for (const TraceEvent& ev : osc.trace.events)
    if (ev.kind == TraceEvent::Kind::Remask) {
      CHECK(ev.positions == std::vector<int>{prompt_len});
      CHECK(ev.scores == std::vector<double>{0.9});
    }
  CHECK_FALSE(osc.trace.incomplete);
  CHECK(task.verify_output(inst.prompt, osc.x));
  check_timeline(osc.trace, gen);

  // With capacity 1 the position enters the FIFO after the first remask and
  // is never scored again.
  cfg.buffer = 1;
  const DecodeResult settled = run_semi_ar(inst.prompt, gen, den, &head, cfg, 1);
  CHECK(count_remasks(settled.trace) == 1);
  CHECK(settled.trace.forward_passes < osc.trace.forward_passes);
}

TEST_CASE("every configuration terminates within the derived bound") {
  ModularChainTask task(4, 8, 14);
  OracleDenoiser den(task);
  Stream rng(13);
  const Instance inst = task.make_instance(rng);
  const int gen = static_cast<int>(inst.full.size() - inst.prompt.size());
  BayesHead head(task);

  for (Strategy s : {Strategy::Confidence, Strategy::Dsc, Strategy::RandomRemask}) {
    for (int k : {1, 2}) {
      for (int stride : {2, 4}) {
        DecodeConfig cfg;
        cfg.strategy = s;
        cfg.k = k;
        cfg.stride = stride;
        cfg.remask_budget = std::min(2, k * stride - 1);
        cfg.tau = 0.3;
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
          const DecodeResult res = run_semi_ar(inst.prompt, gen, den, &head, cfg, seed);
          CHECK_FALSE(res.trace.incomplete);
          CHECK(res.x.fully_unmasked());
          int steps = 0;
          for (const TraceEvent& ev : res.trace.events)
            steps = std::max(steps, ev.step);
          CHECK(steps <= termination_bound(gen, cfg));
          check_timeline(res.trace, gen);
          // Replaying the trace reproduces the decoded sequence exactly.
          CHECK(replay_trace(inst.prompt, gen, res.trace) == res.x);
        }
      }
    }
  }
}

TEST_CASE("decoding is pure in the seed and block_len = region matches unblocked") {
  CoinPairTask task(6, 14);
  OracleDenoiser den(task);
  Stream rng(17);
  const Instance inst = task.make_instance(rng);
  const int gen = static_cast<int>(inst.full.size() - inst.prompt.size());
  BayesHead head(task);

  DecodeConfig cfg;
  cfg.strategy = Strategy::RandomRemask;
  cfg.k = 2;
  cfg.stride = 2;
  cfg.remask_budget = 1;
  cfg.tau = 0.6;
  const DecodeResult a = run_semi_ar(inst.prompt, gen, den, &head, cfg, 21);
  const DecodeResult b = run_semi_ar(inst.prompt, gen, den, &head, cfg, 21);
  CHECK(a.x == b.x);
  CHECK(trace_to_jsonl(a.trace) == trace_to_jsonl(b.trace));

  DecodeConfig blocked = cfg;
  blocked.block_len = gen;
  const DecodeResult c = run_semi_ar(inst.prompt, gen, den, &head, blocked, 21);
  CHECK(c.x == a.x);
  CHECK(trace_to_jsonl(c.trace) == trace_to_jsonl(a.trace));
}

TEST_CASE("eos early stopping skips trailing blocks and saves forward passes") {
  // Short completion (2 run tokens + eos) inside a long padded region.
  CoinPairTask task(2, 24);
  OracleDenoiser den(task);
  Stream rng(23);
  const Instance inst = task.make_instance(rng);
  const int gen = static_cast<int>(inst.full.size() - inst.prompt.size());

  DecodeConfig full;
  full.k = 1;
  full.greedy = true;
  const DecodeResult whole = run_semi_ar(inst.prompt, gen, den, nullptr, full, 3);
  CHECK(whole.trace.forward_passes == static_cast<std::uint64_t>(gen));

  DecodeConfig blocked = full;
  blocked.block_len = 3;
  const DecodeResult res = run_semi_ar(inst.prompt, gen, den, nullptr, blocked, 3);
  CHECK(task.verify_output(inst.prompt, res.x));
  CHECK(res.trace.forward_passes * 3 <= whole.trace.forward_passes);
  const TraceEvent& last = res.trace.events.back();
  CHECK(last.kind == TraceEvent::Kind::EosStop);
  CHECK(last.tokens == std::vector<int>{task.vocab().eos_id});
  for (int pos : last.positions) CHECK(res.x[pos] == task.vocab().eos_id);
  CHECK(replay_trace(inst.prompt, gen, res.trace) == res.x);
}

TEST_CASE("an unreachable iteration cap flags the run incomplete but still fills") {
  KvRetrievalTask task(4, 4, 3, 3, 16);
  OracleDenoiser den(task);
  Stream rng(29);
  const Instance inst = task.make_instance(rng);
  const int gen = static_cast<int>(inst.full.size() - inst.prompt.size());

  DecodeConfig cfg;
  cfg.k = 1;
  cfg.greedy = true;
  cfg.max_iters = 2;  // far below the gen steps needed
  const DecodeResult res = run_semi_ar(inst.prompt, gen, den, nullptr, cfg, 5);
  CHECK(res.trace.incomplete);
  CHECK(res.x.fully_unmasked());
  CHECK(res.trace.forward_passes == 3);  // 2 capped steps + 1 force-finish pass
}
