#include "mdlab/decode.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "mdlab/rng.hpp"

namespace mdlab {
namespace {

constexpr std::uint64_t kDemaskTag = 0x6465'6d61'736bULL;
constexpr std::uint64_t kRemaskTag = 0x7265'6d61'736bULL;

int sample_row(std::span<const double> row, Stream& rng) {
  double u = rng.next_u01();
  double acc = 0.0;
  for (std::size_t v = 0; v < row.size(); ++v) {
    acc += row[v];
    if (u < acc) return static_cast<int>(v);
  }
  return static_cast<int>(row.size()) - 1;
}

}  // namespace

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Confidence: return "confidence";
    case Strategy::Dsc: return "dsc";
    case Strategy::RandomRemask: return "random-remask";
  }
  throw std::logic_error("unknown strategy");
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "confidence") return Strategy::Confidence;
  if (name == "dsc") return Strategy::Dsc;
  if (name == "random-remask") return Strategy::RandomRemask;
  throw std::invalid_argument("unknown strategy: " + name);
}

void DecodeConfig::validate() const {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (tau < 0.0) throw std::invalid_argument("tau must be >= 0");
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  if (buffer < 0) throw std::invalid_argument("buffer must be >= 0");
  if (remask_budget < 0) throw std::invalid_argument("remask budget must be >= 0");
  if (block_len < 0) throw std::invalid_argument("block_len must be >= 0");
  if (strategy != Strategy::Confidence && remask_budget > 0 && k * stride <= remask_budget) {
    throw std::invalid_argument(
        "need k * stride > remask budget so each trigger period makes net progress");
  }
}

namespace {

// The k*stride > K guard alone does not force termination: a trigger may land
// exactly on the step that drains the block, re-mask K positions, and repeat
// whenever the refill takes exactly `stride` steps to drain again (reachable
// for K > k*(stride-1) with a head that keeps flagging).  To keep Alg.-style
// semantics (a trigger may reopen a just-drained block — that final look is
// where most corrections land) while still terminating deterministically,
// each block gets a cumulative remask-token allowance sized to what a run
// obeying the guard's net-progress argument would consume, plus slack.  A
// well-behaved head stays far below it; an adversarial or random head is cut
// off once it is spent.
int remask_allowance(int block_len, const DecodeConfig& cfg) {
  const long net = static_cast<long>(cfg.k) * cfg.stride - cfg.remask_budget;
  const long nominal_steps =
      (static_cast<long>(block_len) * cfg.stride + net - 1) / net + cfg.stride;
  const long triggers = nominal_steps / cfg.stride + 1;
  return static_cast<int>(cfg.remask_budget * triggers);
}

}  // namespace

int termination_bound(int block_len, const DecodeConfig& cfg) {
  if (cfg.strategy == Strategy::Confidence || cfg.remask_budget == 0) {
    return (block_len + cfg.k - 1) / cfg.k;
  }
  // Every step demasks at least one position and the allowance caps the total
  // number of positions ever re-masked, so the total work is bounded by the
  // block length plus the allowance.
  return block_len + remask_allowance(block_len, cfg);
}

DecodeResult run_semi_ar(const std::vector<int>& prompt, int gen_len, const Denoiser& denoiser,
                         const CorrectionHead* head, const DecodeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (gen_len < 1) throw std::invalid_argument("gen_len must be >= 1");
  if (cfg.strategy == Strategy::Dsc && cfg.remask_budget > 0 && head == nullptr) {
    throw std::invalid_argument("dsc strategy with nonzero budget needs a correction head");
  }
  const Vocab& vocab = denoiser.vocab();
  const int prompt_len = static_cast<int>(prompt.size());
  const int total = prompt_len + gen_len;
  const int block_len = cfg.block_len > 0 ? std::min(cfg.block_len, gen_len) : gen_len;

  MaskedSeq x(static_cast<std::size_t>(total), kMask);
  for (int i = 0; i < prompt_len; ++i) x[i] = prompt[i];

  DecodeTrace trace;
  Stream rng(seed);
  std::uint64_t local_forwards = 0;  // shared instrumentation is not
                                     // episode-local under concurrency
  int step = 0;  // global step index across blocks
  bool stopped = false;

  for (int block_start = prompt_len; block_start < total && !stopped; block_start += block_len) {
    const int block_end = std::min(block_start + block_len, total);
    const int lb = block_end - block_start;
    int masked = lb;
    std::deque<int> recent;  // anti-oscillation FIFO of absolute positions
    int allowance = (cfg.strategy != Strategy::Confidence && cfg.remask_budget > 0)
                        ? remask_allowance(lb, cfg)
                        : 0;
    const int bound = cfg.max_iters > 0 ? cfg.max_iters : termination_bound(lb, cfg);
    int block_steps = 0;

    while (masked > 0) {
      if (block_steps >= bound) {
        trace.incomplete = true;
        break;
      }
      ++block_steps;
      ++step;
      ++local_forwards;
      PredictOut pred = denoiser.predict(x);

      // Demask the top-k masked positions in this block by confidence.
      std::vector<int> cand;
      for (int i = block_start; i < block_end; ++i)
        if (x.is_masked(i)) cand.push_back(i);
      std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
        return pred.posterior.confidence(a) > pred.posterior.confidence(b);
      });
      const int take = std::min<int>(cfg.k, static_cast<int>(cand.size()));
      std::vector<int> picked(cand.begin(), cand.begin() + take);
      std::sort(picked.begin(), picked.end());

      TraceEvent ev;
      ev.kind = TraceEvent::Kind::Demask;
      ev.step = step;
      ev.t_before = static_cast<double>(masked) / lb;
      Stream demask_rng = rng.split(hash2(kDemaskTag, static_cast<std::uint64_t>(step)));
      for (int pos : picked) {
        const int tok = cfg.greedy ? pred.posterior.argmax(pos)
                                   : sample_row(pred.posterior.row(pos), demask_rng);
        x[pos] = tok;
        --masked;
        ev.positions.push_back(pos);
        ev.tokens.push_back(tok);
      }
      ev.t_after = static_cast<double>(masked) / lb;
      trace.events.push_back(std::move(ev));

      // Remask trigger: every `stride` steps, score tokens that were already
      // unmasked before this step's demask, using features from the same
      // forward pass (so no extra pass is spent on scoring).
      const bool remasking = cfg.strategy != Strategy::Confidence && cfg.remask_budget > 0 &&
                             allowance > 0;
      if (remasking && step % cfg.stride == 0) {
        std::vector<int> scoreable;
        for (int i = block_start; i < block_end; ++i) {
          const bool was_unmasked =
              !x.is_masked(i) && std::find(picked.begin(), picked.end(), i) == picked.end();
          if (!was_unmasked) continue;
          if (std::find(recent.begin(), recent.end(), i) != recent.end()) continue;
          scoreable.push_back(i);
        }
        std::vector<double> p_err(total, -1.0);
        if (!scoreable.empty()) {
          if (cfg.strategy == Strategy::RandomRemask) {
            Stream remask_rng = rng.split(hash2(kRemaskTag, static_cast<std::uint64_t>(step)));
            for (int pos : scoreable) p_err[pos] = remask_rng.next_u01();
          } else {
            std::vector<std::uint8_t> flags(total, 0);
            for (int pos : scoreable) flags[pos] = 1;
            // Score the pre-demask state: the picked positions were masked
            // when `pred` was computed, so reconstruct that snapshot.
            MaskedSeq snapshot = x;
            for (int pos : picked) snapshot[pos] = kMask;
            CorrectionScores sc = head->score(snapshot, pred.features, flags);
            for (int pos : scoreable)
              if (sc.valid[pos]) p_err[pos] = sc.p_error[pos];
          }
        }
        std::vector<int> gated;
        for (int pos : scoreable)
          if (p_err[pos] >= 0.0 && p_err[pos] > cfg.tau) gated.push_back(pos);
        std::stable_sort(gated.begin(), gated.end(),
                         [&](int a, int b) { return p_err[a] > p_err[b]; });
        if (static_cast<int>(gated.size()) > cfg.remask_budget) gated.resize(cfg.remask_budget);
        if (static_cast<int>(gated.size()) > allowance) gated.resize(allowance);
        std::sort(gated.begin(), gated.end());
        if (!gated.empty()) {
          TraceEvent rv;
          rv.kind = TraceEvent::Kind::Remask;
          rv.step = step;
          rv.t_before = static_cast<double>(masked) / lb;
          for (int pos : gated) {
            x[pos] = kMask;
            ++masked;
            --allowance;
            rv.positions.push_back(pos);
            rv.scores.push_back(p_err[pos]);
            if (cfg.buffer > 0) {
              recent.push_back(pos);
              while (static_cast<int>(recent.size()) > cfg.buffer) recent.pop_front();
            }
          }
          rv.t_after = static_cast<double>(masked) / lb;
          trace.events.push_back(std::move(rv));
        }
      }
    }

    if (trace.incomplete) {
      // Force-finish with argmax so the caller always gets a full sequence.
      ++local_forwards;
      PredictOut pred = denoiser.predict(x);
      for (int i = block_start; i < block_end; ++i)
        if (x.is_masked(i)) x[i] = pred.posterior.argmax(i);
      break;
    }

    // Early stopping: a finished block containing eos ends the sequence; the
    // remaining masked positions are filled with eos without more passes.
    bool saw_eos = false;
    for (int i = block_start; i < block_end; ++i)
      if (x[i] == vocab.eos_id) saw_eos = true;
    if (saw_eos && block_end < total) {
      TraceEvent ev;
      ev.kind = TraceEvent::Kind::EosStop;
      ev.step = step;
      ev.tokens.push_back(vocab.eos_id);
      for (int i = block_end; i < total; ++i) {
        x[i] = vocab.eos_id;
        ev.positions.push_back(i);
      }
      trace.events.push_back(std::move(ev));
      stopped = true;
    }
  }

  trace.forward_passes = local_forwards;
  return DecodeResult{std::move(x), std::move(trace)};
}

MaskedSeq replay_trace(const std::vector<int>& prompt, int gen_len, const DecodeTrace& trace) {
  const int total = static_cast<int>(prompt.size()) + gen_len;
  MaskedSeq x(static_cast<std::size_t>(total), kMask);
  for (std::size_t i = 0; i < prompt.size(); ++i) x[i] = prompt[i];
  for (const TraceEvent& ev : trace.events) {
    switch (ev.kind) {
      case TraceEvent::Kind::Demask: {
        if (ev.positions.size() != ev.tokens.size())
          throw std::runtime_error("malformed demask event");
        for (std::size_t j = 0; j < ev.positions.size(); ++j) {
          const int pos = ev.positions[j];
          if (!x.is_masked(pos)) throw std::runtime_error("demask of unmasked position");
          x[pos] = ev.tokens[j];
        }
        break;
      }
      case TraceEvent::Kind::EosStop: {
        const int fill = ev.tokens.at(0);
        for (int pos : ev.positions) x[pos] = fill;
        break;
      }
      case TraceEvent::Kind::Remask:
        for (int pos : ev.positions) {
          if (x.is_masked(pos)) throw std::runtime_error("remask of masked position");
          x[pos] = kMask;
        }
        break;
    }
  }
  return x;
}

std::string trace_to_jsonl(const DecodeTrace& trace) {
  std::ostringstream out;
  for (const TraceEvent& ev : trace.events) {
    nlohmann::json j;
    switch (ev.kind) {
      case TraceEvent::Kind::Demask: j["kind"] = "demask"; break;
      case TraceEvent::Kind::Remask: j["kind"] = "remask"; break;
      case TraceEvent::Kind::EosStop: j["kind"] = "eos_stop"; break;
    }
    j["step"] = ev.step;
    j["positions"] = ev.positions;
    if (!ev.tokens.empty()) j["tokens"] = ev.tokens;
    if (!ev.scores.empty()) j["scores"] = ev.scores;
    j["t_before"] = ev.t_before;
    j["t_after"] = ev.t_after;
    out << j.dump() << "\n";
  }
  return out.str();
}

}  // namespace mdlab
