#include "mdlab/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace mdlab {

Task::Task(std::string name, Vocab vocab, int prompt_len, int target_len, int max_len,
           int eos_window)
    : name_(std::move(name)),
      vocab_(vocab),
      prompt_len_(prompt_len),
      target_len_(target_len),
      max_len_(max_len),
      eos_window_(eos_window) {
  if (prompt_len_ <= 0 || target_len_ <= 0) throw std::invalid_argument("Task: bad lengths");
  if (prompt_len_ + target_len_ > max_len_) throw std::invalid_argument("Task: max_len too small");
}

std::vector<Completion> Task::enumerate_completions(const std::vector<int>& prompt,
                                                    const MaskedSeq& partial) const {
  if (partial.size() != static_cast<std::size_t>(max_len_))
    throw std::invalid_argument("enumerate_completions: partial length mismatch");

  const int G = gen_len();
  std::vector<Completion> out;
  double total = 0.0;
  for (const Completion& c : enumerate_targets(prompt)) {
    Completion full;
    full.tokens.reserve(G);
    full.tokens = c.tokens;
    full.tokens.resize(G, vocab_.eos_id);
    full.weight = c.weight;

    bool ok = true;
    for (int j = 0; j < G; ++j) {
      const int tok = partial[prompt_len_ + j];
      if (tok != kMask && tok != full.tokens[j]) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    total += full.weight;
    out.push_back(std::move(full));
  }
  for (Completion& c : out) c.weight /= total;
  return out;
}

Instance Task::make_instance(Stream& rng) const {
  Instance inst;
  inst.prompt = sample_prompt(rng);
  inst.target = sample_target(inst.prompt, rng);

  std::vector<int> body = inst.prompt;
  body.insert(body.end(), inst.target.begin(), inst.target.end());
  auto [padded, flags] = pad_with_eos(body, max_len_, eos_window_, vocab_.eos_id);
  for (int i = 0; i < prompt_len_; ++i) flags[i] = 0;  // prompts are never masked
  inst.full = std::move(padded);
  inst.maskable = std::move(flags);
  return inst;
}

bool Task::verify_output(const std::vector<int>& prompt, const MaskedSeq& decoded) const {
  if (decoded.size() != static_cast<std::size_t>(max_len_)) return false;
  std::vector<int> completion;
  for (int j = prompt_len_; j < max_len_; ++j) {
    const int tok = decoded[j];
    if (tok == kMask) return false;
    if (tok == vocab_.eos_id) break;
    completion.push_back(tok);
  }
  return verify(prompt, completion);
}

// ---------------------------------------------------------------- coin-pair

CoinPairTask::CoinPairTask(int run_len, int max_len, int eos_window)
    : Task("coin-pair", Vocab(4, 2), 1, run_len, max_len, eos_window) {}

std::vector<int> CoinPairTask::sample_prompt(Stream&) const { return {kTokenGo}; }

std::vector<int> CoinPairTask::sample_target(const std::vector<int>&, Stream& rng) const {
  const int c = rng.next_u01() < 0.5 ? kTokenA : kTokenB;
  return std::vector<int>(target_len_, c);
}

std::vector<Completion> CoinPairTask::enumerate_targets(const std::vector<int>&) const {
  std::vector<Completion> out(2);
  out[0].tokens.assign(target_len_, kTokenA);
  out[0].weight = 0.5;
  out[1].tokens.assign(target_len_, kTokenB);
  out[1].weight = 0.5;
  return out;
}

bool CoinPairTask::verify(const std::vector<int>&, const std::vector<int>& completion) const {
  if (completion.size() != static_cast<std::size_t>(target_len_)) return false;
  const int c = completion.front();
  if (c != kTokenA && c != kTokenB) return false;
  return std::all_of(completion.begin(), completion.end(), [&](int t) { return t == c; });
}

// ------------------------------------------------------------ modular-chain

ModularChainTask::ModularChainTask(int modulus, int chain_len, int max_len, int eos_window)
    : Task("modular-chain", Vocab(modulus + 2, modulus), 2, chain_len, max_len, eos_window),
      modulus_(modulus) {
  if (modulus < 2) throw std::invalid_argument("ModularChainTask: modulus must be >= 2");
  if (chain_len < 2) throw std::invalid_argument("ModularChainTask: chain_len must be >= 2");
  if (modulus > kEnumerationCap) throw std::invalid_argument("ModularChainTask: support too big");
}

std::vector<int> ModularChainTask::sample_prompt(Stream& rng) const {
  const int go = modulus_ + 1;
  return {go, static_cast<int>(rng.next_below(static_cast<std::uint64_t>(modulus_)))};
}

std::vector<int> ModularChainTask::sample_target(const std::vector<int>& prompt,
                                                 Stream& rng) const {
  const int c = prompt[1];
  const int a0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(modulus_)));
  const int a1 = ((c - a0) % modulus_ + modulus_) % modulus_;
  std::vector<int> t = {a0, a1};
  while (static_cast<int>(t.size()) < target_len_)
    t.push_back((t[t.size() - 1] + t[t.size() - 2]) % modulus_);
  return t;
}

std::vector<Completion> ModularChainTask::enumerate_targets(const std::vector<int>& prompt) const {
  const int c = prompt[1];
  std::vector<Completion> out;
  for (int a0 = 0; a0 < modulus_; ++a0) {
    Completion comp;
    comp.tokens = {a0, ((c - a0) % modulus_ + modulus_) % modulus_};
    while (static_cast<int>(comp.tokens.size()) < target_len_) {
      const auto n = comp.tokens.size();
      comp.tokens.push_back((comp.tokens[n - 1] + comp.tokens[n - 2]) % modulus_);
    }
    comp.weight = 1.0 / modulus_;
    out.push_back(std::move(comp));
  }
  return out;
}

bool ModularChainTask::verify(const std::vector<int>& prompt,
                              const std::vector<int>& completion) const {
  if (completion.size() != static_cast<std::size_t>(target_len_)) return false;
  for (int t : completion)
    if (t < 0 || t >= modulus_) return false;
  if ((completion[0] + completion[1]) % modulus_ != prompt[1]) return false;
  for (std::size_t i = 2; i < completion.size(); ++i)
    if (completion[i] != (completion[i - 1] + completion[i - 2]) % modulus_) return false;
  return true;
}

// ------------------------------------------------------------- kv-retrieval

namespace {
Vocab kv_vocab(int n_keys, int n_values) {
  // ids: keys [0, n_keys), values [n_keys, n_keys + n_values), then eos.
  return Vocab(n_keys + n_values + 1, n_keys + n_values);
}
}  // namespace

KvRetrievalTask::KvRetrievalTask(int n_keys, int n_values, int n_pairs, int repeat, int max_len,
                                 int eos_window)
    : Task("kv-retrieval", kv_vocab(n_keys, n_values), 2 * n_pairs + 1, repeat, max_len,
           eos_window),
      n_keys_(n_keys),
      n_values_(n_values),
      n_pairs_(n_pairs),
      repeat_(repeat) {
  if (n_pairs > n_keys) throw std::invalid_argument("KvRetrievalTask: n_pairs > n_keys");
}

std::vector<int> KvRetrievalTask::sample_prompt(Stream& rng) const {
  // Distinct keys by partial Fisher-Yates over [0, n_keys).
  std::vector<int> keys(n_keys_);
  std::iota(keys.begin(), keys.end(), 0);
  for (int i = 0; i < n_pairs_; ++i) {
    const int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_keys_ - i)));
    std::swap(keys[i], keys[j]);
  }
  std::vector<int> prompt;
  for (int i = 0; i < n_pairs_; ++i) {
    prompt.push_back(keys[i]);
    prompt.push_back(n_keys_ + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_values_))));
  }
  prompt.push_back(keys[rng.next_below(static_cast<std::uint64_t>(n_pairs_))]);
  return prompt;
}

int KvRetrievalTask::value_of(const std::vector<int>& prompt) const {
  const int query = prompt.back();
  for (int i = 0; i < n_pairs_; ++i)
    if (prompt[2 * i] == query) return prompt[2 * i + 1];
  return -1;
}

std::vector<int> KvRetrievalTask::sample_target(const std::vector<int>& prompt, Stream&) const {
  return std::vector<int>(repeat_, value_of(prompt));
}

std::vector<Completion> KvRetrievalTask::enumerate_targets(const std::vector<int>& prompt) const {
  Completion c;
  c.tokens.assign(repeat_, value_of(prompt));
  c.weight = 1.0;
  return {c};
}

bool KvRetrievalTask::verify(const std::vector<int>& prompt,
                             const std::vector<int>& completion) const {
  const int v = value_of(prompt);
  if (v < 0 || completion.size() != static_cast<std::size_t>(repeat_)) return false;
  return std::all_of(completion.begin(), completion.end(), [&](int t) { return t == v; });
}

// ---------------------------------------------------------------- utilities

std::pair<std::vector<int>, std::vector<std::uint8_t>> pad_with_eos(const std::vector<int>& full,
                                                                    int max_len, int eos_window,
                                                                    int eos_id) {
  if (static_cast<int>(full.size()) > max_len)
    throw std::invalid_argument("pad_with_eos: sequence longer than max_len");
  std::vector<int> padded = full;
  std::vector<std::uint8_t> maskable(full.size(), 1);
  int appended = 0;
  while (static_cast<int>(padded.size()) < max_len) {
    padded.push_back(eos_id);
    maskable.push_back(appended < eos_window ? 1 : 0);
    ++appended;
  }
  return {std::move(padded), std::move(maskable)};
}

std::vector<Instance> generate_dataset(const Task& task, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  std::vector<Instance> out;
  out.reserve(n);
  Stream root(seed, 0x64617461ULL);
  for (int i = 0; i < n; ++i) {
    Stream s = root.split(static_cast<std::uint64_t>(i));
    out.push_back(task.make_instance(s));
  }
  return out;
}

std::string instance_to_jsonl(const Instance& inst) {
  nlohmann::json j;
  j["prompt"] = inst.prompt;
  j["target"] = inst.target;
  j["full"] = inst.full;
  std::vector<bool> flags(inst.maskable.begin(), inst.maskable.end());
  j["maskable"] = flags;
  return j.dump();
}

Instance instance_from_jsonl(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  Instance inst;
  inst.prompt = j.at("prompt").get<std::vector<int>>();
  inst.target = j.at("target").get<std::vector<int>>();
  inst.full = j.at("full").get<std::vector<int>>();
  for (bool b : j.at("maskable").get<std::vector<bool>>()) inst.maskable.push_back(b ? 1 : 0);
  return inst;
}

void write_dataset_jsonl(const std::string& path, const std::vector<Instance>& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const Instance& inst : data) out << instance_to_jsonl(inst) << '\n';
}

std::vector<Instance> read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<Instance> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(instance_from_jsonl(line));
  return out;
}

std::unique_ptr<Task> make_task(const std::string& name, int size_scale) {
  const int s = std::max(1, size_scale);
  if (name == "coin-pair") return std::make_unique<CoinPairTask>(12 * s, 21 * s);
  if (name == "modular-chain") return std::make_unique<ModularChainTask>(4, 10 * s, 16 * s + 2);
  if (name == "kv-retrieval") return std::make_unique<KvRetrievalTask>(4, 4, 3, 4 * s, 15 + 4 * s + 4);
  throw std::invalid_argument("unknown task: " + name);
}

}  // namespace mdlab
