#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "mdlab/tasks.hpp"

using namespace mdlab;

TEST_CASE("coin-pair enumerates exactly the two constant runs") {
  CoinPairTask task(5, 10);
  const auto comps = task.enumerate_targets({CoinPairTask::kTokenGo});
  REQUIRE(comps.size() == 2);
  CHECK(comps[0].tokens == std::vector<int>(5, CoinPairTask::kTokenA));
  CHECK(comps[1].tokens == std::vector<int>(5, CoinPairTask::kTokenB));
  CHECK(comps[0].weight == doctest::Approx(0.5));
  CHECK(comps[1].weight == doctest::Approx(0.5));

  CHECK(task.verify({CoinPairTask::kTokenGo}, std::vector<int>(5, CoinPairTask::kTokenA)));
  CHECK_FALSE(task.verify({CoinPairTask::kTokenGo}, {0, 0, 1, 0, 0}));  // mixed run
  CHECK_FALSE(task.verify({CoinPairTask::kTokenGo}, {0, 0, 0, 0}));     // wrong length
}

TEST_CASE("modular-chain recurrence, checksum, and enumeration size") {
  ModularChainTask task(4, 6, 10);
  Stream rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto prompt = task.sample_prompt(rng);
    const auto target = task.sample_target(prompt, rng);
    REQUIRE(target.size() == 6);
    // Independent verification of the recurrence and the checksum.
    CHECK((target[0] + target[1]) % 4 == prompt[1]);
    for (std::size_t j = 2; j < target.size(); ++j)
      CHECK(target[j] == (target[j - 1] + target[j - 2]) % 4);
    CHECK(task.verify(prompt, target));
  }
  const auto comps = task.enumerate_targets({5, 2});
  CHECK(comps.size() == 4);  // one per free first digit
  std::set<std::vector<int>> uniq;
  for (const auto& c : comps) {
    CHECK(c.weight == doctest::Approx(0.25));
    CHECK(task.verify({5, 2}, c.tokens));
    uniq.insert(c.tokens);
  }
  CHECK(uniq.size() == 4);
}

TEST_CASE("kv-retrieval single completion returns the queried value") {
  KvRetrievalTask task(4, 4, 3, 2, 12);
  Stream rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto prompt = task.sample_prompt(rng);
    // Keys listed in the prompt are distinct.
    std::set<int> keys{prompt[0], prompt[2], prompt[4]};
    CHECK(keys.size() == 3);
    CHECK(keys.count(prompt.back()) == 1);  // query is one of them
    const auto comps = task.enumerate_targets(prompt);
    REQUIRE(comps.size() == 1);
    CHECK(comps[0].weight == doctest::Approx(1.0));
    CHECK(task.verify(prompt, comps[0].tokens));
    // The value is the one paired with the queried key.
    int expected = -1;
    for (int p = 0; p < 3; ++p)
      if (prompt[2 * p] == prompt.back()) expected = prompt[2 * p + 1];
    CHECK(comps[0].tokens == std::vector<int>(2, expected));
  }
}

TEST_CASE("pad_with_eos flags exactly the first eos_window padding tokens") {
  const auto [padded, flags] = pad_with_eos({7, 8, 9}, 9, 2, 5);
  CHECK(padded == std::vector<int>{7, 8, 9, 5, 5, 5, 5, 5, 5});
  CHECK(flags == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0, 0});
  CHECK_THROWS(pad_with_eos({1, 2, 3}, 2, 1, 0));
}

TEST_CASE("make_instance layout and maskability") {
  CoinPairTask task(4, 12, 3);
  Stream rng(21);
  const Instance inst = task.make_instance(rng);
  REQUIRE(inst.full.size() == 12);
  CHECK(inst.full[0] == CoinPairTask::kTokenGo);
  CHECK(inst.maskable[0] == 0);  // prompt frozen
  for (int i = 1; i <= 4; ++i) {
    CHECK(inst.full[i] == inst.target[i - 1]);
    CHECK(inst.maskable[i] == 1);
  }
  for (int i = 5; i < 8; ++i) {  // eos window
    CHECK(inst.full[i] == task.vocab().eos_id);
    CHECK(inst.maskable[i] == 1);
  }
  for (int i = 8; i < 12; ++i) {  // frozen padding
    CHECK(inst.full[i] == task.vocab().eos_id);
    CHECK(inst.maskable[i] == 0);
  }
}

TEST_CASE("enumerate_completions conditions on unmasked evidence") {
  CoinPairTask task(4, 8);
  const std::vector<int> prompt{CoinPairTask::kTokenGo};

  MaskedSeq all_mask(8, kMask);
  for (std::size_t i = 0; i < prompt.size(); ++i) all_mask[i] = prompt[i];
  auto comps = task.enumerate_completions(prompt, all_mask);
  CHECK(comps.size() == 2);

  MaskedSeq one_a = all_mask;
  one_a[2] = CoinPairTask::kTokenA;  // second generated position
  comps = task.enumerate_completions(prompt, one_a);
  REQUIRE(comps.size() == 1);
  CHECK(comps[0].weight == doctest::Approx(1.0));
  CHECK(comps[0].tokens[0] == CoinPairTask::kTokenA);

  MaskedSeq contradiction = one_a;
  contradiction[3] = CoinPairTask::kTokenB;
  CHECK(task.enumerate_completions(prompt, contradiction).empty());
}

TEST_CASE("verify_output strips at the first eos and rejects masks") {
  CoinPairTask task(3, 8);
  const std::vector<int> prompt{CoinPairTask::kTokenGo};
  const int eos = task.vocab().eos_id;

  MaskedSeq good(std::vector<int>{CoinPairTask::kTokenGo, 1, 1, 1, eos, eos, eos, eos});
  CHECK(task.verify_output(prompt, good));

  MaskedSeq masked = good;
  masked[2] = kMask;  // before the first eos, so it is not stripped
  CHECK_FALSE(task.verify_output(prompt, masked));

  MaskedSeq truncated(std::vector<int>{CoinPairTask::kTokenGo, 1, 1, eos, eos, eos, eos, eos});
  CHECK_FALSE(task.verify_output(prompt, truncated));  // run too short after eos strip

  // Garbage after the first eos is ignored.
  MaskedSeq junk_tail(std::vector<int>{CoinPairTask::kTokenGo, 0, 0, 0, eos, 1, 0, 1});
  CHECK(task.verify_output(prompt, junk_tail));
}

TEST_CASE("dataset generation is deterministic and round-trips through jsonl") {
  ModularChainTask task(4, 5, 9);
  const auto a = generate_dataset(task, 20, 99);
  const auto b = generate_dataset(task, 20, 99);
  REQUIRE(a.size() == 20);
  for (int i = 0; i < 20; ++i) {
    CHECK(a[i].full == b[i].full);
    CHECK(a[i].maskable == b[i].maskable);
  }
  const auto c = generate_dataset(task, 20, 100);
  bool any_diff = false;
  for (int i = 0; i < 20; ++i) any_diff |= (a[i].full != c[i].full);
  CHECK(any_diff);

  const Instance back = instance_from_jsonl(instance_to_jsonl(a[0]));
  CHECK(back.prompt == a[0].prompt);
  CHECK(back.target == a[0].target);
  CHECK(back.full == a[0].full);
  CHECK(back.maskable == a[0].maskable);
}

TEST_CASE("make_task factory produces the named tasks") {
  CHECK(make_task("coin-pair")->name() == "coin-pair");
  CHECK(make_task("modular-chain")->name() == "modular-chain");
  CHECK(make_task("kv-retrieval")->name() == "kv-retrieval");
  CHECK_THROWS(make_task("unknown"));
}
