#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdlab/artifacts.hpp"
#include "mdlab/bench.hpp"
#include "mdlab/decode.hpp"
#include "mdlab/head.hpp"
#include "mdlab/rng.hpp"
#include "mdlab/tasks.hpp"
#include "mdlab/train.hpp"
#include "mdlab/transformer.hpp"

// Command-line front end: dataset generation, denoiser/head training (plain,
// decoupled and joint), decoding with trace dumps, benchmark sweeps, Pareto
// reports and the ablation suite. One JSON config with fixed sections; every
// unknown key is an error.

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mdlab;

namespace {

void expect_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw std::runtime_error("config section '" + where + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::runtime_error("unknown config key '" + where + "." + key + "'");
}

struct Ctx {
  json cfg;
  std::uint64_t seed = 1;
  fs::path out = ".";
  int threads = 1;

  json section(const std::string& name) const {
    return cfg.contains(name) ? cfg.at(name) : json::object();
  }
  fs::path path(const std::string& file) const { return out / file; }
};

std::unique_ptr<Task> task_from(const Ctx& ctx) {
  const json t = ctx.section("task");
  expect_keys(t, "task", {"name", "size_scale"});
  return make_task(t.value("name", "coin-pair"), t.value("size_scale", 1));
}

struct DenoiserSection {
  std::string kind = "tiny";
  TransformerConfig arch;
  DenoiserTrainConfig train;
  int train_instances = 512;
  std::string checkpoint = "denoiser.ckpt";
};

DenoiserSection denoiser_from(const Ctx& ctx, const Task& task) {
  const json d = ctx.section("denoiser");
  expect_keys(d, "denoiser",
              {"kind", "d_model", "n_heads", "n_layers", "d_ff", "steps", "batch", "lr", "t_min",
               "train_instances", "checkpoint"});
  DenoiserSection s;
  s.kind = d.value("kind", "tiny");
  if (s.kind != "tiny" && s.kind != "oracle")
    throw std::runtime_error("denoiser.kind must be 'tiny' or 'oracle'");
  s.arch.max_len = task.max_len();
  s.arch.d_model = d.value("d_model", 32);
  s.arch.n_heads = d.value("n_heads", 2);
  s.arch.n_layers = d.value("n_layers", 2);
  s.arch.d_ff = d.value("d_ff", 128);
  s.train.steps = d.value("steps", 800);
  s.train.batch = d.value("batch", 16);
  s.train.optim.lr = d.value("lr", 3e-3);
  s.train.t_min = d.value("t_min", 1e-3);
  s.train_instances = d.value("train_instances", 512);
  s.checkpoint = d.value("checkpoint", std::string("denoiser.ckpt"));
  return s;
}

ArtifactPolicy artifacts_from(const Ctx& ctx, int* per_instance, std::string* out_path) {
  const json a = ctx.section("artifacts");
  expect_keys(a, "artifacts", {"policy", "dt", "selection", "per_instance", "path"});
  const std::string policy = a.value("policy", "lbc");
  const double dt = a.value("dt", 0.5);
  ArtifactPolicy p = ArtifactPolicy::lbc(dt);
  if (policy == "uniform") {
    p = ArtifactPolicy::uniform(dt);
  } else if (policy == "single-step") {
    const std::string sel = a.value("selection", "confidence");
    p = ArtifactPolicy::single_step(
        dt, sel == "random" ? ArtifactSelection::Random : ArtifactSelection::Confidence);
  } else if (policy != "lbc") {
    throw std::runtime_error("artifacts.policy must be lbc, uniform or single-step");
  }
  if (per_instance) *per_instance = a.value("per_instance", 4);
  if (out_path) *out_path = a.value("path", std::string("artifacts.jsonl"));
  return p;
}

struct HeadSection {
  int hidden = 16;
  HeadTrainConfig train;
  double gamma = 0.1;
  std::string checkpoint = "head.ckpt";
};

HeadSection head_from(const Ctx& ctx) {
  const json h = ctx.section("head");
  expect_keys(h, "head",
              {"hidden", "steps", "batch_rows", "lr", "holdout_fraction", "positive_weight",
               "gamma", "checkpoint"});
  HeadSection s;
  s.hidden = h.value("hidden", 16);
  s.train.steps = h.value("steps", 1200);
  s.train.batch_rows = h.value("batch_rows", 256);
  s.train.optim.lr = h.value("lr", 5e-3);
  s.train.holdout_fraction = h.value("holdout_fraction", 0.1);
  s.train.positive_weight = h.value("positive_weight", 1.0);
  s.gamma = h.value("gamma", 0.1);
  s.checkpoint = h.value("checkpoint", std::string("head.ckpt"));
  return s;
}

DecodeConfig decode_from(const Ctx& ctx) {
  const json d = ctx.section("decode");
  expect_keys(d, "decode",
              {"strategy", "k", "remask_budget", "tau", "stride", "buffer", "block_len",
               "max_iters", "greedy"});
  DecodeConfig c;
  c.strategy = strategy_from_name(d.value("strategy", std::string("confidence")));
  c.k = d.value("k", 1);
  c.remask_budget = d.value("remask_budget", 2);
  c.tau = d.value("tau", 0.75);
  c.stride = d.value("stride", 4);
  c.buffer = d.value("buffer", 4);
  c.block_len = d.value("block_len", 0);
  c.max_iters = d.value("max_iters", 0);
  c.greedy = d.value("greedy", false);
  c.validate();
  return c;
}

struct BenchSection {
  SweepSpec sweep;
  int n_decode = 32;
  int ablate_seeds = 5;
  int frozen_steps = 0;
  std::vector<double> gammas{0.01, 0.1, 0.5};
};

BenchSection bench_from(const Ctx& ctx) {
  const json b = ctx.section("bench");
  expect_keys(b, "bench",
              {"strategies", "ks", "seeds", "n_eval", "data_seed", "measure_wall", "n_decode",
               "ablate_seeds", "frozen_steps", "gammas"});
  BenchSection s;
  if (b.contains("strategies")) {
    s.sweep.strategies.clear();
    for (const auto& name : b.at("strategies"))
      s.sweep.strategies.push_back(strategy_from_name(name.get<std::string>()));
  }
  if (b.contains("ks")) s.sweep.ks = b.at("ks").get<std::vector<int>>();
  if (b.contains("seeds")) s.sweep.seeds = b.at("seeds").get<std::vector<std::uint64_t>>();
  s.sweep.n_eval = b.value("n_eval", 200);
  s.sweep.data_seed = b.value("data_seed", 7);
  s.sweep.measure_wall = b.value("measure_wall", false);
  s.n_decode = b.value("n_decode", 32);
  s.ablate_seeds = b.value("ablate_seeds", 5);
  s.frozen_steps = b.value("frozen_steps", 0);
  if (b.contains("gammas")) s.gammas = b.at("gammas").get<std::vector<double>>();
  return s;
}

TinyNeuralDenoiser load_or_fail(const Ctx& ctx, const DenoiserSection& d) {
  const fs::path p = ctx.path(d.checkpoint);
  if (!fs::exists(p))
    throw std::runtime_error("denoiser checkpoint not found: " + p.string() +
                             " (run train-denoiser first)");
  return TinyNeuralDenoiser::load(p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

int cmd_gen_data(const Ctx& ctx) {
  const auto task = task_from(ctx);
  const auto d = denoiser_from(ctx, *task);
  const auto b = bench_from(ctx);
  const auto train = generate_dataset(*task, d.train_instances, hash2(ctx.seed, 0x7472ULL));
  const auto eval = generate_dataset(*task, b.sweep.n_eval, hash2(ctx.seed, 0x6576ULL));
  write_dataset_jsonl(ctx.path("train.jsonl").string(), train);
  write_dataset_jsonl(ctx.path("eval.jsonl").string(), eval);
  std::cout << "wrote " << train.size() << " train and " << eval.size() << " eval instances for "
            << task->name() << "\n";
  return 0;
}

int cmd_train_denoiser(const Ctx& ctx) {
  const auto task = task_from(ctx);
  const auto d = denoiser_from(ctx, *task);
  std::vector<Instance> data;
  if (fs::exists(ctx.path("train.jsonl")))
    data = read_dataset_jsonl(ctx.path("train.jsonl").string());
  else
    data = generate_dataset(*task, d.train_instances, hash2(ctx.seed, 0x7472ULL));
  TinyNeuralDenoiser model(task->vocab(), d.arch, hash2(ctx.seed, 0x696eULL));
  const TrainReport rep = train_denoiser(model, data, d.train, hash2(ctx.seed, 0x7464ULL));
  model.save(ctx.path(d.checkpoint).string());
  json out{{"steps", rep.demask_curve.size()},
           {"final_loss", rep.demask_curve.empty() ? 0.0 : rep.demask_curve.back()},
           {"clamp_count", rep.clamp_count},
           {"loss_curve", rep.demask_curve}};
  write_text(ctx.path("train-denoiser.json"), out.dump(2) + "\n");
  std::cout << "trained denoiser: final demask loss "
            << (rep.demask_curve.empty() ? 0.0 : rep.demask_curve.back()) << "\n";
  return 0;
}

int cmd_gen_artifacts(const Ctx& ctx) {
  const auto task = task_from(ctx);
  const auto d = denoiser_from(ctx, *task);
  int per_instance = 4;
  std::string path;
  const ArtifactPolicy policy = artifacts_from(ctx, &per_instance, &path);
  std::vector<Instance> data;
  if (fs::exists(ctx.path("train.jsonl")))
    data = read_dataset_jsonl(ctx.path("train.jsonl").string());
  else
    data = generate_dataset(*task, d.train_instances, hash2(ctx.seed, 0x7472ULL));

  std::vector<LabeledSample> samples;
  if (d.kind == "oracle") {
    OracleDenoiser oracle(*task);
    samples = make_artifact_dataset(data, oracle, policy, per_instance, hash2(ctx.seed, 0x6172ULL));
  } else {
    TinyNeuralDenoiser model = load_or_fail(ctx, d);
    model.freeze();
    samples = make_artifact_dataset(data, model, policy, per_instance, hash2(ctx.seed, 0x6172ULL));
  }
  write_samples_jsonl(ctx.path(path).string(), samples);
  std::cout << "wrote " << samples.size() << " " << policy.tag() << " samples\n";
  return 0;
}

int cmd_train_head(const Ctx& ctx) {
  const auto task = task_from(ctx);
  const auto d = denoiser_from(ctx, *task);
  const auto h = head_from(ctx);
  std::string apath;
  artifacts_from(ctx, nullptr, &apath);
  const auto samples = read_samples_jsonl(ctx.path(apath).string());

  HeadTrainReport rep;
  if (d.kind == "oracle") {
    OracleDenoiser oracle(*task);
    LearnedHead head(oracle.feature_dim(), h.hidden, hash2(ctx.seed, 0x6864ULL));
    rep = train_head_decoupled(oracle, samples, head, h.train, hash2(ctx.seed, 0x7468ULL));
    head.save(ctx.path(h.checkpoint).string());
  } else {
    TinyNeuralDenoiser model = load_or_fail(ctx, d);
    model.freeze();
    LearnedHead head(model.feature_dim(), h.hidden, hash2(ctx.seed, 0x6864ULL));
    rep = train_head_decoupled(model, samples, head, h.train, hash2(ctx.seed, 0x7468ULL));
    head.save(ctx.path(h.checkpoint).string());
  }
  json out{{"holdout_auc", rep.holdout_auc},
           {"train_rows", rep.train_rows},
           {"holdout_rows", rep.holdout_rows},
           {"loss_curve", rep.loss_curve}};
  write_text(ctx.path("train-head.json"), out.dump(2) + "\n");
  std::cout << "trained head: held-out AUC " << rep.holdout_auc << "\n";
  return 0;
}

int cmd_train_joint(const Ctx& ctx) {
  const auto task = task_from(ctx);
  const auto d = denoiser_from(ctx, *task);
  const auto h = head_from(ctx);
  const ArtifactPolicy policy = artifacts_from(ctx, nullptr, nullptr);
  std::vector<Instance> data;
  if (fs::exists(ctx.path("train.jsonl")))
    data = read_dataset_jsonl(ctx.path("train.jsonl").string());
  else
    data = generate_dataset(*task, d.train_instances, hash2(ctx.seed, 0x7472ULL));

  TinyNeuralDenoiser model(task->vocab(), d.arch, hash2(ctx.seed, 0x696eULL));
  LearnedHead head(model.feature_dim(), h.hidden, hash2(ctx.seed, 0x6864ULL));
  JointTrainConfig jc;
  jc.gamma = h.gamma;
  jc.base = d.train;
  jc.artifact = policy;
  jc.positive_weight = h.train.positive_weight;
  const TrainReport rep = train_joint_baseline(model, head, data, jc, hash2(ctx.seed, 0x7464ULL));
  model.save(ctx.path("denoiser-joint.ckpt").string());
  head.save(ctx.path("head-joint.ckpt").string());
  json out{{"gamma", jc.gamma},
           {"final_demask_loss", rep.demask_curve.empty() ? 0.0 : rep.demask_curve.back()},
           {"final_err_loss", rep.err_curve.empty() ? 0.0 : rep.err_curve.back()},
           {"demask_curve", rep.demask_curve},
           {"err_curve", rep.err_curve}};
  write_text(ctx.path("train-joint.json"), out.dump(2) + "\n");
  std::cout << "joint training done: final demask loss "
            << (rep.demask_curve.empty() ? 0.0 : rep.demask_curve.back()) << "\n";
  return 0;
}

int cmd_decode(const Ctx& ctx) {
  const auto task = task_from(ctx);
  const auto d = denoiser_from(ctx, *task);
  const auto h = head_from(ctx);
  const DecodeConfig dc = decode_from(ctx);
  const auto b = bench_from(ctx);

  std::unique_ptr<Denoiser> denoiser;
  if (d.kind == "oracle")
    denoiser = std::make_unique<OracleDenoiser>(*task);
  else {
    auto m = std::make_unique<TinyNeuralDenoiser>(load_or_fail(ctx, d));
    m->freeze();
    denoiser = std::move(m);
  }
  std::unique_ptr<CorrectionHead> head;
  if (dc.strategy == Strategy::Dsc && dc.remask_budget > 0) {
    if (d.kind == "oracle" && !fs::exists(ctx.path(h.checkpoint)))
      head = std::make_unique<BayesHead>(*task);
    else
      head = std::make_unique<LearnedHead>(LearnedHead::load(ctx.path(h.checkpoint).string()));
  }

  const auto eval = generate_dataset(*task, b.n_decode, hash2(ctx.seed, 0x6576ULL));
  fs::create_directories(ctx.path("traces"));
  int correct = 0;
  double iters = 0.0;
  std::ostringstream decoded;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const DecodeResult res = run_semi_ar(eval[i].prompt, task->gen_len(), *denoiser, head.get(),
                                         dc, hash3(ctx.seed, 0xdecULL, i));
    correct += task->verify_output(eval[i].prompt, res.x) ? 1 : 0;
    iters += static_cast<double>(res.trace.forward_passes);
    write_text(ctx.path("traces") / ("trace-" + std::to_string(i) + ".jsonl"),
               trace_to_jsonl(res.trace));
    json row{{"prompt", eval[i].prompt},
             {"output", res.x.tokens},
             {"ok", task->verify_output(eval[i].prompt, res.x)},
             {"forward_passes", res.trace.forward_passes}};
    decoded << row.dump() << "\n";
  }
  write_text(ctx.path("decoded.jsonl"), decoded.str());
  std::cout << "decoded " << eval.size() << " instances: accuracy "
            << static_cast<double>(correct) / eval.size() << ", iter_avg " << iters / eval.size()
            << "\n";
  return 0;
}

int cmd_bench(const Ctx& ctx) {
  const auto task = task_from(ctx);
  const auto d = denoiser_from(ctx, *task);
  const auto h = head_from(ctx);
  auto b = bench_from(ctx);
  b.sweep.decode = decode_from(ctx);
  b.sweep.threads = ctx.threads;

  std::unique_ptr<Denoiser> denoiser;
  if (d.kind == "oracle")
    denoiser = std::make_unique<OracleDenoiser>(*task);
  else {
    auto m = std::make_unique<TinyNeuralDenoiser>(load_or_fail(ctx, d));
    m->freeze();
    denoiser = std::move(m);
  }
  std::unique_ptr<CorrectionHead> head;
  bool needs_head = false;
  for (Strategy s : b.sweep.strategies) needs_head |= (s == Strategy::Dsc);
  if (needs_head && b.sweep.decode.remask_budget > 0) {
    if (d.kind == "oracle" && !fs::exists(ctx.path(h.checkpoint)))
      head = std::make_unique<BayesHead>(*task);
    else
      head = std::make_unique<LearnedHead>(LearnedHead::load(ctx.path(h.checkpoint).string()));
  }

  const auto rows = run_experiment(*task, *denoiser, head.get(), b.sweep);
  write_results_csv(ctx.path("results.csv").string(), rows);
  std::cout << rows_to_csv(rows);
  return 0;
}

int cmd_report(const Ctx& ctx) {
  const auto rows = read_results_csv(ctx.path("results.csv").string());
  const json rep = pareto_report(rows);
  write_text(ctx.path("pareto.json"), rep.dump(2) + "\n");
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const Ctx& ctx) {
  const json t = ctx.section("task");
  expect_keys(t, "task", {"name", "size_scale"});
  const auto d_task = task_from(ctx);
  const auto d = denoiser_from(ctx, *d_task);
  const auto h = head_from(ctx);
  const auto b = bench_from(ctx);
  AblationSuiteConfig ac;
  ac.task = t.value("name", "modular-chain");
  ac.size_scale = t.value("size_scale", 1);
  ac.gammas = b.gammas;
  ac.seeds = b.ablate_seeds;
  ac.frozen_steps = b.frozen_steps;
  ac.base_seed = ctx.seed;
  ac.train_instances = d.train_instances;
  ac.n_eval = b.sweep.n_eval;
  ac.denoiser_train = d.train;
  ac.head_train = h.train;
  ac.decode = decode_from(ctx);
  ac.ks = b.sweep.ks;
  ac.threads = ctx.threads;
  const json rep = reproduce_ablations(ac);
  write_text(ctx.path("ablation.json"), rep.dump(2) + "\n");
  std::cout << "ablation suite " << (rep["pass"].get<bool>() ? "PASS" : "FAIL") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked-diffusion self-correction laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  Ctx ctx;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", ctx.seed, "root seed");
  app.add_option("--out", ctx.out, "output directory");
  app.add_option("--threads", ctx.threads, "worker threads for evaluation");

  std::map<std::string, int (*)(const Ctx&)> commands{
      {"gen-data", cmd_gen_data},       {"train-denoiser", cmd_train_denoiser},
      {"gen-artifacts", cmd_gen_artifacts}, {"train-head", cmd_train_head},
      {"train-joint", cmd_train_joint}, {"decode", cmd_decode},
      {"bench", cmd_bench},             {"report", cmd_report},
      {"ablate", cmd_ablate}};
  for (const auto& [name, _] : commands) app.add_subcommand(name)->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot read config " + config_path);
      ctx.cfg = json::parse(in);
      expect_keys(ctx.cfg, "config", {"task", "denoiser", "artifacts", "head", "decode", "bench"});
    } else {
      ctx.cfg = json::object();
    }
    std::filesystem::create_directories(ctx.out);
    for (const auto& [name, fn] : commands)
      if (app.got_subcommand(name)) return fn(ctx);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
