#include <chrono>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "actbridge/ablation.hpp"
#include "actbridge/gradcheck.hpp"
#include "actbridge/trainer.hpp"

namespace {

using namespace actbridge;
using nlohmann::json;

const std::vector<TaskTemplate> kAllTemplates = {
    TaskTemplate::kPickPlace, TaskTemplate::kMoveLeftRight,
    TaskTemplate::kStack, TaskTemplate::kLongHorizon2Stage};

RunConfig load_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

void write_manifest(const std::string& path, const RunConfig& cfg,
                    const json& extra) {
  json m = json::parse(dump_run_config(cfg));
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = *it;
  std::ofstream out(path);
  if (!out) throw TrainingError("cannot write manifest: " + path);
  out << m.dump(2) << "\n";
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path,
                 std::size_t episodes, std::uint64_t seed) {
  RunConfig cfg = load_or_default(config_path);
  Dataset ds = generate_dataset(episodes, kAllTemplates, seed, cfg.policy);
  save_dataset(out_path, ds);
  std::cout << "wrote " << ds.records.size() << " records ("
            << episodes << " episodes) to " << out_path << "\n"
            << "dataset hash: " << dataset_hash(ds) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& ckpt_path, const std::string& metrics_path,
              const std::string& manifest_path) {
  RunConfig cfg = load_or_default(config_path);
  Dataset ds = load_dataset(data_path);
  auto model = make_model(cfg.policy);
  TrainReport report = train(*model, ds, cfg.train, metrics_path);
  std::cout << "trained " << cfg.train.max_steps << " steps, final loss "
            << report.final_loss << "\n";
  if (!ckpt_path.empty()) {
    save_checkpoint(ckpt_path, *model, nullptr, dump_run_config(cfg));
    std::cout << "checkpoint: " << ckpt_path << "\n";
  }
  if (!manifest_path.empty()) {
    write_manifest(manifest_path, cfg,
                   json{{"dataset", data_path},
                        {"dataset_hash", dataset_hash(ds)},
                        {"final_loss", report.final_loss},
                        {"checkpoint", ckpt_path},
                        {"metrics", metrics_path}});
    std::cout << "manifest: " << manifest_path << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             std::size_t episodes, std::uint64_t seed,
             const std::string& data_path) {
  RunConfig cfg = load_or_default(config_path);
  auto model = make_model(cfg.policy);
  if (!ckpt_path.empty()) load_checkpoint(ckpt_path, *model);
  std::set<std::uint64_t> train_seeds;
  const std::set<std::uint64_t>* guard = nullptr;
  if (!data_path.empty()) {
    train_seeds = load_dataset(data_path).placement_seeds;
    guard = &train_seeds;
  }
  SuccessTable table = evaluate(model->as_policy(), cfg.policy.horizon,
                                kAllTemplates, episodes, seed, cfg.policy,
                                guard);
  std::cout << table.format();
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_path,
               const std::string& axis, std::size_t episodes,
               std::uint64_t seed) {
  RunConfig cfg = load_or_default(config_path);
  Dataset ds = load_dataset(data_path);
  AblationReport report =
      run_ablation(axis, cfg.policy, cfg.train, ds, episodes, seed);
  std::cout << report.format();
  return 0;
}

int cmd_gradcheck() {
  bool failed = false;
  for (const SuiteEntry& e : gradient_suite()) {
    std::cout << (e.ok() ? "PASS " : "FAIL ") << e.name << ": max rel err "
              << e.report.max_rel_err << " (tol " << e.tol << ", "
              << e.report.checked_coords << " coords";
    if (!e.report.worst_param.empty())
      std::cout << ", worst " << e.report.worst_param << "["
                << e.report.worst_index << "]";
    std::cout << ")\n";
    failed = failed || !e.ok();
  }
  if (failed) {
    std::cerr << "gradcheck FAILED\n";
    return 1;
  }
  std::cout << "gradcheck OK\n";
  return 0;
}

int cmd_bench(const std::string& config_path, std::size_t iters,
              std::size_t warmup) {
  RunConfig cfg = load_or_default(config_path);
  auto model = make_model(cfg.policy);
  Rng rng(3);
  Scenario sc = make_scenario(TaskTemplate::kPickPlace, rng);
  ObservationStub obs = observe(sc.world, sc.task, cfg.policy);
  for (std::size_t i = 0; i < warmup; ++i) (void)model->predict(obs, i);
  auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < iters; ++i) (void)model->predict(obs, i);
  auto t1 = std::chrono::steady_clock::now();
  double sec = std::chrono::duration<double>(t1 - t0).count();
  double throughput =
      static_cast<double>(iters * cfg.policy.horizon) / std::max(sec, 1e-12);
  double latency = sec / static_cast<double>(iters);
  std::cout << iters << " chunks in " << sec << " s\n"
            << "throughput_hz: " << throughput << " (actions/s)\n"
            << "latency_s: " << latency << " (per chunk)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bridge-attention action policy toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, ckpt_path, metrics_path,
      manifest_path, axis = "condition_type";
  std::size_t episodes = 20, iters = 200, warmup = 20;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate an expert dataset");
  gen->add_option("--config", config_path, "Run config JSON");
  gen->add_option("--out", out_path, "Output JSONL path")->required();
  gen->add_option("--episodes", episodes, "Episode count")->default_val(40);
  gen->add_option("--seed", seed, "Dataset seed");

  auto* tr = app.add_subcommand("train", "Train a policy");
  tr->add_option("--config", config_path, "Run config JSON");
  tr->add_option("--data", data_path, "Dataset JSONL")->required();
  tr->add_option("--out", ckpt_path, "Checkpoint path");
  tr->add_option("--metrics", metrics_path, "Metrics JSONL path");
  tr->add_option("--manifest", manifest_path, "Run manifest JSON path");

  auto* ev = app.add_subcommand("eval", "Evaluate success rates");
  ev->add_option("--config", config_path, "Run config JSON");
  ev->add_option("--ckpt", ckpt_path, "Checkpoint to load");
  ev->add_option("--data", data_path,
                 "Training dataset (guards placement-seed overlap)");
  ev->add_option("--episodes", episodes, "Episodes per task")->default_val(20);
  ev->add_option("--seed", seed, "Evaluation seed");

  auto* ab = app.add_subcommand("ablate", "Sweep one knob");
  ab->add_option("--config", config_path, "Run config JSON");
  ab->add_option("--data", data_path, "Dataset JSONL")->required();
  ab->add_option("--axis", axis,
                 "condition_type | injection_degree | query_count");
  ab->add_option("--episodes", episodes, "Episodes per task")->default_val(10);
  ab->add_option("--seed", seed, "Evaluation seed");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference suite");

  auto* be = app.add_subcommand("bench", "Inference throughput");
  be->add_option("--config", config_path, "Run config JSON");
  be->add_option("--iters", iters, "Chunk predictions to time");
  be->add_option("--warmup", warmup, "Untimed warmup predictions");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_path, episodes, seed);
    if (tr->parsed())
      return cmd_train(config_path, data_path, ckpt_path, metrics_path,
                       manifest_path);
    if (ev->parsed())
      return cmd_eval(config_path, ckpt_path, episodes, seed, data_path);
    if (ab->parsed())
      return cmd_ablate(config_path, data_path, axis, episodes, seed);
    if (gc->parsed()) return cmd_gradcheck();
    if (be->parsed()) return cmd_bench(config_path, iters, warmup);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
