#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "actbridge/trainer.hpp"

using namespace actbridge;

namespace {

PolicyConfig small_cfg() {
  PolicyConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 32;
  cfg.heads = 2;
  cfg.n_query = 4;
  return cfg;
}

Dataset tiny_dataset(const PolicyConfig& cfg, std::size_t episodes = 2) {
  return generate_dataset(episodes, {TaskTemplate::kPickPlace}, 123, cfg);
}

std::vector<double> flatten(const ParameterStore& store) {
  std::vector<double> out;
  for (const auto& name : store.names()) {
    const auto& d = store.get(name).data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

}  // namespace

TEST_CASE("lr schedule ramps up then decays to zero") {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.max_steps = 100;
  tc.warmup_fraction = 0.1;
  CHECK(lr_schedule(0, tc) == 0.0);
  CHECK(lr_schedule(5, tc) == doctest::Approx(5e-4));
  CHECK(lr_schedule(10, tc) == doctest::Approx(1e-3));
  CHECK(lr_schedule(55, tc) == doctest::Approx(5e-4));
  CHECK(lr_schedule(99, tc) < 1e-5);
  CHECK_THROWS_AS(lr_schedule(100, tc), TrainingError);

  tc.warmup_fraction = 0.0;
  CHECK(lr_schedule(0, tc) == doctest::Approx(1e-3));
}

TEST_CASE("action scaling round-trips and leaves the gripper channel alone") {
  std::vector<double> chunk(2 * PolicyConfig::kActionDim, 0.0);
  for (std::size_t i = 0; i < chunk.size(); ++i)
    chunk[i] = 0.01 * static_cast<double>(i + 1);
  std::vector<double> scaled = to_model_actions(chunk);
  CHECK(scaled[0] == doctest::Approx(chunk[0] * kDeltaScale));
  CHECK(scaled[PolicyConfig::kActionDim - 1] ==
        doctest::Approx(chunk[PolicyConfig::kActionDim - 1]));
  std::vector<double> back = to_env_actions(scaled);
  for (std::size_t i = 0; i < chunk.size(); ++i)
    CHECK(back[i] == doctest::Approx(chunk[i]).epsilon(1e-12));
}

TEST_CASE("a zero learning rate leaves parameters untouched") {
  PolicyConfig cfg = small_cfg();
  auto model = make_model(cfg);
  Dataset ds = tiny_dataset(cfg, 1);
  TrainConfig tc;
  AdamW opt(model->store, tc);
  std::vector<double> before = flatten(model->store);
  Rng noise(4);
  model->store.zero_grads();
  model->loss(ds.records[0], noise).backward();
  opt.step(0.0);
  CHECK(flatten(model->store) == before);
}

TEST_CASE("optimizer reports the pre-clip gradient norm") {
  PolicyConfig cfg = small_cfg();
  auto model = make_model(cfg);
  Dataset ds = tiny_dataset(cfg, 1);
  TrainConfig tc;
  AdamW opt(model->store, tc);
  Rng noise(4);
  model->store.zero_grads();
  Tensor l = scale(model->loss(ds.records[0], noise), 1e4);
  l.backward();
  double norm = opt.step(1e-4);
  CHECK(norm > AdamW::kClipNorm);
}

TEST_CASE("training is deterministic") {
  PolicyConfig cfg = small_cfg();
  Dataset ds = tiny_dataset(cfg);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 4;
  tc.max_steps = 20;

  auto a = make_model(cfg);
  auto b = make_model(cfg);
  TrainReport ra = train(*a, ds, tc);
  TrainReport rb = train(*b, ds, tc);
  CHECK(ra.final_loss == rb.final_loss);
  CHECK(flatten(a->store) == flatten(b->store));
}

TEST_CASE("a small dataset is overfit within 1500 steps") {
  PolicyConfig cfg = small_cfg();
  Dataset ds = tiny_dataset(cfg, 2);
  ds.records.resize(std::min<std::size_t>(ds.records.size(), 8));
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 8;
  tc.max_steps = 1500;

  auto model = make_model(cfg);
  TrainReport report = train(*model, ds, tc);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += report.metrics[i].loss;
    tail += report.metrics[report.metrics.size() - 1 - i].loss;
  }
  CHECK(tail < 0.1 * head);
}

TEST_CASE("freezing keeps every encoder weight fixed across a full run") {
  PolicyConfig cfg = small_cfg();
  Dataset ds = tiny_dataset(cfg, 1);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 2;
  tc.max_steps = 10;
  tc.freeze_backbone = true;

  auto model = make_model(cfg);
  std::vector<std::pair<std::string, std::vector<double>>> before;
  for (const auto& name : model->store.names())
    if (name.rfind("backbone.", 0) == 0 && name != "backbone.action_query")
      before.emplace_back(name, model->store.get(name).data());
  train(*model, ds, tc);
  for (const auto& [name, data] : before)
    CHECK_MESSAGE(model->store.get(name).data() == data, name);
}

TEST_CASE("a non-finite loss aborts training and names the op") {
  PolicyConfig cfg = small_cfg();
  Dataset ds = tiny_dataset(cfg, 1);
  TrainConfig tc;
  tc.max_steps = 5;
  auto model = make_model(cfg);
  Tensor w = model->store.get("policy.out.w1");
  std::vector<double> bad = w.data();
  bad[0] = std::numeric_limits<double>::infinity();
  w.set_data(bad);
  CHECK_THROWS_WITH_AS(train(*model, ds, tc),
                       doctest::Contains("non-finite"), TrainingError);
}

TEST_CASE("loss variant must match the policy variant") {
  PolicyConfig cfg = small_cfg();
  Dataset ds = tiny_dataset(cfg, 1);
  TrainConfig tc;
  tc.loss = "ddpm";
  auto model = make_model(cfg);
  CHECK_THROWS_AS(train(*model, ds, tc), TrainingError);
}

TEST_CASE("metrics file holds one record per step") {
  PolicyConfig cfg = small_cfg();
  Dataset ds = tiny_dataset(cfg, 1);
  TrainConfig tc;
  tc.max_steps = 7;
  tc.batch_size = 2;
  auto model = make_model(cfg);
  const std::string path = "/tmp/actbridge_test_metrics.jsonl";
  TrainReport report = train(*model, ds, tc, path);
  REQUIRE(report.metrics.size() == 7);

  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    CHECK(line.find("\"loss\"") != std::string::npos);
    CHECK(line.find("\"lr\"") != std::string::npos);
    CHECK(line.find("\"grad_norm\"") != std::string::npos);
    ++lines;
  }
  CHECK(lines == 7);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint resume reproduces uninterrupted training bit-exactly") {
  PolicyConfig cfg = small_cfg();
  Dataset ds = tiny_dataset(cfg, 1);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 2;

  // A manual loop with per-step RNGs so the stream state is implied by
  // the step counter and survives the save/load boundary.
  auto run_steps = [&](ModelBundle& model, AdamW& opt, std::size_t from,
                       std::size_t to) {
    for (std::size_t step = from; step < to; ++step) {
      Rng batch = Rng(tc.seed).split(0x6261746368ULL).split(step);
      Rng noise = Rng(tc.seed).split(0x6e6f697365ULL).split(step);
      model.store.zero_grads();
      Tensor total;
      for (std::size_t b = 0; b < tc.batch_size; ++b) {
        const StepRecord& rec = ds.records[static_cast<std::size_t>(
            batch.next_below(ds.records.size()))];
        Tensor li = model.loss(rec, noise);
        total = total.defined() ? add(total, li) : li;
      }
      total = scale(total, 1.0 / static_cast<double>(tc.batch_size));
      total.backward();
      opt.step(1e-3);
    }
  };

  auto straight = make_model(cfg);
  AdamW opt_straight(straight->store, tc);
  run_steps(*straight, opt_straight, 0, 10);

  auto first = make_model(cfg);
  AdamW opt_first(first->store, tc);
  run_steps(*first, opt_first, 0, 5);
  const std::string path = "/tmp/actbridge_test_resume.abck";
  save_checkpoint(path, *first, &opt_first);

  auto second = make_model(cfg);
  AdamW opt_second(second->store, tc);
  load_checkpoint(path, *second, &opt_second);
  CHECK(opt_second.steps_done() == 5);
  run_steps(*second, opt_second, 5, 10);
  std::remove(path.c_str());

  CHECK(flatten(second->store) == flatten(straight->store));
  CHECK(flatten(opt_second.state()) == flatten(opt_straight.state()));
}
