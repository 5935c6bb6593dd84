#include <benchmark/benchmark.h>

#include "actbridge/trainer.hpp"

namespace {

using namespace actbridge;

ObservationStub fixture_obs(const PolicyConfig& cfg) {
  Rng rng(11);
  Scenario sc = make_scenario(TaskTemplate::kPickPlace, rng);
  return observe(sc.world, sc.task, cfg);
}

void BM_PolicyForward(benchmark::State& state) {
  PolicyConfig cfg = desk_preset();
  cfg.hidden = static_cast<std::size_t>(state.range(0));
  cfg.layers = static_cast<std::size_t>(state.range(1));
  auto model = make_model(cfg);
  ObservationStub obs = fixture_obs(cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model->predict(obs));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(cfg.horizon));
}
BENCHMARK(BM_PolicyForward)
    ->Args({32, 2})
    ->Args({64, 4})
    ->Args({128, 4})
    ->Args({128, 8})
    ->Unit(benchmark::kMillisecond);

void BM_DiffusionSample(benchmark::State& state) {
  PolicyConfig cfg = desk_preset();
  cfg.variant = Variant::kDit;
  cfg.diffusion_steps = static_cast<std::size_t>(state.range(0));
  auto model = make_model(cfg);
  ObservationStub obs = fixture_obs(cfg);
  std::uint64_t s = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model->predict(obs, s++));
  }
}
BENCHMARK(BM_DiffusionSample)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  PolicyConfig cfg = desk_preset();
  auto model = make_model(cfg);
  Dataset ds = generate_dataset(4, {TaskTemplate::kPickPlace}, 5, cfg);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_steps = 1000000;
  AdamW opt(model->store, tc);
  Rng noise(9);
  std::size_t i = 0;
  for (auto _ : state) {
    model->store.zero_grads();
    Tensor loss = model->loss(ds.records[i++ % ds.records.size()], noise);
    loss.backward();
    opt.step(1e-4);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
