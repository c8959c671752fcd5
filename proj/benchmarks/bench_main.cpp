#include <benchmark/benchmark.h>

#include "xhved/dataset.hpp"
#include "xhved/metrics.hpp"
#include "xhved/ops.hpp"
#include "xhved/rng.hpp"
#include "xhved/trainer.hpp"

using namespace xhved;

static void BM_Conv3dForward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto ch = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const auto x = randn<float>(Shape{2, ch, side, side, side}, rng);
  const auto w = randn<float>(Shape{ch, ch, 3, 3, 3}, rng, 0.1);
  const auto b = randn<float>(Shape{ch}, rng);
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(ops::conv3d(x, w, b, 1, 1).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<long>(side * side * side));
}
BENCHMARK(BM_Conv3dForward)->Args({32, 8})->Args({16, 16})->Args({8, 32})->Unit(benchmark::kMillisecond);

static void BM_Conv3dBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto ch = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  auto x = randn<float>(Shape{2, ch, side, side, side}, rng);
  auto w = randn<float>(Shape{ch, ch, 3, 3, 3}, rng, 0.1);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    ops::sum(ops::conv3d(x, w, Tensor<float>(), 1, 1)).backward();
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({32, 8})->Args({16, 16})->Unit(benchmark::kMillisecond);

static void BM_Hd95(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  Mask a({side, side, side}), b({side, side, side});
  for (auto& v : a.voxels) v = rng.uniform() < 0.3;
  for (auto& v : b.voxels) v = rng.uniform() < 0.3;
  for (auto _ : state) benchmark::DoNotOptimize(hd95(a, b, {}));
}
BENCHMARK(BM_Hd95)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto vols = generate_phantom_set(2, {side, side, side}, 4);
  std::vector<Case> cases;
  for (std::size_t i = 0; i < vols.size(); ++i) cases.push_back(make_case(vols[i], std::to_string(i)));
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  Trainer trainer(cfg, cases);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(Phase::joint).loss);
}
BENCHMARK(BM_TrainStep)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
