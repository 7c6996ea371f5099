#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

#include "amcl/autodiff.hpp"
#include "amcl/log.hpp"
#include "amcl/mcl_losses.hpp"
#include "amcl/trainer.hpp"

namespace {

using namespace amcl;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({32, c, 16, 16}, 1), w = random_tensor({32, c, 3, 3}, 2), b = random_tensor({32}, 3);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(g.value(ops::conv2d(g, g.input(x), g.input(w), g.input(b))).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(32);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({32, c, 16, 16}, 1), b = random_tensor({32}, 3);
  Tensor w = random_tensor({32, c, 3, 3}, 2);
  w.enable_grad();
  for (auto _ : state) {
    Graph g;
    g.backward(ops::sum(g, ops::conv2d(g, g.input(x, true), g.parameter(w), g.input(b))));
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(1)->Arg(32);

void BM_AssignTopK(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  LossMatrix l(256, m);
  for (double& v : l.data()) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(assign_top_k(l, m / 2 + 1));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_AssignTopK)->Arg(2)->Arg(5)->Arg(10);

void BM_TrainStep(benchmark::State& state) {
  set_warning_sink([](const std::string&) {});
  const auto fusion = static_cast<FusionKind>(state.range(0));
  const auto data = make_dataset(DatasetSpec::parse("images:classes=4,size=16,train=16,test=1,seed=1"), Split::train);
  TrainConfig cfg;
  cfg.members = 2;
  cfg.fusion = fusion;
  cfg.batch_size = 64;
  EnsembleState ens = EnsembleState::create(ensemble_config_for(data, cfg));
  Trainer trainer(ens, cfg);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Tensor x = data.batch(idx);
  const auto y = data.batch_labels(idx);
  for (auto _ : state) {
    trainer.compute_gradients(x, y, 1);
    trainer.apply_update();
  }
  state.SetLabel(fusion_name(fusion));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(idx.size()));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
