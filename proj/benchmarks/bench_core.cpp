#include <benchmark/benchmark.h>

#include "shiftbench/analysis.hpp"
#include "shiftbench/autodiff.hpp"
#include "shiftbench/domains.hpp"
#include "shiftbench/trainer.hpp"

using namespace shiftbench;
namespace ad = shiftbench::ad;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({r, c});
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    ad::Tape tape;
    auto x = tape.variable(a), y = tape.variable(b);
    auto loss = ad::sum(ad::matmul(x, y));
    tape.backward(loss);
    benchmark::DoNotOptimize(x.grad());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(16, 128)->Complexity();

void BM_TrainSteps(benchmark::State& state, const char* method) {
  const DomainDataset ds = gen_two_moons_shift(TwoMoonsParams{}, 0);
  TrainConfig cfg;
  cfg.method = MethodSpec::parse(method);
  cfg.total_steps = 50;
  cfg.eval_every = 50;
  for (auto _ : state) benchmark::DoNotOptimize(train(ds, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cfg.total_steps));
}
BENCHMARK_CAPTURE(BM_TrainSteps, source_only, "source_only")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainSteps, fixmatch, "fixmatch")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainSteps, vat, "vat")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainSteps, dann, "dann")->Unit(benchmark::kMillisecond);

void BM_HdhDivergence(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor s = random_matrix(n, 2, 3), t = random_matrix(n, 2, 4);
  const FiniteHypothesisClass h = stump_class(s, 12);
  for (auto _ : state) benchmark::DoNotOptimize(hdh_divergence(h, s, t));
}
BENCHMARK(BM_HdhDivergence)->Arg(100)->Arg(400);

void BM_ProxyADistance(benchmark::State& state) {
  const Tensor s = random_matrix(400, 16, 5), t = random_matrix(400, 16, 6);
  for (auto _ : state) benchmark::DoNotOptimize(proxy_a_distance(s, t, 0));
}
BENCHMARK(BM_ProxyADistance)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
