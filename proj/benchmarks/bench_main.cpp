#include <benchmark/benchmark.h>

#include "das/fedavg.hpp"
#include "das/srnet.hpp"
#include "das/synth.hpp"

namespace {

das::PhaseWindow window(std::uint64_t seed) {
  das::Rng rng(seed);
  return das::synthesize_event(das::reference_profile("CA"),
                               das::draw_event(das::reference_profile("CA"), das::Activity::Cycling, rng), rng);
}

void BM_Forward(benchmark::State& state) {
  const auto p = das::init_params(das::ArchitectureConfig::desk(), 1);
  const auto x = window(1);
  for (auto _ : state) benchmark::DoNotOptimize(das::forward_logit(p, x));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_Backward(benchmark::State& state) {
  const auto p = das::init_params(das::ArchitectureConfig::desk(), 1);
  const auto x = window(2);
  for (auto _ : state) benchmark::DoNotOptimize(das::backward(p, x, 1));
}
BENCHMARK(BM_Backward)->Unit(benchmark::kMillisecond);

void BM_SynthesizeEvent(benchmark::State& state) {
  const auto profile = das::reference_profile("Red");
  das::Rng rng(3);
  for (auto _ : state) {
    const auto kind = state.iterations() % 2 ? das::Activity::Walking : das::Activity::Cycling;
    benchmark::DoNotOptimize(das::synthesize_event(profile, das::draw_event(profile, kind, rng), rng));
  }
}
BENCHMARK(BM_SynthesizeEvent)->Unit(benchmark::kMillisecond);

void BM_Aggregate(benchmark::State& state) {
  std::vector<das::ModelParams> ms;
  for (int m = 0; m < state.range(0); ++m) ms.push_back(das::init_params(das::ArchitectureConfig::desk(), m));
  for (auto _ : state) benchmark::DoNotOptimize(das::aggregate(ms));
}
BENCHMARK(BM_Aggregate)->Arg(3)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
