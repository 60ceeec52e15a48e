// Microbenchmarks for the per-step hot paths. Shapes run from the small
// synthetic instance up to a benchmark-sized support (C=51, K=60) at a
// CLIP-like width.
#include <benchmark/benchmark.h>

#include "sstune/predictors.hpp"
#include "sstune/synth.hpp"
#include "sstune/tuner.hpp"

namespace {

using namespace sstune;

SyntheticSet make_set(const benchmark::State& state) {
  SyntheticConfig sc;
  sc.classes = static_cast<std::size_t>(state.range(0));
  sc.prompts = static_cast<std::size_t>(state.range(1));
  sc.repeats = 4;
  sc.dim = static_cast<std::size_t>(state.range(2));
  sc.views = 32;
  sc.seed = 1;
  return synth_generate(sc);
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({5, 1, 16})->Args({10, 5, 128})->Args({51, 15, 512});
  b->ArgNames({"C", "m", "d"})->Unit(benchmark::kMillisecond);
}

void BM_PredictViews(benchmark::State& state) {
  const auto set = make_set(state);
  PredictorConfig cfg;
  const auto frames = all_frames(8);
  for (auto _ : state) {
    auto out = predict_views(set.support.features, set.tests[0].views, frames, set.class_text,
                             set.support.labels, cfg);
    benchmark::DoNotOptimize(out);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_PredictViews)->Apply(shapes);

void BM_LossGradients(benchmark::State& state) {
  const auto set = make_set(state);
  PredictorConfig cfg;
  cfg.temperature = 1.0;
  const TuningProblem problem{set.support.features, set.support.labels, set.tests[0].views,
                              set.class_text, cfg, {}};
  const auto w = FactorizedWeights::ones(set.support.num_videos(), 8);
  const auto frames = all_frames(8);
  for (auto _ : state) {
    auto eval = loss_gradients(problem, w, frames);
    benchmark::DoNotOptimize(eval);
  }
}
BENCHMARK(BM_LossGradients)->Apply(shapes);

void BM_TuneDefaultSchedule(benchmark::State& state) {
  const auto set = make_set(state);
  PredictorConfig cfg;
  cfg.temperature = 1.0;
  for (auto _ : state) {
    auto r = tune(set.support, set.tests[0], set.class_text, cfg, {});
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_TuneDefaultSchedule)->Apply(shapes);

}  // namespace

BENCHMARK_MAIN();
