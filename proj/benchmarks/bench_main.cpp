#include <benchmark/benchmark.h>

#include <random>

#include "handocc/ops.hpp"
#include "handocc/training.hpp"

using namespace handocc;

namespace {

Tensor noise(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(s));
  for (double& x : t.data()) x = u(rng);
  return t;
}

void BM_Matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const ops::Precision p = st.range(1) ? ops::Precision::f32 : ops::Precision::f64;
  const Tensor a = noise({n, n}, 1), b = noise({n, n}, 2);
  ops::PrecisionScope scope(p);
  for (auto _ : st) benchmark::DoNotOptimize(ops::matmul(a, b));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->ArgsProduct({{64, 256}, {0, 1}});

void BM_Conv3x3(benchmark::State& st) {
  const auto hw = static_cast<std::size_t>(st.range(0));
  const Tensor x = noise({hw, hw, 16}, 3), w = noise({3, 3, 16, 32}, 4), bias = noise({32}, 5);
  for (auto _ : st) benchmark::DoNotOptimize(ops::conv2d(x, w, bias, 1));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32);

void BM_FitForward(benchmark::State& st) {
  nn::ParameterSet params;
  const inj::Fit fit = inj::Fit::create(params, nn::Initializer(1), "fit", 32);
  const Tensor fp = noise({8, 8, 32}, 6), fs = noise({8, 8, 32}, 7);
  for (auto _ : st) {
    ad::Tape t;
    nn::Binding b(t, params, false);
    benchmark::DoNotOptimize(fit(b, t.constant(fp), t.constant(fs)).f_fit.value());
  }
}
BENCHMARK(BM_FitForward);

void BM_TrainStep(benchmark::State& st) {
  ModelConfig mc;
  mc.variant = st.range(0) ? inj::Variant::fit_set : inj::Variant::identity;
  HandOccNet model(mc, hand::make_default_template());
  synth::DatasetConfig dc;
  dc.count = 16;
  const auto data = synth::Generator(dc, model.hand_template()).generate();
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  for (auto _ : st) train::train(model, data, tc);
  st.SetItemsProcessed(st.iterations() * 16);
  st.SetLabel(inj::variant_name(mc.variant).data());
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
