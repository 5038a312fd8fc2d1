#include <benchmark/benchmark.h>

#include <random>

#include "jamlab/ops.hpp"
#include "jamlab/signal.hpp"
#include "jamlab/skanet.hpp"
#include "jamlab/spectral.hpp"

using namespace jamlab;

namespace {

ComplexSignal test_signal(std::size_t n) {
  RandomStream rng(7);
  const SampleClock clock{20e6, n};
  const auto spec = draw_compound(CompoundClass::LfmPbnj, -3.0, 3.0, clock, rng);
  return add_awgn(mix_compound(spec, clock, rng), {0.0}, rng);
}

nn::Tensor<float> random_tensor(nn::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  std::vector<float> v(nn::numel(shape));
  for (auto& x : v) x = g(rng);
  return nn::Tensor<float>(std::move(shape), std::move(v));
}

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  const auto x = random_tensor({8, c, side, side}, 1);
  const auto k = random_tensor({c, c, 3, 3}, 2);
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, k, nn::Tensor<float>(), {1, 1, 1, 1}));
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * 8 * side * side * 9 * c * c, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv2d)->Args({8, 32})->Args({32, 16})->Args({64, 8})->Unit(benchmark::kMillisecond);

void BM_StftSpectrogram(benchmark::State& state) {
  const auto s = test_signal(20000);
  FeatureConfig f;
  const auto cfg = f.stft_for(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(stft_spectrogram(s, cfg));
}
BENCHMARK(BM_StftSpectrogram)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_StftImage(benchmark::State& state) {
  const auto s = test_signal(20000);
  FeatureConfig f;
  const auto cfg = f.stft_for(128);
  const auto side = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(stft_image(s, cfg, side));
}
BENCHMARK(BM_StftImage)->Arg(64)->Arg(224)->Unit(benchmark::kMillisecond);

void BM_Welch(benchmark::State& state) {
  const auto s = test_signal(20000);
  WelchConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(welch_psd(s, cfg));
}
BENCHMARK(BM_Welch)->Unit(benchmark::kMicrosecond);

void BM_SkAcbForward(benchmark::State& state) {
  RandomStream rng(3);
  const auto c = static_cast<std::size_t>(state.range(0));
  auto blk = nn::SkAcbBlock<float>::create(c, c, {1, 2, 4}, 16, rng);
  const auto x = random_tensor({8, c, 16, 16}, 4);
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::sk_acb_forward(x, blk, nn::Mode::Eval));
}
BENCHMARK(BM_SkAcbForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DeskForward(benchmark::State& state) {
  nn::Skanet<float> m(nn::ModelConfig::desk(), 5);
  const auto a = random_tensor({16, 1, 64, 64}, 6);
  const auto b = random_tensor({16, 1, 64, 64}, 7);
  RandomStream rng(1);
  m.forward(a, b, nn::Mode::Train, &rng);
  if (state.range(0) == 1) m.fuse();
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(a, b, nn::Mode::Eval));
}
BENCHMARK(BM_DeskForward)->ArgName("fused")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
