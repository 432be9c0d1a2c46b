// Microbenchmarks for the hot paths: convolution variants, the SAC block,
// pyramid fusion, NMS, and the full desk-scale forward pass.

#include <benchmark/benchmark.h>

#include "foci/config.hpp"
#include "foci/eval.hpp"
#include "foci/fpn.hpp"
#include "foci/network.hpp"
#include "foci/ops.hpp"
#include "foci/rng.hpp"
#include "foci/sac.hpp"

namespace {

template <typename T>
foci::Tensor<T> random_tensor(foci::Shape4 shape, std::uint64_t seed) {
  foci::Rng rng(seed);
  foci::Tensor<T> t(shape);
  T* d = t.data();
  for (std::size_t i = 0; i < shape.numel(); ++i) d[i] = static_cast<T>(rng.normal());
  return t;
}

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = random_tensor<float>({1, c, 32, 32}, 1);
  auto spec = foci::ConvSpec::same(3, 1, c, c);
  auto w = random_tensor<float>({c, c, 3, 3}, 2);
  auto b = random_tensor<float>({1, c, 1, 1}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(foci::conv2d<float>(nullptr, x, w, b, spec));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64);

void BM_Conv5x5Dilated(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = random_tensor<float>({1, c, 32, 32}, 1);
  auto spec = foci::ConvSpec::same(5, 2, c, c);
  auto w = random_tensor<float>({c, c, 5, 5}, 2);
  auto b = random_tensor<float>({1, c, 1, 1}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(foci::conv2d<float>(nullptr, x, w, b, spec));
}
BENCHMARK(BM_Conv5x5Dilated)->Arg(16)->Arg(64);

void BM_SacBlock(benchmark::State& state) {
  foci::Rng rng(7);
  auto params = foci::SACParams<float>::build(16, rng);
  auto x = random_tensor<float>({1, 16, 32, 32}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(foci::sac_forward<float>(nullptr, x, params));
}
BENCHMARK(BM_SacBlock);

void BM_FusePyramid(benchmark::State& state) {
  foci::Rng rng(7);
  auto params = foci::FPNParams<float>::build({4, 8, 16, 32}, 16, 64, rng);
  std::array<foci::Tensor<float>, 4> taps = {
      random_tensor<float>({1, 4, 64, 64}, 1), random_tensor<float>({1, 8, 32, 32}, 2),
      random_tensor<float>({1, 16, 16, 16}, 3), random_tensor<float>({1, 32, 8, 8}, 4)};
  for (auto _ : state) {
    auto pyr = foci::build_pyramid<float>(nullptr, taps, params);
    benchmark::DoNotOptimize(foci::fuse_pyramid<float>(nullptr, pyr, params, 4));
  }
}
BENCHMARK(BM_FusePyramid);

void BM_Nms(benchmark::State& state) {
  foci::Rng rng(11);
  std::vector<foci::Detection> dets;
  for (int i = 0; i < 200; ++i) {
    foci::Detection d;
    d.box = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), 0.1, 0.1};
    d.score = rng.uniform();
    d.index = i + 1;
    dets.push_back(d);
  }
  for (auto _ : state) benchmark::DoNotOptimize(foci::nms(dets, 0.45));
}
BENCHMARK(BM_Nms);

void BM_DeskForward(benchmark::State& state) {
  auto cfg = foci::desk_preset().network;
  auto net = foci::build_network<float>(cfg, 42);
  auto image = random_tensor<float>({1, 1, cfg.input_resolution, cfg.input_resolution}, 5);
  for (auto _ : state)
    benchmark::DoNotOptimize(foci::network_forward<float>(net, image, nullptr, false));
}
BENCHMARK(BM_DeskForward);

}  // namespace

BENCHMARK_MAIN();
