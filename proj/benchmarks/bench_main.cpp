// Copyright 2026 The Prolif Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include "prolif/features.hpp"
#include "prolif/heatmap.hpp"
#include "prolif/nn.hpp"
#include "prolif/predict.hpp"
#include "prolif/preprocess.hpp"
#include "prolif/random.hpp"
#include "prolif/raster.hpp"

namespace prolif {
namespace {

RasterImage noise(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  RasterImage image(w, h, 3);
  for (std::uint8_t& v : image.data()) v = static_cast<std::uint8_t>(rng.uniform_index(256));
  return image;
}

void BM_Conv3x3(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const LayerSpec layer = LayerSpec::conv(16, 32, 3);
  Rng rng(1);
  Tensor input({16, side, side});
  for (double& v : input.data) v = rng.normal();
  LayerParams params{Tensor(layer.weight_shape(), 0.01), Tensor(layer.bias_shape(), 0.0)};
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(input, layer, params));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side) * side);
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_BackwardMitosisNet(benchmark::State& state) {
  const NetworkSpec spec = mitosnet_mini();
  const Network net(spec, init_weights(spec, 2));
  const Tensor input = image_to_tensor(noise(spec.receptive_field, spec.receptive_field, 3));
  const int label = 1;
  for (auto _ : state) benchmark::DoNotOptimize(backward(net, input, std::span(&label, 1)));
}
BENCHMARK(BM_BackwardMitosisNet)->Unit(benchmark::kMicrosecond);

void BM_HeatmapTumorTile(benchmark::State& state) {
  const auto mode = static_cast<HeatmapMode>(state.range(0));
  const NetworkSpec spec = locnet_mini_valid();
  const Network net(spec, init_weights(spec, 3));
  const RasterImage image = noise(256, 256, 4);
  BinaryMask tissue(256, 256);
  std::fill(tissue.bits.begin(), tissue.bits.end(), 1);
  HeatmapOptions options;
  options.tile = 256;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_heatmap_detailed(image, 4, "10x", net, tissue, mode, options));
  }
  state.SetLabel(mode == HeatmapMode::kFcn ? "fcn" : "sliding");
}
BENCHMARK(BM_HeatmapTumorTile)->Arg(static_cast<int>(HeatmapMode::kFcn))
    ->Arg(static_cast<int>(HeatmapMode::kSliding))->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  Rng rng(5);
  Vectors v(static_cast<std::size_t>(state.range(0)), std::vector<double>(64));
  for (auto& row : v) {
    for (double& x : row) x = rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(v, 50, 6, 50));
}
BENCHMARK(BM_KMeans)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_NucleiProposal(benchmark::State& state) {
  const RasterImage patch = noise(252, 252, 7);
  for (auto _ : state) benchmark::DoNotOptimize(propose_nuclei(patch));
}
BENCHMARK(BM_NucleiProposal)->Unit(benchmark::kMicrosecond);

void BM_RocAuc(benchmark::State& state) {
  Rng rng(8);
  std::vector<double> s(static_cast<std::size_t>(state.range(0)));
  std::vector<int> l(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    l[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(s, l));
}
BENCHMARK(BM_RocAuc)->Arg(10000)->Arg(100000);

}  // namespace
}  // namespace prolif

BENCHMARK_MAIN();
