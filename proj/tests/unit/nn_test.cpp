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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "prolif/error.hpp"
#include "prolif/nn.hpp"
#include "prolif/random.hpp"

namespace prolif {
namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

LayerParams random_params(Rng& rng, const LayerSpec& layer) {
  if (!layer.has_parameters()) return {};
  return {random_tensor(rng, layer.weight_shape()), random_tensor(rng, layer.bias_shape())};
}

TEST(Conv, MatchesNaiveLoops) {
  Rng rng(21);
  for (int n = 0; n < 25; ++n) {
    const int k = rng.uniform_int(1, 4);
    const LayerSpec layer = LayerSpec::conv(rng.uniform_int(1, 3), rng.uniform_int(1, 4), k,
                                            rng.uniform_int(1, 3), rng.uniform_int(0, 2));
    const Tensor input = random_tensor(rng, {layer.in_channels, rng.uniform_int(k, 20), rng.uniform_int(k, 20)});
    const LayerParams params = random_params(rng, layer);
    const Tensor fast = conv2d_forward(input, layer, params);
    const Tensor slow = oracle::conv2d_naive(input, layer, params);
    ASSERT_EQ(fast.shape, slow.shape);
    for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast.data[i], slow.data[i], 1e-9);
  }
}

TEST(Conv, OutputShape) {
  EXPECT_EQ(output_shape(LayerSpec::conv(3, 8, 3, 2, 1), {3, 9, 10}), (std::vector<int>{8, 5, 5}));
  EXPECT_EQ(output_shape(LayerSpec::maxpool(2, 2), {4, 7, 8}), (std::vector<int>{4, 3, 4}));
  EXPECT_EQ(output_shape(LayerSpec::global_avg_pool(), {4, 7, 8}), (std::vector<int>{4}));
}

TEST(LayerGradient, EveryKindMatchesCentralDifferences) {
  const std::vector<std::pair<LayerSpec, std::vector<int>>> cases{
      {LayerSpec::conv(2, 3, 3, 1, 1), {2, 6, 6}}, {LayerSpec::conv(2, 2, 2, 2, 0), {2, 7, 6}},
      {LayerSpec::relu(), {2, 4, 4}},              {LayerSpec::maxpool(3, 2), {2, 7, 7}},
      {LayerSpec::softmax2d(), {3, 2, 3}},         {LayerSpec::global_avg_pool(), {3, 4, 5}},
      {LayerSpec::linear(5, 3), {5}}};
  Rng rng(22);
  for (const auto& [layer, shape] : cases) {
    SCOPED_TRACE(std::string(to_string(layer.kind)));
    Tensor input = random_tensor(rng, shape);
    LayerParams params = random_params(rng, layer);
    const Tensor out = layer_forward(input, layer, params);
    const Tensor r = random_tensor(rng, out.shape);
    auto objective = [&] {
      const Tensor y = layer_forward(input, layer, params);
      return std::inner_product(y.data.begin(), y.data.end(), r.data.begin(), 0.0);
    };
    const LayerGradient g = layer_backward(input, out, r, layer, params, true);
    std::vector<double*> vars;
    for (double& v : input.data) vars.push_back(&v);
    std::vector<double> analytic = g.input.data;
    if (layer.has_parameters()) {
      for (double& v : params.weight.data) vars.push_back(&v);
      for (double& v : params.bias.data) vars.push_back(&v);
      analytic.insert(analytic.end(), g.params.weight.data.begin(), g.params.weight.data.end());
      analytic.insert(analytic.end(), g.params.bias.data.begin(), g.params.bias.data.end());
    }
    EXPECT_LT(oracle::relative_error(analytic, oracle::numeric_gradient(objective, vars, 1e-5)), 1e-6);
  }
}

TEST(Network, SpecDerivesStrideAndReceptiveField) {
  const NetworkSpec spec = NetworkSpec::make(
      "t", {LayerSpec::conv(3, 4, 3), LayerSpec::relu(), LayerSpec::maxpool(2, 2), LayerSpec::conv(4, 2, 3),
            LayerSpec::softmax2d()},
      2);
  EXPECT_EQ(spec.total_stride, 2);
  EXPECT_EQ(spec.receptive_field, 3 + 1 + 2 * 2);
  EXPECT_TRUE(spec.stride_consistent());
  EXPECT_EQ(locnet_mini_valid().receptive_field, 46);
  EXPECT_EQ(locnet_mini_valid().total_stride, 16);
  EXPECT_TRUE(locnet_mini_valid().stride_consistent());
  EXPECT_FALSE(locnet_mini().stride_consistent());
  EXPECT_EQ(NetworkSpec::from_json(spec.to_json()).hash(), spec.hash());
}

TEST(Network, MismatchedChannelsAreRejected) {
  EXPECT_THROW(NetworkSpec::make("bad", {LayerSpec::conv(3, 4, 3), LayerSpec::conv(5, 2, 1)}, 2), Error);
}

TEST(Network, WeightsRoundTripExactly) {
  const NetworkSpec spec = mitosnet_mini();
  const WeightStore weights = init_weights(spec, 99);
  EXPECT_EQ(decode_weights(encode_weights(weights, spec), spec), weights);
  EXPECT_EQ(init_weights(spec, 99), weights);
  EXPECT_NE(init_weights(spec, 100), weights);
  EXPECT_THROW(decode_weights(encode_weights(weights, spec), locnet_mini_valid()), Error);
}

TEST(Network, SoftmaxSumsToOne) {
  Rng rng(23);
  const Tensor p = softmax_channels(random_tensor(rng, {4, 3, 5}));
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 5; ++x) {
      double s = 0.0;
      for (int c = 0; c < 4; ++c) s += p.at(c, y, x);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Network, ComposedGradientMatchesLoss) {
  const NetworkSpec spec = NetworkSpec::make(
      "g", {LayerSpec::conv(2, 3, 3), LayerSpec::relu(), LayerSpec::conv(3, 2, 2, 2), LayerSpec::softmax2d()}, 2);
  WeightStore weights = init_weights(spec, 5);
  Rng rng(24);
  const Tensor input = random_tensor(rng, {2, 8, 8});
  const Tensor out = Network(spec, weights).forward(input);
  std::vector<int> labels(static_cast<std::size_t>(out.height() * out.width()));
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i == 2 ? kIgnoreLabel : static_cast<int>(i % 2);
  const Gradients g = backward(Network(spec, weights), input, labels);
  EXPECT_EQ(g.counted, labels.size() - 1);
  EXPECT_NEAR(g.loss, loss(Network(spec, weights), input, labels), 1e-12);
  std::vector<double*> vars;
  std::vector<double> analytic;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (!spec.layers[l].has_parameters()) continue;
    for (double& v : weights.layers[l].weight.data) vars.push_back(&v);
    for (double& v : weights.layers[l].bias.data) vars.push_back(&v);
    analytic.insert(analytic.end(), g.layers[l].weight.data.begin(), g.layers[l].weight.data.end());
    analytic.insert(analytic.end(), g.layers[l].bias.data.begin(), g.layers[l].bias.data.end());
  }
  auto objective = [&] { return loss(Network(spec, weights), input, labels); };
  EXPECT_LT(oracle::relative_error(analytic, oracle::numeric_gradient(objective, vars, 1e-5)), 1e-6);
}

TEST(Sgd, StepFollowsMomentumRule) {
  const NetworkSpec spec = NetworkSpec::make("s", {LayerSpec::linear(2, 2)}, 2);
  WeightStore weights = init_weights(spec, 1);
  const double w0 = weights.layers[0].weight.data[0];
  std::vector<LayerParams> grads = zero_gradients(spec).layers;
  grads[0].weight.data[0] = 0.5;
  SgdState state = make_sgd_state(spec);
  const SgdConfig config{0.1, 0.9, 0.01};
  sgd_step(spec, weights, grads, state, config);
  const double v1 = 0.5 + 0.01 * w0;
  EXPECT_NEAR(weights.layers[0].weight.data[0], w0 - 0.1 * v1, 1e-15);
  const double w1 = weights.layers[0].weight.data[0];
  sgd_step(spec, weights, grads, state, config);
  EXPECT_NEAR(weights.layers[0].weight.data[0], w1 - 0.1 * (0.9 * v1 + 0.5 + 0.01 * w1), 1e-15);
  grads[0].weight.data[1] = std::nan("");
  EXPECT_THROW(sgd_step(spec, weights, grads, state, config), Error);
}

TEST(Sgd, TrainingReducesLoss) {
  const NetworkSpec spec = NetworkSpec::make(
      "fit", {LayerSpec::conv(1, 4, 3), LayerSpec::relu(), LayerSpec::global_avg_pool(), LayerSpec::linear(4, 2)},
      2);
  WeightStore weights = init_weights(spec, 2);
  Rng rng(25);
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) {
    Tensor t = random_tensor(rng, {1, 6, 6});
    for (double& v : t.data) v += (i % 2) ? 1.0 : -1.0;
    inputs.push_back(t);
    labels.push_back(i % 2);
  }
  auto total = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) s += loss(Network(spec, weights), inputs[i], std::span(&labels[i], 1));
    return s;
  };
  const double before = total();
  SgdState state = make_sgd_state(spec);
  for (int epoch = 0; epoch < 30; ++epoch) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Gradients g = backward(Network(spec, weights), inputs[i], std::span(&labels[i], 1));
      sgd_step(spec, weights, g.layers, state, SgdConfig{0.05, 0.9, 0.0});
    }
  }
  EXPECT_LT(total(), 0.5 * before);
}

TEST(Tensor, ImageToTensorCentersAndPadsWithZero) {
  RasterImage image(2, 2, 3);
  std::fill(image.data().begin(), image.data().end(), 255);
  const Tensor t = image_to_tensor(image, -1, 0, 3, 2);
  EXPECT_EQ(t.shape, (std::vector<int>{3, 2, 3}));
  EXPECT_DOUBLE_EQ(t.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(t.at(1, 1, 1), 0.5);
}

}  // namespace
}  // namespace prolif
