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

// Minimal dense-tensor network engine: layer kernels, backpropagation, SGD,
// fully-convolutional inference and the cascade feature extractor.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prolif/io.hpp"
#include "prolif/raster.hpp"

namespace prolif {

/// Dense row-major float64 array, shaped (C, H, W) or (n).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_, double fill = 0.0);
  static Tensor chw(int c, int h, int w, double fill = 0.0) { return Tensor({c, h, w}, fill); }

  int rank() const { return static_cast<int>(shape.size()); }
  int channels() const { return shape[0]; }
  int height() const { return rank() == 3 ? shape[1] : 1; }
  int width() const { return rank() == 3 ? shape[2] : 1; }
  std::size_t size() const { return data.size(); }

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  /// Spatial window (zero outside), all channels.
  Tensor window(int x, int y, int w, int h) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Network input from an image window: v / 255 - 0.5, zero outside the image.
Tensor image_to_tensor(const RasterImage& image, int x, int y, int width, int height);
Tensor image_to_tensor(const RasterImage& image);

enum class LayerKind { kConv, kRelu, kMaxPool, kSoftmax2d, kGlobalAvgPool, kLinear };

std::string_view to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int in_channels = 0;   // conv input channels / linear input dim
  int out_channels = 0;  // conv filters / linear output dim
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  std::string name;

  static LayerSpec conv(int in, int out, int kernel, int stride = 1, int padding = 0);
  static LayerSpec relu();
  static LayerSpec maxpool(int kernel, int stride);
  static LayerSpec softmax2d();
  static LayerSpec global_avg_pool();
  static LayerSpec linear(int in, int out);

  bool has_parameters() const { return kind == LayerKind::kConv || kind == LayerKind::kLinear; }
  std::size_t parameter_count() const;
  std::vector<int> weight_shape() const;
  std::vector<int> bias_shape() const;
};

struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  int class_count = 0;  // 0 marks a headless feature extractor
  int total_stride = 1;
  int receptive_field = 1;

  /// Names the layers, derives stride and receptive field, validates.
  static NetworkSpec make(std::string name, std::vector<LayerSpec> layers, int class_count);

  /// Re-derives stride/receptive field and checks all invariants.
  void validate() const;

  bool fully_convolutional() const;
  /// Fully convolutional with zero padding everywhere: output cell (i, j)
  /// depends exactly on the input window at (i*S, j*S) of size RF.
  bool stride_consistent() const;
  std::size_t parameter_count() const;

  /// Index of the layer whose output is the penultimate representation.
  int penultimate_layer() const;

  Json to_json() const;
  static NetworkSpec from_json(const Json& j);
  std::string hash() const;
};

/// Padded detector: 1008x1008 tiles map to 63x63 cells.
NetworkSpec locnet_mini();
/// Padding-free variant (RF 46, stride 16) used wherever FCN and sliding
/// window inference must agree exactly.
NetworkSpec locnet_mini_valid();
/// RF 16, stride 16 mitosis detector.
NetworkSpec mitosnet_mini(int width1 = 16, int width2 = 32);
/// Three conv3x3(pad 1)+relu+maxpool2 blocks, global average pool, linear to 3.
NetworkSpec cascade_head(int in_channels, int feature_width = 64);

struct LayerParams {
  Tensor weight;
  Tensor bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct WeightStore {
  static constexpr int kFormatVersion = 1;

  std::string network_name;
  std::string spec_hash;
  std::uint64_t seed = 0;
  int version = kFormatVersion;
  std::vector<LayerParams> layers;  // parallel to NetworkSpec::layers

  friend bool operator==(const WeightStore&, const WeightStore&) = default;
};

/// He-uniform weights from `seed`, zero biases.
WeightStore init_weights(const NetworkSpec& spec, std::uint64_t seed);

/// JSON header line followed by raw little-endian float64 parameters in layer order.
std::string encode_weights(const WeightStore& weights, const NetworkSpec& spec);
WeightStore decode_weights(std::string_view bytes, const NetworkSpec& spec);
void save_weights(const WeightStore& weights, const NetworkSpec& spec,
                  const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path, const NetworkSpec& spec);

// --- layer kernels ---------------------------------------------------------

Tensor conv2d_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params);
Tensor layer_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params);

struct LayerGradient {
  Tensor input;  // empty when not requested
  LayerParams params;
};

LayerGradient layer_backward(const Tensor& input, const Tensor& output, const Tensor& grad_output,
                             const LayerSpec& layer, const LayerParams& params,
                             bool need_input_grad = true);

std::vector<int> output_shape(const LayerSpec& layer, const std::vector<int>& input_shape);

/// Channel softmax at every spatial position (or over a vector).
Tensor softmax_channels(const Tensor& logits);

class Network {
 public:
  Network(NetworkSpec spec, WeightStore weights);

  const NetworkSpec& spec() const { return spec_; }
  const WeightStore& weights() const { return weights_; }

  /// Activations after each layer up to and including `last` (default: all).
  std::vector<Tensor> forward_all(const Tensor& input, int last = -1) const;
  Tensor forward(const Tensor& input) const;
  /// Applies layers [first, last] to `input` (the output of layer first - 1).
  Tensor forward_layers(const Tensor& input, int first, int last) const;

  /// Index of the last layer that is not a trailing softmax.
  int logits_layer() const;
  Tensor logits(const Tensor& input) const;
  Tensor probabilities(const Tensor& input) const;
  Tensor penultimate(const Tensor& input) const;

  /// Layers [0, penultimate_layer()] as a headless network with shared weights.
  Network trunk() const;

 private:
  NetworkSpec spec_;
  WeightStore weights_;
};

inline constexpr int kIgnoreLabel = 255;

struct Gradients {
  std::vector<LayerParams> layers;
  double loss = 0.0;
  std::size_t counted = 0;  // positions contributing to the mean
};

Gradients zero_gradients(const NetworkSpec& spec);

/// Mean per-position softmax cross-entropy on the logits and exact gradients.
/// `labels` has one entry per output position (row-major); kIgnoreLabel
/// positions are excluded from the mean.
Gradients backward(const Network& network, const Tensor& input, std::span<const int> labels);

/// Mean cross-entropy only.
double loss(const Network& network, const Tensor& input, std::span<const int> labels);

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct SgdState {
  std::vector<LayerParams> velocity;
};

SgdState make_sgd_state(const NetworkSpec& spec);

/// v <- m*v + g + wd*w ; w <- w - lr*v. Throws kNumeric on non-finite gradients.
void sgd_step(const NetworkSpec& spec, WeightStore& weights, const std::vector<LayerParams>& grads,
              SgdState& state, const SgdConfig& config);

/// Logits of a fully-convolutional network over a whole tile. Tile sides must
/// be multiples of the total stride.
Tensor fcn_forward(const Network& network, const Tensor& tile);

struct CascadeOutput {
  std::vector<double> features;  // mean penultimate activations
  std::array<double, 3> probs{};
};

/// Runs the frozen trunk on each patch, then the head; averages over patches.
CascadeOutput cascade_features(const Network& trunk, const Network& head,
                               std::span<const Tensor> patches);
/// Same, starting from precomputed trunk activations.
CascadeOutput cascade_features_from_trunk(const Network& head,
                                          std::span<const Tensor> trunk_outputs);

}  // namespace prolif
