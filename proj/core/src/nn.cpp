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

#include "prolif/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include <Eigen/Core>

#include "prolif/error.hpp"
#include "prolif/random.hpp"

namespace prolif {

static_assert(std::endian::native == std::endian::little,
              "weight files are written in host order and must be little-endian");

Tensor::Tensor(std::vector<int> shape_, double fill) : shape(std::move(shape_)) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, ErrorKind::kInvalidArgument, "tensor dimensions must be non-negative");
    n *= static_cast<std::size_t>(d);
  }
  data.assign(n, fill);
}

Tensor Tensor::window(int x, int y, int w, int h) const {
  require(rank() == 3, ErrorKind::kInvalidArgument, "window needs a (C,H,W) tensor");
  Tensor out = Tensor::chw(channels(), h, w);
  const int x0 = std::max(x, 0);
  const int x1 = std::min(x + w, width());
  if (x0 >= x1) return out;
  for (int c = 0; c < channels(); ++c) {
    for (int yy = std::max(y, 0); yy < std::min(y + h, height()); ++yy) {
      const double* src = &data[(static_cast<std::size_t>(c) * height() + yy) * width() + x0];
      std::copy(src, src + (x1 - x0), &out.at(c, yy - y, x0 - x));
    }
  }
  return out;
}

Tensor image_to_tensor(const RasterImage& image, int x, int y, int width, int height) {
  const int channels = image.channels();
  Tensor out = Tensor::chw(channels, height, width);
  const int x0 = std::max(x, 0);
  const int x1 = std::min(x + width, image.width());
  for (int yy = std::max(y, 0); yy < std::min(y + height, image.height()); ++yy) {
    for (int xx = x0; xx < x1; ++xx) {
      for (int c = 0; c < channels; ++c) {
        out.at(c, yy - y, xx - x) = image.at(xx, yy, c) / 255.0 - 0.5;
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const RasterImage& image) {
  return image_to_tensor(image, 0, 0, image.width(), image.height());
}

// --- specs --------------------------------------------------------------------

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kSoftmax2d: return "softmax2d";
    case LayerKind::kGlobalAvgPool: return "globalavgpool";
    case LayerKind::kLinear: return "linear";
  }
  return "?";
}

namespace {

LayerKind kind_from_string(std::string_view s) {
  for (LayerKind k : {LayerKind::kConv, LayerKind::kRelu, LayerKind::kMaxPool,
                      LayerKind::kSoftmax2d, LayerKind::kGlobalAvgPool, LayerKind::kLinear}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorKind::kFormat, "unknown layer kind " + std::string(s));
}

}  // namespace

LayerSpec LayerSpec::conv(int in, int out, int kernel, int stride, int padding) {
  return {LayerKind::kConv, in, out, kernel, stride, padding, {}};
}
LayerSpec LayerSpec::relu() { return {LayerKind::kRelu, 0, 0, 0, 1, 0, {}}; }
LayerSpec LayerSpec::maxpool(int kernel, int stride) {
  return {LayerKind::kMaxPool, 0, 0, kernel, stride, 0, {}};
}
LayerSpec LayerSpec::softmax2d() { return {LayerKind::kSoftmax2d, 0, 0, 0, 1, 0, {}}; }
LayerSpec LayerSpec::global_avg_pool() { return {LayerKind::kGlobalAvgPool, 0, 0, 0, 1, 0, {}}; }
LayerSpec LayerSpec::linear(int in, int out) { return {LayerKind::kLinear, in, out, 0, 1, 0, {}}; }

std::vector<int> LayerSpec::weight_shape() const {
  if (kind == LayerKind::kConv) return {out_channels, in_channels, kernel, kernel};
  if (kind == LayerKind::kLinear) return {out_channels, in_channels};
  return {};
}

std::vector<int> LayerSpec::bias_shape() const {
  if (has_parameters()) return {out_channels};
  return {};
}

std::size_t LayerSpec::parameter_count() const {
  if (kind == LayerKind::kConv) {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel + out_channels;
  }
  if (kind == LayerKind::kLinear) {
    return static_cast<std::size_t>(out_channels) * in_channels + out_channels;
  }
  return 0;
}

namespace {

struct Geometry {
  int stride = 1;
  int receptive_field = 1;
};

// Stride and receptive field of the spatial prefix (up to the first global layer).
Geometry derive_geometry(const std::vector<LayerSpec>& layers) {
  Geometry g;
  for (const LayerSpec& layer : layers) {
    if (layer.kind == LayerKind::kGlobalAvgPool || layer.kind == LayerKind::kLinear) break;
    if (layer.kind == LayerKind::kConv || layer.kind == LayerKind::kMaxPool) {
      g.receptive_field += (layer.kernel - 1) * g.stride;
      g.stride *= layer.stride;
    }
  }
  return g;
}

}  // namespace

NetworkSpec NetworkSpec::make(std::string name, std::vector<LayerSpec> layers, int class_count) {
  int conv = 0, relu = 0, pool = 0, fc = 0;
  for (LayerSpec& layer : layers) {
    switch (layer.kind) {
      case LayerKind::kConv: layer.name = "conv" + std::to_string(++conv); break;
      case LayerKind::kRelu: layer.name = "relu" + std::to_string(++relu); break;
      case LayerKind::kMaxPool: layer.name = "pool" + std::to_string(++pool); break;
      case LayerKind::kSoftmax2d: layer.name = "softmax"; break;
      case LayerKind::kGlobalAvgPool: layer.name = "gap"; break;
      case LayerKind::kLinear: layer.name = "fc" + std::to_string(++fc); break;
    }
  }
  NetworkSpec spec;
  spec.name = std::move(name);
  spec.layers = std::move(layers);
  spec.class_count = class_count;
  const Geometry g = derive_geometry(spec.layers);
  spec.total_stride = g.stride;
  spec.receptive_field = g.receptive_field;
  spec.validate();
  return spec;
}

void NetworkSpec::validate() const {
  require(!layers.empty(), ErrorKind::kInvalidArgument, name + ": network has no layers");
  int channels = -1;  // unknown until the first parameterized layer
  bool vector_mode = false;
  for (const LayerSpec& layer : layers) {
    const std::string where = name + "/" + layer.name;
    require(layer.stride >= 1 && layer.padding >= 0, ErrorKind::kInvalidArgument,
            where + ": stride must be >= 1 and padding >= 0");
    switch (layer.kind) {
      case LayerKind::kConv:
        require(!vector_mode, ErrorKind::kInvalidArgument, where + ": conv after a global layer");
        require(layer.in_channels > 0 && layer.out_channels > 0 && layer.kernel > 0,
                ErrorKind::kInvalidArgument, where + ": conv dimensions must be positive");
        require(channels < 0 || channels == layer.in_channels, ErrorKind::kInvalidArgument,
                where + ": input channel mismatch");
        channels = layer.out_channels;
        break;
      case LayerKind::kMaxPool:
        require(!vector_mode && layer.kernel > 0, ErrorKind::kInvalidArgument,
                where + ": bad maxpool");
        break;
      case LayerKind::kGlobalAvgPool:
        require(!vector_mode, ErrorKind::kInvalidArgument, where + ": repeated global pooling");
        vector_mode = true;
        break;
      case LayerKind::kLinear:
        require(layer.in_channels > 0 && layer.out_channels > 0, ErrorKind::kInvalidArgument,
                where + ": linear dimensions must be positive");
        require(channels < 0 || channels == layer.in_channels, ErrorKind::kInvalidArgument,
                where + ": linear input mismatch");
        channels = layer.out_channels;
        vector_mode = true;
        break;
      case LayerKind::kRelu:
      case LayerKind::kSoftmax2d:
        break;
    }
  }
  const Geometry g = derive_geometry(layers);
  require(g.stride == total_stride && g.receptive_field == receptive_field,
          ErrorKind::kInvalidArgument, name + ": stored stride/receptive field are stale");
  if (class_count > 0) {
    require(channels == class_count, ErrorKind::kInvalidArgument,
            name + ": final layer must emit class_count channels");
  }
}

bool NetworkSpec::fully_convolutional() const {
  return std::all_of(layers.begin(), layers.end(), [](const LayerSpec& l) {
    return l.kind != LayerKind::kGlobalAvgPool && l.kind != LayerKind::kLinear;
  });
}

bool NetworkSpec::stride_consistent() const {
  return fully_convolutional() &&
         std::all_of(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.padding == 0; });
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t n = 0;
  for (const LayerSpec& layer : layers) n += layer.parameter_count();
  return n;
}

int NetworkSpec::penultimate_layer() const {
  if (class_count == 0) return static_cast<int>(layers.size()) - 1;
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    if (layers[i].has_parameters()) return i - 1;
  }
  return -1;
}

Json NetworkSpec::to_json() const {
  Json ls = Json::array();
  for (const LayerSpec& l : layers) {
    Json j{{"kind", std::string(to_string(l.kind))}};
    if (l.kind == LayerKind::kConv) {
      j["in"] = l.in_channels;
      j["out"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
    } else if (l.kind == LayerKind::kMaxPool) {
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
    } else if (l.kind == LayerKind::kLinear) {
      j["in"] = l.in_channels;
      j["out"] = l.out_channels;
    }
    ls.push_back(std::move(j));
  }
  return Json{{"name", name},
              {"class_count", class_count},
              {"layers", ls},
              {"total_stride", total_stride},
              {"receptive_field", receptive_field}};
}

NetworkSpec NetworkSpec::from_json(const Json& j) {
  std::vector<LayerSpec> layers;
  for (const Json& l : j.at("layers")) {
    LayerSpec spec;
    spec.kind = kind_from_string(l.at("kind").get<std::string>());
    spec.in_channels = l.value("in", 0);
    spec.out_channels = l.value("out", 0);
    spec.kernel = l.value("kernel", 0);
    spec.stride = l.value("stride", 1);
    spec.padding = l.value("padding", 0);
    layers.push_back(spec);
  }
  NetworkSpec spec = make(j.at("name").get<std::string>(), std::move(layers),
                          j.at("class_count").get<int>());
  if (j.contains("total_stride")) {
    require(j["total_stride"].get<int>() == spec.total_stride &&
                j["receptive_field"].get<int>() == spec.receptive_field,
            ErrorKind::kFormat, spec.name + ": stored stride/receptive field mismatch");
  }
  return spec;
}

std::string NetworkSpec::hash() const { return hex64(fnv1a64(to_json().dump())); }

NetworkSpec locnet_mini() {
  using L = LayerSpec;
  return NetworkSpec::make("locnet-mini",
                           {L::conv(3, 8, 3, 1, 1), L::relu(), L::maxpool(2, 2),
                            L::conv(8, 16, 3, 1, 1), L::relu(), L::maxpool(2, 2),
                            L::conv(16, 32, 3, 1, 1), L::relu(), L::maxpool(2, 2),
                            L::conv(32, 32, 3, 1, 1), L::relu(), L::maxpool(2, 2),
                            L::conv(32, 2, 1)},
                           2);
}

NetworkSpec locnet_mini_valid() {
  using L = LayerSpec;
  return NetworkSpec::make("locnet-mini-valid",
                           {L::conv(3, 8, 3), L::relu(), L::maxpool(2, 2), L::conv(8, 16, 3),
                            L::relu(), L::maxpool(2, 2), L::conv(16, 32, 3), L::relu(),
                            L::maxpool(2, 2), L::conv(32, 32, 3), L::relu(), L::maxpool(2, 2),
                            L::conv(32, 2, 1)},
                           2);
}

NetworkSpec mitosnet_mini(int width1, int width2) {
  using L = LayerSpec;
  return NetworkSpec::make("mitosnet-mini",
                           {L::conv(3, width1, 4, 4), L::relu(), L::conv(width1, width2, 4, 4),
                            L::relu(), L::conv(width2, 2, 1), L::softmax2d()},
                           2);
}

NetworkSpec cascade_head(int in_channels, int feature_width) {
  using L = LayerSpec;
  const int w1 = std::max(4, feature_width / 8);
  const int w2 = std::max(4, feature_width / 4);
  return NetworkSpec::make("cascade-head",
                           {L::conv(in_channels, w1, 3, 1, 1), L::relu(), L::maxpool(2, 2),
                            L::conv(w1, w2, 3, 1, 1), L::relu(), L::maxpool(2, 2),
                            L::conv(w2, feature_width, 3, 1, 1), L::relu(), L::maxpool(2, 2),
                            L::global_avg_pool(), L::linear(feature_width, 3)},
                           3);
}

// --- weights ------------------------------------------------------------------

WeightStore init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  WeightStore store;
  store.network_name = spec.name;
  store.spec_hash = spec.hash();
  store.seed = seed;
  Rng rng(derive_seed(seed, 0x5eed));
  for (const LayerSpec& layer : spec.layers) {
    LayerParams params;
    if (layer.has_parameters()) {
      params.weight = Tensor(layer.weight_shape());
      params.bias = Tensor(layer.bias_shape());
      const int fan_in = layer.kind == LayerKind::kConv
                             ? layer.in_channels * layer.kernel * layer.kernel
                             : layer.in_channels;
      const double bound = std::sqrt(6.0 / fan_in);
      for (double& w : params.weight.data) w = rng.uniform(-bound, bound);
    }
    store.layers.push_back(std::move(params));
  }
  return store;
}

namespace {

void check_store(const WeightStore& weights, const NetworkSpec& spec) {
  require(weights.layers.size() == spec.layers.size(), ErrorKind::kFormat,
          "weights do not match network " + spec.name);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const LayerParams& p = weights.layers[i];
    require(p.weight.shape == (layer.has_parameters() ? layer.weight_shape() : std::vector<int>{}) &&
                p.bias.shape == layer.bias_shape(),
            ErrorKind::kFormat, "weight shapes do not match layer " + layer.name);
  }
}

}  // namespace

std::string encode_weights(const WeightStore& weights, const NetworkSpec& spec) {
  check_store(weights, spec);
  Json layers = Json::array();
  std::size_t count = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (!spec.layers[i].has_parameters()) continue;
    layers.push_back({{"name", spec.layers[i].name},
                      {"weight", weights.layers[i].weight.shape},
                      {"bias", weights.layers[i].bias.shape}});
    count += weights.layers[i].weight.size() + weights.layers[i].bias.size();
  }
  const Json header{{"format", "prolif-weights"},
                    {"version", weights.version},
                    {"name", weights.network_name},
                    {"spec_hash", weights.spec_hash},
                    {"seed", weights.seed},
                    {"layers", layers},
                    {"parameter_count", count}};
  std::string out = header.dump() + "\n";
  for (const LayerParams& p : weights.layers) {
    for (const Tensor* t : {&p.weight, &p.bias}) {
      out.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(double));
    }
  }
  return out;
}

WeightStore decode_weights(std::string_view bytes, const NetworkSpec& spec) {
  const auto newline = bytes.find('\n');
  require(newline != std::string_view::npos, ErrorKind::kFormat, "weights: missing header");
  const Json header = parse_json(bytes.substr(0, newline), "weights header");
  require(header.value("format", "") == "prolif-weights", ErrorKind::kFormat,
          "weights: wrong format tag");
  require(header.value("version", 0) == WeightStore::kFormatVersion, ErrorKind::kFormat,
          "weights: unsupported version");
  require(header.value("spec_hash", "") == spec.hash(), ErrorKind::kFormat,
          "weights were trained for a different network spec than " + spec.name);
  WeightStore store;
  store.network_name = header.at("name").get<std::string>();
  store.spec_hash = header.at("spec_hash").get<std::string>();
  store.seed = header.at("seed").get<std::uint64_t>();
  std::size_t offset = newline + 1;
  for (const LayerSpec& layer : spec.layers) {
    LayerParams params;
    if (layer.has_parameters()) {
      params.weight = Tensor(layer.weight_shape());
      params.bias = Tensor(layer.bias_shape());
      for (Tensor* t : {&params.weight, &params.bias}) {
        const std::size_t n = t->data.size() * sizeof(double);
        require(offset + n <= bytes.size(), ErrorKind::kFormat, "weights: truncated payload");
        std::memcpy(t->data.data(), bytes.data() + offset, n);
        offset += n;
      }
    }
    store.layers.push_back(std::move(params));
  }
  require(offset == bytes.size(), ErrorKind::kFormat, "weights: trailing bytes");
  return store;
}

void save_weights(const WeightStore& weights, const NetworkSpec& spec,
                  const std::filesystem::path& path) {
  write_file(path, encode_weights(weights, spec));
}

WeightStore load_weights(const std::filesystem::path& path, const NetworkSpec& spec) {
  return decode_weights(read_file(path), spec);
}

// --- kernels ------------------------------------------------------------------

namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
int ceil_div(int a, int b) { return -floor_div(-a, b); }

// Valid output range [lo, hi] so that o*stride + k - pad lies in [0, size).
void valid_range(int out_size, int in_size, int stride, int k, int pad, int& lo, int& hi) {
  lo = std::max(0, ceil_div(pad - k, stride));
  hi = std::min(out_size - 1, floor_div(in_size - 1 + pad - k, stride));
}

double dot4(const double* __restrict a, const double* __restrict b, int n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void check_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "non-finite value in " + what);
  }
}

}  // namespace

std::vector<int> output_shape(const LayerSpec& layer, const std::vector<int>& in) {
  switch (layer.kind) {
    case LayerKind::kConv: {
      require(in.size() == 3 && in[0] == layer.in_channels, ErrorKind::kInvalidArgument,
              layer.name + ": input channel mismatch");
      const int oh = floor_div(in[1] + 2 * layer.padding - layer.kernel, layer.stride) + 1;
      const int ow = floor_div(in[2] + 2 * layer.padding - layer.kernel, layer.stride) + 1;
      require(oh >= 1 && ow >= 1, ErrorKind::kInvalidArgument,
              layer.name + ": input smaller than kernel");
      return {layer.out_channels, oh, ow};
    }
    case LayerKind::kMaxPool: {
      require(in.size() == 3, ErrorKind::kInvalidArgument, layer.name + ": needs (C,H,W)");
      const int oh = floor_div(in[1] - layer.kernel, layer.stride) + 1;
      const int ow = floor_div(in[2] - layer.kernel, layer.stride) + 1;
      require(oh >= 1 && ow >= 1, ErrorKind::kInvalidArgument,
              layer.name + ": input smaller than pooling window");
      return {in[0], oh, ow};
    }
    case LayerKind::kGlobalAvgPool:
      require(in.size() == 3, ErrorKind::kInvalidArgument, layer.name + ": needs (C,H,W)");
      return {in[0]};
    case LayerKind::kLinear: {
      std::size_t n = 1;
      for (int d : in) n *= d;
      require(static_cast<int>(n) == layer.in_channels, ErrorKind::kInvalidArgument,
              layer.name + ": linear input size mismatch");
      return {layer.out_channels};
    }
    case LayerKind::kRelu:
    case LayerKind::kSoftmax2d:
      return in;
  }
  return in;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

// Convolutions run as GEMMs over blocks of output rows: the block's input
// windows are unrolled into a (C*K*K) x (rows*OW) matrix.
struct ConvGeometry {
  int C, H, W, OC, OH, OW, K, S, P;
  int rows_per_block() const { return std::min(OH, std::max(1, 4096 / std::max(1, OW))); }
  int patch() const { return C * K * K; }
};

ConvGeometry conv_geometry(const LayerSpec& layer, const std::vector<int>& in,
                           const std::vector<int>& out) {
  return {in[0], in[1], in[2], out[0], out[1], out[2], layer.kernel, layer.stride, layer.padding};
}

void im2col(const ConvGeometry& g, const double* input, int oy0, int rows, double* cols) {
  const std::size_t m = static_cast<std::size_t>(rows) * g.OW;
  for (int ic = 0; ic < g.C; ++ic) {
    for (int ky = 0; ky < g.K; ++ky) {
      for (int kx = 0; kx < g.K; ++kx) {
        double* dst = cols + (static_cast<std::size_t>(ic * g.K + ky) * g.K + kx) * m;
        int lo, hi;
        valid_range(g.OW, g.W, g.S, kx, g.P, lo, hi);
        for (int r = 0; r < rows; ++r) {
          double* d = dst + static_cast<std::size_t>(r) * g.OW;
          const int iy = (oy0 + r) * g.S + ky - g.P;
          if (iy < 0 || iy >= g.H || lo > hi) {
            std::fill(d, d + g.OW, 0.0);
            continue;
          }
          const double* src = input + (static_cast<std::size_t>(ic) * g.H + iy) * g.W + (kx - g.P);
          std::fill(d, d + lo, 0.0);
          if (g.S == 1) {
            std::copy(src + lo, src + hi + 1, d + lo);
          } else {
            for (int ox = lo; ox <= hi; ++ox) d[ox] = src[static_cast<std::size_t>(ox) * g.S];
          }
          std::fill(d + hi + 1, d + g.OW, 0.0);
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, int oy0, int rows, double* grad_input) {
  const std::size_t m = static_cast<std::size_t>(rows) * g.OW;
  for (int ic = 0; ic < g.C; ++ic) {
    for (int ky = 0; ky < g.K; ++ky) {
      for (int kx = 0; kx < g.K; ++kx) {
        const double* src = cols + (static_cast<std::size_t>(ic * g.K + ky) * g.K + kx) * m;
        int lo, hi;
        valid_range(g.OW, g.W, g.S, kx, g.P, lo, hi);
        if (lo > hi) continue;
        for (int r = 0; r < rows; ++r) {
          const int iy = (oy0 + r) * g.S + ky - g.P;
          if (iy < 0 || iy >= g.H) continue;
          const double* s = src + static_cast<std::size_t>(r) * g.OW;
          double* d = grad_input + (static_cast<std::size_t>(ic) * g.H + iy) * g.W + (kx - g.P);
          for (int ox = lo; ox <= hi; ++ox) d[static_cast<std::size_t>(ox) * g.S] += s[ox];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params) {
  const std::vector<int> os = output_shape(layer, input.shape);
  Tensor out(os);
  const ConvGeometry g = conv_geometry(layer, input.shape, os);
  const Eigen::Map<const RowMatrix> w(params.weight.data.data(), g.OC, g.patch());
  const Eigen::Map<const Eigen::VectorXd> bias(params.bias.data.data(), g.OC);
  const int block = g.rows_per_block();
  std::vector<double> cols(static_cast<std::size_t>(g.patch()) * block * g.OW);
  const std::size_t plane = static_cast<std::size_t>(g.OH) * g.OW;
  for (int oy0 = 0; oy0 < g.OH; oy0 += block) {
    const int rows = std::min(block, g.OH - oy0);
    const int m = rows * g.OW;
    im2col(g, input.data.data(), oy0, rows, cols.data());
    const Eigen::Map<const RowMatrix> c(cols.data(), g.patch(), m);
    StridedMap o(out.data.data() + static_cast<std::size_t>(oy0) * g.OW, g.OC, m,
                 Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
    o.noalias() = w * c;
    o.colwise() += bias;
  }
  return out;
}

namespace {

Tensor maxpool_forward(const Tensor& input, const LayerSpec& layer) {
  const std::vector<int> os = output_shape(layer, input.shape);
  Tensor out(os);
  const int K = layer.kernel, S = layer.stride;
  for (int c = 0; c < os[0]; ++c) {
    for (int oy = 0; oy < os[1]; ++oy) {
      for (int ox = 0; ox < os[2]; ++ox) {
        double best = input.at(c, oy * S, ox * S);
        for (int ky = 0; ky < K; ++ky) {
          for (int kx = 0; kx < K; ++kx) best = std::max(best, input.at(c, oy * S + ky, ox * S + kx));
        }
        out.at(c, oy, ox) = best;
      }
    }
  }
  return out;
}

Tensor global_avg_pool_forward(const Tensor& input) {
  Tensor out({input.channels()});
  const std::size_t plane = static_cast<std::size_t>(input.height()) * input.width();
  for (int c = 0; c < input.channels(); ++c) {
    const double* p = &input.data[c * plane];
    out.data[c] = std::accumulate(p, p + plane, 0.0) / static_cast<double>(plane);
  }
  return out;
}

Tensor linear_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params) {
  Tensor out(output_shape(layer, input.shape));
  for (int o = 0; o < layer.out_channels; ++o) {
    out.data[o] = params.bias.data[o] +
                  dot4(&params.weight.data[static_cast<std::size_t>(o) * layer.in_channels],
                       input.data.data(), layer.in_channels);
  }
  return out;
}

}  // namespace

Tensor softmax_channels(const Tensor& logits) {
  Tensor out = logits;
  const int C = logits.channels();
  const std::size_t plane = logits.size() / C;
  for (std::size_t p = 0; p < plane; ++p) {
    double mx = logits.data[p];
    for (int c = 1; c < C; ++c) mx = std::max(mx, logits.data[c * plane + p]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      const double e = std::exp(logits.data[c * plane + p] - mx);
      out.data[c * plane + p] = e;
      sum += e;
    }
    for (int c = 0; c < C; ++c) out.data[c * plane + p] /= sum;
  }
  return out;
}

Tensor layer_forward(const Tensor& input, const LayerSpec& layer, const LayerParams& params) {
  switch (layer.kind) {
    case LayerKind::kConv: return conv2d_forward(input, layer, params);
    case LayerKind::kRelu: {
      Tensor out = input;
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::kMaxPool: return maxpool_forward(input, layer);
    case LayerKind::kSoftmax2d: return softmax_channels(input);
    case LayerKind::kGlobalAvgPool: return global_avg_pool_forward(input);
    case LayerKind::kLinear: return linear_forward(input, layer, params);
  }
  return input;
}

LayerGradient layer_backward(const Tensor& input, const Tensor& output, const Tensor& grad_output,
                             const LayerSpec& layer, const LayerParams& params,
                             bool need_input_grad) {
  LayerGradient g;
  if (need_input_grad) g.input = Tensor(input.shape);
  switch (layer.kind) {
    case LayerKind::kConv: {
      g.params.weight = Tensor(params.weight.shape);
      g.params.bias = Tensor(params.bias.shape);
      const ConvGeometry cg = conv_geometry(layer, input.shape, output.shape);
      const std::size_t plane = static_cast<std::size_t>(cg.OH) * cg.OW;
      for (int oc = 0; oc < cg.OC; ++oc) {
        const double* go = &grad_output.data[oc * plane];
        g.params.bias.data[oc] = std::accumulate(go, go + plane, 0.0);
      }
      const Eigen::Map<const RowMatrix> w(params.weight.data.data(), cg.OC, cg.patch());
      Eigen::Map<RowMatrix> gw(g.params.weight.data.data(), cg.OC, cg.patch());
      const int block = cg.rows_per_block();
      std::vector<double> cols(static_cast<std::size_t>(cg.patch()) * block * cg.OW);
      RowMatrix dcols;
      for (int oy0 = 0; oy0 < cg.OH; oy0 += block) {
        const int rows = std::min(block, cg.OH - oy0);
        const int m = rows * cg.OW;
        im2col(cg, input.data.data(), oy0, rows, cols.data());
        const Eigen::Map<const RowMatrix> c(cols.data(), cg.patch(), m);
        const ConstStridedMap go(grad_output.data.data() + static_cast<std::size_t>(oy0) * cg.OW,
                                 cg.OC, m, Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
        gw.noalias() += go * c.transpose();
        if (need_input_grad) {
          dcols.noalias() = w.transpose() * go;
          col2im_add(cg, dcols.data(), oy0, rows, g.input.data.data());
        }
      }
      break;
    }
    case LayerKind::kRelu:
      if (need_input_grad) {
        for (std::size_t i = 0; i < input.size(); ++i) {
          g.input.data[i] = input.data[i] > 0.0 ? grad_output.data[i] : 0.0;
        }
      }
      break;
    case LayerKind::kMaxPool:
      if (need_input_grad) {
        const int K = layer.kernel, S = layer.stride;
        for (int c = 0; c < output.channels(); ++c) {
          for (int oy = 0; oy < output.height(); ++oy) {
            for (int ox = 0; ox < output.width(); ++ox) {
              int by = oy * S, bx = ox * S;
              double best = input.at(c, by, bx);
              for (int ky = 0; ky < K; ++ky) {
                for (int kx = 0; kx < K; ++kx) {
                  const double v = input.at(c, oy * S + ky, ox * S + kx);
                  if (v > best) {
                    best = v;
                    by = oy * S + ky;
                    bx = ox * S + kx;
                  }
                }
              }
              g.input.at(c, by, bx) += grad_output.at(c, oy, ox);
            }
          }
        }
      }
      break;
    case LayerKind::kSoftmax2d:
      if (need_input_grad) {
        const int C = output.channels();
        const std::size_t plane = output.size() / C;
        for (std::size_t p = 0; p < plane; ++p) {
          double dot = 0.0;
          for (int c = 0; c < C; ++c) dot += grad_output.data[c * plane + p] * output.data[c * plane + p];
          for (int c = 0; c < C; ++c) {
            g.input.data[c * plane + p] =
                output.data[c * plane + p] * (grad_output.data[c * plane + p] - dot);
          }
        }
      }
      break;
    case LayerKind::kGlobalAvgPool:
      if (need_input_grad) {
        const std::size_t plane = static_cast<std::size_t>(input.height()) * input.width();
        for (int c = 0; c < input.channels(); ++c) {
          const double v = grad_output.data[c] / static_cast<double>(plane);
          std::fill(&g.input.data[c * plane], &g.input.data[c * plane] + plane, v);
        }
      }
      break;
    case LayerKind::kLinear: {
      g.params.weight = Tensor(params.weight.shape);
      g.params.bias = Tensor(params.bias.shape);
      for (int o = 0; o < layer.out_channels; ++o) {
        const double go = grad_output.data[o];
        g.params.bias.data[o] = go;
        double* gw = &g.params.weight.data[static_cast<std::size_t>(o) * layer.in_channels];
        const double* w = &params.weight.data[static_cast<std::size_t>(o) * layer.in_channels];
        for (int i = 0; i < layer.in_channels; ++i) {
          gw[i] = go * input.data[i];
          if (need_input_grad) g.input.data[i] += go * w[i];
        }
      }
      break;
    }
  }
  return g;
}

// --- network --------------------------------------------------------------------

Network::Network(NetworkSpec spec, WeightStore weights)
    : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  check_store(weights_, spec_);
}

std::vector<Tensor> Network::forward_all(const Tensor& input, int last) const {
  if (last < 0) last = static_cast<int>(spec_.layers.size()) - 1;
  std::vector<Tensor> acts;
  acts.reserve(last + 1);
  const Tensor* current = &input;
  for (int i = 0; i <= last; ++i) {
    acts.push_back(layer_forward(*current, spec_.layers[i], weights_.layers[i]));
    current = &acts.back();
  }
  return acts;
}

namespace {

Tensor forward_streaming(const NetworkSpec& spec, const WeightStore& weights, const Tensor& input,
                         int last, int first = 0) {
  Tensor current = input;
  for (int i = first; i <= last; ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (layer.kind == LayerKind::kRelu) {
      for (double& v : current.data) v = v > 0.0 ? v : 0.0;
    } else {
      current = layer_forward(current, layer, weights.layers[i]);
    }
  }
  return current;
}

}  // namespace

Tensor Network::forward(const Tensor& input) const {
  return forward_streaming(spec_, weights_, input, static_cast<int>(spec_.layers.size()) - 1);
}

Tensor Network::forward_layers(const Tensor& input, int first, int last) const {
  require(first >= 0 && last < static_cast<int>(spec_.layers.size()), ErrorKind::kInvalidArgument,
          spec_.name + ": layer range out of bounds");
  return forward_streaming(spec_, weights_, input, last, first);
}

int Network::logits_layer() const {
  int last = static_cast<int>(spec_.layers.size()) - 1;
  if (spec_.layers[last].kind == LayerKind::kSoftmax2d) --last;
  return last;
}

Tensor Network::logits(const Tensor& input) const {
  return forward_streaming(spec_, weights_, input, logits_layer());
}

Tensor Network::probabilities(const Tensor& input) const { return softmax_channels(logits(input)); }

Tensor Network::penultimate(const Tensor& input) const {
  return forward_streaming(spec_, weights_, input, spec_.penultimate_layer());
}

Network Network::trunk() const {
  const int last = spec_.penultimate_layer();
  require(last >= 0, ErrorKind::kInvalidArgument, spec_.name + " has no trunk");
  std::vector<LayerSpec> layers(spec_.layers.begin(), spec_.layers.begin() + last + 1);
  NetworkSpec trunk_spec = NetworkSpec::make(spec_.name + "-trunk", std::move(layers), 0);
  WeightStore store;
  store.network_name = trunk_spec.name;
  store.spec_hash = trunk_spec.hash();
  store.seed = weights_.seed;
  store.layers.assign(weights_.layers.begin(), weights_.layers.begin() + last + 1);
  return Network(std::move(trunk_spec), std::move(store));
}

Gradients zero_gradients(const NetworkSpec& spec) {
  Gradients g;
  for (const LayerSpec& layer : spec.layers) {
    LayerParams p;
    if (layer.has_parameters()) {
      p.weight = Tensor(layer.weight_shape());
      p.bias = Tensor(layer.bias_shape());
    }
    g.layers.push_back(std::move(p));
  }
  return g;
}

namespace {

// Cross-entropy on logits; fills dlogits with the gradient of the mean loss.
double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* dlogits,
                     std::size_t& counted) {
  const int C = logits.channels();
  const std::size_t plane = logits.size() / C;
  require(labels.size() == plane, ErrorKind::kInvalidArgument,
          "label count " + std::to_string(labels.size()) + " does not match output positions " +
              std::to_string(plane));
  counted = 0;
  for (int label : labels) {
    if (label == kIgnoreLabel) continue;
    require(label >= 0 && label < C, ErrorKind::kInvalidArgument,
            "label " + std::to_string(label) + " out of range");
    ++counted;
  }
  if (dlogits) *dlogits = Tensor(logits.shape);
  if (counted == 0) return 0.0;
  const Tensor probs = softmax_channels(logits);
  double total = 0.0;
  const double scale = 1.0 / static_cast<double>(counted);
  for (std::size_t p = 0; p < plane; ++p) {
    const int label = labels[p];
    if (label == kIgnoreLabel) continue;
    double mx = logits.data[p];
    for (int c = 1; c < C; ++c) mx = std::max(mx, logits.data[c * plane + p]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) sum += std::exp(logits.data[c * plane + p] - mx);
    total += std::log(sum) + mx - logits.data[label * plane + p];
    if (dlogits) {
      for (int c = 0; c < C; ++c) {
        dlogits->data[c * plane + p] = (probs.data[c * plane + p] - (c == label ? 1.0 : 0.0)) * scale;
      }
    }
  }
  return total * scale;
}

}  // namespace

Gradients backward(const Network& network, const Tensor& input, std::span<const int> labels) {
  const NetworkSpec& spec = network.spec();
  const int last = network.logits_layer();
  const std::vector<Tensor> acts = network.forward_all(input, last);
  Gradients grads = zero_gradients(spec);
  Tensor grad;
  grads.loss = cross_entropy(acts[last], labels, &grad, grads.counted);
  if (grads.counted == 0) return grads;
  for (int i = last; i >= 0; --i) {
    const Tensor& in = i == 0 ? input : acts[i - 1];
    const bool need_input = i > 0;
    if (!need_input && !spec.layers[i].has_parameters()) break;
    LayerGradient lg =
        layer_backward(in, acts[i], grad, spec.layers[i], network.weights().layers[i], need_input);
    if (spec.layers[i].has_parameters()) grads.layers[i] = std::move(lg.params);
    grad = std::move(lg.input);
  }
  return grads;
}

double loss(const Network& network, const Tensor& input, std::span<const int> labels) {
  std::size_t counted = 0;
  return cross_entropy(network.logits(input), labels, nullptr, counted);
}

SgdState make_sgd_state(const NetworkSpec& spec) {
  return SgdState{zero_gradients(spec).layers};
}

void sgd_step(const NetworkSpec& spec, WeightStore& weights, const std::vector<LayerParams>& grads,
              SgdState& state, const SgdConfig& config) {
  require(config.learning_rate > 0.0, ErrorKind::kInvalidArgument, "learning rate must be positive");
  require(grads.size() == spec.layers.size(), ErrorKind::kInvalidArgument,
          "gradient list does not match network");
  if (state.velocity.size() != spec.layers.size()) state = make_sgd_state(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (!spec.layers[i].has_parameters()) continue;
    check_finite(grads[i].weight, "gradient of layer " + spec.layers[i].name);
    check_finite(grads[i].bias, "gradient of layer " + spec.layers[i].name);
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (!spec.layers[i].has_parameters()) continue;
    auto update = [&](Tensor& w, const Tensor& g, Tensor& v) {
      for (std::size_t k = 0; k < w.size(); ++k) {
        v.data[k] = config.momentum * v.data[k] + g.data[k] + config.weight_decay * w.data[k];
        w.data[k] -= config.learning_rate * v.data[k];
      }
    };
    update(weights.layers[i].weight, grads[i].weight, state.velocity[i].weight);
    update(weights.layers[i].bias, grads[i].bias, state.velocity[i].bias);
  }
}

Tensor fcn_forward(const Network& network, const Tensor& tile) {
  const NetworkSpec& spec = network.spec();
  require(spec.fully_convolutional(), ErrorKind::kInvalidArgument,
          spec.name + " is not fully convolutional");
  require(tile.rank() == 3 && tile.height() % spec.total_stride == 0 &&
              tile.width() % spec.total_stride == 0,
          ErrorKind::kInvalidArgument,
          "tile dimensions must be multiples of the network stride " +
              std::to_string(spec.total_stride));
  return network.logits(tile);
}

CascadeOutput cascade_features_from_trunk(const Network& head,
                                          std::span<const Tensor> trunk_outputs) {
  require(!trunk_outputs.empty(), ErrorKind::kInvalidArgument, "cascade: empty patch list");
  require(head.spec().class_count == 3, ErrorKind::kInvalidArgument,
          "cascade head must end in 3 classes");
  CascadeOutput out;
  const int pen = head.spec().penultimate_layer();
  for (const Tensor& t : trunk_outputs) {
    const std::vector<Tensor> acts = head.forward_all(t, head.logits_layer());
    const Tensor& feat = acts[pen];
    if (out.features.empty()) out.features.assign(feat.size(), 0.0);
    for (std::size_t i = 0; i < feat.size(); ++i) out.features[i] += feat.data[i];
    const Tensor probs = softmax_channels(acts.back());
    for (int c = 0; c < 3; ++c) out.probs[c] += probs.data[c];
  }
  const double n = static_cast<double>(trunk_outputs.size());
  for (double& v : out.features) v /= n;
  for (double& p : out.probs) p /= n;
  return out;
}

CascadeOutput cascade_features(const Network& trunk, const Network& head,
                               std::span<const Tensor> patches) {
  require(!patches.empty(), ErrorKind::kInvalidArgument, "cascade: empty patch list");
  std::vector<Tensor> trunk_outputs;
  trunk_outputs.reserve(patches.size());
  for (const Tensor& p : patches) trunk_outputs.push_back(trunk.forward(p));
  return cascade_features_from_trunk(head, trunk_outputs);
}

}  // namespace prolif
