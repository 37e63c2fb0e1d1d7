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

#include "prolif/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include <boost/multiprecision/cpp_int.hpp>

#include "prolif/error.hpp"

namespace prolif {

double optical_density(int value) { return -std::log10((value + 1) / 256.0); }

bool StainProfile::degenerate() const {
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(low[c]) || !std::isfinite(high[c]) || low[c] < 0.0 || !(low[c] < high[c])) {
      return true;
    }
  }
  return false;
}

namespace {

// Linear-interpolated percentile of the OD multiset described by an 8-bit
// histogram. OD decreases with intensity, so ascending OD walks from 255 down.
double od_percentile(const std::array<std::uint64_t, 256>& hist, std::uint64_t n, double pct) {
  const double pos = pct / 100.0 * static_cast<double>(n - 1);
  const auto lo_rank = static_cast<std::uint64_t>(std::floor(pos));
  const std::uint64_t hi_rank = std::min(lo_rank + 1, n - 1);
  const double frac = pos - static_cast<double>(lo_rank);
  double lo_value = 0.0;
  double hi_value = 0.0;
  std::uint64_t seen = 0;
  bool have_lo = false;
  for (int v = 255; v >= 0; --v) {
    seen += hist[v];
    if (!have_lo && seen > lo_rank) {
      lo_value = optical_density(v);
      have_lo = true;
    }
    if (seen > hi_rank) {
      hi_value = optical_density(v);
      break;
    }
  }
  return lo_value + frac * (hi_value - lo_value);
}

}  // namespace

StainProfile compute_stain_profile(const RasterImage& image, const BinaryMask& tissue_mask) {
  require(image.channels() == 3, ErrorKind::kInvalidArgument, "stain profile needs RGB");
  require(tissue_mask.width == image.width() && tissue_mask.height == image.height(),
          ErrorKind::kInvalidArgument, "tissue mask must match image resolution");
  std::array<std::array<std::uint64_t, 256>, 3> hist{};
  std::uint64_t n = 0;
  const auto data = image.data();
  for (std::size_t i = 0; i < tissue_mask.bits.size(); ++i) {
    if (!tissue_mask.bits[i]) continue;
    ++n;
    for (int c = 0; c < 3; ++c) ++hist[c][data[3 * i + c]];
  }
  require(n > 0, ErrorKind::kInvalidArgument, "stain profile: empty tissue mask");
  StainProfile profile;
  for (int c = 0; c < 3; ++c) {
    profile.low[c] = od_percentile(hist[c], n, 1.0);
    profile.high[c] = od_percentile(hist[c], n, 99.0);
  }
  require(!profile.degenerate(), ErrorKind::kNumeric,
          "stain profile is degenerate (low anchor not below high anchor)");
  return profile;
}

double map_optical_density(double od, double source_low, double source_high, double target_low,
                           double target_high) {
  return target_low + (od - source_low) * (target_high - target_low) / (source_high - source_low);
}

RasterImage standardize_stain(const RasterImage& image, const StainProfile& source,
                              const StainProfile& target) {
  require(image.channels() == 3, ErrorKind::kInvalidArgument, "standardize_stain needs RGB");
  require(!source.degenerate() && !target.degenerate(), ErrorKind::kNumeric,
          "standardize_stain: degenerate stain profile");
  std::array<std::array<std::uint8_t, 256>, 3> lut{};
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < 256; ++v) {
      const double od = map_optical_density(optical_density(v), source.low[c], source.high[c],
                                            target.low[c], target.high[c]);
      const double out = 256.0 * std::pow(10.0, -od) - 1.0;
      lut[c][v] = static_cast<std::uint8_t>(std::clamp(std::lround(out), 0L, 255L));
    }
  }
  RasterImage out = image;
  auto data = out.data();
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] = lut[0][data[i]];
    data[i + 1] = lut[1][data[i + 1]];
    data[i + 2] = lut[2][data[i + 2]];
  }
  return out;
}

int otsu_threshold(std::span<const std::uint64_t> histogram) {
  require(histogram.size() == 256, ErrorKind::kInvalidArgument, "otsu: need 256 bins");
  const auto nonzero = std::count_if(histogram.begin(), histogram.end(),
                                     [](std::uint64_t c) { return c > 0; });
  require(nonzero >= 2, ErrorKind::kNumeric, "otsu: histogram needs at least two nonzero bins");
  // Between-class variance up to the constant 1/N^2 is (S0*w1 - S1*w0)^2 / (w0*w1).
  // Compared exactly by cross-multiplication in wide integers.
  using Wide = boost::multiprecision::int512_t;
  std::uint64_t total_w = 0;
  Wide total_s = 0;
  for (int i = 0; i < 256; ++i) {
    total_w += histogram[i];
    total_s += Wide(histogram[i]) * i;
  }
  std::uint64_t w0 = 0;
  Wide s0 = 0;
  Wide best_num = -1;
  Wide best_den = 1;
  int best_t = -1;
  for (int t = 0; t < 255; ++t) {
    w0 += histogram[t];
    s0 += Wide(histogram[t]) * t;
    const std::uint64_t w1 = total_w - w0;
    if (w0 == 0 || w1 == 0) continue;
    const Wide s1 = total_s - s0;
    const Wide diff = s0 * Wide(w1) - s1 * Wide(w0);
    const Wide num = diff * diff;
    const Wide den = Wide(w0) * Wide(w1);
    if (best_t < 0 || num * best_den > best_num * den) {
      best_num = num;
      best_den = den;
      best_t = t;
    }
  }
  return best_t;
}

ComponentLabels label_components(const BinaryMask& mask, Connectivity connectivity) {
  ComponentLabels out;
  out.width = mask.width;
  out.height = mask.height;
  out.labels.assign(mask.bits.size(), 0);
  const bool eight = connectivity == Connectivity::kEight;
  std::vector<std::size_t> stack;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const std::size_t start = static_cast<std::size_t>(y) * mask.width + x;
      if (!mask.bits[start] || out.labels[start] != 0) continue;
      const int label = out.count() + 1;
      std::size_t area = 0;
      out.labels[start] = label;
      stack.push_back(start);
      while (!stack.empty()) {
        const std::size_t idx = stack.back();
        stack.pop_back();
        ++area;
        const int cx = static_cast<int>(idx % mask.width);
        const int cy = static_cast<int>(idx / mask.width);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0)) continue;
            const int nx = cx + dx;
            const int ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
            const std::size_t nidx = static_cast<std::size_t>(ny) * mask.width + nx;
            if (mask.bits[nidx] && out.labels[nidx] == 0) {
              out.labels[nidx] = label;
              stack.push_back(nidx);
            }
          }
        }
      }
      out.areas.push_back(area);
    }
  }
  return out;
}

BinaryMask remove_small_components(const BinaryMask& mask, std::size_t min_area,
                                   Connectivity connectivity) {
  const ComponentLabels cc = label_components(mask, connectivity);
  BinaryMask out(mask.width, mask.height, mask.downsample_factor);
  for (std::size_t i = 0; i < out.bits.size(); ++i) {
    const int label = cc.labels[i];
    out.bits[i] = (label > 0 && cc.areas[label - 1] >= min_area) ? 1 : 0;
  }
  return out;
}

BinaryMask binary_dilation(const BinaryMask& mask, int iterations) {
  require(iterations >= 0, ErrorKind::kInvalidArgument, "dilation iterations must be >= 0");
  BinaryMask current = mask;
  BinaryMask rows(mask.width, mask.height, mask.downsample_factor);
  for (int it = 0; it < iterations; ++it) {
    // Separable: horizontal then vertical 3-wide max.
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        bool v = current.at(x, y);
        if (x > 0) v = v || current.at(x - 1, y);
        if (x + 1 < mask.width) v = v || current.at(x + 1, y);
        rows.set(x, y, v);
      }
    }
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        bool v = rows.at(x, y);
        if (y > 0) v = v || rows.at(x, y - 1);
        if (y + 1 < mask.height) v = v || rows.at(x, y + 1);
        current.set(x, y, v);
      }
    }
  }
  return current;
}

std::vector<std::uint8_t> quantized_saturation(const RasterImage& image) {
  require(image.channels() == 3, ErrorKind::kInvalidArgument, "saturation needs RGB");
  const auto data = image.data();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(image.width()) * image.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = rgb_to_hsv(data[3 * i], data[3 * i + 1], data[3 * i + 2])[1];
    out[i] = static_cast<std::uint8_t>(std::min(255.0, std::floor(s * 256.0)));
  }
  return out;
}

TissueMaskResult extract_tissue_mask_detailed(const ImagePyramid& pyramid,
                                              std::string_view level_name,
                                              const TissueMaskOptions& options) {
  const PyramidLevel& level = pyramid.level(level_name);
  const RasterImage& image = level.image;
  const std::vector<std::uint8_t> sat = quantized_saturation(image);
  std::vector<std::uint64_t> hist(256, 0);
  for (std::uint8_t q : sat) ++hist[q];
  const auto nonzero = std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; });
  if (nonzero < 2) fail(ErrorKind::kNumeric, "no tissue found (uniform saturation)");
  TissueMaskResult result;
  result.threshold = otsu_threshold(hist);
  BinaryMask raw(image.width(), image.height(), level.downsample_factor);
  for (std::size_t i = 0; i < sat.size(); ++i) raw.bits[i] = sat[i] > result.threshold ? 1 : 0;
  result.filtered = remove_small_components(raw, options.min_component_area, options.connectivity);
  if (result.filtered.count() == 0) fail(ErrorKind::kNumeric, "no tissue found");
  result.mask = binary_dilation(result.filtered, options.dilation_iterations);
  return result;
}

BinaryMask extract_tissue_mask(const ImagePyramid& pyramid, std::string_view level_name,
                               const TissueMaskOptions& options) {
  return extract_tissue_mask_detailed(pyramid, level_name, options).mask;
}

}  // namespace prolif
