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

// Stain standardization and tissue extraction.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "prolif/raster.hpp"

namespace prolif {

/// Optical density of an 8-bit intensity: -log10((v + 1) / 256).
double optical_density(int value);

/// Per-channel OD anchors (1st and 99th percentile over tissue pixels).
struct StainProfile {
  std::array<double, 3> low{};
  std::array<double, 3> high{};

  bool degenerate() const;
};

StainProfile compute_stain_profile(const RasterImage& image, const BinaryMask& tissue_mask);

/// Affine OD map sending [source.low, source.high] onto [target.low, target.high].
double map_optical_density(double od, double source_low, double source_high, double target_low,
                           double target_high);

RasterImage standardize_stain(const RasterImage& image, const StainProfile& source,
                              const StainProfile& target);

/// Otsu threshold on a 256-bin histogram: the t maximizing between-class
/// variance of the split (<= t | > t). Ties resolve to the smallest t.
int otsu_threshold(std::span<const std::uint64_t> histogram);

enum class Connectivity { kFour = 4, kEight = 8 };

/// Component labels in raster order of first appearance; 0 is background.
struct ComponentLabels {
  int width = 0;
  int height = 0;
  std::vector<int> labels;
  std::vector<std::size_t> areas;  // areas[k] for label k + 1

  int count() const { return static_cast<int>(areas.size()); }
  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

ComponentLabels label_components(const BinaryMask& mask, Connectivity connectivity);

/// Drops components smaller than min_area pixels.
BinaryMask remove_small_components(const BinaryMask& mask, std::size_t min_area,
                                   Connectivity connectivity);

/// Dilation with a 3x3 square element, repeated `iterations` times.
BinaryMask binary_dilation(const BinaryMask& mask, int iterations);

struct TissueMaskOptions {
  std::size_t min_component_area = 256;
  int dilation_iterations = 2;
  Connectivity connectivity = Connectivity::kFour;
};

/// Saturation quantized to 256 bins: min(255, floor(S * 256)).
std::vector<std::uint8_t> quantized_saturation(const RasterImage& image);

struct TissueMaskResult {
  BinaryMask mask;
  BinaryMask filtered;  // before dilation
  int threshold = 0;
};

/// Otsu on the saturation plane, small-component removal and dilation. Throws
/// kNumeric ("no tissue found") when the saturation histogram is degenerate.
TissueMaskResult extract_tissue_mask_detailed(const ImagePyramid& pyramid,
                                              std::string_view level_name,
                                              const TissueMaskOptions& options = {});

BinaryMask extract_tissue_mask(const ImagePyramid& pyramid, std::string_view level_name,
                               const TissueMaskOptions& options = {});

}  // namespace prolif
