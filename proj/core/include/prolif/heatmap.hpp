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

// Whole-slide detector heatmaps, tumor regions, fringe patches and mitosis
// peak picking.

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "prolif/nn.hpp"
#include "prolif/raster.hpp"

namespace prolif {

struct Heatmap {
  int width = 0;   // cells
  int height = 0;  // cells
  std::vector<double> probs;
  int downsample_factor = 1;  // level-0 pixels per cell side
  std::string level;
  std::string network;
  double threshold = 0.5;

  Heatmap() = default;
  Heatmap(int w, int h, int factor, std::string level_name);

  double at(int x, int y) const { return probs[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return probs[static_cast<std::size_t>(y) * width + x]; }

  /// Throws kNumeric on probabilities outside [0, 1].
  void validate() const;
};

/// P5 PGM with round(p * 255) plus a JSON sidecar; reading yields the quantized values.
void write_heatmap(const Heatmap& heatmap, const std::filesystem::path& pgm_path);
Heatmap read_heatmap(const std::filesystem::path& pgm_path);

enum class HeatmapMode { kSliding, kFcn };
HeatmapMode parse_heatmap_mode(std::string_view text);

struct HeatmapOptions {
  int tile = 1008;  // fcn tile side in level pixels
  double min_tissue_coverage = 0.5;
  int jobs = 1;
  bool keep_trunk = false;
};

struct HeatmapResult {
  Heatmap heatmap;
  Tensor trunk;  // (C, height, width) penultimate activations; zero at gated cells
};

/// Fraction of each cell covered by `tissue`, cells of `cell_size` level-0 pixels.
std::vector<double> tissue_coverage(const BinaryMask& tissue, int cells_w, int cells_h,
                                    int cell_size);

/// Cell (i, j) is the network response to the receptive-field window whose
/// top-left corner sits at (j*S - o, i*S - o), o = floor((RF - S) / 2), with
/// the normalized input zero outside the level image.
HeatmapResult generate_heatmap_detailed(const RasterImage& level_image, int level_factor,
                                        const std::string& level_name, const Network& network,
                                        const BinaryMask& tissue, HeatmapMode mode,
                                        const HeatmapOptions& options = {});

Heatmap generate_heatmap(const ImagePyramid& pyramid, std::string_view level_name,
                         const Network& network, const BinaryMask& tissue, HeatmapMode mode,
                         const HeatmapOptions& options = {});

struct Cell {
  int x = 0;
  int y = 0;
  friend auto operator<=>(const Cell& a, const Cell& b) {
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct TumorRegion {
  int id = 0;
  std::vector<Cell> cells;  // raster order
  std::size_t area = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open bounding box in cells
  std::vector<Cell> fringe;            // raster order
};

/// 4-connected components of cells with prob >= threshold, largest first
/// (ties by raster order of the first cell).
std::vector<TumorRegion> extract_regions(const Heatmap& heatmap, double threshold);

struct FringeOptions {
  int count = 50;
  int patch = 1008;  // side at the target level
  std::uint64_t seed = 0;
};

struct PatchCoord {
  int x = 0;  // top-left corner at the target level
  int y = 0;
  int size = 0;
  int region_id = 0;
  Cell cell;  // fringe cell the patch was centered on
  friend bool operator==(const PatchCoord&, const PatchCoord&) = default;
};

/// Farthest-point ordering of each region's fringe, regions in the given
/// order, until `count` distinct patches are collected. Patches are centered
/// on the fringe cell and clamped inside the level.
std::vector<PatchCoord> select_fringe_patches(const std::vector<TumorRegion>& regions,
                                              int cell_size, int level_width, int level_height,
                                              int level_factor, const FringeOptions& options);
std::vector<PatchCoord> select_fringe_patches(const std::vector<TumorRegion>& regions,
                                              const Heatmap& heatmap, const ImagePyramid& pyramid,
                                              std::string_view level_name,
                                              const FringeOptions& options);

struct HeatmapPoint {
  Cell cell;
  double prob = 0.0;
  friend bool operator==(const HeatmapPoint&, const HeatmapPoint&) = default;
};

/// Cells above `threshold` that no 8-neighbor exceeds. An 8-connected plateau
/// of equal values yields one point, its first cell in raster order.
std::vector<HeatmapPoint> mitosis_points(const Heatmap& heatmap, double threshold = 0.5);

}  // namespace prolif
