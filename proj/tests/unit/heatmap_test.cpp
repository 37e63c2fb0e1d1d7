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

#include <filesystem>

#include "oracles.hpp"
#include "prolif/error.hpp"
#include "prolif/heatmap.hpp"
#include "prolif/random.hpp"

namespace prolif {
namespace {

TEST(Heatmap, FcnEqualsSlidingWindow) {
  Rng rng(31);
  for (int n = 0; n < 5; ++n) {
    const Network net = oracle::random_fcn(derive_seed(31, n));
    const int S = net.spec().total_stride;
    RasterImage image(S * 7 + 1, S * 5 + 3, 3);
    for (std::uint8_t& v : image.data()) v = static_cast<std::uint8_t>(rng.uniform_index(256));
    BinaryMask tissue(image.width(), image.height());
    std::fill(tissue.bits.begin(), tissue.bits.end(), 1);
    HeatmapOptions options;
    options.tile = 32;
    options.min_tissue_coverage = 0.0;
    const Heatmap fcn = generate_heatmap_detailed(image, 1, "t", net, tissue, HeatmapMode::kFcn, options).heatmap;
    const Heatmap naive = oracle::sliding_window_naive(image, net);
    ASSERT_EQ(fcn.width, naive.width);
    ASSERT_EQ(fcn.height, naive.height);
    for (std::size_t i = 0; i < fcn.probs.size(); ++i) EXPECT_NEAR(fcn.probs[i], naive.probs[i], 1e-9);
  }
}

TEST(Heatmap, GatedCellsAreZero) {
  const Network net = oracle::random_fcn(77);
  const int S = net.spec().total_stride;
  RasterImage image(S * 6, S * 6, 3);
  std::fill(image.data().begin(), image.data().end(), 128);
  BinaryMask tissue(image.width(), image.height());
  HeatmapOptions options;
  options.tile = 64;
  const Heatmap map = generate_heatmap_detailed(image, 1, "t", net, tissue, HeatmapMode::kFcn, options).heatmap;
  for (double p : map.probs) EXPECT_EQ(p, 0.0);
}

TEST(Heatmap, PgmRoundTripQuantizes) {
  const auto path = std::filesystem::temp_directory_path() / "prolif_heatmap.pgm";
  Heatmap map(3, 2, 16, "10x");
  map.probs = {0.0, 0.25, 0.5, 0.75, 1.0, 0.1};
  write_heatmap(map, path);
  const Heatmap back = read_heatmap(path);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.downsample_factor, 16);
  for (std::size_t i = 0; i < map.probs.size(); ++i) EXPECT_NEAR(back.probs[i], map.probs[i], 0.5 / 255 + 1e-12);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}

TEST(Heatmap, InvalidProbabilityThrows) {
  Heatmap map(1, 1, 1, "x");
  map.probs = {1.5};
  EXPECT_THROW(map.validate(), Error);
}

Heatmap from_rows(const std::vector<std::string>& rows) {
  Heatmap map(static_cast<int>(rows[0].size()), static_cast<int>(rows.size()), 16, "10x");
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) map.at(x, y) = (rows[y][x] - '0') / 9.0;
  }
  return map;
}

TEST(Regions, LargestFirstWithFringe) {
  const Heatmap map = from_rows({"900000", "999009", "999009", "000000"});
  const auto regions = extract_regions(map, 0.5);
  ASSERT_EQ(regions.size(), 2u);
  EXPECT_EQ(regions[0].area, 7u);
  EXPECT_EQ(regions[1].area, 2u);
  EXPECT_EQ(regions[0].x0, 0);
  EXPECT_EQ(regions[0].x1, 3);
  EXPECT_EQ(regions[0].y1, 3);
  EXPECT_FALSE(regions[0].fringe.empty());
  EXPECT_LE(regions[0].fringe.size(), regions[0].cells.size());
  EXPECT_TRUE(std::is_sorted(regions[0].cells.begin(), regions[0].cells.end()));
}

TEST(Regions, FringePatchesStayInsideTheLevel) {
  const Heatmap map = from_rows({"0000000", "0999990", "0999990", "0999990", "0000000"});
  const auto regions = extract_regions(map, 0.5);
  FringeOptions options;
  options.count = 5;
  options.patch = 40;
  const auto patches = select_fringe_patches(regions, 16, 112, 80, 1, options);
  EXPECT_EQ(patches.size(), 5u);
  for (const PatchCoord& p : patches) {
    EXPECT_GE(p.x, 0);
    EXPECT_GE(p.y, 0);
    EXPECT_LE(p.x + p.size, 112);
    EXPECT_LE(p.y + p.size, 80);
  }
  EXPECT_EQ(patches, select_fringe_patches(regions, 16, 112, 80, 1, options));
}

TEST(MitosisPoints, LocalMaximaAndPlateaus) {
  const Heatmap map = from_rows({"0000000", "0700880", "0000880", "0000000", "3000009"});
  const auto points = mitosis_points(map, 0.5);
  ASSERT_EQ(points.size(), 3u);
  EXPECT_EQ(points[0].cell, (Cell{1, 1}));
  EXPECT_EQ(points[1].cell, (Cell{4, 1}));  // one point for the 2x2 plateau
  EXPECT_EQ(points[2].cell, (Cell{6, 4}));
}

}  // namespace
}  // namespace prolif
