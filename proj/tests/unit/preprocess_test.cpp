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

#include "oracles.hpp"
#include "prolif/error.hpp"
#include "prolif/preprocess.hpp"
#include "prolif/random.hpp"

namespace prolif {
namespace {

TEST(Otsu, MatchesExhaustiveScan) {
  Rng rng(11);
  for (int n = 0; n < 300; ++n) {
    std::vector<std::uint64_t> hist(256, 0);
    const int filled = rng.uniform_int(2, 256);
    for (int k = 0; k < filled; ++k) hist[rng.uniform_index(256)] += 1 + rng.uniform_index(500);
    if (oracle::otsu_exhaustive(hist) < 0) continue;
    EXPECT_EQ(otsu_threshold(hist), oracle::otsu_exhaustive(hist)) << "histogram " << n;
  }
}

TEST(Otsu, TwoSpikesSplitBetweenThem) {
  std::vector<std::uint64_t> hist(256, 0);
  hist[40] = 100;
  hist[200] = 300;
  const int t = otsu_threshold(hist);
  EXPECT_GE(t, 40);
  EXPECT_LT(t, 200);
  EXPECT_EQ(t, 40);  // ties resolve to the smallest t
}

TEST(Otsu, DegenerateHistogramThrows) {
  std::vector<std::uint64_t> hist(256, 0);
  hist[17] = 50;
  EXPECT_THROW(otsu_threshold(hist), Error);
  EXPECT_THROW(otsu_threshold(std::vector<std::uint64_t>(10, 1)), Error);
}

TEST(Components, MatchFloodFill) {
  Rng rng(12);
  for (int n = 0; n < 40; ++n) {
    BinaryMask mask(rng.uniform_int(1, 30), rng.uniform_int(1, 30));
    for (auto& b : mask.bits) b = rng.uniform() < 0.5;
    for (Connectivity c : {Connectivity::kFour, Connectivity::kEight}) {
      const ComponentLabels labels = label_components(mask, c);
      const auto flood = oracle::flood_fill(mask, c);
      ASSERT_EQ(static_cast<std::size_t>(labels.count()), flood.size());
      for (std::size_t k = 0; k < flood.size(); ++k) {
        // Both enumerate components in raster order of their first pixel.
        EXPECT_EQ(labels.areas[k], flood[k].area);
        for (const Cell& p : flood[k].pixels) EXPECT_EQ(labels.at(p.x, p.y), static_cast<int>(k) + 1);
      }
    }
  }
}

TEST(Components, DiagonalPixelsJoinOnlyWithEightConnectivity) {
  BinaryMask mask(2, 2);
  mask.bits = {1, 0, 0, 1};
  EXPECT_EQ(label_components(mask, Connectivity::kFour).count(), 2);
  EXPECT_EQ(label_components(mask, Connectivity::kEight).count(), 1);
}

TEST(Morphology, RemoveSmallAndDilate) {
  BinaryMask mask(9, 9);
  mask.bits[4 * 9 + 4] = 1;
  for (int x = 0; x < 4; ++x) mask.bits[x] = 1;
  const BinaryMask kept = remove_small_components(mask, 2, Connectivity::kFour);
  EXPECT_EQ(kept.count(), 4u);
  const BinaryMask grown = binary_dilation(mask, 1);
  EXPECT_EQ(grown.count(), 9u + 10u);  // 3x3 block and a 5x2 strip clipped at the border
  EXPECT_EQ(binary_dilation(mask, 0), mask);
}

TEST(Stain, OpticalDensityAndAffineMap) {
  EXPECT_DOUBLE_EQ(optical_density(255), 0.0);
  EXPECT_NEAR(optical_density(0), std::log10(256.0), 1e-12);
  EXPECT_NEAR(map_optical_density(0.2, 0.2, 0.8, 0.1, 1.0), 0.1, 1e-12);
  EXPECT_NEAR(map_optical_density(0.8, 0.2, 0.8, 0.1, 1.0), 1.0, 1e-12);
  EXPECT_NEAR(map_optical_density(0.5, 0.2, 0.8, 0.1, 1.0), 0.55, 1e-12);
}

TEST(Stain, IdentityProfileLeavesImageNearlyUnchanged) {
  Rng rng(13);
  RasterImage image(20, 20, 3);
  for (std::uint8_t& v : image.data()) v = static_cast<std::uint8_t>(rng.uniform_int(30, 250));
  BinaryMask tissue(20, 20);
  std::fill(tissue.bits.begin(), tissue.bits.end(), 1);
  const StainProfile profile = compute_stain_profile(image, tissue);
  EXPECT_FALSE(profile.degenerate());
  const RasterImage same = standardize_stain(image, profile, profile);
  for (std::size_t i = 0; i < image.data().size(); ++i) EXPECT_NEAR(same.data()[i], image.data()[i], 1);
}

TEST(Tissue, SaturatedDiskIsFound) {
  RasterImage image(64, 64, 3);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool inside = std::hypot(x - 32.0, y - 32.0) < 20;
      image.at(x, y, 0) = inside ? 200 : 245;
      image.at(x, y, 1) = inside ? 80 : 245;
      image.at(x, y, 2) = inside ? 160 : 245;
    }
  }
  ImagePyramid pyramid({{image, 1, "a.ppm"}}, {{"10x", 0}});
  TissueMaskOptions options;
  options.dilation_iterations = 0;
  const TissueMaskResult result = extract_tissue_mask_detailed(pyramid, "10x", options);
  EXPECT_TRUE(result.mask.at(32, 32));
  EXPECT_FALSE(result.mask.at(1, 1));
  EXPECT_NEAR(static_cast<double>(result.mask.count()), 3.14159 * 400, 60);
}

TEST(Tissue, BlankSlideThrowsNumeric) {
  RasterImage image(16, 16, 3);
  std::fill(image.data().begin(), image.data().end(), 240);
  ImagePyramid pyramid({{image, 1, "a.ppm"}}, {{"10x", 0}});
  try {
    extract_tissue_mask(pyramid, "10x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

}  // namespace
}  // namespace prolif
