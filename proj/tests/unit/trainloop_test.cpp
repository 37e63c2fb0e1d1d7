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
#include "prolif/random.hpp"
#include "prolif/trainloop.hpp"

namespace prolif {
namespace {

RasterImage dots(std::uint64_t seed) {
  Rng rng(seed);
  RasterImage image(60, 50, 3);
  for (std::uint8_t& v : image.data()) v = static_cast<std::uint8_t>(rng.uniform_int(210, 240));
  for (int b = 0; b < 6; ++b) {
    const double cx = rng.uniform(5, 55), cy = rng.uniform(5, 45), r = rng.uniform(2.5, 6);
    for (int y = 0; y < 50; ++y) {
      for (int x = 0; x < 60; ++x) {
        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) > r) continue;
        for (int c = 0; c < 3; ++c) image.at(x, y, c) = static_cast<std::uint8_t>(rng.uniform_int(30, 70));
      }
    }
  }
  return image;
}

TEST(Nuclei, MatchFloodFillOnInvertedGray) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const RasterImage image = dots(seed);
    const NucleiOptions options;
    const NucleiResult result = propose_nuclei_detailed(image, options);
    std::vector<std::uint64_t> hist(256, 0);
    for (std::uint8_t v : result.gray.data()) ++hist[255 - v];
    EXPECT_EQ(result.threshold, oracle::otsu_exhaustive(hist));
    BinaryMask dark(image.width(), image.height());
    for (std::size_t i = 0; i < dark.bits.size(); ++i) dark.bits[i] = 255 - result.gray.data()[i] > result.threshold;
    std::vector<oracle::FloodComponent> kept;
    for (auto& f : oracle::flood_fill(dark, options.connectivity)) {
      if (f.area >= options.min_area && f.area <= options.max_area) kept.push_back(f);
    }
    ASSERT_EQ(kept.size(), result.nuclei.size());
    for (std::size_t k = 0; k < kept.size(); ++k) {
      EXPECT_EQ(kept[k].area, result.nuclei[k].area);
      EXPECT_NEAR(kept[k].cx, result.nuclei[k].centroid.x, 1e-9);
      EXPECT_NEAR(kept[k].cy, result.nuclei[k].centroid.y, 1e-9);
      EXPECT_EQ(kept[k].pixels, result.nuclei[k].pixels);
    }
  }
}

PatchDataset sample_dataset() {
  PatchDataset d;
  d.seed = 4;
  d.entries = {{"s1", 10, 10, "10x", 1, Provenance::kAnnotated},
               {"s1", 30, 10, "10x", 0, Provenance::kRandomNegative},
               {"s2", 5, 7, "10x", 1, Provenance::kMinedPositive}};
  return d;
}

TEST(Dataset, JsonRoundTripAndCounts) {
  const PatchDataset d = sample_dataset();
  EXPECT_EQ(PatchDataset::from_json(d.to_json()), d);
  EXPECT_EQ(d.positives(), 2u);
  EXPECT_EQ(d.negatives(), 1u);
  EXPECT_TRUE(d.contains("s2", "10x", 5, 7));
  EXPECT_FALSE(d.contains("s2", "40x", 5, 7));
}

TEST(Dataset, DuplicateKeysAreInvalid) {
  PatchDataset d = sample_dataset();
  d.entries.push_back(d.entries[0]);
  d.entries.back().label = 0;
  EXPECT_THROW(d.validate(), Error);
}

TEST(Corrections, AnnotatedEntriesNeverChange) {
  PatchDataset d = sample_dataset();
  const std::vector<Correction> corrections{{"s1", 10, 10, "10x", 0},
                                            {"s1", 30, 10, "10x", 1},
                                            {"s9", 1, 1, "10x", 1}};
  const CorrectionStats stats = apply_corrections(d, corrections);
  EXPECT_EQ(stats.applied, 1u);
  EXPECT_EQ(stats.ignored, 2u);
  EXPECT_EQ(d.entries[0].label, 1);
  EXPECT_EQ(d.entries[1].label, 1);
  EXPECT_EQ(d.entries[1].provenance, Provenance::kPathologistCorrected);
  EXPECT_EQ(corrections_from_json(corrections_to_json(corrections)).size(), 3u);
}

TEST(Enums, ParseAndPrint) {
  EXPECT_EQ(parse_detector_kind("tumor"), DetectorKind::kTumor);
  EXPECT_EQ(parse_detector_kind(to_string(DetectorKind::kMitosis)), DetectorKind::kMitosis);
  EXPECT_THROW(parse_detector_kind("lymph"), Error);
  for (Provenance p : {Provenance::kAnnotated, Provenance::kRandomNegative, Provenance::kMinedPositive,
                       Provenance::kPathologistCorrected}) {
    EXPECT_EQ(parse_provenance(to_string(p)), p);
  }
}

TEST(TrainConfig, RejectsOutOfRangeValues) {
  TrainConfig config;
  EXPECT_NO_THROW(config.validate());
  config.tau = 1.5;
  EXPECT_THROW(config.validate(), Error);
  config = TrainConfig{};
  config.batch_size = 0;
  EXPECT_THROW(config.validate(), Error);
}

TEST(TrainConfig, DetectorNetworksAreStrideConsistent) {
  const TrainConfig config;
  EXPECT_TRUE(detector_spec(DetectorKind::kTumor, config).stride_consistent());
  EXPECT_TRUE(detector_spec(DetectorKind::kMitosis, config).stride_consistent());
  EXPECT_EQ(detector_level(DetectorKind::kTumor), "10x");
  EXPECT_EQ(detector_level(DetectorKind::kMitosis), "40x");
}

}  // namespace
}  // namespace prolif
