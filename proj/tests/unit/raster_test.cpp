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

#include "prolif/error.hpp"
#include "prolif/raster.hpp"
#include "prolif/random.hpp"

namespace prolif {
namespace {

RasterImage noise_image(int w, int h, int channels, std::uint64_t seed) {
  Rng rng(seed);
  RasterImage image(w, h, channels);
  for (std::uint8_t& v : image.data()) v = static_cast<std::uint8_t>(rng.uniform_index(256));
  return image;
}

TEST(Raster, PnmRoundTripKeepsEveryByte) {
  for (int channels : {1, 3}) {
    const RasterImage image = noise_image(17, 9, channels, 3 + channels);
    EXPECT_EQ(decode_pnm(encode_pnm(image)), image);
  }
}

TEST(Raster, DecodeRejectsTruncatedData) {
  std::string bytes = encode_pnm(noise_image(8, 8, 3, 1));
  bytes.resize(bytes.size() - 5);
  EXPECT_THROW(decode_pnm(bytes), Error);
}

TEST(Raster, CropFillsOutsideTheImage) {
  const RasterImage image = noise_image(6, 5, 3, 2);
  const RasterImage crop = image.crop(-2, 3, 4, 4, 9);
  EXPECT_EQ(crop.at(0, 0, 1), 9);
  EXPECT_EQ(crop.at(2, 0, 1), image.at(0, 3, 1));
  EXPECT_EQ(crop.at(3, 1, 2), image.at(1, 4, 2));
  EXPECT_EQ(crop.at(3, 2, 0), 9);
}

TEST(Raster, HsvRoundTripWithinOneLevel) {
  Rng rng(5);
  for (int n = 0; n < 2000; ++n) {
    const auto r = static_cast<std::uint8_t>(rng.uniform_index(256));
    const auto g = static_cast<std::uint8_t>(rng.uniform_index(256));
    const auto b = static_cast<std::uint8_t>(rng.uniform_index(256));
    const auto hsv = rgb_to_hsv(r, g, b);
    EXPECT_GE(hsv[0], 0.0);
    EXPECT_LT(hsv[0], 360.0);
    const auto rgb = hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
    EXPECT_NEAR(rgb[0], r, 1);
    EXPECT_NEAR(rgb[1], g, 1);
    EXPECT_NEAR(rgb[2], b, 1);
  }
}

TEST(Raster, GrayscaleUsesLumaWeights) {
  RasterImage image(1, 1, 3);
  image.at(0, 0, 0) = 200;
  image.at(0, 0, 1) = 100;
  image.at(0, 0, 2) = 50;
  const RasterImage gray = to_grayscale(image);
  EXPECT_EQ(gray.channels(), 1);
  EXPECT_EQ(gray.at(0, 0), 124);  // 59.8 + 58.7 + 5.7
}

TEST(Raster, DownsampleBoxAveragesBlocks) {
  RasterImage image(4, 2, 1);
  const std::uint8_t values[] = {0, 4, 10, 10, 8, 4, 10, 11};
  std::copy(std::begin(values), std::end(values), image.data().begin());
  const RasterImage small = downsample_box(image, 2);
  ASSERT_EQ(small.width(), 2);
  ASSERT_EQ(small.height(), 1);
  EXPECT_EQ(small.at(0, 0), 4);
  EXPECT_NEAR(small.at(1, 0), 10.25, 0.5);
}

TEST(Raster, PyramidWriteAndLoad) {
  const auto dir = std::filesystem::temp_directory_path() / "prolif_raster_pyramid";
  std::filesystem::remove_all(dir);
  const RasterImage base = noise_image(16, 12, 3, 8);
  ImagePyramid pyramid({{base, 1, "l0.ppm"}, {downsample_box(base, 4), 4, "l1.ppm"}},
                       {{std::string(kLevel40x), 0}, {std::string(kLevel10x), 1}});
  write_pyramid(pyramid, dir);
  const ImagePyramid loaded = load_pyramid(dir / "manifest.json");
  EXPECT_EQ(loaded.level(kLevel40x).image, base);
  EXPECT_EQ(loaded.level(kLevel10x).downsample_factor, 4);
  EXPECT_FALSE(loaded.has_level("20x"));
  std::filesystem::remove_all(dir);
}

TEST(Raster, MaskRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "prolif_mask.pgm";
  BinaryMask mask(7, 5, 4);
  Rng rng(4);
  for (auto& b : mask.bits) b = rng.uniform() < 0.5;
  write_mask(mask, path);
  const BinaryMask back = read_mask(path);
  EXPECT_EQ(back.bits, mask.bits);
  EXPECT_EQ(back.width, 7);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace prolif
