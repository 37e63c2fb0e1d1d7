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

// Raster images, float planes, masks and multi-resolution pyramids.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prolif {

/// 8-bit raster, row-major, channel-interleaved. 1 or 3 channels.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int width, int height, int channels);
  RasterImage(int width, int height, int channels, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }

  std::uint8_t at(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  /// Copies a window; pixels outside the image are filled with `fill`.
  RasterImage crop(int x, int y, int width, int height, std::uint8_t fill = 0) const;

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Single-channel floating point image.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0);

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct HsvPlanes {
  Plane hue;         // degrees in [0, 360)
  Plane saturation;  // [0, 1]
  Plane value;       // [0, 1]
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1
  int downsample_factor = 1;       // relative to pyramid level 0

  BinaryMask() = default;
  BinaryMask(int w, int h, int factor = 1);

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// --- PPM / PGM ------------------------------------------------------------

/// Decodes binary P6 (3 channels) or P5 (1 channel), maxval 255.
RasterImage decode_pnm(std::string_view bytes);
std::string encode_pnm(const RasterImage& image);

RasterImage read_ppm(const std::filesystem::path& path);
void write_ppm(const RasterImage& image, const std::filesystem::path& path);

/// Mask as a 0/255 PGM plus `<stem>.json` sidecar carrying the factor.
void write_mask(const BinaryMask& mask, const std::filesystem::path& pgm_path);
BinaryMask read_mask(const std::filesystem::path& pgm_path);

// --- color and resampling -------------------------------------------------

/// Hexcone model. S is 0 when V is 0; H is 0 when S is 0.
std::array<double, 3> rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b);
std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v);
HsvPlanes rgb_to_hsv(const RasterImage& image);

/// ITU-R 601 luma, rounded to the nearest integer.
RasterImage to_grayscale(const RasterImage& image);

/// Corner-aligned bilinear resampling.
Plane resize_bilinear(const Plane& plane, int new_width, int new_height);

/// Area-average downsampling by an integer factor (partial edge blocks are
/// averaged over the pixels they contain).
RasterImage downsample_box(const RasterImage& image, int factor);

// --- pyramids --------------------------------------------------------------

struct PyramidLevel {
  RasterImage image;
  int downsample_factor = 1;
  std::string file;  // relative to the manifest directory
};

class ImagePyramid {
 public:
  ImagePyramid() = default;
  ImagePyramid(std::vector<PyramidLevel> levels, std::map<std::string, int> magnifications);

  const std::vector<PyramidLevel>& levels() const { return levels_; }
  const std::map<std::string, int>& magnifications() const { return magnifications_; }

  bool has_level(std::string_view name) const;
  int level_index(std::string_view name) const;
  const PyramidLevel& level(std::string_view name) const;

 private:
  std::vector<PyramidLevel> levels_;
  std::map<std::string, int> magnifications_;
};

inline constexpr std::string_view kLevel40x = "40x";
inline constexpr std::string_view kLevel10x = "10x";

/// Reads a manifest: {"levels":[{"file":..,"factor":..}...], "magnifications":{name: index}}.
ImagePyramid load_pyramid(const std::filesystem::path& manifest_path);

/// Writes each level image and `manifest.json` into `directory`.
void write_pyramid(const ImagePyramid& pyramid, const std::filesystem::path& directory);

}  // namespace prolif
