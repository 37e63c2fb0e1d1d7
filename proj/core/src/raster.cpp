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

#include "prolif/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "prolif/error.hpp"
#include "prolif/io.hpp"

namespace prolif {

RasterImage::RasterImage(int width, int height, int channels)
    : RasterImage(width, height, channels,
                  std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                            std::max(height, 0) * std::max(channels, 0))) {}

RasterImage::RasterImage(int width, int height, int channels, std::vector<std::uint8_t> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  require(width >= 1 && height >= 1, ErrorKind::kInvalidArgument,
          "image dimensions must be positive");
  require(channels == 1 || channels == 3, ErrorKind::kInvalidArgument,
          "image must have 1 or 3 channels");
  require(data_.size() == static_cast<std::size_t>(width) * height * channels,
          ErrorKind::kInvalidArgument, "image data length does not match dimensions");
}

RasterImage RasterImage::crop(int x, int y, int width, int height, std::uint8_t fill) const {
  RasterImage out(width, height, channels_);
  std::fill(out.data_.begin(), out.data_.end(), fill);
  const int x0 = std::max(x, 0);
  const int x1 = std::min(x + width, width_);
  if (x0 >= x1) return out;
  for (int yy = std::max(y, 0); yy < std::min(y + height, height_); ++yy) {
    const auto* src = &data_[(static_cast<std::size_t>(yy) * width_ + x0) * channels_];
    auto* dst = &out.data_[(static_cast<std::size_t>(yy - y) * width + (x0 - x)) * channels_];
    std::copy(src, src + static_cast<std::size_t>(x1 - x0) * channels_, dst);
  }
  return out;
}

Plane::Plane(int w, int h, double fill)
    : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

BinaryMask::BinaryMask(int w, int h, int factor)
    : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0), downsample_factor(factor) {}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

// --- PNM ---------------------------------------------------------------------

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000'000L) fail(ErrorKind::kFormat, std::string("PNM ") + field + " too large");
      ++pos_;
    }
    if (pos_ == start) fail(ErrorKind::kFormat, std::string("PNM header: missing ") + field);
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

RasterImage decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    fail(ErrorKind::kFormat, "PNM: bad magic (expected P5 or P6)");
  }
  const int channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader reader(bytes.substr(2));
  const long width = reader.read_int("width");
  const long height = reader.read_int("height");
  const long maxval = reader.read_int("maxval");
  if (width < 1 || height < 1) fail(ErrorKind::kFormat, "PNM: dimensions must be positive");
  if (maxval != 255) fail(ErrorKind::kFormat, "PNM: maxval must be 255");
  const std::size_t header_end = 2 + reader.pos();
  if (header_end >= bytes.size() ||
      !std::isspace(static_cast<unsigned char>(bytes[header_end]))) {
    fail(ErrorKind::kFormat, "PNM: truncated header");
  }
  const std::size_t data_begin = header_end + 1;
  const std::size_t expected = static_cast<std::size_t>(width) * height * channels;
  const std::size_t available = bytes.size() - data_begin;
  if (available < expected) {
    fail(ErrorKind::kFormat, "PNM: truncated pixel data (" + std::to_string(available) + " of " +
                                 std::to_string(expected) + " bytes)");
  }
  if (available > expected) fail(ErrorKind::kFormat, "PNM: trailing bytes after pixel data");
  std::vector<std::uint8_t> data(expected);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(data_begin), bytes.end(), data.begin());
  return RasterImage(static_cast<int>(width), static_cast<int>(height), channels, std::move(data));
}

std::string encode_pnm(const RasterImage& image) {
  std::string out = (image.channels() == 3 ? "P6\n" : "P5\n") + std::to_string(image.width()) +
                    " " + std::to_string(image.height()) + "\n255\n";
  const auto data = image.data();
  out.append(reinterpret_cast<const char*>(data.data()), data.size());
  return out;
}

RasterImage read_ppm(const std::filesystem::path& path) {
  try {
    return decode_pnm(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kFormat) fail(ErrorKind::kFormat, path.string() + ": " + e.what());
    throw;
  }
}

void write_ppm(const RasterImage& image, const std::filesystem::path& path) {
  write_file(path, encode_pnm(image));
}

void write_mask(const BinaryMask& mask, const std::filesystem::path& pgm_path) {
  RasterImage image(mask.width, mask.height, 1);
  auto data = image.data();
  for (std::size_t i = 0; i < mask.bits.size(); ++i) data[i] = mask.bits[i] ? 255 : 0;
  write_ppm(image, pgm_path);
  std::filesystem::path sidecar = pgm_path;
  sidecar.replace_extension(".json");
  write_json(sidecar, Json{{"downsample_factor", mask.downsample_factor}});
}

BinaryMask read_mask(const std::filesystem::path& pgm_path) {
  const RasterImage image = read_ppm(pgm_path);
  require(image.channels() == 1, ErrorKind::kFormat, pgm_path.string() + ": mask must be P5");
  std::filesystem::path sidecar = pgm_path;
  sidecar.replace_extension(".json");
  const Json meta = read_json(sidecar);
  const int factor = meta.value("downsample_factor", 0);
  require(factor >= 1, ErrorKind::kFormat, sidecar.string() + ": bad downsample_factor");
  BinaryMask mask(image.width(), image.height(), factor);
  const auto data = image.data();
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    require(data[i] == 0 || data[i] == 255, ErrorKind::kFormat,
            pgm_path.string() + ": mask values must be 0 or 255");
    mask.bits[i] = data[i] ? 1 : 0;
  }
  return mask;
}

// --- color -----------------------------------------------------------------

std::array<double, 3> rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0;
  const double g = g8 / 255.0;
  const double b = b8 / 255.0;
  const double max = std::max({r, g, b});
  const double min = std::min({r, g, b});
  const double delta = max - min;
  const double v = max;
  const double s = max > 0.0 ? delta / max : 0.0;
  double h = 0.0;
  if (delta > 0.0) {
    if (r8 >= g8 && r8 >= b8) {
      h = 60.0 * std::fmod((g - b) / delta + 6.0, 6.0);
    } else if (g8 >= b8) {
      h = 60.0 * ((b - r) / delta + 2.0);
    } else {
      h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (h >= 360.0) h -= 360.0;
  }
  return {h, s, v};
}

std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  auto to8 = [](double u) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(u * 255.0), 0L, 255L));
  };
  return {to8(r + m), to8(g + m), to8(b + m)};
}

HsvPlanes rgb_to_hsv(const RasterImage& image) {
  require(image.channels() == 3, ErrorKind::kInvalidArgument, "rgb_to_hsv needs 3 channels");
  HsvPlanes out{Plane(image.width(), image.height()), Plane(image.width(), image.height()),
                Plane(image.width(), image.height())};
  const auto data = image.data();
  const std::size_t n = static_cast<std::size_t>(image.width()) * image.height();
  for (std::size_t i = 0; i < n; ++i) {
    const auto hsv = rgb_to_hsv(data[3 * i], data[3 * i + 1], data[3 * i + 2]);
    out.hue.values[i] = hsv[0];
    out.saturation.values[i] = hsv[1];
    out.value.values[i] = hsv[2];
  }
  return out;
}

RasterImage to_grayscale(const RasterImage& image) {
  if (image.channels() == 1) return image;
  RasterImage out(image.width(), image.height(), 1);
  const auto src = image.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double luma = 0.299 * src[3 * i] + 0.587 * src[3 * i + 1] + 0.114 * src[3 * i + 2];
    dst[i] = static_cast<std::uint8_t>(std::min(255.0, std::floor(luma + 0.5)));
  }
  return out;
}

// --- resampling --------------------------------------------------------------

namespace {

double source_coordinate(int target, int target_size, int source_size) {
  if (target_size == 1) return (source_size - 1) * 0.5;
  return static_cast<double>(target) * (source_size - 1) / (target_size - 1);
}

}  // namespace

Plane resize_bilinear(const Plane& plane, int new_width, int new_height) {
  require(plane.width >= 1 && plane.height >= 1, ErrorKind::kInvalidArgument,
          "resize_bilinear: empty source plane");
  require(new_width >= 1 && new_height >= 1, ErrorKind::kInvalidArgument,
          "resize_bilinear: target dimensions must be positive");
  Plane out(new_width, new_height);
  std::vector<int> x0s(new_width), x1s(new_width);
  std::vector<double> fxs(new_width);
  for (int x = 0; x < new_width; ++x) {
    const double sx = source_coordinate(x, new_width, plane.width);
    x0s[x] = static_cast<int>(std::floor(sx));
    x1s[x] = std::min(x0s[x] + 1, plane.width - 1);
    fxs[x] = sx - x0s[x];
  }
  for (int y = 0; y < new_height; ++y) {
    const double sy = source_coordinate(y, new_height, plane.height);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, plane.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < new_width; ++x) {
      const double fx = fxs[x];
      const double top = (1.0 - fx) * plane.at(x0s[x], y0) + fx * plane.at(x1s[x], y0);
      const double bottom = (1.0 - fx) * plane.at(x0s[x], y1) + fx * plane.at(x1s[x], y1);
      out.at(x, y) = (1.0 - fy) * top + fy * bottom;
    }
  }
  return out;
}

RasterImage downsample_box(const RasterImage& image, int factor) {
  require(factor >= 1, ErrorKind::kInvalidArgument, "downsample factor must be positive");
  const int w = (image.width() + factor - 1) / factor;
  const int h = (image.height() + factor - 1) / factor;
  const int c = image.channels();
  RasterImage out(w, h, c);
  std::vector<std::uint32_t> sums(static_cast<std::size_t>(w) * c);
  std::vector<std::uint32_t> counts(w);
  for (int by = 0; by < h; ++by) {
    std::fill(sums.begin(), sums.end(), 0u);
    std::fill(counts.begin(), counts.end(), 0u);
    for (int y = by * factor; y < std::min((by + 1) * factor, image.height()); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        const int bx = x / factor;
        ++counts[bx];
        for (int k = 0; k < c; ++k) sums[static_cast<std::size_t>(bx) * c + k] += image.at(x, y, k);
      }
    }
    for (int bx = 0; bx < w; ++bx) {
      for (int k = 0; k < c; ++k) {
        const std::uint32_t n = counts[bx];
        out.at(bx, by, k) =
            static_cast<std::uint8_t>((sums[static_cast<std::size_t>(bx) * c + k] + n / 2) / n);
      }
    }
  }
  return out;
}

// --- pyramids ------------------------------------------------------------------

ImagePyramid::ImagePyramid(std::vector<PyramidLevel> levels,
                           std::map<std::string, int> magnifications)
    : levels_(std::move(levels)), magnifications_(std::move(magnifications)) {
  require(!levels_.empty(), ErrorKind::kFormat, "pyramid has no levels");
  require(levels_[0].downsample_factor == 1, ErrorKind::kFormat,
          "pyramid level 0 must have downsample factor 1");
  for (std::size_t i = 1; i < levels_.size(); ++i) {
    require(levels_[i].downsample_factor > levels_[i - 1].downsample_factor, ErrorKind::kFormat,
            "pyramid downsample factors must be strictly increasing");
  }
  const int w0 = levels_[0].image.width();
  const int h0 = levels_[0].image.height();
  for (const PyramidLevel& level : levels_) {
    const int f = level.downsample_factor;
    const int w = level.image.width();
    const int h = level.image.height();
    require(w >= w0 / f && w <= (w0 + f - 1) / f && h >= h0 / f && h <= (h0 + f - 1) / f,
            ErrorKind::kFormat,
            "pyramid level " + level.file + " has dimensions inconsistent with its factor");
  }
  for (const auto& [name, index] : magnifications_) {
    require(index >= 0 && index < static_cast<int>(levels_.size()), ErrorKind::kFormat,
            "magnification " + name + " refers to a missing level");
  }
}

bool ImagePyramid::has_level(std::string_view name) const {
  return magnifications_.find(std::string(name)) != magnifications_.end();
}

int ImagePyramid::level_index(std::string_view name) const {
  const auto it = magnifications_.find(std::string(name));
  if (it == magnifications_.end()) {
    fail(ErrorKind::kInvalidArgument, "pyramid has no level named " + std::string(name));
  }
  return it->second;
}

const PyramidLevel& ImagePyramid::level(std::string_view name) const {
  return levels_[level_index(name)];
}

ImagePyramid load_pyramid(const std::filesystem::path& manifest_path) {
  const Json manifest = read_json(manifest_path);
  const std::string where = manifest_path.string();
  if (!manifest.is_object() || !manifest.contains("levels") || !manifest["levels"].is_array()) {
    fail(ErrorKind::kFormat, where + ": manifest needs a \"levels\" array");
  }
  const auto dir = manifest_path.parent_path();
  std::vector<PyramidLevel> levels;
  for (const Json& entry : manifest["levels"]) {
    if (!entry.is_object() || !entry.contains("file") || !entry["file"].is_string() ||
        !entry.contains("factor") || !entry["factor"].is_number_integer()) {
      fail(ErrorKind::kFormat, where + ": each level needs \"file\" and integer \"factor\"");
    }
    PyramidLevel level;
    level.file = entry["file"].get<std::string>();
    level.downsample_factor = entry["factor"].get<int>();
    require(level.downsample_factor >= 1, ErrorKind::kFormat, where + ": factor must be positive");
    if (!levels.empty()) {
      require(level.downsample_factor > levels.back().downsample_factor, ErrorKind::kFormat,
              where + ": downsample factors must be strictly increasing");
    } else {
      require(level.downsample_factor == 1, ErrorKind::kFormat,
              where + ": level 0 must have factor 1");
    }
    const auto image_path = dir / level.file;
    if (!std::filesystem::exists(image_path)) {
      fail(ErrorKind::kIo, where + ": missing level file " + image_path.string());
    }
    level.image = read_ppm(image_path);
    levels.push_back(std::move(level));
  }
  std::map<std::string, int> magnifications;
  if (manifest.contains("magnifications")) {
    const Json& mags = manifest["magnifications"];
    require(mags.is_object(), ErrorKind::kFormat, where + ": magnifications must be an object");
    for (const auto& [name, index] : mags.items()) {
      require(index.is_number_integer(), ErrorKind::kFormat,
              where + ": magnification index must be an integer");
      magnifications[name] = index.get<int>();
    }
  }
  return ImagePyramid(std::move(levels), std::move(magnifications));
}

void write_pyramid(const ImagePyramid& pyramid, const std::filesystem::path& directory) {
  Json levels = Json::array();
  for (const PyramidLevel& level : pyramid.levels()) {
    write_ppm(level.image, directory / level.file);
    levels.push_back({{"file", level.file}, {"factor", level.downsample_factor}});
  }
  Json mags = Json::object();
  for (const auto& [name, index] : pyramid.magnifications()) mags[name] = index;
  write_json(directory / "manifest.json", Json{{"levels", levels}, {"magnifications", mags}});
}

}  // namespace prolif
