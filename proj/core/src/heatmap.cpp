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

#include "prolif/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prolif/error.hpp"
#include "prolif/io.hpp"
#include "prolif/parallel.hpp"
#include "prolif/preprocess.hpp"
#include "prolif/random.hpp"

namespace prolif {

Heatmap::Heatmap(int w, int h, int factor, std::string level_name)
    : width(w), height(h), downsample_factor(factor), level(std::move(level_name)) {
  require(w > 0 && h > 0 && factor > 0, ErrorKind::kInvalidArgument,
          "heatmap dimensions must be positive");
  probs.assign(static_cast<std::size_t>(w) * h, 0.0);
}

void Heatmap::validate() const {
  require(width > 0 && height > 0 && probs.size() == static_cast<std::size_t>(width) * height,
          ErrorKind::kInvalidArgument, "heatmap dimensions do not match its data");
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::kNumeric, "heatmap probability outside [0, 1]");
  }
}

void write_heatmap(const Heatmap& heatmap, const std::filesystem::path& pgm_path) {
  heatmap.validate();
  RasterImage image(heatmap.width, heatmap.height, 1);
  auto data = image.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<std::uint8_t>(std::lround(heatmap.probs[i] * 255.0));
  }
  write_ppm(image, pgm_path);
  auto sidecar = pgm_path;
  sidecar += ".json";
  write_json(sidecar, Json{{"width", heatmap.width},
                           {"height", heatmap.height},
                           {"downsample_factor", heatmap.downsample_factor},
                           {"level", heatmap.level},
                           {"network", heatmap.network},
                           {"threshold", heatmap.threshold}});
}

Heatmap read_heatmap(const std::filesystem::path& pgm_path) {
  if (!std::filesystem::exists(pgm_path)) {
    fail(ErrorKind::kDependency, "missing heatmap " + pgm_path.string());
  }
  const RasterImage image = read_ppm(pgm_path);
  require(image.channels() == 1, ErrorKind::kFormat, pgm_path.string() + ": heatmap must be PGM");
  auto sidecar = pgm_path;
  sidecar += ".json";
  const Json meta = read_json(sidecar);
  Heatmap h(image.width(), image.height(), meta.at("downsample_factor").get<int>(),
            meta.at("level").get<std::string>());
  h.network = meta.value("network", "");
  h.threshold = meta.value("threshold", 0.5);
  const auto data = image.data();
  for (std::size_t i = 0; i < data.size(); ++i) h.probs[i] = data[i] / 255.0;
  return h;
}

HeatmapMode parse_heatmap_mode(std::string_view text) {
  if (text == "sliding") return HeatmapMode::kSliding;
  if (text == "fcn") return HeatmapMode::kFcn;
  fail(ErrorKind::kConfig, "heatmap mode must be sliding or fcn, got " + std::string(text));
}

std::vector<double> tissue_coverage(const BinaryMask& tissue, int cells_w, int cells_h,
                                    int cell_size) {
  const int f = tissue.downsample_factor;
  std::vector<double> coverage(static_cast<std::size_t>(cells_w) * cells_h, 0.0);
  const double cell_area = static_cast<double>(cell_size) * cell_size;
  for (int cy = 0; cy < cells_h; ++cy) {
    const long y0 = static_cast<long>(cy) * cell_size, y1 = y0 + cell_size;
    for (int cx = 0; cx < cells_w; ++cx) {
      const long x0 = static_cast<long>(cx) * cell_size, x1 = x0 + cell_size;
      double covered = 0.0;
      for (long my = y0 / f; my <= (y1 - 1) / f && my < tissue.height; ++my) {
        const long oy = std::min(y1, (my + 1) * f) - std::max(y0, my * f);
        for (long mx = x0 / f; mx <= (x1 - 1) / f && mx < tissue.width; ++mx) {
          if (!tissue.at(static_cast<int>(mx), static_cast<int>(my))) continue;
          const long ox = std::min(x1, (mx + 1) * f) - std::max(x0, mx * f);
          covered += static_cast<double>(ox * oy);
        }
      }
      coverage[static_cast<std::size_t>(cy) * cells_w + cx] = covered / cell_area;
    }
  }
  return coverage;
}

namespace {

double positive_probability(const Tensor& logits, std::size_t plane, std::size_t index) {
  const double a = logits.data[index];
  const double b = logits.data[plane + index];
  // softmax over two channels, evaluated stably
  if (b >= a) return 1.0 / (1.0 + std::exp(a - b));
  const double e = std::exp(b - a);
  return e / (1.0 + e);
}

struct TileOutput {
  int cx0 = 0, cy0 = 0, nx = 0, ny = 0;
  Tensor logits;
  Tensor trunk;
};

}  // namespace

HeatmapResult generate_heatmap_detailed(const RasterImage& level_image, int level_factor,
                                        const std::string& level_name, const Network& network,
                                        const BinaryMask& tissue, HeatmapMode mode,
                                        const HeatmapOptions& options) {
  const NetworkSpec& spec = network.spec();
  require(spec.class_count == 2, ErrorKind::kInvalidArgument,
          spec.name + ": heatmaps need a two-class detector");
  require(spec.fully_convolutional(), ErrorKind::kInvalidArgument,
          spec.name + " is not fully convolutional");
  if (mode == HeatmapMode::kFcn) {
    require(spec.stride_consistent(), ErrorKind::kInvalidArgument,
            spec.name + ": fcn mode needs a padding-free network");
  }
  const int S = spec.total_stride;
  const int RF = spec.receptive_field;
  const int offset = (RF - S) / 2;
  const int cw = level_image.width() / S;
  const int ch = level_image.height() / S;
  require(cw >= 1 && ch >= 1, ErrorKind::kInvalidArgument, "level smaller than one heatmap cell");
  const int cell_size = S * level_factor;

  HeatmapResult result;
  result.heatmap = Heatmap(cw, ch, cell_size, level_name);
  result.heatmap.network = spec.name;
  const std::vector<double> coverage = tissue_coverage(tissue, cw, ch, cell_size);
  auto gated = [&](int cx, int cy) {
    return coverage[static_cast<std::size_t>(cy) * cw + cx] < options.min_tissue_coverage;
  };
  const int pen = spec.penultimate_layer();
  const int last = network.logits_layer();

  auto run = [&](const Tensor& input, TileOutput& out) {
    if (options.keep_trunk) {
      out.trunk = network.forward_layers(input, 0, pen);
      out.logits = network.forward_layers(out.trunk, pen + 1, last);
    } else {
      out.logits = network.forward_layers(input, 0, last);
    }
    require(out.logits.rank() == 3 && out.logits.height() == out.ny &&
                out.logits.width() == out.nx,
            ErrorKind::kInvalidArgument,
            spec.name + ": output grid does not match the receptive-field tiling");
  };

  std::vector<TileOutput> tiles;
  if (mode == HeatmapMode::kFcn) {
    const int tile_cells = std::max(1, options.tile / S);
    for (int cy0 = 0; cy0 < ch; cy0 += tile_cells) {
      for (int cx0 = 0; cx0 < cw; cx0 += tile_cells) {
        TileOutput t;
        t.cx0 = cx0;
        t.cy0 = cy0;
        t.nx = std::min(tile_cells, cw - cx0);
        t.ny = std::min(tile_cells, ch - cy0);
        tiles.push_back(std::move(t));
      }
    }
  } else {
    for (int cy = 0; cy < ch; ++cy) {
      for (int cx = 0; cx < cw; ++cx) {
        if (gated(cx, cy)) continue;
        tiles.push_back(TileOutput{cx, cy, 1, 1, {}, {}});
      }
    }
  }

  parallel_for(tiles.size(), options.jobs, [&](std::size_t k) {
    TileOutput& t = tiles[k];
    bool any = false;
    for (int cy = t.cy0; cy < t.cy0 + t.ny && !any; ++cy) {
      for (int cx = t.cx0; cx < t.cx0 + t.nx && !any; ++cx) any = !gated(cx, cy);
    }
    if (!any) return;
    const Tensor input = image_to_tensor(level_image, t.cx0 * S - offset, t.cy0 * S - offset,
                                         t.nx * S + RF - S, t.ny * S + RF - S);
    run(input, t);
  });

  // Single-owner stitching: every cell is written exactly once.
  std::vector<std::uint8_t> writes(static_cast<std::size_t>(cw) * ch, 0);
  for (const TileOutput& t : tiles) {
    if (options.keep_trunk && !t.trunk.data.empty() && result.trunk.data.empty()) {
      result.trunk = Tensor::chw(t.trunk.channels(), ch, cw);
    }
    const std::size_t plane = static_cast<std::size_t>(t.nx) * t.ny;
    for (int j = 0; j < t.ny; ++j) {
      for (int i = 0; i < t.nx; ++i) {
        const int cx = t.cx0 + i, cy = t.cy0 + j;
        const std::size_t cell = static_cast<std::size_t>(cy) * cw + cx;
        if (writes[cell]++ != 0) fail(ErrorKind::kNumeric, "heatmap cell written twice");
        if (gated(cx, cy) || t.logits.data.empty()) continue;
        result.heatmap.probs[cell] =
            positive_probability(t.logits, plane, static_cast<std::size_t>(j) * t.nx + i);
        if (!t.trunk.data.empty()) {
          for (int c = 0; c < t.trunk.channels(); ++c) result.trunk.at(c, cy, cx) = t.trunk.at(c, j, i);
        }
      }
    }
  }
  for (int cy = 0; cy < ch; ++cy) {
    for (int cx = 0; cx < cw; ++cx) {
      const std::size_t cell = static_cast<std::size_t>(cy) * cw + cx;
      if (mode == HeatmapMode::kSliding && gated(cx, cy)) ++writes[cell];
      if (writes[cell] != 1) fail(ErrorKind::kNumeric, "heatmap cell not covered by any tile");
    }
  }
  result.heatmap.validate();
  return result;
}

Heatmap generate_heatmap(const ImagePyramid& pyramid, std::string_view level_name,
                         const Network& network, const BinaryMask& tissue, HeatmapMode mode,
                         const HeatmapOptions& options) {
  if (!pyramid.has_level(level_name)) {
    fail(ErrorKind::kInvalidArgument, "pyramid has no level " + std::string(level_name));
  }
  const PyramidLevel& level = pyramid.level(level_name);
  return generate_heatmap_detailed(level.image, level.downsample_factor, std::string(level_name),
                                   network, tissue, mode, options)
      .heatmap;
}

std::vector<TumorRegion> extract_regions(const Heatmap& heatmap, double threshold) {
  require(threshold > 0.0 && threshold < 1.0, ErrorKind::kInvalidArgument,
          "region threshold must lie in (0, 1)");
  BinaryMask above(heatmap.width, heatmap.height);
  for (std::size_t i = 0; i < heatmap.probs.size(); ++i) above.bits[i] = heatmap.probs[i] >= threshold;
  const ComponentLabels labels = label_components(above, Connectivity::kFour);
  std::vector<TumorRegion> regions(labels.count());
  for (int k = 0; k < labels.count(); ++k) {
    regions[k].id = k + 1;
    regions[k].x0 = heatmap.width;
    regions[k].y0 = heatmap.height;
  }
  auto inside = [&](int x, int y, int id) {
    return x >= 0 && y >= 0 && x < heatmap.width && y < heatmap.height && labels.at(x, y) == id;
  };
  for (int y = 0; y < heatmap.height; ++y) {
    for (int x = 0; x < heatmap.width; ++x) {
      const int id = labels.at(x, y);
      if (id == 0) continue;
      TumorRegion& r = regions[id - 1];
      r.cells.push_back({x, y});
      r.x0 = std::min(r.x0, x);
      r.y0 = std::min(r.y0, y);
      r.x1 = std::max(r.x1, x + 1);
      r.y1 = std::max(r.y1, y + 1);
      if (!inside(x - 1, y, id) || !inside(x + 1, y, id) || !inside(x, y - 1, id) ||
          !inside(x, y + 1, id)) {
        r.fringe.push_back({x, y});
      }
    }
  }
  for (TumorRegion& r : regions) r.area = r.cells.size();
  std::stable_sort(regions.begin(), regions.end(),
                   [](const TumorRegion& a, const TumorRegion& b) { return a.area > b.area; });
  return regions;
}

std::vector<PatchCoord> select_fringe_patches(const std::vector<TumorRegion>& regions,
                                              int cell_size, int level_width, int level_height,
                                              int level_factor, const FringeOptions& options) {
  require(options.count >= 0 && options.patch > 0 && cell_size > 0 && level_factor > 0,
          ErrorKind::kInvalidArgument, "invalid fringe patch options");
  std::vector<PatchCoord> patches;
  auto clamp_origin = [&](double center, int extent) {
    const long origin = std::lround(center) - options.patch / 2;
    return static_cast<int>(std::clamp<long>(origin, 0, std::max(0, extent - options.patch)));
  };
  for (const TumorRegion& region : regions) {
    if (static_cast<int>(patches.size()) >= options.count) break;
    const std::vector<Cell>& fringe = region.fringe;
    if (fringe.empty()) continue;
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(region.id)));
    std::vector<long> best(fringe.size(), std::numeric_limits<long>::max());
    std::vector<std::uint8_t> taken(fringe.size(), 0);
    std::size_t pick = rng.uniform_index(fringe.size());
    for (std::size_t step = 0; step < fringe.size(); ++step) {
      if (step > 0) {
        long far = -1;
        for (std::size_t i = 0; i < fringe.size(); ++i) {
          if (!taken[i] && best[i] > far) {
            far = best[i];
            pick = i;
          }
        }
      }
      taken[pick] = 1;
      const Cell c = fringe[pick];
      for (std::size_t i = 0; i < fringe.size(); ++i) {
        const long dx = fringe[i].x - c.x, dy = fringe[i].y - c.y;
        best[i] = std::min(best[i], dx * dx + dy * dy);
      }
      const double cx = (c.x + 0.5) * cell_size / level_factor;
      const double cy = (c.y + 0.5) * cell_size / level_factor;
      PatchCoord p{clamp_origin(cx, level_width), clamp_origin(cy, level_height), options.patch,
                   region.id, c};
      const bool duplicate = std::any_of(patches.begin(), patches.end(), [&](const PatchCoord& q) {
        return q.x == p.x && q.y == p.y;
      });
      if (!duplicate) patches.push_back(p);
      if (static_cast<int>(patches.size()) >= options.count) break;
    }
  }
  return patches;
}

std::vector<PatchCoord> select_fringe_patches(const std::vector<TumorRegion>& regions,
                                              const Heatmap& heatmap, const ImagePyramid& pyramid,
                                              std::string_view level_name,
                                              const FringeOptions& options) {
  const PyramidLevel& level = pyramid.level(level_name);
  return select_fringe_patches(regions, heatmap.downsample_factor, level.image.width(),
                               level.image.height(), level.downsample_factor, options);
}

std::vector<HeatmapPoint> mitosis_points(const Heatmap& heatmap, double threshold) {
  const int w = heatmap.width, h = heatmap.height;
  std::vector<std::uint8_t> seen(heatmap.probs.size(), 0);
  std::vector<HeatmapPoint> points;
  std::vector<Cell> stack, plateau;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = heatmap.at(x, y);
      if (v <= threshold || seen[static_cast<std::size_t>(y) * w + x]) continue;
      // Flood the 8-connected plateau of value v and check that nothing around it is higher.
      bool maximum = true;
      plateau.clear();
      stack.assign(1, Cell{x, y});
      seen[static_cast<std::size_t>(y) * w + x] = 1;
      while (!stack.empty()) {
        const Cell c = stack.back();
        stack.pop_back();
        plateau.push_back(c);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = c.x + dx, ny = c.y + dy;
            if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const double n = heatmap.at(nx, ny);
            if (n > v) {
              maximum = false;
            } else if (n == v && !seen[static_cast<std::size_t>(ny) * w + nx]) {
              seen[static_cast<std::size_t>(ny) * w + nx] = 1;
              stack.push_back({nx, ny});
            }
          }
        }
      }
      if (maximum) points.push_back({*std::min_element(plateau.begin(), plateau.end()), v});
    }
  }
  return points;
}

}  // namespace prolif
