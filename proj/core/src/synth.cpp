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

#include "prolif/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "prolif/error.hpp"
#include "prolif/parallel.hpp"
#include "prolif/random.hpp"

namespace prolif {

namespace {

constexpr int kLevelFactor = 4;

// Stream ids for the per-slide generators.
constexpr std::uint64_t kGeometryStream = 1;
constexpr std::uint64_t kTextureStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

using Rgb = std::array<double, 3>;
constexpr Rgb kBackground{243, 232, 238};
constexpr Rgb kTissue{238, 180, 214};
constexpr Rgb kStroma{225, 165, 210};
constexpr Rgb kNucleus{95, 55, 145};
constexpr Rgb kMitosis{30, 20, 55};

std::uint64_t slide_seed(const SynthConfig& config, int index, std::uint64_t stream) {
  return derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(index) + 1), stream);
}

Polygon wobbly_polygon(Rng& rng, Point center, double radius, int vertices, int harmonics,
                       double amplitude) {
  std::vector<double> a, phase;
  for (int k = 0; k < harmonics; ++k) {
    a.push_back(rng.uniform(0.0, amplitude));
    phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  }
  Polygon p;
  for (int v = 0; v < vertices; ++v) {
    const double t = 2.0 * std::numbers::pi * v / vertices;
    double r = 1.0;
    for (int k = 0; k < harmonics; ++k) r += a[k] * std::cos((k + 2) * t + phase[k]);
    p.push_back({center.x + radius * r * std::cos(t), center.y + radius * r * std::sin(t)});
  }
  return p;
}

Point random_point_in(Rng& rng, const Polygon& polygon) {
  const Box b = bounding_box(polygon);
  for (;;) {
    const Point p{rng.uniform(b.x0, b.x1), rng.uniform(b.y0, b.y1)};
    if (point_in_polygon(polygon, p)) return p;
  }
}

}  // namespace

void SynthConfig::validate() const {
  require(slides >= 1, ErrorKind::kConfig, "synth: slide count must be positive");
  require(size >= 16 * kLevelFactor && size % (16 * kLevelFactor) == 0, ErrorKind::kConfig,
          "synth: size must be a positive multiple of 64");
  require(tumors >= 1, ErrorKind::kConfig, "synth: at least one tumor per slide");
  require(tumor_radius_min > 0.0 && tumor_radius_min <= tumor_radius_max, ErrorKind::kConfig,
          "synth: tumor radius range");
  require(tissue_radius_min > 0.0 && tissue_radius_min <= tissue_radius_max, ErrorKind::kConfig,
          "synth: tissue radius range");
  require(density_min >= 0.0 && density_min <= density_max, ErrorKind::kConfig,
          "synth: mitosis density range must be non-negative");
  require(grade_thresholds[0] <= grade_thresholds[1], ErrorKind::kConfig, "synth: grade thresholds");
  require(unannotated_tumor_fraction >= 0.0 && unannotated_tumor_fraction < 1.0 &&
              dropped_mitosis_fraction >= 0.0 && dropped_mitosis_fraction < 1.0,
          ErrorKind::kConfig, "synth: annotation drop fractions must lie in [0, 1)");
  require(pixel_noise >= 0.0 && stain_cast >= 0.0 && stain_cast < 1.0, ErrorKind::kConfig,
          "synth: noise levels");
  require(mitosis_spacing > 0.0 && mitosis_margin >= 0.0, ErrorKind::kConfig, "synth: mitosis spacing");
  require(atypia >= 0.0 && atypia <= 2.0, ErrorKind::kConfig, "synth: atypia must lie in [0, 2]");
  require(tissue_nuclei_coverage >= 0.0 && tumor_nuclei_coverage >= 0.0, ErrorKind::kConfig,
          "synth: nuclei coverage");
}

double SynthConfig::effective_score_noise() const {
  return score_noise >= 0.0 ? score_noise : 0.1 * score_slope * 0.5 * (density_min + density_max);
}

Json SynthConfig::to_json() const {
  return Json{{"seed", seed},
              {"slides", slides},
              {"size", size},
              {"tumors", tumors},
              {"tumor_radius_min", tumor_radius_min},
              {"tumor_radius_max", tumor_radius_max},
              {"tissue_radius_min", tissue_radius_min},
              {"tissue_radius_max", tissue_radius_max},
              {"density_min", density_min},
              {"density_max", density_max},
              {"grade_thresholds", grade_thresholds},
              {"score_slope", score_slope},
              {"score_intercept", score_intercept},
              {"score_noise", score_noise},
              {"unannotated_tumor_fraction", unannotated_tumor_fraction},
              {"dropped_mitosis_fraction", dropped_mitosis_fraction},
              {"pixel_noise", pixel_noise},
              {"stain_cast", stain_cast},
              {"mitosis_spacing", mitosis_spacing},
              {"mitosis_margin", mitosis_margin},
              {"tissue_nuclei_coverage", tissue_nuclei_coverage},
              {"tumor_nuclei_coverage", tumor_nuclei_coverage},
              {"atypia", atypia}};
}

SynthConfig SynthConfig::from_json(const Json& j) {
  require(j.is_object(), ErrorKind::kConfig, "synth config must be an object");
  SynthConfig c;
  const Json known = c.to_json();
  for (const auto& [key, value] : j.items()) {
    require(known.contains(key), ErrorKind::kConfig, "synth: unknown key '" + key + "'");
  }
  Json merged = known;
  merged.update(j);
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.slides = merged.at("slides").get<int>();
    c.size = merged.at("size").get<int>();
    c.tumors = merged.at("tumors").get<int>();
    c.tumor_radius_min = merged.at("tumor_radius_min").get<double>();
    c.tumor_radius_max = merged.at("tumor_radius_max").get<double>();
    c.tissue_radius_min = merged.at("tissue_radius_min").get<double>();
    c.tissue_radius_max = merged.at("tissue_radius_max").get<double>();
    c.density_min = merged.at("density_min").get<double>();
    c.density_max = merged.at("density_max").get<double>();
    c.grade_thresholds = merged.at("grade_thresholds").get<std::array<double, 2>>();
    c.score_slope = merged.at("score_slope").get<double>();
    c.score_intercept = merged.at("score_intercept").get<double>();
    c.score_noise = merged.at("score_noise").get<double>();
    c.unannotated_tumor_fraction = merged.at("unannotated_tumor_fraction").get<double>();
    c.dropped_mitosis_fraction = merged.at("dropped_mitosis_fraction").get<double>();
    c.pixel_noise = merged.at("pixel_noise").get<double>();
    c.stain_cast = merged.at("stain_cast").get<double>();
    c.mitosis_spacing = merged.at("mitosis_spacing").get<double>();
    c.mitosis_margin = merged.at("mitosis_margin").get<double>();
    c.tissue_nuclei_coverage = merged.at("tissue_nuclei_coverage").get<double>();
    c.tumor_nuclei_coverage = merged.at("tumor_nuclei_coverage").get<double>();
    c.atypia = merged.at("atypia").get<double>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::kConfig, std::string("synth: ") + e.what());
  }
  c.validate();
  return c;
}

int grade_for_density(double density, const std::array<double, 2>& thresholds) {
  return density < thresholds[0] ? 0 : density < thresholds[1] ? 1 : 2;
}

std::string slide_name(int index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 3) digits.insert(0, 3 - digits.size(), '0');
  return "slide_" + digits;
}

// --- truth serialization ----------------------------------------------------------

namespace {

Json polygon_json(const Polygon& p) {
  Json out = Json::array();
  for (const Point& q : p) out.push_back({q.x, q.y});
  return out;
}

Polygon polygon_from(const Json& j) {
  Polygon p;
  for (const Json& q : j) p.push_back({q.at(0).get<double>(), q.at(1).get<double>()});
  return p;
}

}  // namespace

Json SynthTruth::to_json() const {
  Json tumor_list = Json::array();
  for (const SynthTumor& t : tumors) {
    tumor_list.push_back({{"polygon", polygon_json(t.polygon)}, {"annotated", t.annotated}});
  }
  Json mitosis_list = Json::array();
  for (const SynthMitosis& m : mitoses) {
    mitosis_list.push_back({{"x", m.center.x}, {"y", m.center.y}, {"tumor", m.tumor}, {"annotated", m.annotated}});
  }
  return Json{{"id", id},
              {"tissue", polygon_json(tissue)},
              {"tumors", tumor_list},
              {"mitoses", mitosis_list},
              {"tumor_area", tumor_area},
              {"density", density},
              {"grade", grade},
              {"molecular_score", molecular_score},
              {"stain", stain}};
}

SynthTruth SynthTruth::from_json(const Json& j) {
  SynthTruth t;
  try {
    t.id = j.at("id").get<std::string>();
    t.tissue = polygon_from(j.at("tissue"));
    for (const Json& x : j.at("tumors")) {
      t.tumors.push_back({polygon_from(x.at("polygon")), x.at("annotated").get<bool>()});
    }
    for (const Json& x : j.at("mitoses")) {
      t.mitoses.push_back({{x.at("x").get<double>(), x.at("y").get<double>()}, x.at("tumor").get<int>(),
                           x.at("annotated").get<bool>()});
    }
    t.tumor_area = j.at("tumor_area").get<double>();
    t.density = j.at("density").get<double>();
    t.grade = j.at("grade").get<int>();
    t.molecular_score = j.at("molecular_score").get<double>();
    t.stain = j.at("stain").get<std::array<double, 3>>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::kFormat, std::string("truth record: ") + e.what());
  }
  return t;
}

SlideRecord SynthTruth::annotations() const {
  SlideRecord r;
  r.id = id;
  for (const SynthTumor& t : tumors) {
    if (t.annotated) r.tumors.push_back(t.polygon);
  }
  for (const SynthMitosis& m : mitoses) {
    if (m.annotated) r.mitoses.push_back(m.center);
  }
  r.grade = grade;
  r.molecular_score = molecular_score;
  return r;
}

// --- planning ---------------------------------------------------------------------

SynthTruth plan_slide(const SynthConfig& config, int index) {
  config.validate();
  Rng rng(slide_seed(config, index, kGeometryStream));
  SynthTruth t;
  t.id = slide_name(index);
  const double half = config.size / 2.0;
  const double tissue_r = std::min(rng.uniform(config.tissue_radius_min, config.tissue_radius_max),
                                   half * 0.9);
  const Point tissue_c{half + rng.uniform(-0.05, 0.05) * config.size,
                       half + rng.uniform(-0.05, 0.05) * config.size};
  t.tissue = wobbly_polygon(rng, tissue_c, tissue_r, 256, 4, 0.04);

  for (int k = 0; k < config.tumors; ++k) {
    const double r = rng.uniform(config.tumor_radius_min, config.tumor_radius_max);
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      const Point c = random_point_in(rng, t.tissue);
      if (distance_to_boundary(t.tissue, c) < 1.25 * r + 100.0) continue;
      const bool clear = std::all_of(t.tumors.begin(), t.tumors.end(), [&](const SynthTumor& other) {
        const Box b = bounding_box(other.polygon);
        const Point oc{(b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2};
        return distance(c, oc) >= 1.25 * (r + b.width() / 2) + 150.0;
      });
      if (!clear) continue;
      t.tumors.push_back({wobbly_polygon(rng, c, r, 128, 3, 0.05), true});
      placed = true;
    }
    require(placed, ErrorKind::kInvalidArgument,
            t.id + ": infeasible geometry, tumors do not fit inside the tissue");
  }
  for (SynthTumor& tumor : t.tumors) tumor.annotated = rng.uniform() >= config.unannotated_tumor_fraction;
  for (const SynthTumor& tumor : t.tumors) t.tumor_area += polygon_area(tumor.polygon);

  const double planned = rng.uniform(config.density_min, config.density_max);
  const int count = static_cast<int>(std::llround(planned * t.tumor_area / 1e6));
  // Mitoses favor the tumor fringe; placements respect spacing and margin.
  int attempts = 0;
  while (static_cast<int>(t.mitoses.size()) < count) {
    require(++attempts < 200000, ErrorKind::kInvalidArgument,
            t.id + ": infeasible geometry, cannot place the planted mitoses");
    const int k = static_cast<int>(rng.uniform_index(t.tumors.size()));
    const Polygon& poly = t.tumors[k].polygon;
    const Point raw = random_point_in(rng, poly);
    const Point p{std::round(raw.x) + 0.5, std::round(raw.y) + 0.5};
    if (!point_in_polygon(poly, p)) continue;
    const double depth = distance_to_boundary(poly, p);
    if (depth < config.mitosis_margin + 6.0) continue;
    if (rng.uniform() > 0.3 + 0.7 * std::exp(-depth / 120.0)) continue;
    const bool spaced = std::all_of(t.mitoses.begin(), t.mitoses.end(), [&](const SynthMitosis& m) {
      return distance(m.center, p) >= config.mitosis_spacing;
    });
    if (!spaced) continue;
    t.mitoses.push_back({p, k, true});
  }
  for (SynthMitosis& m : t.mitoses) {
    m.annotated = t.tumors[m.tumor].annotated && rng.uniform() >= config.dropped_mitosis_fraction;
  }
  t.density = t.tumor_area > 0.0 ? static_cast<double>(t.mitoses.size()) / (t.tumor_area / 1e6) : 0.0;
  t.grade = grade_for_density(t.density, config.grade_thresholds);
  t.molecular_score = config.score_slope * t.density + config.score_intercept +
                      rng.normal(0.0, config.effective_score_noise());
  for (double& s : t.stain) s = rng.uniform(1.0 - config.stain_cast, 1.0 + config.stain_cast);
  return t;
}

// --- rendering --------------------------------------------------------------------

namespace {

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3) {}

  void fill(const Rgb& c) {
    for (std::size_t i = 0; i < px_.size(); ++i) px_[i] = static_cast<float>(c[i % 3]);
  }
  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    float* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    for (int k = 0; k < 3; ++k) p[k] = static_cast<float>(c[k]);
  }
  void fill_polygon(const Polygon& poly, const Rgb& c) {
    scanline_fill(poly, w_, h_, [&](int y, int x0, int x1) {
      for (int x = x0; x < x1; ++x) set(x, y, c);
    });
  }
  /// Pixels whose centers satisfy inside(dx, dy) relative to `center`.
  template <typename Inside>
  void stamp(const Point& center, double reach, const Rgb& c, Inside&& inside) {
    const int x0 = static_cast<int>(std::floor(center.x - reach)), x1 = static_cast<int>(std::ceil(center.x + reach));
    const int y0 = static_cast<int>(std::floor(center.y - reach)), y1 = static_cast<int>(std::ceil(center.y + reach));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (inside(x + 0.5 - center.x, y + 0.5 - center.y)) set(x, y, c);
      }
    }
  }
  std::vector<float>& pixels() { return px_; }
  int width() const { return w_; }
  int height() const { return h_; }

 private:
  int w_, h_;
  std::vector<float> px_;
};

void draw_nuclei(Canvas& canvas, Rng& rng, const Polygon& region, double coverage, double rmin, double rmax) {
  const double mean_area = std::numbers::pi * std::pow(0.5 * (rmin + rmax), 2) * 0.8;
  const auto count = static_cast<std::size_t>(coverage * polygon_area(region) / mean_area);
  for (std::size_t i = 0; i < count; ++i) {
    const Point c = random_point_in(rng, region);
    const double a = rng.uniform(rmin, rmax), b = a * rng.uniform(0.65, 1.0);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const Rgb color{kNucleus[0] + rng.uniform(-8, 8), kNucleus[1] + rng.uniform(-8, 8),
                    kNucleus[2] + rng.uniform(-8, 8)};
    canvas.stamp(c, a + 1.0, color, [&](double dx, double dy) {
      const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
      return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    });
  }
}

/// `atypia` in [0, 2] enlarges and elongates the figure.
void draw_mitosis(Canvas& canvas, Rng& rng, const Point& center, double atypia) {
  const double r = rng.uniform(4.5, 6.0) + 1.5 * atypia;
  const int lobes = rng.uniform_int(5, 8);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double stretch = 1.0 + 0.5 * atypia;
  const double ct = std::cos(phase2), st = std::sin(phase2);
  canvas.stamp(center, stretch * r + 5.0, kStroma, [&](double dx, double dy) {
    const double u = (dx * ct + dy * st) / stretch, v = -dx * st + dy * ct;
    return u * u + v * v <= (r + 4.5) * (r + 4.5);
  });
  canvas.stamp(center, 1.6 * stretch * r, kMitosis, [&](double x, double y) {
    const double dx = (x * ct + y * st) / stretch, dy = -x * st + y * ct;
    const double t = std::atan2(dy, dx);
    const double limit = r * (1.0 + 0.3 * std::sin(lobes * t + phase) + 0.12 * std::sin(2 * t + phase2));
    return std::hypot(dx, dy) <= limit;
  });
}

}  // namespace

RasterImage render_slide(const SynthConfig& config, const SynthTruth& truth, int index) {
  Rng texture(slide_seed(config, index, kTextureStream));
  Canvas canvas(config.size, config.size);
  const double span = config.density_max - config.density_min;
  const double activity = span > 0.0 ? std::clamp((truth.density - config.density_min) / span, 0.0, 1.0) : 0.0;
  const double atypia = config.atypia * activity;
  canvas.fill(kBackground);
  canvas.fill_polygon(truth.tissue, kTissue);
  draw_nuclei(canvas, texture, truth.tissue, config.tissue_nuclei_coverage, 2.8, 4.5);
  for (const SynthTumor& t : truth.tumors) {
    canvas.fill_polygon(t.polygon, kStroma);
    draw_nuclei(canvas, texture, t.polygon, config.tumor_nuclei_coverage, 3.2, 5.5 + 1.5 * atypia);
  }
  for (const SynthMitosis& m : truth.mitoses) draw_mitosis(canvas, texture, m.center, atypia);

  // Pixel noise (sum of two uniform bytes, a triangular law with std 255/sqrt(6)) and
  // the per-slide stain cast applied in optical density.
  Rng noise(slide_seed(config, index, kNoiseStream));
  const double scale = config.pixel_noise / (255.0 / std::sqrt(6.0));
  std::array<std::array<std::uint8_t, 256>, 3> lut{};
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < 256; ++v) {
      const double od = -std::log(std::max(v, 1) / 255.0) * truth.stain[c];
      lut[c][v] = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * std::exp(-od)), 0L, 255L));
    }
  }
  RasterImage image(config.size, config.size, 3);
  const auto out = image.data();
  const auto& px = canvas.pixels();
  for (std::size_t i = 0; i < px.size(); i += 3) {
    std::uint64_t bits = noise.next_u64();
    for (int c = 0; c < 3; ++c) {
      const int a = static_cast<int>(bits & 0xff), b = static_cast<int>((bits >> 8) & 0xff);
      bits >>= 16;
      const double v = px[i + c] + scale * (a + b - 255);
      out[i + c] = lut[c][std::clamp(static_cast<int>(std::lround(v)), 0, 255)];
    }
  }
  return image;
}

ImagePyramid make_pyramid(RasterImage level0) {
  RasterImage level1 = downsample_box(level0, kLevelFactor);
  std::vector<PyramidLevel> levels;
  levels.push_back({std::move(level0), 1, "level0.ppm"});
  levels.push_back({std::move(level1), kLevelFactor, "level1.ppm"});
  return ImagePyramid(std::move(levels), {{std::string(kLevel40x), 0}, {std::string(kLevel10x), 1}});
}

std::vector<SynthTruth> generate_corpus(const SynthConfig& config, const std::filesystem::path& out) {
  config.validate();
  std::vector<SynthTruth> truths(static_cast<std::size_t>(config.slides));
  parallel_for(truths.size(), config.jobs, [&](std::size_t i) {
    const int index = static_cast<int>(i);
    SynthTruth t = plan_slide(config, index);
    const std::filesystem::path dir = out / t.id;
    std::filesystem::create_directories(dir);
    write_pyramid(make_pyramid(render_slide(config, t, index)), dir);
    write_json(dir / "annotations.json", annotations_to_json(t.annotations()));
    write_json(dir / "truth.json", t.to_json());
    truths[i] = std::move(t);
  });
  return truths;
}

}  // namespace prolif
