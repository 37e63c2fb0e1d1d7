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

#include "prolif/trainloop.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "prolif/error.hpp"
#include "prolif/parallel.hpp"
#include "prolif/predict.hpp"
#include "prolif/random.hpp"

namespace prolif {

// --- nuclei ---------------------------------------------------------------------

NucleiResult propose_nuclei_detailed(const RasterImage& patch, const NucleiOptions& options) {
  require(patch.channels() == 3, ErrorKind::kInvalidArgument, "propose_nuclei needs an RGB patch");
  NucleiResult result;
  result.gray = to_grayscale(patch);
  std::vector<std::uint64_t> histogram(256, 0);
  for (std::uint8_t v : result.gray.data()) ++histogram[255 - v];
  result.threshold = otsu_threshold(histogram);
  BinaryMask dark(patch.width(), patch.height());
  const auto g = result.gray.data();
  for (std::size_t i = 0; i < g.size(); ++i) dark.bits[i] = (255 - g[i]) > result.threshold;
  const ComponentLabels labels = label_components(dark, options.connectivity);
  std::vector<Nucleus> all(labels.count());
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const int id = labels.at(x, y);
      if (id == 0) continue;
      const std::size_t area = labels.areas[id - 1];
      if (area < options.min_area || area > options.max_area) continue;
      Nucleus& n = all[id - 1];
      if (n.pixels.empty()) {
        n.x0 = n.x1 = x;
        n.y0 = n.y1 = y;
      }
      n.pixels.push_back({x, y});
      n.x0 = std::min(n.x0, x);
      n.x1 = std::max(n.x1, x + 1);
      n.y1 = std::max(n.y1, y + 1);
    }
  }
  for (Nucleus& n : all) {
    if (n.pixels.empty()) continue;
    double sx = 0.0, sy = 0.0;
    for (const Cell& c : n.pixels) {
      sx += c.x + 0.5;
      sy += c.y + 0.5;
    }
    n.area = n.pixels.size();
    n.centroid = {sx / n.area, sy / n.area};
    result.nuclei.push_back(std::move(n));
  }
  return result;
}

std::vector<Nucleus> propose_nuclei(const RasterImage& patch, const NucleiOptions& options) {
  return propose_nuclei_detailed(patch, options).nuclei;
}

// --- enums / dataset ---------------------------------------------------------------

std::string_view to_string(DetectorKind kind) {
  return kind == DetectorKind::kTumor ? "tumor" : "mitosis";
}

DetectorKind parse_detector_kind(std::string_view text) {
  if (text == "tumor") return DetectorKind::kTumor;
  if (text == "mitosis") return DetectorKind::kMitosis;
  fail(ErrorKind::kConfig, "detector kind must be tumor or mitosis, got " + std::string(text));
}

std::string_view to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::kAnnotated: return "annotated";
    case Provenance::kRandomNegative: return "random_negative";
    case Provenance::kMinedPositive: return "mined_positive";
    case Provenance::kPathologistCorrected: return "pathologist_corrected";
  }
  return "?";
}

Provenance parse_provenance(std::string_view text) {
  for (Provenance p : {Provenance::kAnnotated, Provenance::kRandomNegative,
                       Provenance::kMinedPositive, Provenance::kPathologistCorrected}) {
    if (to_string(p) == text) return p;
  }
  fail(ErrorKind::kFormat, "unknown provenance " + std::string(text));
}

namespace {

using Key = std::tuple<std::string, std::string, int, int>;

Key key_of(const PatchEntry& e) { return {e.slide, e.level, e.y, e.x}; }

}  // namespace

bool PatchDataset::contains(const std::string& slide, const std::string& level, int x, int y) const {
  return std::any_of(entries.begin(), entries.end(), [&](const PatchEntry& e) {
    return e.x == x && e.y == y && e.slide == slide && e.level == level;
  });
}

std::size_t PatchDataset::positives() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const PatchEntry& e) { return e.label == 1; }));
}

void PatchDataset::validate() const {
  std::set<Key> keys;
  for (const PatchEntry& e : entries) {
    require(e.label == 0 || e.label == 1, ErrorKind::kInvalidArgument, "dataset labels must be binary");
    require(keys.insert(key_of(e)).second, ErrorKind::kInvalidArgument,
            "duplicate dataset entry " + e.slide + " (" + std::to_string(e.x) + ", " +
                std::to_string(e.y) + ")");
  }
}

Json PatchDataset::to_json() const {
  Json list = Json::array();
  for (const PatchEntry& e : entries) {
    list.push_back({{"slide", e.slide},
                    {"x", e.x},
                    {"y", e.y},
                    {"level", e.level},
                    {"label", e.label},
                    {"provenance", std::string(to_string(e.provenance))}});
  }
  return Json{{"seed", seed}, {"entries", list}};
}

PatchDataset PatchDataset::from_json(const Json& j) {
  PatchDataset d;
  d.seed = j.at("seed").get<std::uint64_t>();
  for (const Json& e : j.at("entries")) {
    d.entries.push_back({e.at("slide").get<std::string>(), e.at("x").get<int>(), e.at("y").get<int>(),
                         e.at("level").get<std::string>(), e.at("label").get<int>(),
                         parse_provenance(e.at("provenance").get<std::string>())});
  }
  d.validate();
  return d;
}

std::vector<Correction> corrections_from_json(const Json& j) {
  require(j.is_array(), ErrorKind::kFormat, "corrections must be a JSON list");
  std::vector<Correction> out;
  for (const Json& c : j) {
    Correction k{c.at("slide").get<std::string>(), c.at("x").get<int>(), c.at("y").get<int>(),
                 c.at("level").get<std::string>(), c.at("new_label").get<int>()};
    require(k.new_label == 0 || k.new_label == 1, ErrorKind::kFormat,
            "correction labels must be 0 or 1");
    out.push_back(std::move(k));
  }
  return out;
}

Json corrections_to_json(const std::vector<Correction>& corrections) {
  Json out = Json::array();
  for (const Correction& c : corrections) {
    out.push_back({{"slide", c.slide}, {"x", c.x}, {"y", c.y}, {"level", c.level},
                   {"new_label", c.new_label}});
  }
  return out;
}

CorrectionStats apply_corrections(PatchDataset& dataset, const std::vector<Correction>& corrections) {
  std::map<Key, std::size_t> index;
  for (std::size_t i = 0; i < dataset.entries.size(); ++i) index[key_of(dataset.entries[i])] = i;
  CorrectionStats stats;
  for (const Correction& c : corrections) {
    const auto it = index.find(Key{c.slide, c.level, c.y, c.x});
    if (it == index.end() || dataset.entries[it->second].provenance == Provenance::kAnnotated) {
      ++stats.ignored;
      continue;
    }
    PatchEntry& e = dataset.entries[it->second];
    e.label = c.new_label;
    e.provenance = Provenance::kPathologistCorrected;
    ++stats.applied;
  }
  return stats;
}

std::shared_ptr<const ImagePyramid> SlideInput::load() const {
  if (pyramid) return pyramid;
  if (loader) return loader();
  return std::make_shared<const ImagePyramid>(load_pyramid(record.pyramid_path));
}

void TrainConfig::validate() const {
  require(sgd.learning_rate > 0.0 && sgd.momentum >= 0.0 && sgd.weight_decay >= 0.0,
          ErrorKind::kConfig, "train: learning rate must be positive, momentum/decay non-negative");
  require(epochs >= 1 && batch_size >= 1, ErrorKind::kConfig, "train: epochs and batch size >= 1");
  require(tau > 0.5 && tau < 1.0, ErrorKind::kConfig, "train: tau must lie in (0.5, 1)");
  require(neg_ratio >= 0.0 && jitter >= 0 && match_radius > 0.0 && region_margin >= 0,
          ErrorKind::kConfig, "train: negative ratio, jitter, radius and margin must be >= 0");
  require(mitosis_width1 >= 1 && mitosis_width2 >= 1, ErrorKind::kConfig,
          "train: mitosis widths must be positive");
  require(nuclei.min_area >= 1 && nuclei.min_area <= nuclei.max_area, ErrorKind::kConfig,
          "train: nuclei area bounds");
}

NetworkSpec detector_spec(DetectorKind kind, const TrainConfig& config) {
  return kind == DetectorKind::kTumor ? locnet_mini_valid()
                                      : mitosnet_mini(config.mitosis_width1, config.mitosis_width2);
}

std::string_view detector_level(DetectorKind kind) {
  return kind == DetectorKind::kTumor ? kLevel10x : kLevel40x;
}

// --- sampling ---------------------------------------------------------------------

namespace {

struct TumorGrid {
  int cw = 0, ch = 0, stride = 0, cell_size = 0;
  std::vector<double> coverage;
};

TumorGrid tumor_grid(const PyramidLevel& level, const BinaryMask& tissue, int stride) {
  TumorGrid g;
  g.stride = stride;
  g.cw = level.image.width() / stride;
  g.ch = level.image.height() / stride;
  g.cell_size = stride * level.downsample_factor;
  g.coverage = tissue_coverage(tissue, g.cw, g.ch, g.cell_size);
  return g;
}

bool inside_any(const std::vector<Polygon>& polygons, const Point& p) {
  return std::any_of(polygons.begin(), polygons.end(),
                     [&](const Polygon& poly) { return point_in_polygon(poly, p); });
}

std::uint64_t slide_stream(const std::string& slide) { return fnv1a64(slide); }

void sample_negatives(std::vector<PatchEntry>& out, std::vector<PatchEntry> candidates,
                      std::size_t positives, double ratio, std::uint64_t seed,
                      const std::string& slide) {
  const auto wanted = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(positives)));
  Rng rng(derive_seed(seed, slide_stream(slide)));
  rng.shuffle(std::span<PatchEntry>(candidates));
  candidates.resize(std::min(wanted, candidates.size()));
  out.insert(out.end(), candidates.begin(), candidates.end());
}

void sort_entries(std::vector<PatchEntry>& entries) {
  std::sort(entries.begin(), entries.end(),
            [](const PatchEntry& a, const PatchEntry& b) { return key_of(a) < key_of(b); });
}

std::vector<PatchEntry> tumor_stage1(const SlideInput& slide, const ImagePyramid& pyramid,
                                     const TrainConfig& config) {
  const NetworkSpec spec = detector_spec(DetectorKind::kTumor, config);
  const std::string level_name(kLevel10x);
  const TumorGrid g = tumor_grid(pyramid.level(level_name), slide.tissue, spec.total_stride);
  const int lf = pyramid.level(level_name).downsample_factor;
  std::vector<PatchEntry> positives, candidates;
  for (int cy = 0; cy < g.ch; ++cy) {
    for (int cx = 0; cx < g.cw; ++cx) {
      const int x = cx * g.stride + g.stride / 2, y = cy * g.stride + g.stride / 2;
      const Point center{(cx + 0.5) * g.cell_size, (cy + 0.5) * g.cell_size};
      PatchEntry e{slide.record.id, x, y, level_name, 1, Provenance::kAnnotated};
      if (inside_any(slide.record.tumors, center)) {
        positives.push_back(e);
        continue;
      }
      if (g.coverage[static_cast<std::size_t>(cy) * g.cw + cx] < config.min_tissue_coverage) continue;
      const Box box{static_cast<double>(cx * g.cell_size), static_cast<double>(cy * g.cell_size),
                    static_cast<double>((cx + 1) * g.cell_size),
                    static_cast<double>((cy + 1) * g.cell_size)};
      const bool touches = std::any_of(slide.record.tumors.begin(), slide.record.tumors.end(),
                                       [&](const Polygon& p) { return polygon_intersects_box(p, box); });
      if (touches) continue;
      e.label = 0;
      e.provenance = Provenance::kRandomNegative;
      candidates.push_back(e);
    }
  }
  (void)lf;
  std::vector<PatchEntry> out = positives;
  sample_negatives(out, std::move(candidates), positives.size(), config.neg_ratio, config.seed,
                   slide.record.id);
  return out;
}

std::vector<Polygon> scaled(const std::vector<Polygon>& polygons, int factor) {
  std::vector<Polygon> out = polygons;
  for (Polygon& p : out) {
    for (Point& q : p) {
      q.x /= factor;
      q.y /= factor;
    }
  }
  return out;
}

Point entry_point(const Nucleus& n) {
  return {std::floor(n.centroid.x), std::floor(n.centroid.y)};
}

std::vector<PatchEntry> mitosis_stage1(const SlideInput& slide, const ImagePyramid& pyramid,
                                       const TrainConfig& config, std::size_t* unmatched) {
  const std::string level_name(kLevel40x);
  const int lf = pyramid.level(level_name).downsample_factor;
  const std::vector<Nucleus> nuclei = slide_nuclei(pyramid, slide.record.tumors, config);
  std::vector<Point> annotations;
  for (const Point& p : slide.record.mitoses) annotations.push_back({p.x / lf, p.y / lf});
  // Greedy one-to-one matching in order of increasing distance.
  struct Pair {
    double d;
    std::size_t a, n;
  };
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < annotations.size(); ++a) {
    for (std::size_t n = 0; n < nuclei.size(); ++n) {
      const double d = distance(annotations[a], nuclei[n].centroid);
      if (d <= config.match_radius) pairs.push_back({d, a, n});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    return std::tie(x.d, x.a, x.n) < std::tie(y.d, y.a, y.n);
  });
  std::vector<std::uint8_t> a_used(annotations.size(), 0), n_used(nuclei.size(), 0);
  std::vector<PatchEntry> positives, candidates;
  for (const Pair& p : pairs) {
    if (a_used[p.a] || n_used[p.n]) continue;
    a_used[p.a] = n_used[p.n] = 1;
    const Point e = entry_point(nuclei[p.n]);
    positives.push_back({slide.record.id, static_cast<int>(e.x), static_cast<int>(e.y), level_name, 1,
                         Provenance::kAnnotated});
  }
  if (unmatched) *unmatched += static_cast<std::size_t>(std::count(a_used.begin(), a_used.end(), 0));
  for (std::size_t n = 0; n < nuclei.size(); ++n) {
    if (n_used[n]) continue;
    const bool near = std::any_of(annotations.begin(), annotations.end(), [&](const Point& a) {
      return distance(a, nuclei[n].centroid) <= config.match_radius;
    });
    if (near) continue;
    const Point e = entry_point(nuclei[n]);
    candidates.push_back({slide.record.id, static_cast<int>(e.x), static_cast<int>(e.y), level_name, 0,
                          Provenance::kRandomNegative});
  }
  std::vector<PatchEntry> out = positives;
  sample_negatives(out, std::move(candidates), positives.size(), config.neg_ratio, config.seed,
                   slide.record.id);
  return out;
}

}  // namespace

std::vector<Nucleus> slide_nuclei(const ImagePyramid& pyramid, const std::vector<Polygon>& regions,
                                  const TrainConfig& config) {
  const PyramidLevel& level = pyramid.level(kLevel40x);
  const int W = level.image.width(), H = level.image.height();
  std::set<std::pair<long, long>> seen;
  std::vector<Nucleus> out;
  for (const Polygon& poly : scaled(regions, level.downsample_factor)) {
    const Box b = bounding_box(poly);
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x0)) - config.region_margin);
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y0)) - config.region_margin);
    const int x1 = std::min(W, static_cast<int>(std::ceil(b.x1)) + config.region_margin);
    const int y1 = std::min(H, static_cast<int>(std::ceil(b.y1)) + config.region_margin);
    if (x1 <= x0 || y1 <= y0) continue;
    const RasterImage crop = level.image.crop(x0, y0, x1 - x0, y1 - y0);
    for (Nucleus& n : propose_nuclei(crop, config.nuclei)) {
      // Components cut by an interior crop edge are incomplete; skip them.
      if ((n.x0 == 0 && x0 > 0) || (n.y0 == 0 && y0 > 0) || (n.x1 == crop.width() && x1 < W) ||
          (n.y1 == crop.height() && y1 < H)) {
        continue;
      }
      n.centroid.x += x0;
      n.centroid.y += y0;
      n.x0 += x0;
      n.x1 += x0;
      n.y0 += y0;
      n.y1 += y0;
      for (Cell& c : n.pixels) {
        c.x += x0;
        c.y += y0;
      }
      const Point e = entry_point(n);
      if (!seen.insert({static_cast<long>(e.y), static_cast<long>(e.x)}).second) continue;
      out.push_back(std::move(n));
    }
  }
  std::sort(out.begin(), out.end(), [](const Nucleus& a, const Nucleus& b) {
    return std::tie(a.centroid.y, a.centroid.x) < std::tie(b.centroid.y, b.centroid.x);
  });
  return out;
}

PatchDataset build_stage1_dataset(const std::vector<SlideInput>& slides, DetectorKind kind,
                                  const TrainConfig& config) {
  config.validate();
  std::vector<std::vector<PatchEntry>> per_slide(slides.size());
  std::vector<std::size_t> unmatched(slides.size(), 0);
  parallel_for(slides.size(), config.jobs, [&](std::size_t i) {
    const auto pyramid = slides[i].load();
    per_slide[i] = kind == DetectorKind::kTumor
                       ? tumor_stage1(slides[i], *pyramid, config)
                       : mitosis_stage1(slides[i], *pyramid, config, &unmatched[i]);
    sort_entries(per_slide[i]);
  });
  std::vector<std::size_t> order(slides.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return slides[a].record.id < slides[b].record.id; });
  PatchDataset d;
  d.seed = config.seed;
  for (std::size_t i : order) d.entries.insert(d.entries.end(), per_slide[i].begin(), per_slide[i].end());
  if (d.positives() == 0) {
    fail(ErrorKind::kInvalidArgument,
         "no positive " + std::string(to_string(kind)) + " examples in the training slides");
  }
  d.validate();
  return d;
}

// --- crops and training -----------------------------------------------------------

namespace {

// A training crop with `margin` extra pixels on each side for jitter; values
// outside the level are zero in network input space.
struct Crop {
  RasterImage pixels;
  int x0 = 0, y0 = 0;       // level coordinates of the stored window
  int level_w = 0, level_h = 0;
};

Crop extract_crop(const RasterImage& level, const PatchEntry& e, int rf, int margin) {
  Crop c;
  c.x0 = e.x - rf / 2 - margin;
  c.y0 = e.y - rf / 2 - margin;
  c.pixels = level.crop(c.x0, c.y0, rf + 2 * margin, rf + 2 * margin);
  c.level_w = level.width();
  c.level_h = level.height();
  return c;
}

Tensor crop_tensor(const Crop& c, int dx, int dy, int size) {
  Tensor t = Tensor::chw(3, size, size);
  for (int y = 0; y < size; ++y) {
    const int ly = c.y0 + dy + y;
    if (ly < 0 || ly >= c.level_h) continue;
    for (int x = 0; x < size; ++x) {
      const int lx = c.x0 + dx + x;
      if (lx < 0 || lx >= c.level_w) continue;
      for (int ch = 0; ch < 3; ++ch) t.at(ch, y, x) = c.pixels.at(dx + x, dy + y, ch) / 255.0 - 0.5;
    }
  }
  return t;
}

using CropCache = std::map<Key, Crop>;

void fill_crops(CropCache& cache, const std::vector<SlideInput>& slides, const PatchDataset& dataset,
                int rf, int margin, int jobs) {
  std::vector<std::vector<const PatchEntry*>> missing(slides.size());
  std::map<std::string, std::size_t> slide_index;
  for (std::size_t i = 0; i < slides.size(); ++i) slide_index[slides[i].record.id] = i;
  for (const PatchEntry& e : dataset.entries) {
    if (cache.count(key_of(e))) continue;
    const auto it = slide_index.find(e.slide);
    require(it != slide_index.end(), ErrorKind::kInvalidArgument,
            "dataset references unknown slide " + e.slide);
    missing[it->second].push_back(&e);
  }
  std::vector<std::vector<Crop>> crops(slides.size());
  parallel_for(slides.size(), jobs, [&](std::size_t i) {
    if (missing[i].empty()) return;
    const auto pyramid = slides[i].load();
    for (const PatchEntry* e : missing[i]) {
      crops[i].push_back(extract_crop(pyramid->level(e->level).image, *e, rf, margin));
    }
  });
  for (std::size_t i = 0; i < slides.size(); ++i) {
    for (std::size_t k = 0; k < missing[i].size(); ++k) cache[key_of(*missing[i][k])] = std::move(crops[i][k]);
  }
}

WeightStore train_on_crops(const NetworkSpec& spec, const PatchDataset& dataset, const CropCache& cache,
                           const TrainConfig& config, TrainStats* stats) {
  WeightStore weights = init_weights(spec, config.seed);
  SgdState state = make_sgd_state(spec);
  const std::size_t n = dataset.entries.size();
  std::vector<const Crop*> crops(n);
  for (std::size_t i = 0; i < n; ++i) crops[i] = &cache.at(key_of(dataset.entries[i]));
  const int rf = spec.receptive_field;
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  std::vector<Gradients> slots(batch);
  if (stats) {
    stats->positives = dataset.positives();
    stats->negatives = dataset.negatives();
    stats->epoch_losses.clear();
  }
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffler(derive_seed(config.seed, 0x100 + static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      const Network network(spec, weights);
      parallel_for(count, config.jobs, [&](std::size_t k) {
        const std::size_t idx = order[start + k];
        int dx = config.jitter, dy = config.jitter;
        if (config.jitter > 0) {
          Rng jitter(derive_seed(config.seed, (static_cast<std::uint64_t>(epoch) << 40) ^ idx));
          dx = jitter.uniform_int(0, 2 * config.jitter);
          dy = jitter.uniform_int(0, 2 * config.jitter);
        }
        const Tensor input = crop_tensor(*crops[idx], dx, dy, rf);
        const int label = dataset.entries[idx].label;
        slots[k] = backward(network, input, std::span<const int>(&label, 1));
      });
      std::vector<LayerParams> sum = zero_gradients(spec).layers;
      for (std::size_t k = 0; k < count; ++k) {
        epoch_loss += slots[k].loss;
        for (std::size_t l = 0; l < sum.size(); ++l) {
          for (std::size_t j = 0; j < sum[l].weight.size(); ++j) sum[l].weight.data[j] += slots[k].layers[l].weight.data[j];
          for (std::size_t j = 0; j < sum[l].bias.size(); ++j) sum[l].bias.data[j] += slots[k].layers[l].bias.data[j];
        }
      }
      const double scale = 1.0 / static_cast<double>(count);
      for (LayerParams& p : sum) {
        for (double& v : p.weight.data) v *= scale;
        for (double& v : p.bias.data) v *= scale;
      }
      sgd_step(spec, weights, sum, state, config.sgd);
    }
    if (stats) stats->epoch_losses.push_back(epoch_loss / static_cast<double>(n));
  }
  return weights;
}

int crop_margin(DetectorKind kind, const TrainConfig& config) {
  (void)kind;
  return config.jitter;
}

DetectorKind kind_of(const NetworkSpec& spec) {
  return spec.name.rfind("mitosnet", 0) == 0 ? DetectorKind::kMitosis : DetectorKind::kTumor;
}

// Probability that the centered crop of each entry is positive.
std::vector<double> score_entries(const Network& network, const ImagePyramid& pyramid,
                                  const std::vector<PatchEntry>& entries) {
  const int rf = network.spec().receptive_field;
  std::vector<double> probs;
  probs.reserve(entries.size());
  for (const PatchEntry& e : entries) {
    const Crop c = extract_crop(pyramid.level(e.level).image, e, rf, 0);
    const Tensor p = network.probabilities(crop_tensor(c, 0, 0, rf));
    probs.push_back(p.data[1]);
  }
  return probs;
}

}  // namespace

WeightStore train_network(const NetworkSpec& spec, const std::vector<SlideInput>& slides,
                          const PatchDataset& dataset, const TrainConfig& config, TrainStats* stats) {
  config.validate();
  dataset.validate();
  require(!dataset.entries.empty(), ErrorKind::kInvalidArgument, "cannot train on an empty dataset");
  CropCache cache;
  fill_crops(cache, slides, dataset, spec.receptive_field, crop_margin(kind_of(spec), config),
             config.jobs);
  return train_on_crops(spec, dataset, cache, config, stats);
}

PatchDataset mine_stage2(const Network& network, const std::vector<SlideInput>& slides,
                         const PatchDataset& dataset, DetectorKind kind, const TrainConfig& config) {
  config.validate();
  std::set<Key> existing;
  for (const PatchEntry& e : dataset.entries) existing.insert(key_of(e));
  std::vector<std::vector<PatchEntry>> mined(slides.size());
  const std::string level_name(detector_level(kind));
  auto fresh = [&](const std::string& slide, int x, int y) {
    return existing.count(Key{slide, level_name, y, x}) == 0;
  };
  if (kind == DetectorKind::kTumor) {
    for (std::size_t i = 0; i < slides.size(); ++i) {
      const auto pyramid = slides[i].load();
      const PyramidLevel& level = pyramid->level(level_name);
      HeatmapOptions opts;
      opts.min_tissue_coverage = config.min_tissue_coverage;
      opts.jobs = config.jobs;
      const Heatmap h = generate_heatmap_detailed(level.image, level.downsample_factor, level_name,
                                                  network, slides[i].tissue, HeatmapMode::kFcn, opts)
                            .heatmap;
      const int S = network.spec().total_stride;
      for (int cy = 0; cy < h.height; ++cy) {
        for (int cx = 0; cx < h.width; ++cx) {
          const int x = cx * S + S / 2, y = cy * S + S / 2;
          if (h.at(cx, cy) > config.tau && fresh(slides[i].record.id, x, y)) {
            mined[i].push_back({slides[i].record.id, x, y, level_name, 1, Provenance::kMinedPositive});
          }
        }
      }
    }
  } else {
    parallel_for(slides.size(), config.jobs, [&](std::size_t i) {
      const auto pyramid = slides[i].load();
      std::vector<PatchEntry> candidates;
      for (const Nucleus& n : slide_nuclei(*pyramid, slides[i].record.tumors, config)) {
        const Point e = entry_point(n);
        if (fresh(slides[i].record.id, static_cast<int>(e.x), static_cast<int>(e.y))) {
          candidates.push_back({slides[i].record.id, static_cast<int>(e.x), static_cast<int>(e.y),
                                level_name, 1, Provenance::kMinedPositive});
        }
      }
      const std::vector<double> probs = score_entries(network, *pyramid, candidates);
      for (std::size_t k = 0; k < candidates.size(); ++k) {
        if (probs[k] > config.tau) mined[i].push_back(candidates[k]);
      }
    });
  }
  std::vector<PatchEntry> appended;
  for (auto& m : mined) appended.insert(appended.end(), m.begin(), m.end());
  sort_entries(appended);
  PatchDataset out = dataset;
  out.entries.insert(out.entries.end(), appended.begin(), appended.end());
  out.validate();
  return out;
}

std::optional<double> validation_auc(const Network& network, const std::vector<SlideInput>& slides,
                                     DetectorKind kind, const TrainConfig& config) {
  std::vector<std::vector<double>> scores(slides.size());
  std::vector<std::vector<int>> labels(slides.size());
  const std::string level_name(detector_level(kind));
  auto per_slide = [&](std::size_t i, int jobs) {
    const auto pyramid = slides[i].load();
    const SlideRecord& r = slides[i].record;
    if (kind == DetectorKind::kTumor) {
      const PyramidLevel& level = pyramid->level(level_name);
      HeatmapOptions opts;
      opts.min_tissue_coverage = config.min_tissue_coverage;
      opts.jobs = jobs;
      const Heatmap h = generate_heatmap_detailed(level.image, level.downsample_factor, level_name,
                                                  network, slides[i].tissue, HeatmapMode::kFcn, opts)
                            .heatmap;
      const std::vector<double> cov =
          tissue_coverage(slides[i].tissue, h.width, h.height, h.downsample_factor);
      for (int cy = 0; cy < h.height; ++cy) {
        for (int cx = 0; cx < h.width; ++cx) {
          if (cov[static_cast<std::size_t>(cy) * h.width + cx] < config.min_tissue_coverage) continue;
          const Point c{(cx + 0.5) * h.downsample_factor, (cy + 0.5) * h.downsample_factor};
          scores[i].push_back(h.at(cx, cy));
          labels[i].push_back(inside_any(r.tumors, c) ? 1 : 0);
        }
      }
    } else {
      const int lf = pyramid->level(level_name).downsample_factor;
      std::vector<PatchEntry> entries;
      for (const Nucleus& n : slide_nuclei(*pyramid, r.tumors, config)) {
        const Point e = entry_point(n);
        const bool positive = std::any_of(r.mitoses.begin(), r.mitoses.end(), [&](const Point& m) {
          return distance({m.x / lf, m.y / lf}, n.centroid) <= config.match_radius;
        });
        entries.push_back({r.id, static_cast<int>(e.x), static_cast<int>(e.y), level_name,
                           positive ? 1 : 0, Provenance::kAnnotated});
        labels[i].push_back(positive ? 1 : 0);
      }
      scores[i] = score_entries(network, *pyramid, entries);
    }
  };
  if (kind == DetectorKind::kTumor) {
    for (std::size_t i = 0; i < slides.size(); ++i) per_slide(i, config.jobs);
  } else {
    parallel_for(slides.size(), config.jobs, [&](std::size_t i) { per_slide(i, 1); });
  }
  std::vector<double> s;
  std::vector<int> l;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    s.insert(s.end(), scores[i].begin(), scores[i].end());
    l.insert(l.end(), labels[i].begin(), labels[i].end());
  }
  const auto pos = std::count(l.begin(), l.end(), 1);
  if (pos == 0 || pos == static_cast<long>(l.size())) return std::nullopt;
  return roc_auc(s, l).auc;
}

Json TwoStageResult::report() const {
  auto stage = [](const TrainStats& s) {
    return Json{{"positives", s.positives},
                {"negatives", s.negatives},
                {"epoch_losses", s.epoch_losses},
                {"validation_auc", s.validation_auc ? Json(*s.validation_auc) : Json(nullptr)}};
  };
  return Json{{"stage1", stage(stage1_stats)},
              {"stage2", stage(stage2_stats)},
              {"mined", mined},
              {"corrections_applied", corrections.applied},
              {"corrections_ignored", corrections.ignored}};
}

TwoStageResult train_two_stage(const std::vector<SlideInput>& slides, DetectorKind kind,
                               const TrainConfig& config, const std::vector<SlideInput>& validation,
                               const std::vector<Correction>& corrections, const Reviewer& reviewer) {
  config.validate();
  const NetworkSpec spec = detector_spec(kind, config);
  TwoStageResult result;
  result.stage1 = build_stage1_dataset(slides, kind, config);
  CropCache cache;
  const int margin = crop_margin(kind, config);
  fill_crops(cache, slides, result.stage1, spec.receptive_field, margin, config.jobs);
  result.stage1_weights = train_on_crops(spec, result.stage1, cache, config, &result.stage1_stats);
  const Network stage1_net(spec, result.stage1_weights);
  if (!validation.empty()) result.stage1_stats.validation_auc = validation_auc(stage1_net, validation, kind, config);

  result.stage2 = mine_stage2(stage1_net, slides, result.stage1, kind, config);
  result.mined = result.stage2.entries.size() - result.stage1.entries.size();
  if (!corrections.empty()) {
    const CorrectionStats s = apply_corrections(result.stage2, corrections);
    result.corrections.applied += s.applied;
    result.corrections.ignored += s.ignored;
  }
  if (reviewer) {
    const CorrectionStats s = apply_corrections(result.stage2, reviewer(result.stage2));
    result.corrections.applied += s.applied;
    result.corrections.ignored += s.ignored;
  }
  fill_crops(cache, slides, result.stage2, spec.receptive_field, margin, config.jobs);
  result.weights = train_on_crops(spec, result.stage2, cache, config, &result.stage2_stats);
  if (!validation.empty()) {
    result.stage2_stats.validation_auc = validation_auc(Network(spec, result.weights), validation, kind, config);
  }
  return result;
}

}  // namespace prolif
