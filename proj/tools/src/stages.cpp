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

#include "stages.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "prolif/error.hpp"
#include "prolif/features.hpp"
#include "prolif/heatmap.hpp"
#include "prolif/parallel.hpp"
#include "prolif/predict.hpp"
#include "prolif/preprocess.hpp"
#include "prolif/random.hpp"
#include "prolif/synth.hpp"
#include "prolif/trainloop.hpp"

namespace prolif::cli {

namespace fs = std::filesystem;

Workspace::Workspace(PipelineConfig config, fs::path out, std::optional<fs::path> corpus)
    : config_(std::move(config)), out_(std::move(out)), corpus_(corpus ? *corpus : out_ / "corpus") {
  config_.validate();
  provenance_ = std::make_unique<ProvenanceWriter>(out_, config_.hash(), config_.seed);
}

fs::path Workspace::weights_path(DetectorKind kind) const {
  return models_dir() / (std::string(to_string(kind)) + ".weights");
}

void require_artifact(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) {
    fail(ErrorKind::kDependency, "missing artifact " + path.string() + "; run `prolif " + stage + "` first");
  }
}

std::vector<SlideRef> list_corpus(const Workspace& ws) {
  if (!fs::is_directory(ws.corpus())) {
    fail(ErrorKind::kDependency, "missing corpus " + ws.corpus().string() + "; run `prolif synth` first");
  }
  std::vector<SlideRef> out;
  for (const fs::path& dir : list_slide_dirs(ws.corpus())) {
    SlideRecord r = load_slide(dir);
    out.push_back({r.id, dir, std::move(r)});
  }
  require(!out.empty(), ErrorKind::kDependency, "no slides under " + ws.corpus().string());
  return out;
}

namespace {

std::vector<fs::path> level_files(const SlideRef& s) {
  const Json manifest = read_json(s.dir / "manifest.json");
  std::vector<fs::path> files{s.dir / "manifest.json"};
  for (const Json& level : manifest.at("levels")) files.push_back(s.dir / level.at("file").get<std::string>());
  return files;
}

StainProfile profile_from(const Json& j) {
  StainProfile p;
  p.low = j.at("low").get<std::array<double, 3>>();
  p.high = j.at("high").get<std::array<double, 3>>();
  return p;
}

Json profile_json(const StainProfile& p) { return Json{{"low", p.low}, {"high", p.high}}; }

std::shared_ptr<const ImagePyramid> load_normalized(const Workspace& ws, const SlideRef& s) {
  require_artifact(ws.stain_path(s.id), "normalize");
  require_artifact(ws.template_path(), "normalize");
  const StainProfile source = profile_from(read_json(ws.stain_path(s.id)));
  const StainProfile target = profile_from(read_json(ws.template_path()));
  ImagePyramid raw = load_pyramid(s.dir / "manifest.json");
  std::vector<PyramidLevel> levels = raw.levels();
  for (PyramidLevel& level : levels) level.image = standardize_stain(level.image, source, target);
  return std::make_shared<const ImagePyramid>(std::move(levels), raw.magnifications());
}

std::vector<fs::path> normalized_inputs(const Workspace& ws, const SlideRef& s) {
  std::vector<fs::path> in = level_files(s);
  in.push_back(ws.stain_path(s.id));
  in.push_back(ws.template_path());
  return in;
}

BinaryMask load_mask(const Workspace& ws, const std::string& id) {
  require_artifact(ws.mask_path(id), "mask");
  return read_mask(ws.mask_path(id));
}

std::optional<SynthTruth> load_truth(const SlideRef& s) {
  const fs::path p = s.dir / "truth.json";
  if (!fs::exists(p)) return std::nullopt;
  return SynthTruth::from_json(read_json(p));
}

/// Planted tumors and mitoses as a record, for validation and evaluation.
SlideRecord truth_record(const SlideRef& s, const SynthTruth& t) {
  SlideRecord r = s.record;
  r.tumors.clear();
  r.mitoses.clear();
  for (const SynthTumor& tumor : t.tumors) r.tumors.push_back(tumor.polygon);
  for (const SynthMitosis& m : t.mitoses) r.mitoses.push_back(m.center);
  return r;
}

const SlideRef& find_slide(const std::vector<SlideRef>& slides, const std::string& id) {
  for (const SlideRef& s : slides) {
    if (s.id == id) return s;
  }
  fail(ErrorKind::kInvalidArgument, "unknown slide " + id);
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

Network load_detector(const Workspace& ws, DetectorKind kind) {
  require_artifact(ws.weights_path(kind), "train --kind " + std::string(to_string(kind)));
  const NetworkSpec spec = detector_spec(kind, kind == DetectorKind::kTumor ? ws.config().tumor : ws.config().mitosis);
  return Network(spec, load_weights(ws.weights_path(kind), spec));
}

}  // namespace

Json Split::to_json() const {
  return Json{{"detector", detector}, {"validation", validation}, {"held_out", held_out}};
}

Split make_split(const std::vector<std::string>& ids, const PipelineConfig& config) {
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  Rng rng(stage_seed(config.seed, SeedStream::kSplit));
  rng.shuffle(std::span<std::string>(order));
  const std::size_t n = order.size();
  const std::size_t n_det = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.split.detector_fraction * n)));
  require(n_det < n, ErrorKind::kConfig, "split: no held-out slides remain");
  const std::size_t n_val = std::min(n - n_det, static_cast<std::size_t>(std::llround(config.split.validation_fraction * n)));
  Split s;
  s.detector.assign(order.begin(), order.begin() + static_cast<long>(n_det));
  s.validation.assign(order.begin() + static_cast<long>(n_det), order.begin() + static_cast<long>(n_det + n_val));
  s.held_out.assign(order.begin() + static_cast<long>(n_det), order.end());
  std::sort(s.detector.begin(), s.detector.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.held_out.begin(), s.held_out.end());
  return s;
}

// --- synth / mask / normalize -------------------------------------------------------

void run_synth(Workspace& ws) {
  spdlog::info("synth: {} slides into {}", ws.config().synth.slides, ws.corpus().string());
  const std::vector<SynthTruth> truths = generate_corpus(ws.config().synth, ws.corpus());
  for (const SynthTruth& t : truths) {
    const fs::path dir = ws.corpus() / t.id;
    for (const char* name : {"level0.ppm", "level1.ppm", "manifest.json", "annotations.json", "truth.json"}) {
      ws.provenance().record(dir / name, {});
    }
  }
}

void run_mask(Workspace& ws) {
  const std::vector<SlideRef> slides = list_corpus(ws);
  spdlog::info("mask: {} slides at {}", slides.size(), ws.config().mask.level);
  parallel_for(slides.size(), ws.config().jobs, [&](std::size_t i) {
    const SlideRef& s = slides[i];
    const ImagePyramid pyramid = load_pyramid(s.dir / "manifest.json");
    const BinaryMask mask = extract_tissue_mask(pyramid, ws.config().mask.level, ws.config().mask.options);
    write_mask(mask, ws.mask_path(s.id));
    ws.provenance().record(ws.mask_path(s.id), level_files(s));
  });
}

void run_normalize(Workspace& ws) {
  const std::vector<SlideRef> slides = list_corpus(ws);
  spdlog::info("normalize: {} slides", slides.size());
  std::vector<StainProfile> profiles(slides.size());
  parallel_for(slides.size(), ws.config().jobs, [&](std::size_t i) {
    const SlideRef& s = slides[i];
    const BinaryMask mask = load_mask(ws, s.id);
    const ImagePyramid pyramid = load_pyramid(s.dir / "manifest.json");
    const RasterImage* image = nullptr;
    for (const PyramidLevel& level : pyramid.levels()) {
      if (level.downsample_factor == mask.downsample_factor) image = &level.image;
    }
    require(image != nullptr, ErrorKind::kInvalidArgument, s.id + ": no level matches the tissue mask");
    profiles[i] = compute_stain_profile(*image, mask);
    require(!profiles[i].degenerate(), ErrorKind::kNumeric, s.id + ": degenerate stain profile");
  });
  StainProfile target;
  if (ws.config().normalize.template_profile) {
    target = *ws.config().normalize.template_profile;
  } else {
    for (int c = 0; c < 3; ++c) {
      std::vector<double> lows, highs;
      for (const StainProfile& p : profiles) {
        lows.push_back(p.low[c]);
        highs.push_back(p.high[c]);
      }
      std::sort(lows.begin(), lows.end());
      std::sort(highs.begin(), highs.end());
      target.low[c] = lows[lows.size() / 2];
      target.high[c] = highs[highs.size() / 2];
    }
  }
  std::vector<fs::path> mask_inputs;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    std::vector<fs::path> in = level_files(slides[i]);
    in.push_back(ws.mask_path(slides[i].id));
    ws.provenance().write_json(ws.stain_path(slides[i].id), profile_json(profiles[i]), in);
    mask_inputs.push_back(ws.stain_path(slides[i].id));
  }
  ws.provenance().write_json(ws.template_path(), profile_json(target), mask_inputs);
  if (ws.config().normalize.write_images) {
    parallel_for(slides.size(), ws.config().jobs, [&](std::size_t i) {
      const fs::path dir = ws.out() / "normalized" / slides[i].id;
      write_pyramid(*load_normalized(ws, slides[i]), dir);
      for (const PyramidLevel& level : load_pyramid(dir / "manifest.json").levels()) {
        ws.provenance().record(dir / level.file, normalized_inputs(ws, slides[i]));
      }
    });
  }
}

// --- training -----------------------------------------------------------------------

namespace {

SlideInput make_input(const Workspace& ws, const SlideRef& s, SlideRecord record) {
  SlideInput in;
  in.record = std::move(record);
  in.tissue = load_mask(ws, s.id);
  const Workspace* w = &ws;
  const SlideRef ref = s;
  in.loader = [w, ref] { return load_normalized(*w, ref); };
  return in;
}

/// Simulated pathologist: relabels non-annotated entries that disagree with the
/// planted truth.
Reviewer truth_reviewer(std::map<std::string, SynthTruth> truths, DetectorKind kind, const TrainConfig& config) {
  return [truths = std::move(truths), kind, config](const PatchDataset& dataset) {
    std::vector<Correction> out;
    for (const PatchEntry& e : dataset.entries) {
      if (e.provenance == prolif::Provenance::kAnnotated) continue;
      const auto it = truths.find(e.slide);
      if (it == truths.end()) continue;
      const SynthTruth& t = it->second;
      int label = 0;
      if (kind == DetectorKind::kTumor) {
        const Point c{e.x * 4.0, e.y * 4.0};
        label = std::any_of(t.tumors.begin(), t.tumors.end(),
                            [&](const SynthTumor& tumor) { return point_in_polygon(tumor.polygon, c); });
      } else {
        const Point c{e.x + 0.5, e.y + 0.5};
        label = std::any_of(t.mitoses.begin(), t.mitoses.end(), [&](const SynthMitosis& m) {
          return distance(m.center, c) <= config.match_radius;
        });
      }
      if (label != e.label) out.push_back({e.slide, e.x, e.y, e.level, label});
    }
    return out;
  };
}

}  // namespace

void run_train(Workspace& ws, DetectorKind kind, const std::optional<fs::path>& corrections_path) {
  const std::vector<SlideRef> slides = list_corpus(ws);
  std::vector<std::string> ids;
  for (const SlideRef& s : slides) ids.push_back(s.id);
  const Split split = make_split(ids, ws.config());
  const TrainConfig& config = kind == DetectorKind::kTumor ? ws.config().tumor : ws.config().mitosis;
  spdlog::info("train {}: {} detector slides, {} validation slides", to_string(kind), split.detector.size(),
               split.validation.size());

  std::vector<fs::path> inputs;
  std::vector<SlideInput> train, validation;
  std::map<std::string, SynthTruth> truths;
  bool all_truth = true;
  for (const std::string& id : split.detector) {
    const SlideRef& s = find_slide(slides, id);
    train.push_back(make_input(ws, s, s.record));
    const auto t = load_truth(s);
    if (t) {
      truths[id] = *t;
    } else {
      all_truth = false;
    }
    for (const fs::path& p : normalized_inputs(ws, s)) inputs.push_back(p);
    inputs.push_back(s.dir / "annotations.json");
    inputs.push_back(ws.mask_path(id));
  }
  for (const std::string& id : split.validation) {
    const SlideRef& s = find_slide(slides, id);
    const auto t = load_truth(s);
    validation.push_back(make_input(ws, s, t ? truth_record(s, *t) : s.record));
  }
  std::vector<Correction> corrections;
  if (corrections_path) {
    require_artifact(*corrections_path, "train");
    corrections = corrections_from_json(read_json(*corrections_path));
    inputs.push_back(*corrections_path);
  }
  Reviewer reviewer;
  if (all_truth && !truths.empty()) {
    reviewer = truth_reviewer(truths, kind, config);
    for (const std::string& id : split.detector) inputs.push_back(find_slide(slides, id).dir / "truth.json");
  }
  const TwoStageResult result = train_two_stage(train, kind, config, validation, corrections, reviewer);

  const NetworkSpec spec = detector_spec(kind, config);
  const std::string name(to_string(kind));
  const fs::path dir = ws.models_dir();
  ws.provenance().write_json(ws.split_path(), split.to_json(), {});
  ws.provenance().write(ws.weights_path(kind), encode_weights(result.weights, spec), inputs);
  ws.provenance().write(dir / (name + "_stage1.weights"), encode_weights(result.stage1_weights, spec), inputs);
  ws.provenance().write_json(dir / (name + "_dataset_stage1.json"), result.stage1.to_json(), inputs);
  ws.provenance().write_json(dir / (name + "_dataset_stage2.json"), result.stage2.to_json(), inputs);
  std::vector<Correction> made;
  for (const PatchEntry& e : result.stage2.entries) {
    if (e.provenance == prolif::Provenance::kPathologistCorrected) made.push_back({e.slide, e.x, e.y, e.level, e.label});
  }
  ws.provenance().write_json(dir / (name + "_corrections.json"), corrections_to_json(made), inputs);
  Json report = result.report();
  report["spec"] = spec.to_json();
  report["detector_slides"] = split.detector;
  report["validation_slides"] = split.validation;
  ws.provenance().write_json(dir / (name + "_report.json"), report, inputs);
  spdlog::info("train {}: stage1 {} entries, stage2 {} entries ({} mined, {} corrected)", name,
               result.stage1.entries.size(), result.stage2.entries.size(), result.mined,
               result.corrections.applied);
}

// --- heatmaps -----------------------------------------------------------------------

void run_heatmap(Workspace& ws) {
  const std::vector<SlideRef> slides = list_corpus(ws);
  const Network tumor = load_detector(ws, DetectorKind::kTumor);
  const Network mitosis = load_detector(ws, DetectorKind::kMitosis);
  const HeatmapSettings& hs = ws.config().heatmap;
  spdlog::info("heatmap: {} slides, {} mode", slides.size(), hs.mode == HeatmapMode::kFcn ? "fcn" : "sliding");
  parallel_for(slides.size(), ws.config().jobs, [&](std::size_t i) {
    const SlideRef& s = slides[i];
    const auto pyramid = load_normalized(ws, s);
    const BinaryMask mask = load_mask(ws, s.id);
    HeatmapOptions options;
    options.tile = hs.tile;
    options.min_tissue_coverage = hs.min_tissue_coverage;
    options.keep_trunk = true;
    std::vector<fs::path> inputs = normalized_inputs(ws, s);
    inputs.push_back(ws.mask_path(s.id));
    const fs::path dir = ws.heatmap_dir(s.id);
    fs::create_directories(dir);

    const PyramidLevel& l10 = pyramid->level(kLevel10x);
    HeatmapResult t = generate_heatmap_detailed(l10.image, l10.downsample_factor, std::string(kLevel10x), tumor,
                                                mask, hs.mode, options);
    t.heatmap.threshold = hs.tumor_threshold;
    std::vector<fs::path> tumor_inputs = inputs;
    tumor_inputs.push_back(ws.weights_path(DetectorKind::kTumor));
    write_heatmap(t.heatmap, dir / "tumor.pgm");
    ws.provenance().record(dir / "tumor.pgm", tumor_inputs);
    ws.provenance().write(dir / "tumor_trunk.bin", encode_tensors({t.trunk}), tumor_inputs);

    options.keep_trunk = false;
    const PyramidLevel& l40 = pyramid->level(kLevel40x);
    HeatmapResult m = generate_heatmap_detailed(l40.image, l40.downsample_factor, std::string(kLevel40x), mitosis,
                                                mask, hs.mode, options);
    m.heatmap.threshold = hs.mitosis_threshold;
    std::vector<fs::path> mitosis_inputs = inputs;
    mitosis_inputs.push_back(ws.weights_path(DetectorKind::kMitosis));
    write_heatmap(m.heatmap, dir / "mitosis.pgm");
    ws.provenance().record(dir / "mitosis.pgm", mitosis_inputs);
  });
}

// --- features -----------------------------------------------------------------------

namespace {

constexpr int kCascadeWindow = 16;  // trunk cells per side
constexpr int kMitosisCascadeCrop = 256;

struct SlideDescriptors {
  std::string id;
  std::vector<std::vector<double>> biological;
  std::vector<double> architectural;
  Vectors deep;
  std::vector<Tensor> tumor_windows;
  std::vector<Tensor> mitosis_windows;
};

Json descriptors_json(const SlideDescriptors& d, const std::vector<PatchCoord>& patches,
                      const std::vector<Point>& points, const std::vector<MitosisInstance>& instances) {
  Json p = Json::array();
  for (const PatchCoord& c : patches) {
    p.push_back({{"x", c.x}, {"y", c.y}, {"size", c.size}, {"region", c.region_id}, {"cell", {c.cell.x, c.cell.y}}});
  }
  Json pts = Json::array();
  for (const Point& q : points) pts.push_back({q.x, q.y});
  Json inst = Json::array();
  for (const MitosisInstance& m : instances) {
    inst.push_back({{"patch", m.patch},
                    {"x", m.centroid.x},
                    {"y", m.centroid.y},
                    {"area", m.mask.size()},
                    {"deep", m.deep}});
  }
  return Json{{"slide", d.id},
              {"schema_version", kFeatureSchemaVersion},
              {"patches", p},
              {"mitosis_points", pts},
              {"instances", inst},
              {"biological", d.biological},
              {"architectural", d.architectural},
              {"cascade", {{"tumor", d.tumor_windows.size()}, {"mitosis", d.mitosis_windows.size()}}}};
}

SlideDescriptors load_descriptors(const Workspace& ws, const std::string& id) {
  const fs::path dir = ws.features_dir(id);
  require_artifact(dir / "descriptors.json", "features");
  require_artifact(dir / "cascade.bin", "features");
  const Json j = read_json(dir / "descriptors.json");
  require(j.at("schema_version").get<int>() == kFeatureSchemaVersion, ErrorKind::kFormat,
          id + ": feature schema version mismatch");
  SlideDescriptors d;
  d.id = id;
  d.biological = j.at("biological").get<std::vector<std::vector<double>>>();
  d.architectural = j.at("architectural").get<std::vector<double>>();
  for (const Json& m : j.at("instances")) d.deep.push_back(m.at("deep").get<std::vector<double>>());
  std::vector<Tensor> windows = decode_tensors(read_file(dir / "cascade.bin"));
  const std::size_t nt = j.at("cascade").at("tumor").get<std::size_t>();
  require(nt <= windows.size(), ErrorKind::kFormat, id + ": cascade window count mismatch");
  d.tumor_windows.assign(windows.begin(), windows.begin() + static_cast<long>(nt));
  d.mitosis_windows.assign(windows.begin() + static_cast<long>(nt), windows.end());
  return d;
}

SlideDescriptors describe_slide(const Workspace& ws, const SlideRef& s, const Network& mitosis_trunk,
                                std::vector<fs::path>& inputs) {
  const FeatureSettings& fs_ = ws.config().features;
  const fs::path hdir = ws.heatmap_dir(s.id);
  for (const char* f : {"tumor.pgm", "mitosis.pgm", "tumor_trunk.bin"}) require_artifact(hdir / f, "heatmap");
  const Heatmap tumor = read_heatmap(hdir / "tumor.pgm");
  const Heatmap mitosis = read_heatmap(hdir / "mitosis.pgm");
  const std::vector<Tensor> trunk_list = decode_tensors(read_file(hdir / "tumor_trunk.bin"));
  require(trunk_list.size() == 1, ErrorKind::kFormat, s.id + ": bad tumor trunk file");
  const Tensor& trunk = trunk_list[0];
  const BinaryMask mask = load_mask(ws, s.id);
  const auto pyramid = load_normalized(ws, s);
  const RasterImage& l40 = pyramid->level(kLevel40x).image;
  inputs = normalized_inputs(ws, s);
  for (const char* f : {"tumor.pgm", "mitosis.pgm", "tumor_trunk.bin"}) inputs.push_back(hdir / f);
  inputs.push_back(ws.mask_path(s.id));
  inputs.push_back(ws.weights_path(DetectorKind::kMitosis));

  const std::vector<TumorRegion> regions = extract_regions(tumor, ws.config().heatmap.tumor_threshold);
  FringeOptions fo;
  fo.count = fs_.patches;
  fo.patch = fs_.patch_size;
  fo.seed = derive_seed(stage_seed(ws.config().seed, SeedStream::kPatches), fnv1a64(s.id));
  const std::vector<PatchCoord> patches = select_fringe_patches(regions, tumor, *pyramid, kLevel40x, fo);

  const std::vector<HeatmapPoint> peaks = mitosis_points(mitosis, ws.config().heatmap.mitosis_threshold);
  const double cs = mitosis.downsample_factor;
  const int l40_factor = pyramid->level(kLevel40x).downsample_factor;
  std::vector<Point> points;  // level-0
  for (const HeatmapPoint& p : peaks) points.push_back({(p.cell.x + 0.5) * cs, (p.cell.y + 0.5) * cs});

  SlideDescriptors d;
  d.id = s.id;
  std::vector<MitosisInstance> instances;
  std::vector<std::uint8_t> described(points.size(), 0);
  const TrainConfig& tc = ws.config().mitosis;
  for (std::size_t pi = 0; pi < patches.size(); ++pi) {
    const PatchCoord& pc = patches[pi];
    const RasterImage crop = l40.crop(pc.x, pc.y, pc.size, pc.size);
    const std::vector<Nucleus> nuclei = propose_nuclei(crop, tc.nuclei);
    std::vector<Nucleus> mitoses;
    std::vector<double> probs;
    std::set<std::size_t> used;
    for (std::size_t k = 0; k < points.size(); ++k) {
      const Point local{points[k].x / l40_factor - pc.x, points[k].y / l40_factor - pc.y};
      if (local.x < 0 || local.y < 0 || local.x >= pc.size || local.y >= pc.size) continue;
      std::size_t best = nuclei.size();
      double best_d = fs_.match_radius;
      for (std::size_t n = 0; n < nuclei.size(); ++n) {
        const double dist = distance(local, nuclei[n].centroid);
        if (dist <= best_d) {
          best_d = dist;
          best = n;
        }
      }
      if (best == nuclei.size() || !used.insert(best).second) continue;
      mitoses.push_back(nuclei[best]);
      probs.push_back(peaks[k].prob);
      if (!described[k]) {
        described[k] = 1;
        MitosisInstance m;
        m.slide = s.id;
        m.patch = static_cast<int>(pi);
        m.centroid = {nuclei[best].centroid.x + pc.x, nuclei[best].centroid.y + pc.y};
        for (const Cell& c : nuclei[best].pixels) m.mask.push_back({c.x + pc.x, c.y + pc.y});
        m.deep = deep_vector(mitosis_trunk, l40, m.centroid, fs_.deep_length);
        instances.push_back(std::move(m));
      }
    }
    d.biological.push_back(biological_features(crop, mitoses, nuclei, probs));
  }
  for (const MitosisInstance& m : instances) d.deep.push_back(m.deep);
  d.architectural = architectural_features(points, mask);

  const int cascade_count = std::min<int>(ws.config().features.cascade.patches, static_cast<int>(patches.size()));
  for (int k = 0; k < cascade_count; ++k) {
    const PatchCoord& pc = patches[static_cast<std::size_t>(k)];
    const double cx = (pc.x + pc.size / 2.0) * l40_factor, cy = (pc.y + pc.size / 2.0) * l40_factor;
    const int tx = static_cast<int>(std::floor(cx / tumor.downsample_factor)) - kCascadeWindow / 2;
    const int ty = static_cast<int>(std::floor(cy / tumor.downsample_factor)) - kCascadeWindow / 2;
    d.tumor_windows.push_back(trunk.window(tx, ty, kCascadeWindow, kCascadeWindow));
    const int mx = pc.x + pc.size / 2 - kMitosisCascadeCrop / 2, my = pc.y + pc.size / 2 - kMitosisCascadeCrop / 2;
    d.mitosis_windows.push_back(
        mitosis_trunk.forward(image_to_tensor(l40, mx, my, kMitosisCascadeCrop, kMitosisCascadeCrop)));
  }

  const fs::path dir = ws.features_dir(s.id);
  std::vector<Tensor> windows = d.tumor_windows;
  windows.insert(windows.end(), d.mitosis_windows.begin(), d.mitosis_windows.end());
  ws.provenance().write(dir / "cascade.bin", encode_tensors(windows), inputs);
  ws.provenance().write_json(dir / "descriptors.json", descriptors_json(d, patches, points, instances), inputs);
  return d;
}

struct CascadeHeads {
  WeightStore tumor;
  WeightStore mitosis;
};

struct FoldModels {
  BagOfFeaturesModel bag;
  CascadeHeads heads;
  std::map<std::size_t, std::vector<double>> train_cascade;  // cross-fitted rows
};

int trunk_channels(const std::vector<SlideDescriptors>& slides, bool tumor) {
  for (const SlideDescriptors& d : slides) {
    const auto& w = tumor ? d.tumor_windows : d.mitosis_windows;
    if (!w.empty()) return w[0].channels();
  }
  return 32;
}

CascadeHeads fit_heads(const Workspace& ws, const std::vector<SlideDescriptors>& slides, std::span<const int> grades,
                       std::span<const std::size_t> train, std::uint64_t stream) {
  std::vector<std::vector<Tensor>> tumor_inputs, mitosis_inputs;
  for (const SlideDescriptors& d : slides) {
    tumor_inputs.push_back(d.tumor_windows);
    mitosis_inputs.push_back(d.mitosis_windows);
  }
  const CascadeConfig& base = ws.config().features.cascade;
  CascadeConfig cc = base;
  CascadeHeads h;
  cc.seed = derive_seed(base.seed, stream * 2);
  h.tumor = train_cascade_head(cascade_head(trunk_channels(slides, true), cc.head_width), tumor_inputs, grades,
                               train, cc);
  cc.seed = derive_seed(base.seed, stream * 2 + 1);
  h.mitosis = train_cascade_head(cascade_head(trunk_channels(slides, false), cc.head_width), mitosis_inputs,
                                 grades, train, cc);
  return h;
}

std::vector<double> cascade_values(const Workspace& ws, const SlideDescriptors& d, const CascadeHeads& h,
                                   const std::vector<SlideDescriptors>& all) {
  const int width = ws.config().features.cascade.head_width;
  const Network tumor_head(cascade_head(trunk_channels(all, true), width), h.tumor);
  const Network mitosis_head(cascade_head(trunk_channels(all, false), width), h.mitosis);
  std::vector<double> values = cascade_block(tumor_head, d.tumor_windows);
  const std::vector<double> mc = cascade_block(mitosis_head, d.mitosis_windows);
  values.insert(values.end(), mc.begin(), mc.end());
  return values;
}

FoldModels fit_fold_models(const Workspace& ws, const std::vector<SlideDescriptors>& slides,
                           std::span<const int> grades, std::span<const std::size_t> train, std::uint64_t stream) {
  const FeatureSettings& f = ws.config().features;
  Vectors vectors;
  for (std::size_t i : train) vectors.insert(vectors.end(), slides[i].deep.begin(), slides[i].deep.end());
  FoldModels m;
  m.bag = fit_bag_of_features(vectors, static_cast<std::size_t>(f.bins),
                              derive_seed(stage_seed(ws.config().seed, SeedStream::kBag), stream));
  m.heads = fit_heads(ws, slides, grades, train, stream);

  const auto k = static_cast<std::size_t>(f.cross_fit_folds);
  if (k < 2 || train.size() < 2 * k) return m;
  std::vector<std::size_t> order(train.begin(), train.end());
  Rng rng(derive_seed(f.cascade.seed, stream ^ 0xc505f17ULL));
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t g = 0; g < k; ++g) {
    std::vector<std::size_t> inner;
    for (std::size_t p = 0; p < order.size(); ++p) {
      if (p % k != g) inner.push_back(order[p]);
    }
    std::sort(inner.begin(), inner.end());
    const CascadeHeads h = fit_heads(ws, slides, grades, inner, derive_seed(stream, g + 1));
    for (std::size_t p = g; p < order.size(); p += k) {
      m.train_cascade[order[p]] = cascade_values(ws, slides[order[p]], h, slides);
    }
  }
  return m;
}

FeatureVector slide_features(const Workspace& ws, std::size_t index, const FoldModels& m,
                             const std::vector<SlideDescriptors>& all) {
  const SlideDescriptors& d = all[index];
  const auto it = m.train_cascade.find(index);
  const std::vector<double> cascade = it != m.train_cascade.end() ? it->second : cascade_values(ws, d, m.heads, all);
  std::vector<double> bag = m.bag.histogram(d.deep);
  bag.resize(kBagBins, 0.0);
  return assemble_features(d.id, d.biological, d.architectural, bag, cascade, ws.config().features.cascade.head_width);
}

std::vector<int> slide_grades(const std::vector<SlideRef>& slides) {
  std::vector<int> grades;
  for (const SlideRef& s : slides) {
    require(s.record.grade.has_value(), ErrorKind::kInvalidArgument, s.id + ": slide has no grade label");
    grades.push_back(*s.record.grade);
  }
  return grades;
}

std::vector<SlideDescriptors> load_all_descriptors(const Workspace& ws, const std::vector<SlideRef>& slides) {
  std::vector<SlideDescriptors> out(slides.size());
  parallel_for(slides.size(), ws.config().jobs, [&](std::size_t i) { out[i] = load_descriptors(ws, slides[i].id); });
  return out;
}

}  // namespace

void run_features(Workspace& ws) {
  const std::vector<SlideRef> slides = list_corpus(ws);
  const Network mitosis = load_detector(ws, DetectorKind::kMitosis);
  const Network trunk = mitosis.trunk();
  spdlog::info("features: {} slides", slides.size());
  std::vector<SlideDescriptors> descriptors(slides.size());
  std::vector<std::vector<fs::path>> inputs(slides.size());
  parallel_for(slides.size(), ws.config().jobs,
               [&](std::size_t i) { descriptors[i] = describe_slide(ws, slides[i], trunk, inputs[i]); });

  // Slide-level table over the whole corpus: clustering and cascade heads are
  // fitted on every slide here; cross-validation refits them per fold.
  std::vector<std::size_t> all(slides.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::vector<int> grades = slide_grades(slides);
  const FoldModels models = fit_fold_models(ws, descriptors, grades, all, 0);
  std::vector<FeatureVector> rows;
  std::vector<fs::path> table_inputs;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    rows.push_back(slide_features(ws, i, models, descriptors));
    table_inputs.push_back(ws.features_dir(slides[i].id) / "descriptors.json");
    table_inputs.push_back(ws.features_dir(slides[i].id) / "cascade.bin");
    table_inputs.push_back(slides[i].dir / "annotations.json");
  }
  ws.provenance().write(ws.features_csv(), features_to_csv(rows), table_inputs);
  ws.provenance().write_json(ws.out() / "features.json", features_to_json(rows), table_inputs);
  ws.provenance().write(ws.out() / "models" / "bag_of_features.bin", models.bag.encode(), table_inputs);
}

// --- predict ------------------------------------------------------------------------

void run_predict(Workspace& ws, const std::vector<std::string>& tasks) {
  require(!tasks.empty(), ErrorKind::kConfig, "predict: no task given");
  for (const std::string& t : tasks) {
    require(t == "grade" || t == "score", ErrorKind::kConfig, "predict: task must be grade or score, got " + t);
  }
  const std::vector<SlideRef> slides = list_corpus(ws);
  const std::vector<SlideDescriptors> descriptors = load_all_descriptors(ws, slides);
  const std::vector<int> grades = slide_grades(slides);
  std::vector<std::optional<double>> scores;
  std::vector<std::string> ids;
  std::vector<fs::path> inputs;
  for (const SlideRef& s : slides) {
    scores.push_back(s.record.molecular_score);
    ids.push_back(s.id);
    inputs.push_back(ws.features_dir(s.id) / "descriptors.json");
    inputs.push_back(ws.features_dir(s.id) / "cascade.bin");
    inputs.push_back(s.dir / "annotations.json");
  }
  spdlog::info("predict: {}-fold cross-validation over {} slides", ws.config().predict.folds, slides.size());
  const FoldBuilder builder = [&](int fold, const std::vector<std::size_t>& train,
                                  const std::vector<std::size_t>& test) {
    const FoldModels m = fit_fold_models(ws, descriptors, grades, train, static_cast<std::uint64_t>(fold) + 1);
    FoldData data;
    for (std::size_t i : train) {
      FeatureVector fv = slide_features(ws, i, m, descriptors);
      if (data.names.empty()) data.names = fv.names;
      data.train.push_back(std::move(fv.values));
    }
    for (std::size_t i : test) data.test.push_back(slide_features(ws, i, m, descriptors).values);
    return data;
  };
  CvOptions options;
  options.folds = ws.config().predict.folds;
  options.seed = stage_seed(ws.config().seed, SeedStream::kFolds);
  options.logistic = ws.config().predict.logistic;
  options.ridge_lambda = ws.config().predict.ridge_lambda;
  options.jobs = ws.config().jobs;
  const MetricsReport report = cross_validate(ids, grades, scores, builder, options);

  for (const std::string& task : tasks) {
    std::ostringstream csv;
    if (task == "grade") {
      csv << "slide,fold,grade,predicted_grade,p0,p1,p2\n";
      for (const SlidePrediction& p : report.predictions) {
        csv << p.slide << ',' << p.fold << ',' << p.grade << ',' << p.predicted_grade << ','
            << format_double(p.probs[0]) << ',' << format_double(p.probs[1]) << ',' << format_double(p.probs[2])
            << '\n';
      }
    } else {
      csv << "slide,fold,score,predicted_score\n";
      for (const SlidePrediction& p : report.predictions) {
        if (!p.score || !p.predicted_score) continue;
        csv << p.slide << ',' << p.fold << ',' << format_double(*p.score) << ','
            << format_double(*p.predicted_score) << '\n';
      }
    }
    ws.provenance().write(ws.predictions_path(task), csv.str(), inputs);
  }
  ws.provenance().write_json(ws.metrics_path(), report.to_json(), inputs);
  spdlog::info("predict: accuracy {:.3f}, micro AUROC {:.3f}", report.classification.accuracy, report.micro_auroc);
}

// --- evaluate -----------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string& s, const fs::path& where) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    fail(ErrorKind::kFormat, where.string() + ": bad number '" + s + "'");
  }
}

struct DetectionMetrics {
  std::optional<double> tumor_auc;
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t slides = 0;
};

/// Greedy one-to-one matching of predicted and true points within `radius`.
std::size_t match_points(const std::vector<Point>& predicted, const std::vector<Point>& truth, double radius) {
  struct Pair {
    double d;
    std::size_t p, t;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    for (std::size_t t = 0; t < truth.size(); ++t) {
      const double d = distance(predicted[p], truth[t]);
      if (d <= radius) pairs.push_back({d, p, t});
    }
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const Pair& a, const Pair& b) { return std::tie(a.d, a.p, a.t) < std::tie(b.d, b.p, b.t); });
  std::vector<std::uint8_t> pu(predicted.size(), 0), tu(truth.size(), 0);
  std::size_t matched = 0;
  for (const Pair& x : pairs) {
    if (pu[x.p] || tu[x.t]) continue;
    pu[x.p] = tu[x.t] = 1;
    ++matched;
  }
  return matched;
}

DetectionMetrics detection_metrics(Workspace& ws, const std::vector<SlideRef>& slides, const Split& split,
                                   std::vector<fs::path>& inputs) {
  DetectionMetrics m;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const std::string& id : split.held_out) {
    const SlideRef& s = find_slide(slides, id);
    const auto truth = load_truth(s);
    if (!truth) continue;
    ++m.slides;
    const fs::path hdir = ws.heatmap_dir(id);
    require_artifact(hdir / "tumor.pgm", "heatmap");
    require_artifact(hdir / "mitosis.pgm", "heatmap");
    inputs.push_back(hdir / "tumor.pgm");
    inputs.push_back(hdir / "mitosis.pgm");
    inputs.push_back(s.dir / "truth.json");
    const Heatmap tumor = read_heatmap(hdir / "tumor.pgm");
    const BinaryMask mask = load_mask(ws, id);
    const std::vector<double> coverage = tissue_coverage(mask, tumor.width, tumor.height, tumor.downsample_factor);
    for (int cy = 0; cy < tumor.height; ++cy) {
      for (int cx = 0; cx < tumor.width; ++cx) {
        if (coverage[static_cast<std::size_t>(cy) * tumor.width + cx] < ws.config().heatmap.min_tissue_coverage) continue;
        const Point c{(cx + 0.5) * tumor.downsample_factor, (cy + 0.5) * tumor.downsample_factor};
        scores.push_back(tumor.at(cx, cy));
        labels.push_back(std::any_of(truth->tumors.begin(), truth->tumors.end(),
                                     [&](const SynthTumor& t) { return point_in_polygon(t.polygon, c); }));
      }
    }
    const Heatmap mitosis = read_heatmap(hdir / "mitosis.pgm");
    std::vector<Point> predicted, planted;
    for (const HeatmapPoint& p : mitosis_points(mitosis, ws.config().heatmap.mitosis_threshold)) {
      predicted.push_back({static_cast<double>(p.cell.x), static_cast<double>(p.cell.y)});
    }
    for (const SynthMitosis& t : truth->mitoses) {
      planted.push_back({std::floor(t.center.x / mitosis.downsample_factor),
                         std::floor(t.center.y / mitosis.downsample_factor)});
    }
    const std::size_t matched = match_points(predicted, planted, ws.config().evaluate.match_radius_cells);
    m.tp += matched;
    m.fp += predicted.size() - matched;
    m.fn += planted.size() - matched;
  }
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives > 0 && positives < static_cast<long>(labels.size())) m.tumor_auc = roc_auc(scores, labels).auc;
  m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

}  // namespace

void run_evaluate(Workspace& ws) {
  const std::vector<SlideRef> slides = list_corpus(ws);
  std::map<std::string, const SlideRef*> by_id;
  for (const SlideRef& s : slides) by_id[s.id] = &s;
  Json out = Json::object();
  std::vector<fs::path> inputs;
  const fs::path grade_csv = ws.predictions_path("grade"), score_csv = ws.predictions_path("score");
  if (!fs::exists(grade_csv) && !fs::exists(score_csv)) require_artifact(grade_csv, "predict");

  std::map<std::string, SlidePrediction> predictions;
  int folds = 0;
  if (fs::exists(grade_csv)) {
    inputs.push_back(grade_csv);
    const auto rows = read_csv(grade_csv);
    require(!rows.empty() && rows[0].size() == 7, ErrorKind::kFormat, grade_csv.string() + ": bad header");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      require(rows[r].size() == 7, ErrorKind::kFormat, grade_csv.string() + ": ragged row");
      SlidePrediction p;
      p.slide = rows[r][0];
      p.fold = static_cast<int>(to_double(rows[r][1], grade_csv));
      p.grade = static_cast<int>(to_double(rows[r][2], grade_csv));
      p.predicted_grade = static_cast<int>(to_double(rows[r][3], grade_csv));
      for (int c = 0; c < 3; ++c) p.probs[c] = to_double(rows[r][4 + c], grade_csv);
      folds = std::max(folds, p.fold + 1);
      predictions[p.slide] = p;
    }
  }
  if (fs::exists(score_csv)) {
    inputs.push_back(score_csv);
    const auto rows = read_csv(score_csv);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      require(rows[r].size() == 4, ErrorKind::kFormat, score_csv.string() + ": ragged row");
      SlidePrediction& p = predictions[rows[r][0]];
      p.slide = rows[r][0];
      p.fold = static_cast<int>(to_double(rows[r][1], score_csv));
      p.score = to_double(rows[r][2], score_csv);
      p.predicted_score = to_double(rows[r][3], score_csv);
      folds = std::max(folds, p.fold + 1);
      if (const auto it = by_id.find(p.slide); it != by_id.end() && it->second->record.grade) {
        p.grade = *it->second->record.grade;
      }
    }
  }
  std::vector<SlidePrediction> list;
  for (auto& [id, p] : predictions) list.push_back(p);
  const MetricsReport report =
      metrics_from_predictions(list, folds, stage_seed(ws.config().seed, SeedStream::kFolds));
  out["metrics"] = report.to_json();
  if (fs::exists(grade_csv)) {
    out["grade"] = {{"accuracy", report.classification.accuracy},
                    {"accuracy_ci", {report.classification.accuracy_ci.lower, report.classification.accuracy_ci.upper}},
                    {"macro_f1", report.classification.macro_f1},
                    {"micro_auroc", report.micro_auroc}};
  }
  if (report.correlation) {
    out["score"] = {{"mse", report.correlation->mse},
                    {"pearson", report.correlation->pearson},
                    {"spearman", report.correlation->spearman}};
  }

  if (fs::exists(ws.features_csv())) {
    inputs.push_back(ws.features_csv());
    const std::vector<FeatureVector> rows = features_from_csv(read_file(ws.features_csv()));
    Matrix features;
    std::vector<double> scores;
    for (const FeatureVector& fv : rows) {
      const auto it = by_id.find(fv.slide);
      if (it == by_id.end() || !it->second->record.molecular_score) continue;
      features.push_back(fv.values);
      scores.push_back(*it->second->record.molecular_score);
    }
    if (features.size() >= 3) {
      Json ranking = Json::array();
      for (const BiomarkerRow& b : biomarker_ranking(rows[0].names, features, scores, ws.config().predict.biomarker_alpha)) {
        ranking.push_back({{"name", b.name},
                           {"f", std::isfinite(b.f) ? Json(b.f) : Json("inf")},
                           {"p", b.p},
                           {"significant", b.significant},
                           {"constant", b.constant}});
      }
      out["biomarkers"] = ranking;
    }
  }

  if (fs::exists(ws.split_path())) {
    inputs.push_back(ws.split_path());
    const Json sj = read_json(ws.split_path());
    Split split;
    split.detector = sj.at("detector").get<std::vector<std::string>>();
    split.validation = sj.at("validation").get<std::vector<std::string>>();
    split.held_out = sj.at("held_out").get<std::vector<std::string>>();
    const DetectionMetrics d = detection_metrics(ws, slides, split, inputs);
    if (d.slides > 0) {
      out["detection"] = {{"slides", d.slides},
                          {"tumor_heatmap_auc", d.tumor_auc ? Json(*d.tumor_auc) : Json(nullptr)},
                          {"mitosis_tp", d.tp},
                          {"mitosis_fp", d.fp},
                          {"mitosis_fn", d.fn},
                          {"mitosis_precision", d.precision},
                          {"mitosis_recall", d.recall},
                          {"mitosis_f1", d.f1}};
    }
  }
  ws.provenance().write_json(ws.evaluation_path(), out, inputs);
}

void run_pipeline(Workspace& ws) {
  run_synth(ws);
  run_mask(ws);
  run_normalize(ws);
  run_train(ws, DetectorKind::kTumor);
  run_train(ws, DetectorKind::kMitosis);
  run_heatmap(ws);
  run_features(ws);
  run_predict(ws, {"grade", "score"});
  run_evaluate(ws);
}

}  // namespace prolif::cli
