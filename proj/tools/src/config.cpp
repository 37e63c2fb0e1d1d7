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

#include "config.hpp"

#include <set>

#include "prolif/error.hpp"
#include "prolif/random.hpp"
#include "provenance.hpp"

namespace prolif::cli {

namespace {

Json train_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.sgd.learning_rate},
              {"momentum", c.sgd.momentum},
              {"weight_decay", c.sgd.weight_decay},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"tau", c.tau},
              {"neg_ratio", c.neg_ratio},
              {"jitter", c.jitter},
              {"match_radius", c.match_radius},
              {"region_margin", c.region_margin},
              {"min_tissue_coverage", c.min_tissue_coverage},
              {"mitosis_width1", c.mitosis_width1},
              {"mitosis_width2", c.mitosis_width2},
              {"nuclei_min_area", c.nuclei.min_area},
              {"nuclei_max_area", c.nuclei.max_area},
              {"nuclei_connectivity", static_cast<int>(c.nuclei.connectivity)}};
}

Connectivity connectivity_from(int value, const std::string& where) {
  require(value == 4 || value == 8, ErrorKind::kConfig, where + ": connectivity must be 4 or 8");
  return value == 4 ? Connectivity::kFour : Connectivity::kEight;
}

TrainConfig train_from(const Json& j) {
  TrainConfig c;
  c.sgd.learning_rate = j.at("learning_rate").get<double>();
  c.sgd.momentum = j.at("momentum").get<double>();
  c.sgd.weight_decay = j.at("weight_decay").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.tau = j.at("tau").get<double>();
  c.neg_ratio = j.at("neg_ratio").get<double>();
  c.jitter = j.at("jitter").get<int>();
  c.match_radius = j.at("match_radius").get<double>();
  c.region_margin = j.at("region_margin").get<int>();
  c.min_tissue_coverage = j.at("min_tissue_coverage").get<double>();
  c.mitosis_width1 = j.at("mitosis_width1").get<int>();
  c.mitosis_width2 = j.at("mitosis_width2").get<int>();
  c.nuclei.min_area = j.at("nuclei_min_area").get<std::size_t>();
  c.nuclei.max_area = j.at("nuclei_max_area").get<std::size_t>();
  c.nuclei.connectivity = connectivity_from(j.at("nuclei_connectivity").get<int>(), "train");
  return c;
}

Json profile_json(const StainProfile& p) { return Json{{"low", p.low}, {"high", p.high}}; }

/// Recursively merges `patch` into `base`, rejecting keys `base` lacks.
void merge_checked(Json& base, const Json& patch, const std::string& path) {
  require(patch.is_object(), ErrorKind::kConfig, "config: " + path + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    require(base.contains(key), ErrorKind::kConfig, "config: unknown key '" + where + "'");
    Json& target = base[key];
    if (target.is_object() && value.is_object()) {
      merge_checked(target, value, where);
    } else {
      target = value;
    }
  }
}

}  // namespace

PipelineConfig::PipelineConfig() {
  tumor.epochs = 3;
  tumor.neg_ratio = 1.5;
  tumor.jitter = 0;
  mitosis.epochs = 6;
  mitosis.neg_ratio = 3.0;
  mitosis.jitter = 6;
  features.cascade.epochs = 15;
  propagate();
}

std::uint64_t stage_seed(std::uint64_t seed, SeedStream stream) {
  return derive_seed(seed, static_cast<std::uint64_t>(stream));
}

void PipelineConfig::propagate() {
  synth.seed = seed;
  synth.jobs = jobs;
  tumor.seed = stage_seed(seed, SeedStream::kTumor);
  mitosis.seed = stage_seed(seed, SeedStream::kMitosis);
  tumor.jobs = mitosis.jobs = jobs;
  features.cascade.seed = stage_seed(seed, SeedStream::kCascade);
}

void PipelineConfig::validate() const {
  require(jobs >= 1, ErrorKind::kConfig, "config: jobs must be >= 1");
  synth.validate();
  tumor.validate();
  mitosis.validate();
  require(mask.level == "10x" || mask.level == "40x", ErrorKind::kConfig, "config: mask.level must be 10x or 40x");
  require(split.detector_fraction > 0.0 && split.validation_fraction >= 0.0 &&
              split.detector_fraction + split.validation_fraction < 1.0,
          ErrorKind::kConfig, "config: split fractions must leave held-out slides");
  require(heatmap.tile >= 16 && heatmap.tile % 16 == 0, ErrorKind::kConfig,
          "config: heatmap.tile must be a positive multiple of 16");
  require(heatmap.tumor_threshold > 0.0 && heatmap.tumor_threshold < 1.0 &&
              heatmap.mitosis_threshold > 0.0 && heatmap.mitosis_threshold < 1.0,
          ErrorKind::kConfig, "config: heatmap thresholds must lie in (0, 1)");
  require(features.patches >= 1 && features.patch_size >= 64 && features.deep_length >= 1 &&
              features.bins >= 1 && features.match_radius > 0.0 && features.cross_fit_folds >= 0,
          ErrorKind::kConfig, "config: feature sizes must be positive");
  require(features.cascade.head_width >= 4 && features.cascade.patches >= 1 &&
              features.cascade.epochs >= 0 && features.cascade.sgd.learning_rate > 0.0,
          ErrorKind::kConfig, "config: cascade settings");
  require(predict.folds >= 2 && predict.logistic.lambda > 0.0 && predict.ridge_lambda >= 0.0 &&
              predict.logistic.max_iterations >= 1,
          ErrorKind::kConfig, "config: predict settings");
  require(evaluate.match_radius_cells >= 0.0, ErrorKind::kConfig, "config: evaluate.match_radius_cells");
}

Json PipelineConfig::to_json() const {
  Json synth_json = synth.to_json();
  synth_json.erase("seed");
  const CascadeConfig& c = features.cascade;
  return Json{
      {"seed", seed},
      {"jobs", jobs},
      {"synth", synth_json},
      {"mask",
       {{"level", mask.level},
        {"min_component_area", mask.options.min_component_area},
        {"dilation_iterations", mask.options.dilation_iterations},
        {"connectivity", static_cast<int>(mask.options.connectivity)}}},
      {"normalize",
       {{"template", normalize.template_profile ? profile_json(*normalize.template_profile) : Json(nullptr)},
        {"write_images", normalize.write_images}}},
      {"split", {{"detector_fraction", split.detector_fraction}, {"validation_fraction", split.validation_fraction}}},
      {"train", {{"tumor", train_json(tumor)}, {"mitosis", train_json(mitosis)}}},
      {"heatmap",
       {{"mode", heatmap.mode == HeatmapMode::kFcn ? "fcn" : "sliding"},
        {"tile", heatmap.tile},
        {"min_tissue_coverage", heatmap.min_tissue_coverage},
        {"tumor_threshold", heatmap.tumor_threshold},
        {"mitosis_threshold", heatmap.mitosis_threshold}}},
      {"features",
       {{"patches", features.patches},
        {"patch_size", features.patch_size},
        {"match_radius", features.match_radius},
        {"deep_length", features.deep_length},
        {"bins", features.bins},
        {"cross_fit_folds", features.cross_fit_folds},
        {"cascade",
         {{"head_width", c.head_width},
          {"patches", c.patches},
          {"epochs", c.epochs},
          {"learning_rate", c.sgd.learning_rate},
          {"momentum", c.sgd.momentum},
          {"weight_decay", c.sgd.weight_decay}}}}},
      {"predict",
       {{"folds", predict.folds},
        {"lambda", predict.logistic.lambda},
        {"tolerance", predict.logistic.tolerance},
        {"max_iterations", predict.logistic.max_iterations},
        {"ridge_lambda", predict.ridge_lambda},
        {"biomarker_alpha", predict.biomarker_alpha}}},
      {"evaluate", {{"match_radius_cells", evaluate.match_radius_cells}}}};
}

PipelineConfig PipelineConfig::from_json(const Json& j) {
  PipelineConfig c;
  Json merged = c.to_json();
  // `template` defaults to null, so an object value would fail the type check
  // in merge_checked; handle it before merging.
  std::optional<Json> template_json;
  Json patch = j;
  if (patch.is_object() && patch.contains("normalize") && patch["normalize"].is_object() &&
      patch["normalize"].contains("template")) {
    template_json = patch["normalize"]["template"];
    patch["normalize"].erase("template");
  }
  merge_checked(merged, patch, "");
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.jobs = merged.at("jobs").get<int>();
    Json synth = merged.at("synth");
    synth["seed"] = c.seed;
    c.synth = SynthConfig::from_json(synth);
    const Json& m = merged.at("mask");
    c.mask.level = m.at("level").get<std::string>();
    c.mask.options.min_component_area = m.at("min_component_area").get<std::size_t>();
    c.mask.options.dilation_iterations = m.at("dilation_iterations").get<int>();
    c.mask.options.connectivity = connectivity_from(m.at("connectivity").get<int>(), "mask");
    if (template_json && !template_json->is_null()) {
      StainProfile p;
      p.low = template_json->at("low").get<std::array<double, 3>>();
      p.high = template_json->at("high").get<std::array<double, 3>>();
      require(!p.degenerate(), ErrorKind::kConfig, "config: normalize.template is degenerate");
      c.normalize.template_profile = p;
    }
    c.normalize.write_images = merged.at("normalize").at("write_images").get<bool>();
    c.split.detector_fraction = merged.at("split").at("detector_fraction").get<double>();
    c.split.validation_fraction = merged.at("split").at("validation_fraction").get<double>();
    c.tumor = train_from(merged.at("train").at("tumor"));
    c.mitosis = train_from(merged.at("train").at("mitosis"));
    const Json& h = merged.at("heatmap");
    c.heatmap.mode = parse_heatmap_mode(h.at("mode").get<std::string>());
    c.heatmap.tile = h.at("tile").get<int>();
    c.heatmap.min_tissue_coverage = h.at("min_tissue_coverage").get<double>();
    c.heatmap.tumor_threshold = h.at("tumor_threshold").get<double>();
    c.heatmap.mitosis_threshold = h.at("mitosis_threshold").get<double>();
    const Json& f = merged.at("features");
    c.features.patches = f.at("patches").get<int>();
    c.features.patch_size = f.at("patch_size").get<int>();
    c.features.match_radius = f.at("match_radius").get<double>();
    c.features.deep_length = f.at("deep_length").get<int>();
    c.features.bins = f.at("bins").get<int>();
    c.features.cross_fit_folds = f.at("cross_fit_folds").get<int>();
    const Json& cc = f.at("cascade");
    c.features.cascade.head_width = cc.at("head_width").get<int>();
    c.features.cascade.patches = cc.at("patches").get<int>();
    c.features.cascade.epochs = cc.at("epochs").get<int>();
    c.features.cascade.sgd = {cc.at("learning_rate").get<double>(), cc.at("momentum").get<double>(),
                              cc.at("weight_decay").get<double>()};
    const Json& p = merged.at("predict");
    c.predict.folds = p.at("folds").get<int>();
    c.predict.logistic.lambda = p.at("lambda").get<double>();
    c.predict.logistic.tolerance = p.at("tolerance").get<double>();
    c.predict.logistic.max_iterations = p.at("max_iterations").get<int>();
    c.predict.ridge_lambda = p.at("ridge_lambda").get<double>();
    c.predict.biomarker_alpha = p.at("biomarker_alpha").get<double>();
    c.evaluate.match_radius_cells = merged.at("evaluate").at("match_radius_cells").get<double>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  c.propagate();
  c.validate();
  return c;
}

// The job count does not change any output, so it stays out of the hash.
std::string PipelineConfig::hash() const {
  Json j = to_json();
  j.erase("jobs");
  return sha256_hex(j.dump());
}

}  // namespace prolif::cli
