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

// The single JSON configuration of the command-line tool: one section per
// stage, merged over built-in defaults.

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "prolif/features.hpp"
#include "prolif/heatmap.hpp"
#include "prolif/io.hpp"
#include "prolif/predict.hpp"
#include "prolif/preprocess.hpp"
#include "prolif/synth.hpp"
#include "prolif/trainloop.hpp"

namespace prolif::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct MaskSettings {
  std::string level = "10x";
  TissueMaskOptions options;
};

struct NormalizeSettings {
  std::optional<StainProfile> template_profile;  // default: channel-wise median over the corpus
  bool write_images = false;
};

struct SplitSettings {
  double detector_fraction = 0.35;  // slides used to train the detectors
  double validation_fraction = 0.15;
};

struct HeatmapSettings {
  HeatmapMode mode = HeatmapMode::kFcn;
  int tile = 1008;
  double min_tissue_coverage = 0.5;
  double tumor_threshold = 0.5;
  double mitosis_threshold = 0.5;
};

struct FeatureSettings {
  int patches = 50;
  int patch_size = 1008;
  double match_radius = 16.0;  // mitosis cell center to nucleus centroid, 40x pixels
  int deep_length = kDeepLength;
  int bins = static_cast<int>(kBagBins);
  CascadeConfig cascade;
  // Training-slide cascade features come from heads fitted without that slide,
  // so the grade model never sees memorized head outputs. 0 disables.
  int cross_fit_folds = 4;
};

struct PredictSettings {
  int folds = 5;
  LogisticOptions logistic;
  double ridge_lambda = 1.0;
  double biomarker_alpha = 0.005;
};

struct EvaluateSettings {
  double match_radius_cells = 2.0;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  int jobs = 1;
  SynthConfig synth;
  MaskSettings mask;
  NormalizeSettings normalize;
  SplitSettings split;
  TrainConfig tumor;
  TrainConfig mitosis;
  HeatmapSettings heatmap;
  FeatureSettings features;
  PredictSettings predict;
  EvaluateSettings evaluate;

  PipelineConfig();

  /// Applies the master seed and job count to every section.
  void propagate();
  void validate() const;
  Json to_json() const;
  /// Missing keys keep their defaults; unknown keys are config errors.
  static PipelineConfig from_json(const Json& j);
  std::string hash() const;
};

/// Stream ids for per-stage seeds.
enum class SeedStream : std::uint64_t {
  kSplit = 11,
  kTumor = 12,
  kMitosis = 13,
  kPatches = 14,
  kBag = 15,
  kCascade = 16,
  kFolds = 17,
};

std::uint64_t stage_seed(std::uint64_t seed, SeedStream stream);

}  // namespace prolif::cli
