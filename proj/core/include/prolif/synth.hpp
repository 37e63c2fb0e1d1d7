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

// Synthetic slides with planted tissue, tumors, mitotic figures, grades and
// molecular scores. Every annotation is exact by construction.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prolif/geometry.hpp"
#include "prolif/io.hpp"
#include "prolif/raster.hpp"
#include "prolif/slide.hpp"

namespace prolif {

struct SynthConfig {
  std::uint64_t seed = 7;
  int slides = 60;
  int size = 4032;  // level-0 side; level 10x is size / 4
  int tumors = 3;
  double tumor_radius_min = 330.0;
  double tumor_radius_max = 340.0;
  double tissue_radius_min = 1450.0;
  double tissue_radius_max = 1600.0;
  double density_min = 0.0;  // mitoses per Mpx of tumor area
  double density_max = 60.0;
  std::array<double, 2> grade_thresholds{20.0, 40.0};
  double score_slope = 0.05;
  double score_intercept = 0.0;
  double score_noise = -1.0;  // negative: 0.1 * slope * mean density
  double unannotated_tumor_fraction = 0.2;
  double dropped_mitosis_fraction = 0.1;
  double pixel_noise = 4.0;
  double stain_cast = 0.15;  // per-channel optical density scale in [1 - c, 1 + c]
  double mitosis_spacing = 48.0;
  double mitosis_margin = 12.0;  // minimum distance from a mitosis to its tumor boundary
  double tissue_nuclei_coverage = 0.04;
  double tumor_nuclei_coverage = 0.22;
  // Morphology that grows with proliferation: at the top of the density range
  // mitoses are up to 1.5 px larger and 1.5x elongated, and tumor nuclei sizes
  // spread 1.5 px wider. Scaled by this factor; 0 renders every slide alike.
  double atypia = 1.0;
  int jobs = 1;

  void validate() const;
  double effective_score_noise() const;
  Json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static SynthConfig from_json(const Json& j);
};

struct SynthTumor {
  Polygon polygon;
  bool annotated = true;
};

struct SynthMitosis {
  Point center;
  int tumor = 0;
  bool annotated = true;
};

struct SynthTruth {
  std::string id;
  Polygon tissue;
  std::vector<SynthTumor> tumors;
  std::vector<SynthMitosis> mitoses;
  double tumor_area = 0.0;   // level-0 pixels
  double density = 0.0;      // realized mitoses per Mpx of tumor area
  int grade = 0;
  double molecular_score = 0.0;
  std::array<double, 3> stain{1.0, 1.0, 1.0};

  Json to_json() const;
  static SynthTruth from_json(const Json& j);
  /// Annotated tumors and annotated mitoses with grade and score.
  SlideRecord annotations() const;
};

int grade_for_density(double density, const std::array<double, 2>& thresholds);

/// Geometry and labels of slide `index` without rendering.
SynthTruth plan_slide(const SynthConfig& config, int index);

/// Level-0 RGB rendering of a planned slide.
RasterImage render_slide(const SynthConfig& config, const SynthTruth& truth, int index);

/// Both levels of a rendered slide.
ImagePyramid make_pyramid(RasterImage level0);

std::string slide_name(int index);

/// Writes <out>/slide_XXX/{level0.ppm, level1.ppm, manifest.json,
/// annotations.json, truth.json} and returns the truths in slide order.
std::vector<SynthTruth> generate_corpus(const SynthConfig& config, const std::filesystem::path& out);

}  // namespace prolif
