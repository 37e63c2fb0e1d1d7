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

// Two-stage detector training: stage-1 datasets from annotations, confident
// positive mining, pathologist corrections, retraining; plus nuclei proposal.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prolif/geometry.hpp"
#include "prolif/heatmap.hpp"
#include "prolif/io.hpp"
#include "prolif/nn.hpp"
#include "prolif/preprocess.hpp"
#include "prolif/raster.hpp"
#include "prolif/slide.hpp"

namespace prolif {

// --- nuclei ---------------------------------------------------------------------

struct NucleiOptions {
  std::size_t min_area = 20;
  std::size_t max_area = 2000;
  Connectivity connectivity = Connectivity::kEight;
};

struct Nucleus {
  Point centroid;  // patch pixel coordinates, pixel centers at integer + 0.5
  std::size_t area = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open bounding box
  std::vector<Cell> pixels;            // raster order
};

struct NucleiResult {
  std::vector<Nucleus> nuclei;  // raster order of first pixel
  int threshold = 0;            // Otsu threshold on the inverted grayscale
  RasterImage gray;
};

/// Grayscale, Otsu on the inverted gray (dark pixels are foreground),
/// components with area in [min_area, max_area].
NucleiResult propose_nuclei_detailed(const RasterImage& patch, const NucleiOptions& options = {});
std::vector<Nucleus> propose_nuclei(const RasterImage& patch, const NucleiOptions& options = {});

// --- datasets ---------------------------------------------------------------------

enum class DetectorKind { kTumor, kMitosis };
std::string_view to_string(DetectorKind kind);
DetectorKind parse_detector_kind(std::string_view text);

enum class Provenance { kAnnotated, kRandomNegative, kMinedPositive, kPathologistCorrected };
std::string_view to_string(Provenance provenance);
Provenance parse_provenance(std::string_view text);

struct PatchEntry {
  std::string slide;
  int x = 0;  // patch center at `level`
  int y = 0;
  std::string level;
  int label = 0;
  Provenance provenance = Provenance::kAnnotated;
  friend bool operator==(const PatchEntry&, const PatchEntry&) = default;
};

struct PatchDataset {
  std::vector<PatchEntry> entries;
  std::uint64_t seed = 0;

  bool contains(const std::string& slide, const std::string& level, int x, int y) const;
  std::size_t positives() const;
  std::size_t negatives() const { return entries.size() - positives(); }
  /// Unique (slide, level, x, y) keys and binary labels.
  void validate() const;
  Json to_json() const;
  static PatchDataset from_json(const Json& j);
  friend bool operator==(const PatchDataset&, const PatchDataset&) = default;
};

struct Correction {
  std::string slide;
  int x = 0;
  int y = 0;
  std::string level;
  int new_label = 0;
};

/// JSON list of {slide, x, y, level, new_label}.
std::vector<Correction> corrections_from_json(const Json& j);
Json corrections_to_json(const std::vector<Correction>& corrections);

struct CorrectionStats {
  std::size_t applied = 0;
  std::size_t ignored = 0;  // unknown coordinates or annotated entries
};

/// Relabels matching non-annotated entries and marks them pathologist_corrected.
CorrectionStats apply_corrections(PatchDataset& dataset, const std::vector<Correction>& corrections);

/// One slide as seen by training: its record, tissue mask and a pyramid that is
/// preloaded, produced by `loader`, or read from record.pyramid_path.
struct SlideInput {
  SlideRecord record;
  BinaryMask tissue;
  std::shared_ptr<const ImagePyramid> pyramid;
  std::function<std::shared_ptr<const ImagePyramid>()> loader;

  std::shared_ptr<const ImagePyramid> load() const;
};

struct TrainConfig {
  SgdConfig sgd{0.01, 0.9, 1e-4};
  int epochs = 4;
  int batch_size = 16;
  double tau = 0.95;
  std::uint64_t seed = 0;
  double neg_ratio = 3.0;
  int jitter = 0;              // max crop offset in pixels, per sample and epoch
  double match_radius = 8.0;   // nucleus-to-annotation matching radius (40x pixels)
  int region_margin = 16;      // context around annotated tumors for nuclei proposal
  double min_tissue_coverage = 0.5;
  int mitosis_width1 = 16;
  int mitosis_width2 = 32;
  NucleiOptions nuclei;
  int jobs = 1;

  /// Throws kConfig on out-of-range values.
  void validate() const;
};

NetworkSpec detector_spec(DetectorKind kind, const TrainConfig& config);
std::string_view detector_level(DetectorKind kind);

PatchDataset build_stage1_dataset(const std::vector<SlideInput>& slides, DetectorKind kind,
                                  const TrainConfig& config);

/// Appends every cell (tumor) or nucleus (mitosis) scoring above tau that is
/// not already in the dataset as mined_positive; existing entries untouched.
PatchDataset mine_stage2(const Network& network, const std::vector<SlideInput>& slides,
                         const PatchDataset& dataset, DetectorKind kind,
                         const TrainConfig& config);

/// Candidate nuclei of a slide (40x coordinates, rounded centroids) inside
/// the given polygons, deduplicated.
std::vector<Nucleus> slide_nuclei(const ImagePyramid& pyramid, const std::vector<Polygon>& regions,
                                  const TrainConfig& config);

struct TrainStats {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::vector<double> epoch_losses;
  std::optional<double> validation_auc;
};

/// Trains a freshly initialized network on `dataset`.
WeightStore train_network(const NetworkSpec& spec, const std::vector<SlideInput>& slides,
                          const PatchDataset& dataset, const TrainConfig& config,
                          TrainStats* stats = nullptr);

/// Validation AUC of `network` against the labels in `slides` (use ground
/// truth records); empty if only one class occurs.
std::optional<double> validation_auc(const Network& network, const std::vector<SlideInput>& slides,
                                     DetectorKind kind, const TrainConfig& config);

using Reviewer = std::function<std::vector<Correction>(const PatchDataset&)>;

struct TwoStageResult {
  WeightStore weights;  // stage 2
  WeightStore stage1_weights;
  PatchDataset stage1;
  PatchDataset stage2;
  TrainStats stage1_stats;
  TrainStats stage2_stats;
  CorrectionStats corrections;
  std::size_t mined = 0;
  Json report() const;
};

TwoStageResult train_two_stage(const std::vector<SlideInput>& slides, DetectorKind kind,
                               const TrainConfig& config,
                               const std::vector<SlideInput>& validation = {},
                               const std::vector<Correction>& corrections = {},
                               const Reviewer& reviewer = {});

}  // namespace prolif
