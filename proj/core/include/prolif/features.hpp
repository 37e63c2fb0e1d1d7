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

// Biological, architectural and bag-of-features descriptors of detected
// mitoses, k-means, the cascade block and slide-level feature assembly.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prolif/geometry.hpp"
#include "prolif/heatmap.hpp"
#include "prolif/nn.hpp"
#include "prolif/raster.hpp"
#include "prolif/trainloop.hpp"

namespace prolif {

inline constexpr int kFeatureSchemaVersion = 1;
inline constexpr std::size_t kBiologicalCount = 50;
inline constexpr std::size_t kArchitecturalCount = 60;
inline constexpr std::size_t kBagBins = 200;
inline constexpr int kDeepLength = 256;

struct MitosisInstance {
  std::string slide;
  int patch = 0;
  Point centroid;            // 40x pixel coordinates
  std::vector<Cell> mask;    // 40x pixel coordinates, raster order
  std::vector<double> deep;  // kDeepLength values

  void validate() const;
};

// --- shape primitives -------------------------------------------------------------

/// Hu's seven invariants of the normalized central moments of a pixel set.
std::array<double, 7> hu_moments(std::span<const Cell> pixels);

struct RegionProps {
  double area = 0.0;
  double perimeter = 0.0;     // pixel edges exposed to the background
  double eccentricity = 0.0;  // of the moment-equivalent ellipse
  double solidity = 0.0;      // area / pixels whose centers lie in the hull of all centers
  double extent = 0.0;        // area / bounding box area
  double equivalent_diameter = 0.0;
};

RegionProps region_props(std::span<const Cell> pixels);

/// Convex hull (counter-clockwise, no collinear points) of a point set.
std::vector<Point> convex_hull(std::vector<Point> points);

// --- biological block -------------------------------------------------------------

const std::vector<std::string>& biological_feature_names();

/// Per-mitosis primitives aggregated by mean and std, then patch-level
/// statistics. `mitoses` and `nuclei` use patch pixel coordinates; `probs`
/// are detector probabilities of the mitoses (may be empty).
std::vector<double> biological_features(const RasterImage& patch, std::span<const Nucleus> mitoses,
                                        std::span<const Nucleus> nuclei,
                                        std::span<const double> probs = {});

// --- architectural block ----------------------------------------------------------

const std::vector<std::string>& architectural_feature_names();

struct ArchitecturalOptions {
  int grid = 16;
  std::array<double, 3> ripley_radii{128.0, 256.0, 512.0};  // level-0 pixels
  double cluster_link = 128.0;
};

/// `points` are level-0 coordinates over the whole slide. Throws
/// kInvalidArgument on an empty tissue mask.
std::vector<double> architectural_features(std::span<const Point> points, const BinaryMask& tissue,
                                           const ArchitecturalOptions& options = {});

/// Sample moments used by the architectural block: population std, skewness
/// and excess kurtosis; the latter two are 0 when the std is 0.
struct Moments {
  double mean = 0.0, std = 0.0, skewness = 0.0, kurtosis = 0.0;
  bool valid = false;
};
Moments sample_moments(std::span<const double> values);

/// Shannon entropy (nats) of non-negative weights; 0 for an all-zero input.
double shannon_entropy(std::span<const double> weights);

// --- k-means / bag of features ----------------------------------------------------

using Vectors = std::vector<std::vector<double>>;

struct KMeansResult {
  Vectors centroids;
  std::vector<int> labels;
  double inertia = 0.0;
  std::vector<double> history;  // inertia after every assignment step
  int iterations = 0;
};

/// k-means++ seeding and Lloyd iterations. k is clamped to the point count.
KMeansResult kmeans(const Vectors& vectors, int k, std::uint64_t seed, int max_iterations = 300);

/// Index of the nearest centroid (first on ties).
int nearest_centroid(const Vectors& centroids, std::span<const double> v);

double inertia(const Vectors& vectors, const Vectors& centroids, std::span<const int> labels);

struct BagOfFeaturesModel {
  std::vector<double> mean;   // per-dimension standardization
  std::vector<double> scale;
  Vectors centroids;
  std::size_t bins = kBagBins;
  std::uint64_t seed = 0;

  std::vector<int> assign(const Vectors& vectors) const;
  /// L1-normalized histogram over `bins`; all zero for no vectors.
  std::vector<double> histogram(const Vectors& vectors) const;
  std::vector<double> raw_histogram(const Vectors& vectors) const;

  /// JSON header line followed by raw little-endian float64 values.
  std::string encode() const;
  static BagOfFeaturesModel decode(std::string_view bytes);
  friend bool operator==(const BagOfFeaturesModel&, const BagOfFeaturesModel&) = default;
};

BagOfFeaturesModel fit_bag_of_features(const Vectors& training_vectors, std::size_t bins,
                                       std::uint64_t seed);

const std::vector<std::string>& bag_feature_names();

// --- deep vectors and cascade -----------------------------------------------------

/// Flattened trunk activations on the 63x63 window centered on `centroid`,
/// zero-padded or truncated to `length`.
std::vector<double> deep_vector(const Network& trunk, const RasterImage& level40, const Point& centroid,
                                int length = kDeepLength);

struct CascadeInputs {
  std::vector<Tensor> tumor;    // trunk windows of the 10x detector
  std::vector<Tensor> mitosis;  // trunk windows of the 40x detector
};

struct CascadeConfig {
  int head_width = 64;
  int patches = 8;
  int epochs = 30;
  SgdConfig sgd{0.01, 0.9, 1e-4};
  std::uint64_t seed = 0;
};

/// Trains a 3-class head on the trunk windows of the training slides, every
/// window labeled with its slide's grade.
WeightStore train_cascade_head(const NetworkSpec& head, const std::vector<std::vector<Tensor>>& inputs,
                               std::span<const int> grades, std::span<const std::size_t> train,
                               const CascadeConfig& config);

/// Head features followed by the three class probabilities; zeros with
/// uniform probabilities when the slide has no windows.
std::vector<double> cascade_block(const Network& head, const std::vector<Tensor>& windows);

std::vector<std::string> cascade_feature_names(int head_width);

/// JSON header with the shapes followed by raw little-endian float64 data.
std::string encode_tensors(const std::vector<Tensor>& tensors);
std::vector<Tensor> decode_tensors(std::string_view bytes);

// --- assembly ---------------------------------------------------------------------

struct FeatureVector {
  std::string slide;
  int schema_version = kFeatureSchemaVersion;
  std::vector<std::string> names;
  std::vector<double> values;

  void validate() const;
};

/// Concatenates the blocks in schema order; biological rows (one per patch)
/// are averaged, no rows give the empty-patch vector.
FeatureVector assemble_features(const std::string& slide, const std::vector<std::vector<double>>& biological,
                                const std::vector<double>& architectural,
                                const std::vector<double>& bag, const std::vector<double>& cascade,
                                int head_width);

/// Names of the static blocks (biological, architectural, bag).
std::vector<std::string> static_feature_names();

std::string features_to_csv(const std::vector<FeatureVector>& rows);
std::vector<FeatureVector> features_from_csv(std::string_view text);
Json features_to_json(const std::vector<FeatureVector>& rows);

}  // namespace prolif
