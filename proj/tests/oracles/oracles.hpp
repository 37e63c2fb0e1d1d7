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

// Slow, obviously-correct reference implementations. Test code only: every
// function here recomputes a core result from first principles so the two
// can be compared.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "prolif/heatmap.hpp"
#include "prolif/nn.hpp"
#include "prolif/predict.hpp"
#include "prolif/preprocess.hpp"
#include "prolif/raster.hpp"

namespace prolif::oracle {

/// Scans every split t (classes <= t and > t) with exact integer arithmetic;
/// smallest t on ties. Returns -1 when fewer than two bins are nonzero.
int otsu_exhaustive(std::span<const std::uint64_t> histogram);

/// Direct seven-loop convolution with zero padding.
Tensor conv2d_naive(const Tensor& input, const LayerSpec& layer, const LayerParams& params);

/// Counts positive/negative pairs; ties count one half.
double auc_pairs(std::span<const double> scores, std::span<const int> labels);

/// Average rank of each value (1-based), by counting.
std::vector<double> mid_ranks_counting(std::span<const double> values);
double pearson_naive(std::span<const double> x, std::span<const double> y);
double spearman_naive(std::span<const double> x, std::span<const double> y);

/// Ridge with an unpenalized intercept through the (d+1)x(d+1) normal
/// equations, solved by Gaussian elimination with partial pivoting.
/// Returns {intercept, beta...}.
std::vector<double> ridge_normal_equations(const Matrix& rows, std::span<const double> y, double lambda);

struct FloodComponent {
  std::size_t area = 0;
  double cx = 0.0;  // pixel centers at +0.5
  double cy = 0.0;
  std::vector<Cell> pixels;  // raster order
};

/// Breadth-first flood fill; components in raster order of their first pixel.
std::vector<FloodComponent> flood_fill(const BinaryMask& mask, Connectivity connectivity);

/// Sum of squared distances to the assigned centroids, plain loops.
double inertia_naive(const std::vector<std::vector<double>>& vectors,
                     const std::vector<std::vector<double>>& centroids, std::span<const int> labels);
/// Index of the nearest centroid by linear scan, first on ties.
int nearest_naive(const std::vector<std::vector<double>>& centroids, std::span<const double> v);

/// Hu's seven invariants from raw moment sums over pixel coordinates.
std::array<double, 7> hu_direct(std::span<const Cell> pixels);

/// Wilson score interval written out from its closed form.
Interval wilson_direct(std::size_t successes, std::size_t n, double z);

/// Univariate least squares F statistic (t^2 of the slope).
double univariate_f(std::span<const double> x, std::span<const double> y);

/// Central differences of `f` with respect to every entry of `x`.
std::vector<double> numeric_gradient(const std::function<double()>& f, std::vector<double*> x, double eps);

/// Relative error ||a - b|| / max(||a||, ||b||, floor).
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

/// Heatmap by explicit crops: every cell runs the network on its own
/// receptive-field window (zero outside the image) and keeps the class-1
/// probability. No tissue gating.
Heatmap sliding_window_naive(const RasterImage& image, const Network& network);

/// Random stride-consistent fully convolutional two-class network (ends in a
/// 1x1 conv and softmax2d) with random weights.
Network random_fcn(std::uint64_t seed);

}  // namespace prolif::oracle
