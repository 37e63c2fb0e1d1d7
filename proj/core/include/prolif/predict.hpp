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

// Linear severity/score models, cross-validation, and the evaluation metrics.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prolif/io.hpp"

namespace prolif {

using Matrix = std::vector<std::vector<double>>;  // rows of samples

// --- ROC -------------------------------------------------------------------------

struct RocPoint {
  double threshold = 0.0;  // +inf for the origin point
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Trapezoidal ROC over all distinct thresholds; tied scores count one half.
/// Labels are 0/1 and both must occur.
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Pools every (score, label) pair of several one-vs-all problems into one ROC.
double micro_average_auroc(const std::vector<std::vector<double>>& scores,
                           const std::vector<std::vector<int>>& labels);

// --- classification / correlation ---------------------------------------------

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.96);

struct ClassificationMetrics {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  Interval accuracy_ci;
  std::vector<double> per_class_f1;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
};

ClassificationMetrics classification_metrics(std::span<const int> predicted,
                                             std::span<const int> truth, int classes = 3);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> mid_ranks(std::span<const double> values);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

struct CorrelationReport {
  double mse = 0.0;
  double pearson = 0.0;
  double spearman = 0.0;
  std::optional<double> spearman_p;  // needs n >= 3
};

/// Throws kNumeric when either vector has zero variance.
CorrelationReport correlations(std::span<const double> predicted, std::span<const double> truth);

struct BiomarkerRow {
  std::string name;
  double f = 0.0;
  double p = 1.0;
  bool significant = false;
  bool constant = false;
};

/// Univariate regression of `scores` on each feature column; ascending p.
std::vector<BiomarkerRow> biomarker_ranking(const std::vector<std::string>& names,
                                            const Matrix& features, std::span<const double> scores,
                                            double alpha = 0.005);

// --- models ---------------------------------------------------------------------

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // population std, 1 for constant columns

  static Standardizer fit(const Matrix& rows);
  std::vector<double> apply(std::span<const double> row) const;
  Matrix apply(const Matrix& rows) const;
};

struct LogisticOptions {
  double lambda = 1.0;
  double tolerance = 1e-6;
  int max_iterations = 10000;
};

struct LogisticModel {
  int classes = 0;
  int dims = 0;
  std::vector<double> weights;    // classes x dims, row-major
  std::vector<double> intercept;  // classes
  double lambda = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Sum of cross-entropies plus lambda/2 * ||W||^2 (intercepts unpenalized);
/// fills `gradient` (weights then intercepts) when non-null.
double logistic_objective(const LogisticModel& model, const Matrix& rows,
                          std::span<const int> labels, std::vector<double>* gradient);

/// Multinomial logistic regression by accelerated full-batch gradient descent.
LogisticModel fit_classifier(const Matrix& rows, std::span<const int> labels, int classes = 3,
                             const LogisticOptions& options = {});
std::vector<double> predict_probs(const LogisticModel& model, std::span<const double> row);

struct RidgeModel {
  std::vector<double> beta;
  double intercept = 0.0;
  double lambda = 0.0;
};

/// Ridge on centered data, so the intercept is unpenalized.
RidgeModel fit_regressor(const Matrix& rows, std::span<const double> y, double lambda = 1.0);
double predict_score(const RidgeModel& model, std::span<const double> row);

// --- cross-validation ---------------------------------------------------------------

/// Stratified assignment: fold index per sample. Throws kInvalidArgument when a
/// present class has fewer than `folds` members.
std::vector<int> stratified_folds(std::span<const int> grades, int folds, std::uint64_t seed);

struct FoldData {
  std::vector<std::string> names;
  Matrix train;
  Matrix test;
};

/// Builds fold-local feature matrices; everything fitted here must use the
/// training indices only.
using FoldBuilder = std::function<FoldData(int fold, const std::vector<std::size_t>& train,
                                           const std::vector<std::size_t>& test)>;

struct CvOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  LogisticOptions logistic;
  double ridge_lambda = 1.0;
  bool standardize = true;  // z-score with training-fold statistics
  int jobs = 1;
};

struct SlidePrediction {
  std::string slide;
  int fold = 0;
  int grade = 0;
  int predicted_grade = 0;
  std::array<double, 3> probs{};
  std::optional<double> score;
  std::optional<double> predicted_score;
};

struct MetricsReport {
  std::array<RocResult, 3> per_class;
  std::array<bool, 3> per_class_defined{};
  double micro_auroc = 0.0;
  ClassificationMetrics classification;
  std::optional<CorrelationReport> correlation;
  std::vector<SlidePrediction> predictions;
  std::uint64_t seed = 0;
  int folds = 0;

  Json to_json() const;
};

/// Metrics from pooled out-of-fold predictions.
MetricsReport metrics_from_predictions(std::vector<SlidePrediction> predictions, int folds,
                                       std::uint64_t seed);

MetricsReport cross_validate(const std::vector<std::string>& slides, std::span<const int> grades,
                             std::span<const std::optional<double>> scores,
                             const FoldBuilder& builder, const CvOptions& options);

/// Builder for a fixed feature matrix (no fold-local fitting besides standardization).
FoldBuilder static_fold_builder(std::vector<std::string> names, Matrix features);

}  // namespace prolif
