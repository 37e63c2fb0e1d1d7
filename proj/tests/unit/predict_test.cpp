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

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "prolif/error.hpp"
#include "prolif/predict.hpp"
#include "prolif/random.hpp"

namespace prolif {
namespace {

TEST(Auc, MatchesPairCountingWithTies) {
  Rng rng(41);
  for (int n = 0; n < 100; ++n) {
    std::vector<double> s(40);
    std::vector<int> l(40);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = std::round(rng.normal() * 2);
      l[i] = static_cast<int>(i % 3 == 0);
    }
    EXPECT_NEAR(roc_auc(s, l).auc, oracle::auc_pairs(s, l), 1e-12);
  }
}

TEST(Auc, KnownValuesAndErrors) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  const RocResult r = roc_auc(s, l);
  EXPECT_DOUBLE_EQ(r.auc, 0.75);
  EXPECT_DOUBLE_EQ(r.points.front().fpr, 0.0);
  EXPECT_DOUBLE_EQ(r.points.back().tpr, 1.0);
  EXPECT_THROW(roc_auc(s, std::vector<int>{1, 1, 1, 1}), Error);
}

TEST(Auc, MonotoneTransformInvariant) {
  Rng rng(42);
  std::vector<double> s(50), t(50);
  std::vector<int> l(50);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::round(rng.normal() * 3) / 3;
    t[i] = std::atan(s[i]) * 10 - 2;
    l[i] = static_cast<int>(rng.uniform_index(2));
  }
  l[0] = 0;
  l[1] = 1;
  EXPECT_EQ(roc_auc(s, l).auc, roc_auc(t, l).auc);
}

TEST(Correlation, SpearmanIsPearsonOfMidRanks) {
  Rng rng(43);
  std::vector<double> x(30), y(30);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = std::round(rng.normal() * 2);
    y[i] = x[i] + rng.normal();
  }
  EXPECT_NEAR(spearman(x, y), oracle::spearman_naive(x, y), 1e-12);
  EXPECT_EQ(mid_ranks(x), oracle::mid_ranks_counting(x));
  EXPECT_NEAR(pearson(x, y), oracle::pearson_naive(x, y), 1e-12);
  EXPECT_EQ(mid_ranks(std::vector<double>{3, 1, 3}), (std::vector<double>{2.5, 1, 2.5}));
}

TEST(Wilson, ReferenceInterval) {
  const Interval ci = wilson_interval(360, 500);
  EXPECT_NEAR(ci.lower, 0.67, 0.01);
  EXPECT_NEAR(ci.upper, 0.76, 0.01);
  const Interval direct = oracle::wilson_direct(360, 500, 1.96);
  EXPECT_NEAR(ci.lower, direct.lower, 1e-12);
  EXPECT_NEAR(ci.upper, direct.upper, 1e-12);
  EXPECT_DOUBLE_EQ(wilson_interval(0, 10).lower, 0.0);
}

TEST(Ridge, MatchesNormalEquations) {
  Rng rng(44);
  Matrix x(25, std::vector<double>(4));
  std::vector<double> y(25);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (double& v : x[i]) v = rng.normal();
    y[i] = 2 * x[i][1] - x[i][3] + 0.5 + 0.1 * rng.normal();
  }
  const RidgeModel m = fit_regressor(x, y, 1.0);
  const auto direct = oracle::ridge_normal_equations(x, y, 1.0);
  EXPECT_NEAR(m.intercept, direct[0], 1e-9);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(m.beta[j], direct[j + 1], 1e-9);
  EXPECT_NEAR(predict_score(m, x[0]), m.intercept + std::inner_product(m.beta.begin(), m.beta.end(), x[0].begin(), 0.0),
              1e-12);
}

TEST(Logistic, GradientMatchesObjectiveAndFitConverges) {
  Rng rng(45);
  Matrix x(60, std::vector<double>(3));
  std::vector<int> labels(60);
  for (std::size_t i = 0; i < x.size(); ++i) {
    labels[i] = static_cast<int>(i % 3);
    for (double& v : x[i]) v = rng.normal() + labels[i];
  }
  LogisticModel model;
  model.classes = 3;
  model.dims = 3;
  model.lambda = 1.0;
  model.weights.resize(9);
  model.intercept.resize(3);
  for (double& w : model.weights) w = rng.normal();
  for (double& b : model.intercept) b = rng.normal();
  std::vector<double> gradient;
  logistic_objective(model, x, labels, &gradient);
  std::vector<double*> vars;
  for (double& w : model.weights) vars.push_back(&w);
  for (double& b : model.intercept) vars.push_back(&b);
  auto f = [&] { return logistic_objective(model, x, labels, nullptr); };
  EXPECT_LT(oracle::relative_error(gradient, oracle::numeric_gradient(f, vars, 1e-6)), 1e-6);

  const LogisticModel fit = fit_classifier(x, labels);
  EXPECT_LT(fit.gradient_norm, 1e-4);
  const auto p = predict_probs(fit, x[0]);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
}

TEST(Folds, StratifiedAndDeterministic) {
  std::vector<int> grades;
  for (int i = 0; i < 30; ++i) grades.push_back(i % 3);
  const auto folds = stratified_folds(grades, 5, 7);
  EXPECT_EQ(folds, stratified_folds(grades, 5, 7));
  std::map<std::pair<int, int>, int> counts;
  for (std::size_t i = 0; i < grades.size(); ++i) ++counts[{folds[i], grades[i]}];
  for (const auto& [key, n] : counts) EXPECT_EQ(n, 2);
  EXPECT_THROW(stratified_folds(std::vector<int>{0, 0, 1}, 2, 1), Error);
}

TEST(Metrics, ConfusionAndAccuracy) {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2};
  const std::vector<int> pred{0, 1, 1, 1, 2, 0};
  const ClassificationMetrics m = classification_metrics(pred, truth);
  EXPECT_NEAR(m.accuracy, 4.0 / 6, 1e-12);
  EXPECT_EQ(m.confusion[0][1], 1u);
  EXPECT_EQ(m.confusion[2][0], 1u);
  EXPECT_NEAR(m.per_class_f1[1], 0.8, 1e-12);
}

TEST(Biomarkers, PlantedFeatureRanksFirst) {
  Rng rng(46);
  Matrix x(40, std::vector<double>(3));
  std::vector<double> score(40);
  for (std::size_t i = 0; i < x.size(); ++i) {
    score[i] = rng.normal();
    x[i] = {rng.normal(), score[i] * 2 + 0.1 * rng.normal(), 1.0};
  }
  const auto rows = biomarker_ranking({"noise", "planted", "flat"}, x, score);
  EXPECT_EQ(rows.front().name, "planted");
  EXPECT_TRUE(rows.front().significant);
  EXPECT_TRUE(rows.back().constant);
  std::vector<double> col(40);
  for (std::size_t i = 0; i < 40; ++i) col[i] = x[i][0];
  for (const BiomarkerRow& r : rows) {
    if (r.name == "noise") {
      EXPECT_NEAR(r.f, oracle::univariate_f(col, score), 1e-9);
    }
  }
}

TEST(CrossValidation, SeparableFeaturesPredictWell) {
  Rng rng(47);
  std::vector<std::string> slides;
  std::vector<int> grades;
  std::vector<std::optional<double>> scores;
  Matrix x;
  for (int i = 0; i < 45; ++i) {
    slides.push_back("s" + std::to_string(i));
    grades.push_back(i % 3);
    scores.push_back(grades.back() + 0.1 * rng.normal());
    x.push_back({grades.back() * 3.0 + rng.normal() * 0.3, rng.normal()});
  }
  CvOptions options;
  options.seed = 3;
  const MetricsReport report =
      cross_validate(slides, grades, scores, static_fold_builder({"a", "b"}, x), options);
  EXPECT_GE(report.classification.accuracy, 0.9);
  ASSERT_TRUE(report.correlation.has_value());
  EXPECT_GE(report.correlation->spearman, 0.8);
  EXPECT_EQ(report.predictions.size(), 45u);
  options.jobs = 3;
  const MetricsReport again = cross_validate(slides, grades, scores, static_fold_builder({"a", "b"}, x), options);
  EXPECT_EQ(again.to_json(), report.to_json());
}

}  // namespace
}  // namespace prolif
