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

#include "prolif/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "prolif/error.hpp"
#include "prolif/parallel.hpp"
#include "prolif/random.hpp"

namespace prolif {

// --- ROC -------------------------------------------------------------------------

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::kInvalidArgument,
          "roc_auc: scores and labels differ in length");
  std::uint64_t pos = 0, neg = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, ErrorKind::kInvalidArgument, "roc_auc: labels must be 0 or 1");
    (l == 1 ? pos : neg)++;
  }
  require(pos > 0 && neg > 0, ErrorKind::kInvalidArgument, "roc_auc needs both label values");
  for (double s : scores) {
    if (std::isnan(s)) fail(ErrorKind::kNumeric, "roc_auc: NaN score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocResult r;
  r.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  // Twice the area under the step-free trapezoid curve, in units of 1/(pos*neg).
  std::uint64_t tp = 0, fp = 0, twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    const std::uint64_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == threshold; ++i) (labels[order[i]] == 1 ? tp : fp)++;
    twice_area += (fp - fp0) * (tp + tp0);
    r.points.push_back({threshold, static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  r.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

double micro_average_auroc(const std::vector<std::vector<double>>& scores,
                           const std::vector<std::vector<int>>& labels) {
  require(scores.size() == labels.size(), ErrorKind::kInvalidArgument,
          "micro_average_auroc: problem count mismatch");
  std::vector<double> s;
  std::vector<int> l;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    require(scores[k].size() == labels[k].size(), ErrorKind::kInvalidArgument,
            "micro_average_auroc: scores and labels differ in length");
    s.insert(s.end(), scores[k].begin(), scores[k].end());
    l.insert(l.end(), labels[k].begin(), labels[k].end());
  }
  return roc_auc(s, l).auc;
}

// --- classification / correlation ---------------------------------------------

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
  require(n > 0 && successes <= n, ErrorKind::kInvalidArgument, "wilson_interval: bad counts");
  const double nn = static_cast<double>(n);
  const double p = successes / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

ClassificationMetrics classification_metrics(std::span<const int> predicted,
                                             std::span<const int> truth, int classes) {
  require(!truth.empty() && predicted.size() == truth.size(), ErrorKind::kInvalidArgument,
          "classification_metrics: need equal-length nonempty inputs");
  ClassificationMetrics m;
  m.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < classes && predicted[i] >= 0 && predicted[i] < classes,
            ErrorKind::kInvalidArgument, "classification_metrics: class out of range");
    ++m.confusion[truth[i]][predicted[i]];
    correct += truth[i] == predicted[i];
  }
  for (int c = 0; c < classes; ++c) {
    std::size_t fp = 0, fn = 0;
    for (int o = 0; o < classes; ++o) {
      if (o == c) continue;
      fp += m.confusion[o][c];
      fn += m.confusion[c][o];
    }
    const std::size_t tp = m.confusion[c][c];
    const std::size_t denom = 2 * tp + fp + fn;
    m.per_class_f1.push_back(denom == 0 ? 0.0 : 2.0 * tp / static_cast<double>(denom));
  }
  m.macro_f1 = std::accumulate(m.per_class_f1.begin(), m.per_class_f1.end(), 0.0) / classes;
  m.accuracy = static_cast<double>(correct) / truth.size();
  m.accuracy_ci = wilson_interval(correct, truth.size());
  return m;
}

std::vector<double> mid_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::kInvalidArgument,
          "pearson: need two equal-length vectors of size >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) fail(ErrorKind::kNumeric, "correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const std::vector<double> rx = mid_ranks(x);
  const std::vector<double> ry = mid_ranks(y);
  return pearson(rx, ry);
}

CorrelationReport correlations(std::span<const double> predicted, std::span<const double> truth) {
  CorrelationReport r;
  r.pearson = pearson(predicted, truth);
  r.spearman = spearman(predicted, truth);
  double se = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) se += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
  r.mse = se / truth.size();
  const std::size_t n = truth.size();
  if (n >= 3) {
    const double rho = r.spearman;
    if (std::abs(rho) >= 1.0) {
      r.spearman_p = 0.0;
    } else {
      const double t = rho * std::sqrt((n - 2.0) / (1.0 - rho * rho));
      const boost::math::students_t dist(static_cast<double>(n - 2));
      r.spearman_p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
  }
  return r;
}

std::vector<BiomarkerRow> biomarker_ranking(const std::vector<std::string>& names,
                                            const Matrix& features, std::span<const double> scores,
                                            double alpha) {
  const std::size_t n = features.size();
  require(n > 2 && scores.size() == n, ErrorKind::kInvalidArgument,
          "biomarker_ranking needs more than two samples with scores");
  const double nn = static_cast<double>(n);
  const double my = std::accumulate(scores.begin(), scores.end(), 0.0) / nn;
  double syy = 0.0;
  for (double s : scores) syy += (s - my) * (s - my);
  const boost::math::fisher_f dist(1.0, nn - 2.0);
  std::vector<BiomarkerRow> rows;
  for (std::size_t j = 0; j < names.size(); ++j) {
    BiomarkerRow row;
    row.name = names[j];
    double mx = 0.0;
    for (const auto& f : features) mx += f.at(j);
    mx /= nn;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sxx += (features[i][j] - mx) * (features[i][j] - mx);
      sxy += (features[i][j] - mx) * (scores[i] - my);
    }
    const double scale = std::max(1.0, mx * mx * nn);
    if (sxx <= 1e-24 * scale || syy <= 0.0) {
      row.constant = true;
      row.p = 1.0;
    } else {
      const double slope = sxy / sxx;
      const double rss = std::max(0.0, syy - slope * sxy);
      if (rss <= 1e-15 * syy) {
        row.f = std::numeric_limits<double>::infinity();
        row.p = 0.0;
      } else {
        row.f = slope * slope * sxx / (rss / (nn - 2.0));
        row.p = boost::math::cdf(boost::math::complement(dist, row.f));
      }
    }
    row.significant = row.p < alpha;
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const BiomarkerRow& a, const BiomarkerRow& b) { return a.p < b.p; });
  return rows;
}

// --- models ---------------------------------------------------------------------

Standardizer Standardizer::fit(const Matrix& rows) {
  require(!rows.empty(), ErrorKind::kInvalidArgument, "standardizer needs rows");
  const std::size_t d = rows[0].size();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (const auto& r : rows) {
    require(r.size() == d, ErrorKind::kInvalidArgument, "ragged feature matrix");
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  for (double& m : s.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) s.scale[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(s.scale[j] / static_cast<double>(rows.size()));
    s.scale[j] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? sd : 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> row) const {
  require(row.size() == mean.size(), ErrorKind::kInvalidArgument, "standardizer width mismatch");
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / scale[j];
  return out;
}

Matrix Standardizer::apply(const Matrix& rows) const {
  Matrix out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(apply(std::span<const double>(r)));
  return out;
}

namespace {

void check_matrix(const Matrix& rows, std::size_t n_labels) {
  require(!rows.empty() && rows.size() == n_labels, ErrorKind::kInvalidArgument,
          "feature rows and targets differ in count");
  for (const auto& r : rows) {
    require(r.size() == rows[0].size(), ErrorKind::kInvalidArgument, "ragged feature matrix");
    for (double v : r) {
      if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "non-finite feature value");
    }
  }
}

}  // namespace

double logistic_objective(const LogisticModel& model, const Matrix& rows,
                          std::span<const int> labels, std::vector<double>* gradient) {
  const int K = model.classes, d = model.dims;
  if (gradient) gradient->assign(static_cast<std::size_t>(K) * d + K, 0.0);
  double total = 0.0;
  std::vector<double> z(K);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& x = rows[i];
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      double v = model.intercept[k];
      const double* w = &model.weights[static_cast<std::size_t>(k) * d];
      for (int j = 0; j < d; ++j) v += w[j] * x[j];
      z[k] = v;
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(z[k] - mx);
    total += std::log(sum) + mx - z[labels[i]];
    if (gradient) {
      for (int k = 0; k < K; ++k) {
        const double r = std::exp(z[k] - mx) / sum - (k == labels[i] ? 1.0 : 0.0);
        double* g = &(*gradient)[static_cast<std::size_t>(k) * d];
        for (int j = 0; j < d; ++j) g[j] += r * x[j];
        (*gradient)[static_cast<std::size_t>(K) * d + k] += r;
      }
    }
  }
  for (std::size_t j = 0; j < model.weights.size(); ++j) {
    total += 0.5 * model.lambda * model.weights[j] * model.weights[j];
    if (gradient) (*gradient)[j] += model.lambda * model.weights[j];
  }
  return total;
}

LogisticModel fit_classifier(const Matrix& rows, std::span<const int> labels, int classes,
                             const LogisticOptions& options) {
  check_matrix(rows, labels.size());
  require(options.lambda >= 0.0, ErrorKind::kInvalidArgument, "lambda must be non-negative");
  std::vector<std::size_t> counts(classes, 0);
  for (int l : labels) {
    require(l >= 0 && l < classes, ErrorKind::kInvalidArgument, "class label out of range");
    ++counts[l];
  }
  require(std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) >= 2,
          ErrorKind::kInvalidArgument, "fit_classifier needs at least two classes");
  const int d = static_cast<int>(rows[0].size());
  const std::size_t n = rows.size();

  // Lipschitz constant of the gradient: 1/2 * lambda_max([X 1]^T [X 1]) + lambda.
  Eigen::MatrixXd xt(n, d + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) xt(i, j) = rows[i][j];
    xt(i, d) = 1.0;
  }
  const Eigen::MatrixXd gram = n <= static_cast<std::size_t>(d + 1)
                                   ? Eigen::MatrixXd(xt * xt.transpose())
                                   : Eigen::MatrixXd(xt.transpose() * xt);
  const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly)
                         .eigenvalues()
                         .maxCoeff();
  const double lipschitz = 0.5 * top * 1.0001 + options.lambda;

  LogisticModel x;
  x.classes = classes;
  x.dims = d;
  x.lambda = options.lambda;
  x.weights.assign(static_cast<std::size_t>(classes) * d, 0.0);
  x.intercept.assign(classes, 0.0);
  const std::size_t nw = x.weights.size();
  auto params_add = [&](LogisticModel& m, const LogisticModel& a, const LogisticModel& b,
                        double cb) {
    for (std::size_t j = 0; j < nw; ++j) m.weights[j] = a.weights[j] + cb * b.weights[j];
    for (int k = 0; k < classes; ++k) m.intercept[k] = a.intercept[k] + cb * b.intercept[k];
  };
  auto step = [&](LogisticModel& m, const LogisticModel& from, const std::vector<double>& g) {
    for (std::size_t j = 0; j < nw; ++j) m.weights[j] = from.weights[j] - g[j] / lipschitz;
    for (int k = 0; k < classes; ++k) m.intercept[k] = from.intercept[k] - g[nw + k] / lipschitz;
  };
  auto norm = [](const std::vector<double>& g) {
    double s = 0.0;
    for (double v : g) s += v * v;
    return std::sqrt(s);
  };

  std::vector<double> grad;
  double fx = logistic_objective(x, rows, labels, &grad);
  x.gradient_norm = norm(grad);
  LogisticModel y = x, next = x, diff = x;
  double t = 1.0;
  int it = 0;
  while (x.gradient_norm >= options.tolerance && it < options.max_iterations) {
    ++it;
    std::vector<double> gy;
    logistic_objective(y, rows, labels, &gy);
    step(next, y, gy);
    std::vector<double> gnext;
    const double fnext = logistic_objective(next, rows, labels, &gnext);
    if (fnext > fx) {
      // Momentum overshoot: restart from a plain gradient step at x.
      t = 1.0;
      step(next, x, grad);
      fx = logistic_objective(next, rows, labels, &grad);
      x = next;
      y = x;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      params_add(diff, next, x, -1.0);
      params_add(y, next, diff, (t - 1.0) / t_next);
      t = t_next;
      x = next;
      fx = fnext;
      grad = std::move(gnext);
    }
    x.gradient_norm = norm(grad);
  }
  x.iterations = it;
  return x;
}

std::vector<double> predict_probs(const LogisticModel& model, std::span<const double> row) {
  require(static_cast<int>(row.size()) == model.dims, ErrorKind::kInvalidArgument,
          "predict_probs: feature width mismatch");
  std::vector<double> z(model.classes);
  double mx = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < model.classes; ++k) {
    double v = model.intercept[k];
    for (int j = 0; j < model.dims; ++j) v += model.weights[static_cast<std::size_t>(k) * model.dims + j] * row[j];
    z[k] = v;
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double& v : z) sum += (v = std::exp(v - mx));
  for (double& v : z) v /= sum;
  return z;
}

RidgeModel fit_regressor(const Matrix& rows, std::span<const double> y, double lambda) {
  check_matrix(rows, y.size());
  require(rows.size() >= 2, ErrorKind::kInvalidArgument, "fit_regressor needs two samples");
  require(lambda > 0.0, ErrorKind::kInvalidArgument, "ridge lambda must be positive");
  const std::size_t n = rows.size();
  const int d = static_cast<int>(rows[0].size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) mean(j) += rows[i][j];
    my += y[i];
  }
  mean /= static_cast<double>(n);
  my /= static_cast<double>(n);
  Eigen::MatrixXd xc(n, d);
  Eigen::VectorXd yc(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) xc(i, j) = rows[i][j] - mean(j);
    yc(i) = y[i] - my;
  }
  Eigen::MatrixXd a = xc.transpose() * xc;
  a.diagonal().array() += lambda;
  const Eigen::VectorXd beta = a.ldlt().solve(xc.transpose() * yc);
  if (!beta.allFinite()) fail(ErrorKind::kNumeric, "ridge solve produced non-finite coefficients");
  RidgeModel m;
  m.lambda = lambda;
  m.beta.assign(beta.data(), beta.data() + d);
  m.intercept = my - mean.dot(beta);
  return m;
}

double predict_score(const RidgeModel& model, std::span<const double> row) {
  require(row.size() == model.beta.size(), ErrorKind::kInvalidArgument,
          "predict_score: feature width mismatch");
  double v = model.intercept;
  for (std::size_t j = 0; j < row.size(); ++j) v += model.beta[j] * row[j];
  return v;
}

// --- cross-validation ---------------------------------------------------------------

std::vector<int> stratified_folds(std::span<const int> grades, int folds, std::uint64_t seed) {
  require(folds >= 2, ErrorKind::kInvalidArgument, "need at least two folds");
  const int classes = grades.empty() ? 0 : *std::max_element(grades.begin(), grades.end()) + 1;
  std::vector<int> assignment(grades.size(), -1);
  int next = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < grades.size(); ++i) {
      require(grades[i] >= 0, ErrorKind::kInvalidArgument, "negative grade");
      if (grades[i] == c) members.push_back(i);
    }
    if (members.empty()) continue;
    require(static_cast<int>(members.size()) >= folds, ErrorKind::kInvalidArgument,
            "class " + std::to_string(c) + " has fewer members than folds");
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t i : members) assignment[i] = next++ % folds;
  }
  return assignment;
}

Json MetricsReport::to_json() const {
  Json per = Json::array();
  for (int c = 0; c < 3; ++c) {
    per.push_back({{"class", c}, {"auc", per_class_defined[c] ? Json(per_class[c].auc) : Json(nullptr)}});
  }
  Json j{{"per_class", per},
         {"micro_average_auroc", micro_auroc},
         {"macro_f1", classification.macro_f1},
         {"accuracy", classification.accuracy},
         {"accuracy_ci", {classification.accuracy_ci.lower, classification.accuracy_ci.upper}},
         {"confusion", classification.confusion},
         {"folds", folds},
         {"seed", seed},
         {"n", predictions.size()}};
  if (correlation) {
    j["mse"] = correlation->mse;
    j["pearson"] = correlation->pearson;
    j["spearman"] = correlation->spearman;
    j["spearman_p"] = correlation->spearman_p ? Json(*correlation->spearman_p) : Json(nullptr);
  }
  Json fold_of = Json::object();
  for (const SlidePrediction& p : predictions) fold_of[p.slide] = p.fold;
  j["fold_assignment"] = fold_of;
  return j;
}

MetricsReport metrics_from_predictions(std::vector<SlidePrediction> predictions, int folds,
                                       std::uint64_t seed) {
  MetricsReport report;
  report.seed = seed;
  report.folds = folds;
  std::vector<int> truth, predicted;
  std::vector<std::vector<double>> scores(3);
  std::vector<std::vector<int>> labels(3);
  std::vector<double> ps, ts;
  for (const SlidePrediction& p : predictions) {
    truth.push_back(p.grade);
    predicted.push_back(p.predicted_grade);
    for (int c = 0; c < 3; ++c) {
      scores[c].push_back(p.probs[c]);
      labels[c].push_back(p.grade == c ? 1 : 0);
    }
    if (p.score && p.predicted_score) {
      ts.push_back(*p.score);
      ps.push_back(*p.predicted_score);
    }
  }
  report.classification = classification_metrics(predicted, truth);
  for (int c = 0; c < 3; ++c) {
    const auto pos = std::count(labels[c].begin(), labels[c].end(), 1);
    report.per_class_defined[c] = pos > 0 && pos < static_cast<long>(labels[c].size());
    if (report.per_class_defined[c]) report.per_class[c] = roc_auc(scores[c], labels[c]);
  }
  report.micro_auroc = micro_average_auroc(scores, labels);
  if (ps.size() >= 2) report.correlation = correlations(ps, ts);
  report.predictions = std::move(predictions);
  return report;
}

MetricsReport cross_validate(const std::vector<std::string>& slides, std::span<const int> grades,
                             std::span<const std::optional<double>> scores,
                             const FoldBuilder& builder, const CvOptions& options) {
  require(slides.size() == grades.size() && scores.size() == grades.size(),
          ErrorKind::kInvalidArgument, "cross_validate: inconsistent slide lists");
  const std::vector<int> fold_of = stratified_folds(grades, options.folds, options.seed);
  std::vector<SlidePrediction> predictions(slides.size());
  parallel_for(static_cast<std::size_t>(options.folds), options.jobs, [&](std::size_t f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < slides.size(); ++i) (fold_of[i] == static_cast<int>(f) ? test : train).push_back(i);
    FoldData data = builder(static_cast<int>(f), train, test);
    require(data.train.size() == train.size() && data.test.size() == test.size(),
            ErrorKind::kInvalidArgument, "fold builder returned wrong row counts");
    if (options.standardize) {
      const Standardizer z = Standardizer::fit(data.train);
      data.train = z.apply(data.train);
      data.test = z.apply(data.test);
    }
    std::vector<int> train_grades;
    for (std::size_t i : train) train_grades.push_back(grades[i]);
    const LogisticModel classifier = fit_classifier(data.train, train_grades, 3, options.logistic);
    Matrix score_rows;
    std::vector<double> score_targets;
    for (std::size_t k = 0; k < train.size(); ++k) {
      if (scores[train[k]]) {
        score_rows.push_back(data.train[k]);
        score_targets.push_back(*scores[train[k]]);
      }
    }
    std::optional<RidgeModel> regressor;
    if (score_rows.size() >= 2) regressor = fit_regressor(score_rows, score_targets, options.ridge_lambda);
    for (std::size_t k = 0; k < test.size(); ++k) {
      SlidePrediction& p = predictions[test[k]];
      p.slide = slides[test[k]];
      p.fold = static_cast<int>(f);
      p.grade = grades[test[k]];
      const std::vector<double> probs = predict_probs(classifier, data.test[k]);
      std::copy(probs.begin(), probs.end(), p.probs.begin());
      p.predicted_grade = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      p.score = scores[test[k]];
      if (regressor) p.predicted_score = predict_score(*regressor, data.test[k]);
    }
  });
  return metrics_from_predictions(std::move(predictions), options.folds, options.seed);
}

FoldBuilder static_fold_builder(std::vector<std::string> names, Matrix features) {
  return [names = std::move(names), features = std::move(features)](
             int, const std::vector<std::size_t>& train, const std::vector<std::size_t>& test) {
    FoldData d;
    d.names = names;
    for (std::size_t i : train) d.train.push_back(features.at(i));
    for (std::size_t i : test) d.test.push_back(features.at(i));
    return d;
  };
}

}  // namespace prolif
