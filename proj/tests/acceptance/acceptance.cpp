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

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria 5-7 run the full pipeline and take minutes.
//
//   prolif_acceptance [--criteria 1,2,...] [--work-dir DIR]

#include <CLI11/CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "oracles.hpp"
#include "prolif/features.hpp"
#include "prolif/heatmap.hpp"
#include "prolif/io.hpp"
#include "prolif/nn.hpp"
#include "prolif/predict.hpp"
#include "prolif/preprocess.hpp"
#include "prolif/random.hpp"
#include "prolif/raster.hpp"
#include "prolif/trainloop.hpp"

namespace fs = std::filesystem;
using namespace prolif;

namespace {

struct Check {
  std::string what;
  double value = 0.0;
  std::string op;  // "<", "<=", ">=", "=="
  double limit = 0.0;

  bool ok() const {
    if (op == "<") return value < limit;
    if (op == "<=") return value <= limit;
    if (op == ">=") return value >= limit;
    return value == limit;
  }
};

struct Outcome {
  std::vector<Check> checks;
  std::string note;
  void add(std::string what, double value, std::string op, double limit) {
    checks.push_back({std::move(what), value, std::move(op), limit});
  }
};

std::string format(double v) {
  std::ostringstream out;
  out << std::setprecision(4) << v;
  return out.str();
}

// --- 1: fcn equals sliding window -------------------------------------------------------

Outcome fcn_equivalence() {
  Outcome o;
  double worst = 0.0, worst_core = 0.0;
  Rng rng(0xfc01);
  for (int n = 0; n < 20; ++n) {
    const Network net = oracle::random_fcn(derive_seed(0xfc01, n));
    const int S = net.spec().total_stride;
    const int w = S * rng.uniform_int(6, 14) + rng.uniform_int(0, S - 1);
    const int h = S * rng.uniform_int(6, 14) + rng.uniform_int(0, S - 1);
    RasterImage image(w, h, 3);
    for (std::uint8_t& v : image.data()) v = static_cast<std::uint8_t>(rng.uniform_index(256));
    BinaryMask tissue(w, h, 1);
    std::fill(tissue.bits.begin(), tissue.bits.end(), 1);
    HeatmapOptions options;
    options.tile = 16 * rng.uniform_int(1, 4);
    options.min_tissue_coverage = 0.0;
    const Heatmap fcn =
        generate_heatmap_detailed(image, 1, "tile", net, tissue, HeatmapMode::kFcn, options).heatmap;
    const Heatmap sliding =
        generate_heatmap_detailed(image, 1, "tile", net, tissue, HeatmapMode::kSliding, options).heatmap;
    const Heatmap naive = oracle::sliding_window_naive(image, net);
    for (std::size_t i = 0; i < naive.probs.size(); ++i) {
      worst = std::max(worst, std::abs(fcn.probs[i] - naive.probs[i]));
      worst_core = std::max(worst_core, std::abs(fcn.probs[i] - sliding.probs[i]));
    }
  }
  o.add("max |fcn - crop oracle|", worst, "<", 1e-9);
  o.add("max |fcn - sliding mode|", worst_core, "<", 1e-9);
  return o;
}

// --- 2: gradients -----------------------------------------------------------------------

Tensor random_tensor(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

std::vector<double*> pointers(Tensor& t) {
  std::vector<double*> p;
  for (double& v : t.data) p.push_back(&v);
  return p;
}

double layer_gradient_error(const LayerSpec& layer, std::vector<int> input_shape, Rng& rng) {
  Tensor input = random_tensor(rng, input_shape);
  LayerParams params;
  if (layer.has_parameters()) {
    params.weight = random_tensor(rng, layer.weight_shape());
    params.bias = random_tensor(rng, layer.bias_shape());
  }
  const Tensor out = layer_forward(input, layer, params);
  const Tensor r = random_tensor(rng, out.shape);
  auto objective = [&] {
    const Tensor y = layer_forward(input, layer, params);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r.data[i] * y.data[i];
    return s;
  };
  const LayerGradient g = layer_backward(input, out, r, layer, params, true);
  std::vector<double> analytic = g.input.data;
  std::vector<double*> vars = pointers(input);
  if (layer.has_parameters()) {
    analytic.insert(analytic.end(), g.params.weight.data.begin(), g.params.weight.data.end());
    analytic.insert(analytic.end(), g.params.bias.data.begin(), g.params.bias.data.end());
    for (double* p : pointers(params.weight)) vars.push_back(p);
    for (double* p : pointers(params.bias)) vars.push_back(p);
  }
  const std::vector<double> numeric = oracle::numeric_gradient(objective, vars, 1e-5);
  return oracle::relative_error(analytic, numeric);
}

Outcome gradient_checks() {
  Outcome o;
  Rng rng(0x9ad);
  o.add("conv (k3 s2 p1)", layer_gradient_error(LayerSpec::conv(3, 4, 3, 2, 1), {3, 9, 9}, rng), "<", 1e-6);
  o.add("conv (k2 s1 p0)", layer_gradient_error(LayerSpec::conv(2, 3, 2), {2, 6, 7}, rng), "<", 1e-6);
  o.add("relu", layer_gradient_error(LayerSpec::relu(), {3, 5, 5}, rng), "<", 1e-6);
  o.add("maxpool", layer_gradient_error(LayerSpec::maxpool(2, 2), {3, 8, 8}, rng), "<", 1e-6);
  o.add("softmax2d", layer_gradient_error(LayerSpec::softmax2d(), {4, 3, 3}, rng), "<", 1e-6);
  o.add("global avg pool", layer_gradient_error(LayerSpec::global_avg_pool(), {5, 4, 3}, rng), "<", 1e-6);
  o.add("linear", layer_gradient_error(LayerSpec::linear(6, 4), {6}, rng), "<", 1e-6);

  // Composed six-layer classifier, gradient of the cross-entropy loss.
  const NetworkSpec spec = NetworkSpec::make(
      "grad-net",
      {LayerSpec::conv(3, 4, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2), LayerSpec::conv(4, 5, 3),
       LayerSpec::global_avg_pool(), LayerSpec::linear(5, 3)},
      3);
  WeightStore weights = init_weights(spec, 17);
  const Tensor input = random_tensor(rng, {3, 10, 10});
  const int label = 1;
  const Gradients g = backward(Network(spec, weights), input, std::span<const int>(&label, 1));
  std::vector<double> analytic;
  std::vector<double*> vars;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (!spec.layers[l].has_parameters()) continue;
    analytic.insert(analytic.end(), g.layers[l].weight.data.begin(), g.layers[l].weight.data.end());
    analytic.insert(analytic.end(), g.layers[l].bias.data.begin(), g.layers[l].bias.data.end());
    for (double* p : pointers(weights.layers[l].weight)) vars.push_back(p);
    for (double* p : pointers(weights.layers[l].bias)) vars.push_back(p);
  }
  auto objective = [&] { return loss(Network(spec, weights), input, std::span<const int>(&label, 1)); };
  o.add("six-layer network", oracle::relative_error(analytic, oracle::numeric_gradient(objective, vars, 1e-5)),
        "<", 1e-6);
  return o;
}

// --- 3: oracle equivalences -----------------------------------------------------------

RasterImage blob_image(Rng& rng, int w, int h) {
  RasterImage image(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = static_cast<std::uint8_t>(200 + rng.uniform_int(0, 40));
    }
  }
  const int blobs = rng.uniform_int(3, 12);
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0, w), cy = rng.uniform(0, h), r = rng.uniform(2.0, 7.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (std::hypot(x + 0.5 - cx, (y + 0.5 - cy) * 1.3) > r) continue;
        for (int c = 0; c < 3; ++c) image.at(x, y, c) = static_cast<std::uint8_t>(40 + rng.uniform_int(0, 40));
      }
    }
  }
  return image;
}

Outcome oracle_equivalences() {
  Outcome o;
  Rng rng(0x0a11);

  std::size_t otsu_mismatch = 0;
  for (int n = 0; n < 1000; ++n) {
    std::vector<std::uint64_t> hist(256, 0);
    const int mode = n % 3;
    if (mode == 0) {
      for (auto& h : hist) h = rng.uniform_index(1000);
    } else if (mode == 1) {
      const int bins = rng.uniform_int(2, 6);
      for (int b = 0; b < bins; ++b) hist[rng.uniform_index(256)] += 1 + rng.uniform_index(100000);
    } else {
      const double a = rng.uniform(20, 100), b = rng.uniform(140, 240);
      for (int s = 0; s < 5000; ++s) {
        const double v = rng.uniform() < 0.4 ? rng.normal(a, 12) : rng.normal(b, 20);
        ++hist[static_cast<std::size_t>(std::clamp(std::lround(v), 0L, 255L))];
      }
    }
    if (std::count_if(hist.begin(), hist.end(), [](auto h) { return h > 0; }) < 2) hist[0] = hist[255] = 1;
    otsu_mismatch += otsu_threshold(hist) != oracle::otsu_exhaustive(hist);
  }
  o.add("otsu mismatches (1000 histograms)", static_cast<double>(otsu_mismatch), "==", 0);

  double conv_diff = 0.0;
  for (int n = 0; n < 40; ++n) {
    const int cin = rng.uniform_int(1, 4), cout = rng.uniform_int(1, 5), k = rng.uniform_int(1, 5);
    const int s = rng.uniform_int(1, 3), p = rng.uniform_int(0, 2);
    const LayerSpec layer = LayerSpec::conv(cin, cout, k, s, p);
    const Tensor input = random_tensor(rng, {cin, rng.uniform_int(k, 30), rng.uniform_int(k, 30)});
    const LayerParams params{random_tensor(rng, layer.weight_shape()), random_tensor(rng, layer.bias_shape())};
    const Tensor fast = conv2d_forward(input, layer, params);
    const Tensor slow = oracle::conv2d_naive(input, layer, params);
    for (std::size_t i = 0; i < slow.size(); ++i) conv_diff = std::max(conv_diff, std::abs(fast.data[i] - slow.data[i]));
  }
  o.add("max |conv - naive loops|", conv_diff, "<=", 1e-9);

  double auc_diff = 0.0, spearman_diff = 0.0;
  for (int n = 0; n < 200; ++n) {
    const std::size_t m = 5 + rng.uniform_index(300);
    std::vector<double> scores(m), other(m);
    std::vector<int> labels(m);
    for (std::size_t i = 0; i < m; ++i) {
      scores[i] = std::round(rng.normal() * 4) / 4;  // plenty of ties
      other[i] = std::round((scores[i] + rng.normal()) * 3) / 3;
      labels[i] = static_cast<int>(i % 2 == 0 ? 1 : rng.uniform_index(2));
    }
    labels[1] = 0;
    auc_diff = std::max(auc_diff, std::abs(roc_auc(scores, labels).auc - oracle::auc_pairs(scores, labels)));
    spearman_diff = std::max(spearman_diff, std::abs(spearman(scores, other) - oracle::spearman_naive(scores, other)));
  }
  o.add("max |auc - pair counting|", auc_diff, "<=", 1e-9);
  o.add("max |spearman - mid-rank pearson|", spearman_diff, "<=", 1e-9);

  double ridge_diff = 0.0;
  for (int n = 0; n < 30; ++n) {
    const std::size_t rows = 10 + rng.uniform_index(50), d = 1 + rng.uniform_index(8);
    Matrix x(rows, std::vector<double>(d));
    std::vector<double> y(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      for (double& v : x[i]) v = rng.normal();
      y[i] = rng.normal() + x[i][0];
    }
    const double lambda = rng.uniform(0.1, 5.0);
    const RidgeModel model = fit_regressor(x, y, lambda);
    const std::vector<double> direct = oracle::ridge_normal_equations(x, y, lambda);
    ridge_diff = std::max(ridge_diff, std::abs(model.intercept - direct[0]));
    for (std::size_t j = 0; j < d; ++j) ridge_diff = std::max(ridge_diff, std::abs(model.beta[j] - direct[j + 1]));
  }
  o.add("max |ridge - normal equations|", ridge_diff, "<=", 1e-9);

  std::size_t component_mismatch = 0;
  double centroid_diff = 0.0;
  for (int n = 0; n < 60; ++n) {
    BinaryMask mask(rng.uniform_int(5, 40), rng.uniform_int(5, 40));
    for (auto& b : mask.bits) b = rng.uniform() < 0.45;
    for (Connectivity c : {Connectivity::kFour, Connectivity::kEight}) {
      const ComponentLabels labels = label_components(mask, c);
      const auto flood = oracle::flood_fill(mask, c);
      if (static_cast<std::size_t>(labels.count()) != flood.size()) {
        ++component_mismatch;
        continue;
      }
      for (std::size_t k = 0; k < flood.size(); ++k) {
        const int id = labels.at(flood[k].pixels[0].x, flood[k].pixels[0].y);
        bool same = labels.areas[static_cast<std::size_t>(id - 1)] == flood[k].area;
        for (const Cell& p : flood[k].pixels) same = same && labels.at(p.x, p.y) == id;
        component_mismatch += !same;
      }
    }
    const RasterImage image = blob_image(rng, rng.uniform_int(30, 80), rng.uniform_int(30, 80));
    const NucleiOptions options;
    const NucleiResult nuclei = propose_nuclei_detailed(image, options);
    std::vector<std::uint64_t> hist(256, 0);
    for (std::uint8_t v : nuclei.gray.data()) ++hist[255 - v];
    const int t = oracle::otsu_exhaustive(hist);
    BinaryMask dark(image.width(), image.height());
    for (std::size_t i = 0; i < dark.bits.size(); ++i) dark.bits[i] = 255 - nuclei.gray.data()[i] > t;
    std::vector<oracle::FloodComponent> kept;
    for (auto& f : oracle::flood_fill(dark, options.connectivity)) {
      if (f.area >= options.min_area && f.area <= options.max_area) kept.push_back(std::move(f));
    }
    if (kept.size() != nuclei.nuclei.size()) {
      ++component_mismatch;
      continue;
    }
    for (std::size_t k = 0; k < kept.size(); ++k) {
      centroid_diff = std::max({centroid_diff, std::abs(kept[k].cx - nuclei.nuclei[k].centroid.x),
                                std::abs(kept[k].cy - nuclei.nuclei[k].centroid.y)});
      component_mismatch += kept[k].area != nuclei.nuclei[k].area;
    }
  }
  o.add("component mismatches vs flood fill", static_cast<double>(component_mismatch), "==", 0);
  o.add("max |nucleus centroid - flood fill|", centroid_diff, "<=", 1e-9);

  std::size_t increases = 0;
  double inertia_diff = 0.0;
  for (int n = 0; n < 30; ++n) {
    Vectors v(40 + rng.uniform_index(200), std::vector<double>(2 + rng.uniform_index(6)));
    for (auto& row : v) {
      const double shift = static_cast<double>(rng.uniform_index(4)) * 3;
      for (double& x : row) x = rng.normal() + shift;
    }
    const KMeansResult km = kmeans(v, 2 + static_cast<int>(rng.uniform_index(8)), derive_seed(9, n));
    for (std::size_t i = 1; i < km.history.size(); ++i) increases += km.history[i] > km.history[i - 1] + 1e-9;
    inertia_diff = std::max(inertia_diff, std::abs(km.inertia - oracle::inertia_naive(v, km.centroids, km.labels)));
  }
  o.add("k-means inertia increases across iterations", static_cast<double>(increases), "==", 0);
  o.add("max |k-means inertia - recomputed|", inertia_diff, "<=", 1e-9);
  return o;
}

// --- 4: invariances -------------------------------------------------------------------

Outcome invariances() {
  Outcome o;
  Rng rng(0x1a7);
  double hu_translate = 0.0, hu_rotate = 0.0, hu_direct = 0.0;
  for (int n = 0; n < 50; ++n) {
    std::vector<Cell> blob;
    const double a = rng.uniform(3, 12), b = rng.uniform(2, 8), th = rng.uniform(0, 3.14);
    for (int y = -15; y <= 15; ++y) {
      for (int x = -15; x <= 15; ++x) {
        const double u = x * std::cos(th) + y * std::sin(th), v = -x * std::sin(th) + y * std::cos(th);
        if (u * u / (a * a) + v * v / (b * b) <= 1.0 + 0.3 * std::sin(3 * std::atan2(v, u))) blob.push_back({x + 20, y + 20});
      }
    }
    std::vector<Cell> moved, rotated;
    const int dx = rng.uniform_int(-500, 500), dy = rng.uniform_int(-500, 500);
    for (const Cell& c : blob) {
      moved.push_back({c.x + dx, c.y + dy});
      rotated.push_back({-c.y, c.x});
    }
    const auto h = hu_moments(blob), hm = hu_moments(moved), hr = hu_moments(rotated);
    const auto hd = oracle::hu_direct(blob);
    for (int k = 0; k < 7; ++k) {
      hu_translate = std::max(hu_translate, std::abs(h[k] - hm[k]));
      hu_rotate = std::max(hu_rotate, std::abs(h[k] - hr[k]));
      hu_direct = std::max(hu_direct, std::abs(h[k] - hd[k]));
    }
  }
  o.add("max hu change under translation", hu_translate, "<=", 1e-10);
  o.add("max hu change under 90 degree rotation", hu_rotate, "<=", 1e-10);
  o.add("max |hu - direct moments|", hu_direct, "<=", 1e-10);

  std::size_t auc_changes = 0;
  for (int n = 0; n < 100; ++n) {
    std::vector<double> s(60), t(60), u(60);
    std::vector<int> l(60);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = std::round(rng.normal() * 5) / 5;
      l[i] = static_cast<int>(i % 2);
      t[i] = std::exp(s[i]);
      u[i] = 3 * s[i] * s[i] * s[i] + 7;
    }
    const double base = roc_auc(s, l).auc;
    auc_changes += roc_auc(t, l).auc != base;
    auc_changes += roc_auc(u, l).auc != base;
  }
  o.add("auc changes under monotone transforms", static_cast<double>(auc_changes), "==", 0);

  std::size_t bag_changes = 0;
  Vectors train(300, std::vector<double>(16));
  for (auto& row : train) {
    for (double& v : row) v = rng.normal();
  }
  const BagOfFeaturesModel bag = fit_bag_of_features(train, 20, 3);
  for (int n = 0; n < 20; ++n) {
    Vectors slide(5 + rng.uniform_index(60), std::vector<double>(16));
    for (auto& row : slide) {
      for (double& v : row) v = rng.normal();
    }
    const std::vector<double> before = bag.histogram(slide);
    rng.shuffle(std::span<std::vector<double>>(slide));
    bag_changes += bag.histogram(slide) != before;
  }
  o.add("bag-of-features changes under mitosis permutation", static_cast<double>(bag_changes), "==", 0);

  std::size_t ppm_changes = 0;
  const fs::path tmp = fs::temp_directory_path() / "prolif_acceptance_roundtrip.ppm";
  for (int n = 0; n < 10; ++n) {
    RasterImage image(rng.uniform_int(1, 64), rng.uniform_int(1, 64), n % 2 ? 3 : 1);
    for (std::uint8_t& v : image.data()) v = static_cast<std::uint8_t>(rng.uniform_index(256));
    ppm_changes += !(decode_pnm(encode_pnm(image)) == image);
    write_ppm(image, tmp);
    ppm_changes += !(read_ppm(tmp) == image);
  }
  fs::remove(tmp);
  o.add("ppm round-trip differences", static_cast<double>(ppm_changes), "==", 0);
  return o;
}

// --- 5-7: pipeline runs ----------------------------------------------------------------

int run_tool(const std::vector<std::string>& args) {
  std::ostringstream out;
  const int code = cli::run_cli(args, out);
  if (code != 0) std::cerr << out.str();
  return code;
}

struct FullRun {
  fs::path dir;
  double seconds = 0.0;
  int code = -1;
};

const FullRun& full_run(const fs::path& work) {
  static FullRun run;
  if (run.code >= 0) return run;
  run.dir = work / "e2e";
  fs::remove_all(run.dir);
  const auto start = std::chrono::steady_clock::now();
  run.code = run_tool({"--seed", "7", "--jobs", "1", "--out-dir", run.dir.string(), "--log-level", "warn", "pipeline"});
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

double json_number(const Json& j, const std::vector<std::string>& path) {
  const Json* node = &j;
  for (const std::string& key : path) {
    if (!node->contains(key) || (*node)[key].is_null()) return std::nan("");
    node = &(*node)[key];
  }
  return node->get<double>();
}

Outcome end_to_end(const fs::path& work) {
  Outcome o;
  const FullRun& run = full_run(work);
  o.add("pipeline exit code", run.code, "==", 0);
  if (run.code != 0) return o;
  const Json e = read_json(run.dir / "evaluation.json");
  o.add("tumor heatmap AUC", json_number(e, {"detection", "tumor_heatmap_auc"}), ">=", 0.95);
  o.add("mitosis detection F1", json_number(e, {"detection", "mitosis_f1"}), ">=", 0.8);
  o.add("5-fold grade accuracy", json_number(e, {"grade", "accuracy"}), ">=", 0.85);
  o.add("Spearman rho, predicted vs planted score", json_number(e, {"score", "spearman"}), ">=", 0.9);
  std::map<std::string, double> p;
  for (const Json& row : e.at("biomarkers")) p[row.at("name").get<std::string>()] = row.at("p").get<double>();
  o.add("p(bio_mitosis_count)", p.count("bio_mitosis_count") ? p["bio_mitosis_count"] : 1.0, "<", 0.005);
  o.add("p(bio_mitosis_density)", p.count("bio_mitosis_density") ? p["bio_mitosis_density"] : 1.0, "<", 0.005);
  o.add("pipeline seconds", run.seconds, "<=", 900);
  return o;
}

Outcome two_stage(const fs::path& work) {
  Outcome o;
  const FullRun& run = full_run(work);
  o.add("pipeline exit code", run.code, "==", 0);
  if (run.code != 0) return o;
  for (const std::string kind : {"tumor", "mitosis"}) {
    const PatchDataset s1 = PatchDataset::from_json(read_json(run.dir / "models" / (kind + "_dataset_stage1.json")));
    const PatchDataset s2 = PatchDataset::from_json(read_json(run.dir / "models" / (kind + "_dataset_stage2.json")));
    using Key = std::tuple<std::string, std::string, int, int>;
    std::set<Key> positives2;
    for (const PatchEntry& e : s2.entries) {
      if (e.label == 1) positives2.insert({e.slide, e.level, e.x, e.y});
    }
    std::size_t missing = 0;
    for (const PatchEntry& e : s1.entries) {
      if (e.label == 1) missing += !positives2.count({e.slide, e.level, e.x, e.y});
    }
    o.add(kind + ": stage-1 positives missing from stage 2", static_cast<double>(missing), "==", 0);
    const Json report = read_json(run.dir / "models" / (kind + "_report.json"));
    const double a1 = json_number(report, {"stage1", "validation_auc"});
    const double a2 = json_number(report, {"stage2", "validation_auc"});
    o.add(kind + ": stage-2 validation AUC - stage-1 AUC (stage-1 " + format(a1) + ")", a2 - a1, ">=", -0.02);
  }
  return o;
}

std::vector<std::string> tree_listing(const fs::path& root) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), root).string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::size_t tree_differences(const fs::path& a, const fs::path& b) {
  const auto fa = tree_listing(a), fb = tree_listing(b);
  if (fa != fb) return std::max(fa.size(), fb.size());
  std::size_t diff = 0;
  for (const std::string& f : fa) diff += read_file(a / f) != read_file(b / f);
  return diff;
}

Outcome determinism(const fs::path& work) {
  Outcome o;
  const FullRun& base = full_run(work);
  o.add("baseline exit code", base.code, "==", 0);
  if (base.code != 0) return o;
  const fs::path again = work / "det_jobs1", wide = work / "det_jobs8";
  auto run = [&](const fs::path& out, const std::string& jobs) {
    fs::remove_all(out);
    return run_tool({"--seed", "7", "--jobs", jobs, "--out-dir", out.string(), "--log-level", "warn", "pipeline"});
  };
  const int ca = run(again, "1"), cb = run(wide, "8");
  o.add("exit codes (sum)", ca + cb, "==", 0);
  if (ca + cb != 0) return o;
  o.add("files in the run", static_cast<double>(tree_listing(base.dir).size()), ">=", 1);
  o.add("differing files, repeated run", static_cast<double>(tree_differences(base.dir, again)), "==", 0);
  o.add("differing files, --jobs 1 vs --jobs 8", static_cast<double>(tree_differences(base.dir, wide)), "==", 0);
  return o;
}

// --- 8: Wilson interval -----------------------------------------------------------------

Outcome wilson() {
  Outcome o;
  const Interval ci = wilson_interval(360, 500);
  const Interval direct = oracle::wilson_direct(360, 500, 1.96);
  o.add("|lower - 0.67|", std::abs(ci.lower - 0.67), "<=", 0.01);
  o.add("|upper - 0.76|", std::abs(ci.upper - 0.76), "<=", 0.01);
  o.add("|interval - closed form|", std::max(std::abs(ci.lower - direct.lower), std::abs(ci.upper - direct.upper)),
        "<=", 1e-12);
  o.note = "(" + format(ci.lower) + ", " + format(ci.upper) + ")";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria", "prolif_acceptance"};
  std::vector<int> selected;
  std::string work = "acceptance_work";
  app.add_option("--criteria", selected, "criterion numbers (default: all)")->delimiter(',')->check(CLI::Range(1, 8));
  app.add_option("--work-dir", work, "scratch directory for pipeline runs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};
  fs::create_directories(work);

  struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const fs::path dir = work;
  const std::vector<Criterion> criteria{
      {1, "fcn heatmap equals sliding window", 60, fcn_equivalence},
      {2, "gradient correctness", 60, gradient_checks},
      {3, "oracle equivalences", 300, oracle_equivalences},
      {4, "invariance suite", 60, invariances},
      {5, "end-to-end synthetic experiment", 0, [&] { return end_to_end(dir); }},
      {6, "two-stage training", 0, [&] { return two_stage(dir); }},
      {7, "determinism", 0, [&] { return determinism(dir); }},
      {8, "Wilson interval for accuracy 0.72, n = 500", 0, wilson},
  };

  bool all_pass = true;
  for (const Criterion& c : criteria) {
    if (std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    std::string error;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0) outcome.add("seconds", seconds, "<", c.budget_seconds);
    bool pass = error.empty() && !outcome.checks.empty();
    std::ostringstream detail;
    for (const Check& k : outcome.checks) {
      pass = pass && k.ok();
      detail << (detail.tellp() > 0 ? "; " : "") << k.what << " = " << format(k.value) << " (" << k.op << ' '
             << format(k.limit) << (k.ok() ? "" : ", FAILED") << ')';
    }
    if (!error.empty()) detail << "error: " << error;
    if (!outcome.note.empty()) detail << "; " << outcome.note;
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.name << " [" << std::fixed
              << std::setprecision(1) << seconds << " s]  " << std::defaultfloat << detail.str() << std::endl;
    all_pass = all_pass && pass;
  }
  return all_pass ? 0 : 1;
}
