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

#include "prolif/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "prolif/error.hpp"
#include "prolif/random.hpp"

namespace prolif {

void MitosisInstance::validate() const {
  require(!mask.empty(), ErrorKind::kInvalidArgument, "mitosis instance has an empty mask");
  require(deep.size() == static_cast<std::size_t>(kDeepLength), ErrorKind::kInvalidArgument,
          "mitosis deep vector has the wrong length");
}

// --- shape primitives -------------------------------------------------------------

namespace {

struct CentralMoments {
  double m00 = 0.0, xc = 0.0, yc = 0.0;
  double mu20 = 0.0, mu02 = 0.0, mu11 = 0.0;
  double mu30 = 0.0, mu03 = 0.0, mu21 = 0.0, mu12 = 0.0;
};

CentralMoments central_moments(std::span<const Cell> pixels) {
  CentralMoments m;
  m.m00 = static_cast<double>(pixels.size());
  if (pixels.empty()) return m;
  for (const Cell& c : pixels) {
    m.xc += c.x;
    m.yc += c.y;
  }
  m.xc /= m.m00;
  m.yc /= m.m00;
  for (const Cell& c : pixels) {
    const double dx = c.x - m.xc, dy = c.y - m.yc;
    m.mu20 += dx * dx;
    m.mu02 += dy * dy;
    m.mu11 += dx * dy;
    m.mu30 += dx * dx * dx;
    m.mu03 += dy * dy * dy;
    m.mu21 += dx * dx * dy;
    m.mu12 += dx * dy * dy;
  }
  return m;
}

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double hull_area(const std::vector<Point>& hull) {
  if (hull.size() < 3) return 0.0;
  return polygon_area(hull);
}

}  // namespace

std::array<double, 7> hu_moments(std::span<const Cell> pixels) {
  std::array<double, 7> h{};
  if (pixels.empty()) return h;
  const CentralMoments m = central_moments(pixels);
  auto eta = [&](double mu, int order) { return mu / std::pow(m.m00, 1.0 + order / 2.0); };
  const double n20 = eta(m.mu20, 2), n02 = eta(m.mu02, 2), n11 = eta(m.mu11, 2);
  const double n30 = eta(m.mu30, 3), n03 = eta(m.mu03, 3), n21 = eta(m.mu21, 3), n12 = eta(m.mu12, 3);
  const double a = n30 + n12, b = n21 + n03;
  h[0] = n20 + n02;
  h[1] = (n20 - n02) * (n20 - n02) + 4.0 * n11 * n11;
  h[2] = (n30 - 3 * n12) * (n30 - 3 * n12) + (3 * n21 - n03) * (3 * n21 - n03);
  h[3] = a * a + b * b;
  h[4] = (n30 - 3 * n12) * a * (a * a - 3 * b * b) + (3 * n21 - n03) * b * (3 * a * a - b * b);
  h[5] = (n20 - n02) * (a * a - b * b) + 4 * n11 * a * b;
  h[6] = (3 * n21 - n03) * a * (a * a - 3 * b * b) - (n30 - 3 * n12) * b * (3 * a * a - b * b);
  return h;
}

std::vector<Point> convex_hull(std::vector<Point> points) {
  std::sort(points.begin(), points.end(),
            [](const Point& a, const Point& b) { return std::tie(a.x, a.y) < std::tie(b.x, b.y); });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() < 3) return points;
  std::vector<Point> hull(2 * points.size());
  std::size_t k = 0;
  for (const Point& p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  return hull;
}

RegionProps region_props(std::span<const Cell> pixels) {
  RegionProps r;
  if (pixels.empty()) return r;
  int x0 = pixels[0].x, x1 = x0, y0 = pixels[0].y, y1 = y0;
  for (const Cell& c : pixels) {
    x0 = std::min(x0, c.x);
    x1 = std::max(x1, c.x);
    y0 = std::min(y0, c.y);
    y1 = std::max(y1, c.y);
  }
  const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(bw) * bh, 0);
  for (const Cell& c : pixels) grid[static_cast<std::size_t>(c.y - y0) * bw + (c.x - x0)] = 1;
  auto member = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < bw && y < bh && grid[static_cast<std::size_t>(y) * bw + x];
  };
  r.area = static_cast<double>(pixels.size());
  for (const Cell& c : pixels) {
    const int x = c.x - x0, y = c.y - y0;
    r.perimeter += !member(x - 1, y) + !member(x + 1, y) + !member(x, y - 1) + !member(x, y + 1);
  }
  const CentralMoments m = central_moments(pixels);
  const double a = m.mu20 / m.m00, b = m.mu02 / m.m00, c = m.mu11 / m.m00;
  const double root = std::sqrt((a - b) * (a - b) + 4.0 * c * c);
  const double l1 = (a + b + root) / 2.0, l2 = std::max(0.0, (a + b - root) / 2.0);
  r.eccentricity = l1 > 0.0 ? std::sqrt(std::max(0.0, 1.0 - l2 / l1)) : 0.0;

  std::vector<Point> centers;
  centers.reserve(pixels.size());
  for (const Cell& p : pixels) centers.push_back({static_cast<double>(p.x), static_cast<double>(p.y)});
  const std::vector<Point> hull = convex_hull(centers);
  if (hull.size() < 3) {
    r.solidity = 1.0;
  } else {
    std::size_t inside = 0;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Point p{static_cast<double>(x), static_cast<double>(y)};
        bool in = true;
        for (std::size_t i = 0; i < hull.size() && in; ++i) {
          in = cross(hull[i], hull[(i + 1) % hull.size()], p) >= -1e-9;
        }
        inside += in;
      }
    }
    r.solidity = r.area / static_cast<double>(inside);
  }
  r.extent = r.area / (static_cast<double>(bw) * bh);
  r.equivalent_diameter = std::sqrt(4.0 * r.area / std::numbers::pi);
  return r;
}

// --- statistics helpers -----------------------------------------------------------

Moments sample_moments(std::span<const double> values) {
  Moments m;
  if (values.empty()) return m;
  const double n = static_cast<double>(values.size());
  for (double v : values) m.mean += v;
  m.mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - m.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  m.std = std::sqrt(m2);
  if (m2 > 0.0) {
    m.valid = true;
    m.skewness = m3 / std::pow(m2, 1.5);
    m.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

double shannon_entropy(std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double w : weights) {
    if (w > 0.0) {
      const double p = w / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

namespace {

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) { return sample_moments(v).std; }

/// Nearest-neighbor distance of every point (n >= 2).
std::vector<double> nearest_neighbor_distances(std::span<const Point> points) {
  std::vector<double> out;
  if (points.size() < 2) return out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (i != j) best = std::min(best, distance(points[i], points[j]));
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace

// --- biological block -------------------------------------------------------------

namespace {

const std::vector<std::string> kPrimitiveNames = {
    "area",  "perimeter", "eccentricity", "solidity", "extent",         "equivalent_diameter",
    "hu1",   "hu2",       "hu3",          "hu4",      "hu5",            "hu6",
    "hu7",   "intensity_mean", "intensity_std", "intensity_min", "intensity_max"};

const std::vector<std::string> kPatchNames = {
    "mitosis_count",      "mitosis_density",       "mitosis_nn_mean",    "mitosis_nn_std",
    "mitosis_nn_valid",   "mitosis_valid",         "nuclei_count",       "nuclei_density",
    "nucleus_area_mean",  "nucleus_area_std",      "mitosis_nuclei_ratio", "patch_intensity_mean",
    "patch_intensity_std", "patch_dark_fraction",  "mitosis_prob_mean",  "mitosis_prob_max"};

constexpr int kDarkLevel = 100;

}  // namespace

const std::vector<std::string>& biological_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const std::string& p : kPrimitiveNames) {
      n.push_back("bio_mitosis_" + p + "_mean");
      n.push_back("bio_mitosis_" + p + "_std");
    }
    for (const std::string& p : kPatchNames) n.push_back("bio_" + p);
    return n;
  }();
  return names;
}

std::vector<double> biological_features(const RasterImage& patch, std::span<const Nucleus> mitoses,
                                        std::span<const Nucleus> nuclei, std::span<const double> probs) {
  require(patch.channels() == 3, ErrorKind::kInvalidArgument, "biological features need an RGB patch");
  const RasterImage gray = to_grayscale(patch);
  const std::size_t P = kPrimitiveNames.size();
  std::vector<std::vector<double>> prims(P);
  for (const Nucleus& m : mitoses) {
    const RegionProps r = region_props(m.pixels);
    const std::array<double, 7> hu = hu_moments(m.pixels);
    std::vector<double> intensity;
    intensity.reserve(m.pixels.size());
    for (const Cell& c : m.pixels) intensity.push_back(gray.at(c.x, c.y, 0));
    const double values[] = {r.area,   r.perimeter, r.eccentricity, r.solidity, r.extent,
                             r.equivalent_diameter, hu[0], hu[1], hu[2], hu[3], hu[4], hu[5], hu[6],
                             mean_of(intensity), std_of(intensity),
                             *std::min_element(intensity.begin(), intensity.end()),
                             *std::max_element(intensity.begin(), intensity.end())};
    for (std::size_t i = 0; i < P; ++i) prims[i].push_back(values[i]);
  }
  std::vector<double> out;
  out.reserve(kBiologicalCount);
  for (std::size_t i = 0; i < P; ++i) {
    out.push_back(mean_of(prims[i]));
    out.push_back(std_of(prims[i]));
  }
  const double mpx = static_cast<double>(patch.width()) * patch.height() / 1e6;
  std::vector<Point> centers;
  for (const Nucleus& m : mitoses) centers.push_back(m.centroid);
  const std::vector<double> nn = nearest_neighbor_distances(centers);
  std::vector<double> areas;
  for (const Nucleus& n : nuclei) areas.push_back(static_cast<double>(n.area));
  std::vector<double> intensities;
  intensities.reserve(gray.data().size());
  std::size_t dark = 0;
  for (std::uint8_t v : gray.data()) {
    intensities.push_back(v);
    dark += v < kDarkLevel;
  }
  const double count = static_cast<double>(mitoses.size());
  out.push_back(count);
  out.push_back(count / mpx);
  out.push_back(mean_of(nn));
  out.push_back(std_of(nn));
  out.push_back(nn.empty() ? 0.0 : 1.0);
  out.push_back(mitoses.empty() ? 0.0 : 1.0);
  out.push_back(static_cast<double>(nuclei.size()));
  out.push_back(static_cast<double>(nuclei.size()) / mpx);
  out.push_back(mean_of(areas));
  out.push_back(std_of(areas));
  out.push_back(nuclei.empty() ? 0.0 : count / static_cast<double>(nuclei.size()));
  out.push_back(mean_of(intensities));
  out.push_back(std_of(intensities));
  out.push_back(static_cast<double>(dark) / static_cast<double>(intensities.size()));
  out.push_back(mean_of(probs));
  out.push_back(probs.empty() ? 0.0 : *std::max_element(probs.begin(), probs.end()));
  return out;
}

// --- architectural block ----------------------------------------------------------

const std::vector<std::string>& architectural_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n = {
        "arch_total_count",     "arch_count_per_tissue_mpx", "arch_occupied_fraction",
        "arch_grid_mean",       "arch_grid_std",             "arch_grid_skewness",
        "arch_grid_kurtosis",   "arch_grid_entropy",         "arch_grid_moments_valid",
        "arch_quadrat_chi2",    "arch_quadrat_vmr",          "arch_grid_max_count",
        "arch_grid_max_fraction", "arch_tissue_cell_fraction", "arch_tissue_grid_mean",
        "arch_tissue_grid_std", "arch_tissue_grid_entropy_norm", "arch_nn_mean",
        "arch_nn_std",          "arch_nn_min",               "arch_nn_max",
        "arch_nn_median",       "arch_nn_valid",             "arch_clark_evans",
        "arch_ripley_k_128",    "arch_ripley_k_256",         "arch_ripley_k_512",
        "arch_ripley_l_128",    "arch_ripley_l_256",         "arch_ripley_l_512"};
    for (const char* axis : {"row", "col"}) {
      for (const char* stat : {"mean", "std", "skewness", "kurtosis", "entropy"}) {
        n.push_back(std::string("arch_") + axis + "_profile_" + stat);
      }
    }
    for (const char* s : {"arch_centroid_x", "arch_centroid_y", "arch_spread"}) n.push_back(s);
    for (const char* g : {"4", "8"}) {
      for (const char* stat : {"occupied_fraction", "std", "entropy"}) {
        n.push_back(std::string("arch_grid") + g + "_" + stat);
      }
    }
    for (const char* s :
         {"arch_tissue_area_mpx", "arch_tissue_bbox_width", "arch_tissue_bbox_height",
          "arch_cluster_count", "arch_cluster_mean_size", "arch_cluster_largest_fraction",
          "arch_cluster_singleton_fraction", "arch_hull_area_fraction",
          "arch_mean_distance_to_tissue_centroid", "arch_grid_gini", "arch_grid_cv"}) {
      n.push_back(s);
    }
    return n;
  }();
  return names;
}

namespace {

struct Grid {
  int g = 0;
  std::vector<double> counts;
};

Grid grid_counts(std::span<const Point> points, const Box& bbox, int g) {
  Grid grid{g, std::vector<double>(static_cast<std::size_t>(g) * g, 0.0)};
  for (const Point& p : points) {
    const int gx = std::clamp(static_cast<int>(std::floor((p.x - bbox.x0) / bbox.width() * g)), 0, g - 1);
    const int gy = std::clamp(static_cast<int>(std::floor((p.y - bbox.y0) / bbox.height() * g)), 0, g - 1);
    grid.counts[static_cast<std::size_t>(gy) * g + gx] += 1.0;
  }
  return grid;
}

double occupied_fraction(const Grid& grid) {
  const auto occupied = std::count_if(grid.counts.begin(), grid.counts.end(), [](double c) { return c > 0; });
  return static_cast<double>(occupied) / static_cast<double>(grid.counts.size());
}

double gini(std::vector<double> values) {
  const double total = std::accumulate(values.begin(), values.end(), 0.0);
  if (total <= 0.0) return 0.0;
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double weighted = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) weighted += (static_cast<double>(i) + 1.0) * values[i];
  return 2.0 * weighted / (n * total) - (n + 1.0) / n;
}

/// Weighted moments of positions (i + 0.5) / n with the given weights.
void profile_stats(std::span<const double> weights, std::vector<double>& out) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (total <= 0.0) {
    out.insert(out.end(), 5, 0.0);
    return;
  }
  const double n = static_cast<double>(weights.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) mean += weights[i] * (i + 0.5) / n;
  mean /= total;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double d = (i + 0.5) / n - mean;
    m2 += weights[i] * d * d;
    m3 += weights[i] * d * d * d;
    m4 += weights[i] * d * d * d * d;
  }
  m2 /= total;
  m3 /= total;
  m4 /= total;
  out.push_back(mean);
  out.push_back(std::sqrt(m2));
  out.push_back(m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0);
  out.push_back(m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0);
  out.push_back(shannon_entropy(weights));
}

std::vector<std::size_t> cluster_sizes(std::span<const Point> points, double link) {
  std::vector<std::size_t> parent(points.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      if (distance(points[i], points[j]) <= link) {
        const std::size_t a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
    }
  }
  std::map<std::size_t, std::size_t> sizes;
  for (std::size_t i = 0; i < points.size(); ++i) ++sizes[find(i)];
  std::vector<std::size_t> out;
  for (const auto& [root, size] : sizes) out.push_back(size);
  return out;
}

}  // namespace

std::vector<double> architectural_features(std::span<const Point> points, const BinaryMask& tissue,
                                           const ArchitecturalOptions& options) {
  require(options.grid >= 1, ErrorKind::kInvalidArgument, "architectural grid must be positive");
  const double f = tissue.downsample_factor;
  int mx0 = tissue.width, my0 = tissue.height, mx1 = -1, my1 = -1;
  double tissue_px = 0.0, tcx = 0.0, tcy = 0.0;
  for (int y = 0; y < tissue.height; ++y) {
    for (int x = 0; x < tissue.width; ++x) {
      if (!tissue.at(x, y)) continue;
      mx0 = std::min(mx0, x);
      mx1 = std::max(mx1, x);
      my0 = std::min(my0, y);
      my1 = std::max(my1, y);
      tissue_px += 1.0;
      tcx += (x + 0.5) * f;
      tcy += (y + 0.5) * f;
    }
  }
  require(tissue_px > 0.0, ErrorKind::kInvalidArgument, "architectural features need a non-empty tissue mask");
  const Box bbox{mx0 * f, my0 * f, (mx1 + 1) * f, (my1 + 1) * f};
  const double area = tissue_px * f * f;  // level-0 pixels
  tcx /= tissue_px;
  tcy /= tissue_px;
  const int G = options.grid;
  const double n = static_cast<double>(points.size());

  std::vector<double> out;
  out.reserve(kArchitecturalCount);
  const Grid grid = grid_counts(points, bbox, G);
  const Moments gm = sample_moments(grid.counts);
  out.push_back(n);
  out.push_back(n / (area / 1e6));
  out.push_back(occupied_fraction(grid));
  out.push_back(gm.mean);
  out.push_back(gm.std);
  out.push_back(gm.skewness);
  out.push_back(gm.kurtosis);
  out.push_back(shannon_entropy(grid.counts));
  out.push_back(gm.valid ? 1.0 : 0.0);
  double chi2 = 0.0;
  if (gm.mean > 0.0) {
    for (double c : grid.counts) chi2 += (c - gm.mean) * (c - gm.mean) / gm.mean;
  }
  out.push_back(chi2);
  out.push_back(gm.mean > 0.0 ? gm.std * gm.std / gm.mean : 0.0);
  const double max_count = *std::max_element(grid.counts.begin(), grid.counts.end());
  out.push_back(max_count);
  out.push_back(n > 0.0 ? max_count / n : 0.0);

  // Grid cells that contain tissue.
  std::vector<std::uint8_t> has_tissue(grid.counts.size(), 0);
  for (int y = my0; y <= my1; ++y) {
    for (int x = mx0; x <= mx1; ++x) {
      if (!tissue.at(x, y)) continue;
      const int gx = std::min(G - 1, (x - mx0) * G / (mx1 - mx0 + 1));
      const int gy = std::min(G - 1, (y - my0) * G / (my1 - my0 + 1));
      has_tissue[static_cast<std::size_t>(gy) * G + gx] = 1;
    }
  }
  std::vector<double> tissue_counts;
  for (std::size_t i = 0; i < grid.counts.size(); ++i) {
    if (has_tissue[i]) tissue_counts.push_back(grid.counts[i]);
  }
  out.push_back(static_cast<double>(tissue_counts.size()) / static_cast<double>(grid.counts.size()));
  out.push_back(mean_of(tissue_counts));
  out.push_back(std_of(tissue_counts));
  out.push_back(tissue_counts.size() > 1
                    ? shannon_entropy(tissue_counts) / std::log(static_cast<double>(tissue_counts.size()))
                    : 0.0);

  std::vector<double> nn = nearest_neighbor_distances(points);
  if (nn.empty()) {
    out.insert(out.end(), {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  } else {
    std::vector<double> sorted = nn;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    const double mean_nn = mean_of(nn);
    out.insert(out.end(), {mean_nn, std_of(nn), sorted.front(), sorted.back(), median, 1.0,
                           mean_nn / (0.5 * std::sqrt(area / n))});
  }
  std::array<double, 3> ripley{};
  if (points.size() >= 2) {
    for (std::size_t r = 0; r < 3; ++r) {
      std::size_t pairs = 0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = 0; j < points.size(); ++j) {
          if (i != j && distance(points[i], points[j]) <= options.ripley_radii[r]) ++pairs;
        }
      }
      ripley[r] = area * static_cast<double>(pairs) / (n * (n - 1.0));
    }
  }
  for (double k : ripley) out.push_back(k);
  for (double k : ripley) out.push_back(std::sqrt(k / std::numbers::pi));

  std::vector<double> rows(G, 0.0), cols(G, 0.0);
  for (int y = 0; y < G; ++y) {
    for (int x = 0; x < G; ++x) {
      rows[y] += grid.counts[static_cast<std::size_t>(y) * G + x];
      cols[x] += grid.counts[static_cast<std::size_t>(y) * G + x];
    }
  }
  profile_stats(rows, out);
  profile_stats(cols, out);

  if (points.empty()) {
    out.insert(out.end(), {0.0, 0.0, 0.0});
  } else {
    double cx = 0.0, cy = 0.0;
    for (const Point& p : points) {
      cx += p.x;
      cy += p.y;
    }
    cx /= n;
    cy /= n;
    double ss = 0.0;
    for (const Point& p : points) ss += (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy);
    const double diagonal = std::hypot(bbox.width(), bbox.height());
    out.insert(out.end(), {(cx - bbox.x0) / bbox.width(), (cy - bbox.y0) / bbox.height(),
                           std::sqrt(ss / n) / diagonal});
  }
  for (int g : {4, 8}) {
    const Grid coarse = grid_counts(points, bbox, g);
    out.push_back(occupied_fraction(coarse));
    out.push_back(std_of(coarse.counts));
    out.push_back(shannon_entropy(coarse.counts));
  }
  out.push_back(area / 1e6);
  out.push_back(bbox.width());
  out.push_back(bbox.height());

  const std::vector<std::size_t> clusters = cluster_sizes(points, options.cluster_link);
  if (clusters.empty()) {
    out.insert(out.end(), {0.0, 0.0, 0.0, 0.0});
  } else {
    const double largest = static_cast<double>(*std::max_element(clusters.begin(), clusters.end()));
    const double singles = static_cast<double>(std::count(clusters.begin(), clusters.end(), std::size_t{1}));
    out.insert(out.end(), {static_cast<double>(clusters.size()), n / static_cast<double>(clusters.size()),
                           largest / n, singles / n});
  }
  out.push_back(hull_area(convex_hull(std::vector<Point>(points.begin(), points.end()))) / area);
  double to_centroid = 0.0;
  for (const Point& p : points) to_centroid += distance(p, {tcx, tcy});
  out.push_back(points.empty() ? 0.0 : to_centroid / n / std::sqrt(area));
  out.push_back(gini(grid.counts));
  out.push_back(gm.mean > 0.0 ? gm.std / gm.mean : 0.0);
  return out;
}

// --- k-means ----------------------------------------------------------------------

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

int nearest_centroid(const Vectors& centroids, std::span<const double> v) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(centroids[c], v);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double inertia(const Vectors& vectors, const Vectors& centroids, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < vectors.size(); ++i) total += squared_distance(vectors[i], centroids[labels[i]]);
  return total;
}

KMeansResult kmeans(const Vectors& vectors, int k, std::uint64_t seed, int max_iterations) {
  require(!vectors.empty(), ErrorKind::kInvalidArgument, "kmeans needs at least one vector");
  require(k >= 1 && max_iterations >= 1, ErrorKind::kInvalidArgument, "kmeans needs k >= 1");
  const std::size_t n = vectors.size(), dim = vectors[0].size();
  for (const auto& v : vectors) {
    require(v.size() == dim, ErrorKind::kInvalidArgument, "kmeans vectors differ in length");
  }
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);
  Rng rng(seed);
  KMeansResult r;

  // k-means++ seeding.
  std::vector<std::uint8_t> chosen(n, 0);
  std::size_t first = rng.uniform_index(n);
  r.centroids.push_back(vectors[first]);
  chosen[first] = 1;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(vectors[i], r.centroids[0]);
  while (r.centroids.size() < kk) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double cumulative = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cumulative += d2[i];
        if (d2[i] > 0.0 && cumulative > u) {
          pick = i;
          break;
        }
      }
      if (pick == n) {
        for (std::size_t i = n; i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (!chosen[i]) pick = i;
      }
    }
    chosen[pick] = 1;
    r.centroids.push_back(vectors[pick]);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(vectors[i], r.centroids.back()));
  }

  // Lloyd iterations.
  std::vector<int> labels(n, -1);
  for (int it = 0; it < max_iterations; ++it) {
    std::vector<int> next(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = nearest_centroid(r.centroids, vectors[i]);
    r.history.push_back(inertia(vectors, r.centroids, next));
    r.iterations = it + 1;
    if (next == labels) break;
    labels = std::move(next);
    if (it + 1 == max_iterations) break;
    Vectors sums(kk, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(kk, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[labels[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[labels[i]][d] += vectors[i][d];
    }
    std::vector<std::uint8_t> reseeded(n, 0);
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] > 0) {
        for (std::size_t d = 0; d < dim; ++d) r.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      }
    }
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (reseeded[i]) continue;
        const double d = squared_distance(vectors[i], r.centroids[labels[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) continue;
      reseeded[far] = 1;
      r.centroids[c] = vectors[far];
    }
  }
  r.labels = std::move(labels);
  r.inertia = inertia(vectors, r.centroids, r.labels);
  return r;
}

// --- bag of features --------------------------------------------------------------

BagOfFeaturesModel fit_bag_of_features(const Vectors& training_vectors, std::size_t bins,
                                       std::uint64_t seed) {
  require(bins >= 1, ErrorKind::kInvalidArgument, "bag of features needs at least one bin");
  BagOfFeaturesModel model;
  model.bins = bins;
  model.seed = seed;
  if (training_vectors.empty()) return model;
  const std::size_t dim = training_vectors[0].size();
  model.mean.assign(dim, 0.0);
  model.scale.assign(dim, 1.0);
  const double n = static_cast<double>(training_vectors.size());
  for (const auto& v : training_vectors) {
    for (std::size_t d = 0; d < dim; ++d) model.mean[d] += v[d];
  }
  for (double& m : model.mean) m /= n;
  for (std::size_t d = 0; d < dim; ++d) {
    double ss = 0.0;
    for (const auto& v : training_vectors) ss += (v[d] - model.mean[d]) * (v[d] - model.mean[d]);
    const double sd = std::sqrt(ss / n);
    model.scale[d] = sd > 0.0 ? sd : 1.0;
  }
  Vectors standardized = training_vectors;
  for (auto& v : standardized) {
    for (std::size_t d = 0; d < dim; ++d) v[d] = (v[d] - model.mean[d]) / model.scale[d];
  }
  model.centroids = kmeans(standardized, static_cast<int>(bins), seed).centroids;
  return model;
}

std::vector<int> BagOfFeaturesModel::assign(const Vectors& vectors) const {
  std::vector<int> labels;
  labels.reserve(vectors.size());
  std::vector<double> z(mean.size());
  for (const auto& v : vectors) {
    require(v.size() == mean.size(), ErrorKind::kInvalidArgument, "bag of features dimension mismatch");
    for (std::size_t d = 0; d < z.size(); ++d) z[d] = (v[d] - mean[d]) / scale[d];
    labels.push_back(nearest_centroid(centroids, z));
  }
  return labels;
}

std::vector<double> BagOfFeaturesModel::raw_histogram(const Vectors& vectors) const {
  std::vector<double> h(bins, 0.0);
  if (vectors.empty() || centroids.empty()) return h;
  for (int label : assign(vectors)) h[static_cast<std::size_t>(label)] += 1.0;
  return h;
}

std::vector<double> BagOfFeaturesModel::histogram(const Vectors& vectors) const {
  std::vector<double> h = raw_histogram(vectors);
  const double total = std::accumulate(h.begin(), h.end(), 0.0);
  if (total > 0.0) {
    for (double& v : h) v /= total;
  }
  return h;
}

std::string BagOfFeaturesModel::encode() const {
  const Json header{{"format", "prolif-bof"}, {"version", 1},
                    {"bins", bins},           {"dims", mean.size()},
                    {"clusters", centroids.size()}, {"seed", seed}};
  std::string out = header.dump() + "\n";
  auto put = [&](const std::vector<double>& values) {
    const std::size_t offset = out.size();
    out.resize(offset + values.size() * sizeof(double));
    std::memcpy(out.data() + offset, values.data(), values.size() * sizeof(double));
  };
  put(mean);
  put(scale);
  for (const auto& c : centroids) put(c);
  return out;
}

BagOfFeaturesModel BagOfFeaturesModel::decode(std::string_view bytes) {
  const std::size_t eol = bytes.find('\n');
  require(eol != std::string_view::npos, ErrorKind::kFormat, "bag of features model: missing header");
  const Json header = parse_json(bytes.substr(0, eol), "bag of features header");
  require(header.value("format", "") == "prolif-bof" && header.value("version", 0) == 1,
          ErrorKind::kFormat, "bag of features model: unsupported format");
  BagOfFeaturesModel m;
  m.bins = header.at("bins").get<std::size_t>();
  m.seed = header.at("seed").get<std::uint64_t>();
  const std::size_t dims = header.at("dims").get<std::size_t>();
  const std::size_t clusters = header.at("clusters").get<std::size_t>();
  const std::string_view body = bytes.substr(eol + 1);
  require(body.size() == (2 + clusters) * dims * sizeof(double), ErrorKind::kFormat,
          "bag of features model: payload size mismatch");
  require(clusters <= m.bins, ErrorKind::kFormat, "bag of features model: more clusters than bins");
  std::size_t offset = 0;
  auto take = [&](std::vector<double>& values) {
    values.resize(dims);
    std::memcpy(values.data(), body.data() + offset, dims * sizeof(double));
    offset += dims * sizeof(double);
  };
  take(m.mean);
  take(m.scale);
  m.centroids.resize(clusters);
  for (auto& c : m.centroids) take(c);
  return m;
}

const std::vector<std::string>& bag_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (std::size_t i = 0; i < kBagBins; ++i) n.push_back("bof_" + std::to_string(i));
    return n;
  }();
  return names;
}

// --- deep vectors and cascade -----------------------------------------------------

std::vector<double> deep_vector(const Network& trunk, const RasterImage& level40, const Point& centroid,
                                int length) {
  constexpr int kWindow = 63;
  const int x = static_cast<int>(std::floor(centroid.x)) - kWindow / 2;
  const int y = static_cast<int>(std::floor(centroid.y)) - kWindow / 2;
  std::vector<double> v = trunk.forward(image_to_tensor(level40, x, y, kWindow, kWindow)).data;
  v.resize(static_cast<std::size_t>(length), 0.0);
  return v;
}

WeightStore train_cascade_head(const NetworkSpec& head, const std::vector<std::vector<Tensor>>& inputs,
                               std::span<const int> grades, std::span<const std::size_t> train,
                               const CascadeConfig& config) {
  require(inputs.size() == grades.size(), ErrorKind::kInvalidArgument, "cascade inputs and grades differ");
  struct Sample {
    std::size_t slide, window;
  };
  std::vector<Sample> samples;
  for (std::size_t s : train) {
    for (std::size_t w = 0; w < inputs[s].size(); ++w) samples.push_back({s, w});
  }
  WeightStore weights = init_weights(head, config.seed);
  if (samples.empty()) return weights;
  SgdState state = make_sgd_state(head);
  constexpr std::size_t kBatch = 8;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 0xca5c + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<Sample>(samples));
    for (std::size_t start = 0; start < samples.size(); start += kBatch) {
      const std::size_t count = std::min(kBatch, samples.size() - start);
      const Network network(head, weights);
      std::vector<LayerParams> sum = zero_gradients(head).layers;
      for (std::size_t k = 0; k < count; ++k) {
        const Sample& s = samples[start + k];
        const int label = grades[s.slide];
        const Gradients g = backward(network, inputs[s.slide][s.window], std::span<const int>(&label, 1));
        for (std::size_t l = 0; l < sum.size(); ++l) {
          for (std::size_t j = 0; j < sum[l].weight.size(); ++j) sum[l].weight.data[j] += g.layers[l].weight.data[j] / count;
          for (std::size_t j = 0; j < sum[l].bias.size(); ++j) sum[l].bias.data[j] += g.layers[l].bias.data[j] / count;
        }
      }
      sgd_step(head, weights, sum, state, config.sgd);
    }
  }
  return weights;
}

std::vector<double> cascade_block(const Network& head, const std::vector<Tensor>& windows) {
  const NetworkSpec& spec = head.spec();
  const std::size_t width = static_cast<std::size_t>(spec.layers[spec.penultimate_layer()].out_channels);
  if (windows.empty()) {
    std::vector<double> out(width, 0.0);
    out.insert(out.end(), 3, 1.0 / 3.0);
    return out;
  }
  const CascadeOutput c = cascade_features_from_trunk(head, windows);
  std::vector<double> out = c.features;
  out.insert(out.end(), c.probs.begin(), c.probs.end());
  return out;
}

std::vector<std::string> cascade_feature_names(int head_width) {
  std::vector<std::string> names;
  for (const char* kind : {"tumor", "mitosis"}) {
    for (int i = 0; i < head_width; ++i) names.push_back(std::string("cascade_") + kind + "_f" + std::to_string(i));
    for (int c = 0; c < 3; ++c) names.push_back(std::string("cascade_") + kind + "_p" + std::to_string(c));
  }
  return names;
}

std::string encode_tensors(const std::vector<Tensor>& tensors) {
  Json shapes = Json::array();
  for (const Tensor& t : tensors) shapes.push_back(t.shape);
  std::string out = Json{{"format", "prolif-tensors"}, {"version", 1}, {"shapes", shapes}}.dump() + "\n";
  for (const Tensor& t : tensors) {
    const std::size_t offset = out.size();
    out.resize(offset + t.data.size() * sizeof(double));
    std::memcpy(out.data() + offset, t.data.data(), t.data.size() * sizeof(double));
  }
  return out;
}

std::vector<Tensor> decode_tensors(std::string_view bytes) {
  const std::size_t eol = bytes.find('\n');
  require(eol != std::string_view::npos, ErrorKind::kFormat, "tensor file: missing header");
  const Json header = parse_json(bytes.substr(0, eol), "tensor file header");
  require(header.value("format", "") == "prolif-tensors" && header.value("version", 0) == 1,
          ErrorKind::kFormat, "tensor file: unsupported format");
  std::vector<Tensor> out;
  std::size_t offset = eol + 1;
  for (const Json& shape : header.at("shapes")) {
    Tensor t(shape.get<std::vector<int>>());
    const std::size_t n = t.data.size() * sizeof(double);
    require(offset + n <= bytes.size(), ErrorKind::kFormat, "tensor file: truncated payload");
    std::memcpy(t.data.data(), bytes.data() + offset, n);
    offset += n;
    out.push_back(std::move(t));
  }
  require(offset == bytes.size(), ErrorKind::kFormat, "tensor file: trailing bytes");
  return out;
}

// --- assembly ---------------------------------------------------------------------

std::vector<std::string> static_feature_names() {
  std::vector<std::string> names = biological_feature_names();
  const auto& a = architectural_feature_names();
  names.insert(names.end(), a.begin(), a.end());
  const auto& b = bag_feature_names();
  names.insert(names.end(), b.begin(), b.end());
  return names;
}

void FeatureVector::validate() const {
  require(names.size() == values.size(), ErrorKind::kInvalidArgument, "feature names and values differ");
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(std::isfinite(values[i]), ErrorKind::kNumeric,
            "feature " + names[i] + " of slide " + slide + " is not finite");
  }
}

FeatureVector assemble_features(const std::string& slide, const std::vector<std::vector<double>>& biological,
                                const std::vector<double>& architectural, const std::vector<double>& bag,
                                const std::vector<double>& cascade, int head_width) {
  require(architectural.size() == kArchitecturalCount && bag.size() == kBagBins, ErrorKind::kInvalidArgument,
          "feature block sizes do not match the schema");
  require(cascade.empty() || cascade.size() == 2 * static_cast<std::size_t>(head_width + 3),
          ErrorKind::kInvalidArgument, "cascade block size does not match the head width");
  FeatureVector fv;
  fv.slide = slide;
  fv.names = static_feature_names();
  std::vector<double> bio(kBiologicalCount, 0.0);
  for (const auto& row : biological) {
    require(row.size() == kBiologicalCount, ErrorKind::kInvalidArgument, "biological block size mismatch");
    for (std::size_t i = 0; i < kBiologicalCount; ++i) bio[i] += row[i] / static_cast<double>(biological.size());
  }
  fv.values = bio;
  fv.values.insert(fv.values.end(), architectural.begin(), architectural.end());
  fv.values.insert(fv.values.end(), bag.begin(), bag.end());
  if (!cascade.empty()) {
    const auto names = cascade_feature_names(head_width);
    fv.names.insert(fv.names.end(), names.begin(), names.end());
    fv.values.insert(fv.values.end(), cascade.begin(), cascade.end());
  }
  fv.validate();
  return fv;
}

std::string features_to_csv(const std::vector<FeatureVector>& rows) {
  std::ostringstream out;
  out.precision(17);
  if (rows.empty()) return {};
  out << "slide";
  for (const auto& n : rows[0].names) out << ',' << n;
  out << '\n';
  for (const auto& r : rows) {
    require(r.names == rows[0].names, ErrorKind::kInvalidArgument, "feature rows use different schemas");
    out << r.slide;
    for (double v : r.values) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::vector<FeatureVector> features_from_csv(std::string_view text) {
  std::vector<FeatureVector> rows;
  std::vector<std::string> names;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (header) {
      require(!cells.empty() && cells[0] == "slide", ErrorKind::kFormat, "feature CSV: bad header");
      names.assign(cells.begin() + 1, cells.end());
      header = false;
      continue;
    }
    require(cells.size() == names.size() + 1, ErrorKind::kFormat, "feature CSV: ragged row");
    FeatureVector fv;
    fv.slide = cells[0];
    fv.names = names;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      try {
        fv.values.push_back(std::stod(cells[i]));
      } catch (const std::exception&) {
        fail(ErrorKind::kFormat, "feature CSV: bad number '" + cells[i] + "'");
      }
    }
    fv.validate();
    rows.push_back(std::move(fv));
  }
  return rows;
}

Json features_to_json(const std::vector<FeatureVector>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"slide", r.slide}, {"schema_version", r.schema_version}, {"names", r.names},
                   {"values", r.values}});
  }
  return out;
}

}  // namespace prolif
