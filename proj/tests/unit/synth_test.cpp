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

#include <atomic>
#include <set>

#include "prolif/error.hpp"
#include "prolif/geometry.hpp"
#include "prolif/parallel.hpp"
#include "prolif/random.hpp"
#include "prolif/synth.hpp"

namespace prolif {
namespace {

TEST(Random, SeedsAndStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 100; ++s) seen.insert(derive_seed(7, s));
  EXPECT_EQ(seen.size(), 100u);
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  for (int i = 0; i < 1000; ++i) {
    const int v = a.uniform_int(-3, 3);
    EXPECT_GE(v, -3);
    EXPECT_LE(v, 3);
  }
}

TEST(Parallel, EveryIndexOnceForAnyJobCount) {
  for (int jobs : {1, 2, 7}) {
    std::vector<std::atomic<int>> hits(103);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Geometry, PolygonBasics) {
  const Polygon square{{0, 0}, {4, 0}, {4, 4}, {0, 4}};
  EXPECT_DOUBLE_EQ(polygon_area(square), 16.0);
  EXPECT_TRUE(point_in_polygon(square, {1, 1}));
  EXPECT_FALSE(point_in_polygon(square, {5, 1}));
  EXPECT_NEAR(distance_to_boundary(square, {1, 2}), 1.0, 1e-12);
}

SynthConfig small_config() {
  SynthConfig c;
  c.slides = 6;
  return c;
}

TEST(Synth, GradeThresholds) {
  EXPECT_EQ(grade_for_density(5, {20, 40}), 0);
  EXPECT_EQ(grade_for_density(20, {20, 40}), 1);
  EXPECT_EQ(grade_for_density(59, {20, 40}), 2);
}

TEST(Synth, ConfigJsonRoundTripAndValidation) {
  SynthConfig c = small_config();
  c.atypia = 0.5;
  EXPECT_EQ(SynthConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(SynthConfig::from_json(Json{{"slidez", 3}}), Error);
  c.atypia = 3.0;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.density_min = 50;
  c.density_max = 10;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Synth, PlansAreDeterministicAndConsistent) {
  const SynthConfig c = small_config();
  for (int i = 0; i < c.slides; ++i) {
    const SynthTruth t = plan_slide(c, i);
    EXPECT_EQ(t.to_json(), plan_slide(c, i).to_json());
    EXPECT_EQ(SynthTruth::from_json(t.to_json()).to_json(), t.to_json());
    EXPECT_EQ(t.grade, grade_for_density(t.density, c.grade_thresholds));
    EXPECT_EQ(static_cast<int>(t.tumors.size()), c.tumors);
    for (const SynthMitosis& m : t.mitoses) {
      const Polygon& tumor = t.tumors[static_cast<std::size_t>(m.tumor)].polygon;
      EXPECT_TRUE(point_in_polygon(tumor, m.center));
      EXPECT_GE(distance_to_boundary(tumor, m.center), c.mitosis_margin - 1e-9);
    }
    for (std::size_t a = 0; a < t.mitoses.size(); ++a) {
      for (std::size_t b = a + 1; b < t.mitoses.size(); ++b) {
        EXPECT_GE(distance(t.mitoses[a].center, t.mitoses[b].center), c.mitosis_spacing - 1e-9);
      }
    }
  }
  SynthConfig other = c;
  other.seed = 8;
  EXPECT_NE(plan_slide(other, 0).to_json(), plan_slide(c, 0).to_json());
}

TEST(Synth, AnnotationsOmitHiddenTruth) {
  const SynthTruth t = plan_slide(small_config(), 2);
  const SlideRecord record = t.annotations();
  std::size_t annotated = 0;
  for (const SynthMitosis& m : t.mitoses) annotated += m.annotated;
  EXPECT_EQ(record.mitoses.size(), annotated);
  EXPECT_EQ(record.grade.value(), t.grade);
}

TEST(Synth, RenderIsDeterministic) {
  SynthConfig c = small_config();
  c.size = 1024;
  c.tumors = 1;
  c.tumor_radius_min = 100;
  c.tumor_radius_max = 110;
  c.tissue_radius_min = 350;
  c.tissue_radius_max = 400;
  const SynthTruth t = plan_slide(c, 0);
  const RasterImage a = render_slide(c, t, 0);
  EXPECT_EQ(a.width(), 1024);
  EXPECT_EQ(a, render_slide(c, t, 0));
  const ImagePyramid p = make_pyramid(a);
  EXPECT_EQ(p.level(kLevel10x).image.width(), 256);
}

}  // namespace
}  // namespace prolif
