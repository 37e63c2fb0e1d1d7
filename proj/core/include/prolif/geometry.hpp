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

#pragma once

#include <vector>

namespace prolif {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;  // half-open [x0,x1) x [y0,y1)

  bool contains(const Point& p) const { return p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1; }
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

/// Simple (non self-intersecting) closed polygon; the closing edge is implicit.
using Polygon = std::vector<Point>;

/// Even-odd rule. Points exactly on an edge may fall on either side.
bool point_in_polygon(const Polygon& polygon, const Point& p);

double polygon_area(const Polygon& polygon);
Box bounding_box(const Polygon& polygon);

/// True when the polygon interior and the axis-aligned rectangle overlap.
bool polygon_intersects_box(const Polygon& polygon, const Box& box);

/// Calls fill(y, x_begin, x_end) for every row span of pixels whose centers
/// (x + 0.5, y + 0.5) lie inside the polygon, clipped to [0,width)x[0,height).
template <typename Fill>
void scanline_fill(const Polygon& polygon, int width, int height, Fill&& fill);

double distance(const Point& a, const Point& b);

/// Distance from p to the polygon boundary.
double distance_to_boundary(const Polygon& polygon, const Point& p);

}  // namespace prolif

#include "prolif/detail/scanline.hpp"
