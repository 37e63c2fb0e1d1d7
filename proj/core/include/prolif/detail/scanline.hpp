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

#include <algorithm>
#include <cmath>
#include <vector>

namespace prolif {

template <typename Fill>
void scanline_fill(const Polygon& polygon, int width, int height, Fill&& fill) {
  if (polygon.size() < 3) return;
  const Box box = bounding_box(polygon);
  const int y_begin = std::max(0, static_cast<int>(std::floor(box.y0)) - 1);
  const int y_end = std::min(height, static_cast<int>(std::ceil(box.y1)) + 1);
  std::vector<double> crossings;
  for (int y = y_begin; y < y_end; ++y) {
    const double cy = y + 0.5;
    crossings.clear();
    for (std::size_t i = 0, j = polygon.size() - 1; i < polygon.size(); j = i++) {
      const Point& a = polygon[i];
      const Point& b = polygon[j];
      if ((a.y > cy) != (b.y > cy)) {
        crossings.push_back(a.x + (cy - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(crossings.begin(), crossings.end());
    for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
      // Pixel x is inside when crossings[k] < x + 0.5 < crossings[k + 1].
      int x0 = static_cast<int>(std::floor(crossings[k] - 0.5)) + 1;
      int x1 = static_cast<int>(std::ceil(crossings[k + 1] - 0.5));
      x0 = std::max(x0, 0);
      x1 = std::min(x1, width);
      if (x0 < x1) fill(y, x0, x1);
    }
  }
}

}  // namespace prolif
