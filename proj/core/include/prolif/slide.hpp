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

// Per-slide annotation records and their JSON form.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "prolif/geometry.hpp"
#include "prolif/io.hpp"

namespace prolif {

struct SlideRecord {
  std::string id;
  std::filesystem::path pyramid_path;  // manifest.json
  std::vector<Polygon> tumors;         // level-0 pixel coordinates
  std::vector<Point> mitoses;          // level-0 pixel coordinates
  std::optional<int> grade;            // 0..2
  std::optional<double> molecular_score;

  /// Throws kInvalidArgument unless grade is in range and at least one label exists.
  void validate() const;
};

/// {tumors: [[[x,y],...],...], mitoses: [[x,y],...], grade, molecular_score}
Json annotations_to_json(const SlideRecord& record);
SlideRecord annotations_from_json(const Json& j, std::string id,
                                  std::filesystem::path pyramid_path);

/// Reads <dir>/annotations.json (or `file`) with the pyramid at <dir>/manifest.json.
SlideRecord load_slide(const std::filesystem::path& dir,
                       const std::string& file = "annotations.json");

/// Slide directories under `corpus` (one per subdirectory holding a manifest), sorted by name.
std::vector<std::filesystem::path> list_slide_dirs(const std::filesystem::path& corpus);

}  // namespace prolif
