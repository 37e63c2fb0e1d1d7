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

#include "prolif/slide.hpp"

#include <algorithm>

#include "prolif/error.hpp"

namespace prolif {

void SlideRecord::validate() const {
  if (grade) {
    require(*grade >= 0 && *grade <= 2, ErrorKind::kInvalidArgument,
            id + ": grade must be 0, 1 or 2");
  }
  require(grade || molecular_score || !tumors.empty() || !mitoses.empty(),
          ErrorKind::kInvalidArgument, id + ": slide carries no label");
}

namespace {

Json point_json(const Point& p) { return Json::array({p.x, p.y}); }

Point point_from(const Json& j, const std::string& where) {
  require(j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number(), ErrorKind::kFormat,
          where + ": points must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

Json annotations_to_json(const SlideRecord& record) {
  Json tumors = Json::array();
  for (const Polygon& poly : record.tumors) {
    Json pts = Json::array();
    for (const Point& p : poly) pts.push_back(point_json(p));
    tumors.push_back(std::move(pts));
  }
  Json mitoses = Json::array();
  for (const Point& p : record.mitoses) mitoses.push_back(point_json(p));
  Json j{{"tumors", tumors}, {"mitoses", mitoses}};
  j["grade"] = record.grade ? Json(*record.grade) : Json(nullptr);
  j["molecular_score"] = record.molecular_score ? Json(*record.molecular_score) : Json(nullptr);
  return j;
}

SlideRecord annotations_from_json(const Json& j, std::string id,
                                  std::filesystem::path pyramid_path) {
  SlideRecord r;
  r.id = std::move(id);
  r.pyramid_path = std::move(pyramid_path);
  require(j.is_object(), ErrorKind::kFormat, r.id + ": annotations must be an object");
  if (j.contains("tumors")) {
    for (const Json& poly : j["tumors"]) {
      Polygon polygon;
      for (const Json& p : poly) polygon.push_back(point_from(p, r.id));
      require(polygon.size() >= 3, ErrorKind::kFormat, r.id + ": tumor polygon needs 3 vertices");
      r.tumors.push_back(std::move(polygon));
    }
  }
  if (j.contains("mitoses")) {
    for (const Json& p : j["mitoses"]) r.mitoses.push_back(point_from(p, r.id));
  }
  if (j.contains("grade") && !j["grade"].is_null()) r.grade = j["grade"].get<int>();
  if (j.contains("molecular_score") && !j["molecular_score"].is_null()) {
    r.molecular_score = j["molecular_score"].get<double>();
  }
  r.validate();
  return r;
}

SlideRecord load_slide(const std::filesystem::path& dir, const std::string& file) {
  const auto path = dir / file;
  if (!std::filesystem::exists(path)) {
    fail(ErrorKind::kDependency, "missing annotations " + path.string());
  }
  return annotations_from_json(read_json(path), dir.filename().string(), dir / "manifest.json");
}

std::vector<std::filesystem::path> list_slide_dirs(const std::filesystem::path& corpus) {
  if (!std::filesystem::is_directory(corpus)) {
    fail(ErrorKind::kDependency, "missing corpus directory " + corpus.string());
  }
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(corpus)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest.json")) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace prolif
