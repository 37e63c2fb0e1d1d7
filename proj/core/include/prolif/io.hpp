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

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace prolif {

using Json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);

/// Writes the whole file, creating parent directories as needed.
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Parses JSON and rejects syntax errors and duplicate object keys.
Json parse_json(std::string_view text, std::string_view what);

Json read_json(const std::filesystem::path& path);

/// Stable pretty-printed form (sorted keys, 2-space indent, trailing newline).
void write_json(const std::filesystem::path& path, const Json& value);

/// 64-bit FNV-1a; used for spec and config fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace prolif
