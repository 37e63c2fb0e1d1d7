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

// Provenance sidecars: every artifact gets <file>.prov.json with the content
// hashes of its inputs, the configuration hash, the seed and the tool version.

#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "prolif/io.hpp"

namespace prolif::cli {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

class ProvenanceWriter {
 public:
  ProvenanceWriter(std::filesystem::path root, std::string config_hash, std::uint64_t seed);

  /// Writes `output` and its sidecar. Paths are recorded relative to the root.
  void write(const std::filesystem::path& output, std::string_view contents,
             const std::vector<std::filesystem::path>& inputs);
  void write_json(const std::filesystem::path& output, const Json& value,
                  const std::vector<std::filesystem::path>& inputs);
  /// Sidecar only, for artifacts written by library code.
  void record(const std::filesystem::path& output, const std::vector<std::filesystem::path>& inputs);

  std::string relative(const std::filesystem::path& path) const;

 private:
  std::string hash_of(const std::filesystem::path& path);

  std::filesystem::path root_;
  std::string config_hash_;
  std::uint64_t seed_;
  std::mutex mutex_;
  std::map<std::string, std::string> cache_;  // keyed by path, size and mtime
};

}  // namespace prolif::cli
