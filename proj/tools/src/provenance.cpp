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

#include "provenance.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

#include "config.hpp"
#include "prolif/error.hpp"

namespace prolif::cli {

namespace {

struct DigestContext {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

  DigestContext() {
    require(ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) == 1, ErrorKind::kDependency,
            "sha256: cannot initialize OpenSSL digest");
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx.get(), data, n); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kDigits[md[i] >> 4]);
      out.push_back(kDigits[md[i] & 15]);
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  DigestContext d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kDependency, "cannot read " + path.string());
  DigestContext d;
  std::vector<char> buffer(1 << 20);
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    d.update(buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

ProvenanceWriter::ProvenanceWriter(std::filesystem::path root, std::string config_hash, std::uint64_t seed)
    : root_(std::move(root)), config_hash_(std::move(config_hash)), seed_(seed) {}

std::string ProvenanceWriter::relative(const std::filesystem::path& path) const {
  const auto rel = std::filesystem::proximate(path, root_);
  const std::string s = rel.generic_string();
  return s.rfind("..", 0) == 0 ? std::filesystem::absolute(path).generic_string() : s;
}

std::string ProvenanceWriter::hash_of(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::kDependency, "missing input " + path.string());
  const auto size = std::filesystem::file_size(path);
  const auto mtime = std::filesystem::last_write_time(path).time_since_epoch().count();
  const std::string key = std::filesystem::absolute(path).string() + "|" + std::to_string(size) + "|" +
                          std::to_string(mtime);
  {
    std::lock_guard lock(mutex_);
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  const std::string h = sha256_file(path);
  std::lock_guard lock(mutex_);
  cache_[key] = h;
  return h;
}

void ProvenanceWriter::record(const std::filesystem::path& output, const std::vector<std::filesystem::path>& inputs) {
  Json in = Json::object();
  for (const auto& p : inputs) in[relative(p)] = hash_of(p);
  const Json sidecar{{"output", relative(output)},
                     {"sha256", hash_of(output)},
                     {"inputs", in},
                     {"config_hash", config_hash_},
                     {"seed", seed_},
                     {"tool_version", kToolVersion}};
  prolif::write_json(output.string() + ".prov.json", sidecar);
}

void ProvenanceWriter::write(const std::filesystem::path& output, std::string_view contents,
                       const std::vector<std::filesystem::path>& inputs) {
  std::filesystem::create_directories(output.parent_path());
  write_file(output, contents);
  record(output, inputs);
}

void ProvenanceWriter::write_json(const std::filesystem::path& output, const Json& value,
                            const std::vector<std::filesystem::path>& inputs) {
  write(output, value.dump(2) + "\n", inputs);
}

}  // namespace prolif::cli
