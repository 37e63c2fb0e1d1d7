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

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "config.hpp"
#include "prolif/error.hpp"
#include "prolif/io.hpp"

namespace prolif {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out;
  const int code = cli::run_cli(args, out);
  return {code, out.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("prolif_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Cli, VersionAndHelpSucceed) {
  EXPECT_EQ(run({"--version"}).code, cli::kExitOk);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST(Cli, UsageErrorsAreConfigErrors) {
  EXPECT_EQ(run({}).code, cli::kExitConfig);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitConfig);
  EXPECT_EQ(run({"--jobs", "0", "synth"}).code, cli::kExitConfig);
  EXPECT_EQ(run({"train"}).code, cli::kExitConfig);
  EXPECT_EQ(run({"train", "--kind", "lymph"}).code, cli::kExitConfig);
  const CliResult r = run({"--config", "/nonexistent/config.json", "synth"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  const Json error = Json::parse(r.out);
  EXPECT_EQ(error.at("error").at("exit_code"), cli::kExitConfig);
}

TEST(Cli, InvalidConfigValueIsAConfigError) {
  const fs::path dir = scratch("badconfig");
  fs::create_directories(dir);
  write_json(dir / "c.json", Json{{"synth", {{"slides", -1}}}});
  EXPECT_EQ(run({"--config", (dir / "c.json").string(), "--out-dir", dir.string(), "synth"}).code, cli::kExitConfig);
  write_file(dir / "broken.json", "{not json");
  EXPECT_EQ(run({"--config", (dir / "broken.json").string(), "synth"}).code, cli::kExitConfig);
  fs::remove_all(dir);
}

TEST(Cli, MissingUpstreamArtifactsAreDependencyErrors) {
  const fs::path dir = scratch("missing");
  for (const char* stage : {"mask", "normalize", "heatmap", "features", "predict", "evaluate"}) {
    const CliResult r = run({"--out-dir", dir.string(), "--log-level", "off", stage});
    EXPECT_EQ(r.code, cli::kExitDependency) << stage << ": " << r.out;
  }
  EXPECT_EQ(run({"--out-dir", dir.string(), "--log-level", "off", "train", "--kind", "tumor"}).code,
            cli::kExitDependency);
  fs::remove_all(dir);
}

TEST(Config, DefaultsFileMatchesBuiltInDefaults) {
  EXPECT_EQ(read_json(PROLIF_DEFAULTS_JSON), cli::PipelineConfig().to_json());
}

TEST(Config, HashIgnoresJobsButNotSeed) {
  cli::PipelineConfig a;
  cli::PipelineConfig b = a;
  b.jobs = 8;
  b.propagate();
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = a.seed + 1;
  b.propagate();
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(cli::PipelineConfig::from_json(Json{{"heatmapz", Json::object()}}), Error);
  const cli::PipelineConfig c = cli::PipelineConfig::from_json(Json{{"predict", {{"folds", 3}}}});
  EXPECT_EQ(c.predict.folds, 3);
}

}  // namespace
}  // namespace prolif
