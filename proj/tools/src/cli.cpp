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

#include "cli.hpp"

#include <CLI11/CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "config.hpp"
#include "prolif/error.hpp"
#include "prolif/io.hpp"
#include "stages.hpp"

namespace prolif::cli {

namespace fs = std::filesystem;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return kExitConfig;
    case ErrorKind::kDependency:
      return kExitDependency;
    case ErrorKind::kNumeric:
      return kExitNumeric;
    default:
      return kExitFailure;
  }
}

void report(std::ostream& out, std::string_view kind, const std::string& message, int code) {
  out << Json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump() << '\n';
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out_dir = "out";
  std::string corpus;
  std::string log_level = "info";
};

PipelineConfig load_config(const Common& common) {
  PipelineConfig config;
  if (!common.config.empty()) {
    Json j;
    try {
      j = read_json(common.config);
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, "cannot read config: " + std::string(e.what()));
    }
    try {
      config = PipelineConfig::from_json(j);
    } catch (const Json::exception& e) {
      fail(ErrorKind::kConfig, common.config + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, common.config + ": " + e.what());
    }
  }
  if (common.seed) config.seed = *common.seed;
  if (common.jobs) config.jobs = *common.jobs;
  config.propagate();
  try {
    config.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, e.what());
  }
  return config;
}

Workspace make_workspace(const Common& common, const PipelineConfig& config) {
  std::optional<fs::path> corpus;
  if (!common.corpus.empty()) corpus = fs::path(common.corpus);
  return Workspace(config, fs::path(common.out_dir), corpus);
}

fs::path self_directory() {
  std::error_code ec;
  const fs::path exe = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::current_path() : exe.parent_path();
}

int run_verify(const std::string& binary, bool all, const std::string& criteria) {
  fs::path path = binary;
  if (path.empty()) {
    for (const fs::path& candidate : {self_directory() / "prolif_acceptance",
                                      self_directory() / ".." / "tests" / "prolif_acceptance"}) {
      if (fs::exists(candidate)) {
        path = candidate;
        break;
      }
    }
  }
  if (path.empty() || !fs::exists(path)) {
    fail(ErrorKind::kDependency, "acceptance binary prolif_acceptance not found; pass --binary");
  }
  std::string command = "'" + path.string() + "'";
  if (!criteria.empty()) {
    command += " --criteria " + criteria;
  } else if (!all) {
    command += " --criteria 1,2,3,4,8";
  }
  const int status = std::system(command.c_str());
  if (status == 0) return kExitOk;
  fail(ErrorKind::kNumeric, "acceptance suite reported failures");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"Tumor proliferation pipeline for whole slide images", "prolif"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  Common common;
  app.add_option("--config", common.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "master seed (overrides the config)");
  app.add_option("--jobs", common.jobs, "worker threads (outputs do not depend on it)")->check(CLI::Range(1, 256));
  app.add_option("--out-dir", common.out_dir, "artifact directory")->capture_default_str();
  app.add_option("--corpus", common.corpus, "slide corpus (default: <out-dir>/corpus)");
  app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  std::string kind, mode, corrections, binary, criteria;
  std::vector<std::string> tasks;
  bool all = false;
  auto* synth = app.add_subcommand("synth", "generate the synthetic slide corpus");
  auto* normalize = app.add_subcommand("normalize", "stain profiles and template");
  auto* mask = app.add_subcommand("mask", "tissue masks");
  auto* train = app.add_subcommand("train", "two-stage detector training");
  train->add_option("--kind", kind, "tumor or mitosis")->required()->check(CLI::IsMember({"tumor", "mitosis"}));
  train->add_option("--corrections", corrections, "pathologist corrections JSON")->check(CLI::ExistingFile);
  auto* heatmap = app.add_subcommand("heatmap", "tumor and mitosis heatmaps");
  heatmap->add_option("--mode", mode, "sliding or fcn (default from config)")
      ->check(CLI::IsMember({"sliding", "fcn"}));
  auto* features = app.add_subcommand("features", "per-slide feature vectors");
  auto* predict = app.add_subcommand("predict", "cross-validated grade and score prediction");
  predict->add_option("--task", tasks, "grade and/or score (default: both)")
      ->check(CLI::IsMember({"grade", "score"}));
  auto* evaluate = app.add_subcommand("evaluate", "metrics report");
  auto* pipeline = app.add_subcommand("pipeline", "run every stage in order");
  auto* verify = app.add_subcommand("verify", "run the oracle and property suite");
  verify->add_option("--binary", binary, "path to prolif_acceptance");
  verify->add_option("--criteria", criteria, "comma-separated criterion numbers");
  verify->add_flag("--all", all, "include the end-to-end criteria");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    // --help and --version
    return app.exit(e, out, out);
  } catch (const CLI::ParseError& e) {
    report(out, "config", e.what(), kExitConfig);
    return kExitConfig;
  }

  try {
    const auto level = spdlog::level::from_str(common.log_level);
    spdlog::set_level(level);
    if (verify->parsed()) return run_verify(binary, all, criteria);
    PipelineConfig config = load_config(common);
    if (heatmap->parsed() && !mode.empty()) config.heatmap.mode = parse_heatmap_mode(mode);
    Workspace ws = make_workspace(common, config);
    if (synth->parsed()) run_synth(ws);
    if (normalize->parsed()) run_normalize(ws);
    if (mask->parsed()) run_mask(ws);
    if (train->parsed()) {
      std::optional<fs::path> path;
      if (!corrections.empty()) path = fs::path(corrections);
      run_train(ws, parse_detector_kind(kind), path);
    }
    if (heatmap->parsed()) run_heatmap(ws);
    if (features->parsed()) run_features(ws);
    if (predict->parsed()) run_predict(ws, tasks.empty() ? std::vector<std::string>{"grade", "score"} : tasks);
    if (evaluate->parsed()) run_evaluate(ws);
    if (pipeline->parsed()) run_pipeline(ws);
    return kExitOk;
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    report(out, to_string(e.kind()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report(out, "internal", e.what(), kExitFailure);
    return kExitFailure;
  }
}

}  // namespace prolif::cli
