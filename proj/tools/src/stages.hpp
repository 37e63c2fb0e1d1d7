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

// Pipeline stages of the command-line tool. Every stage reads its inputs from
// the output directory (or the corpus), checks that they exist and writes its
// artifacts with provenance sidecars.

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "provenance.hpp"
#include "prolif/slide.hpp"

namespace prolif::cli {

class Workspace {
 public:
  Workspace(PipelineConfig config, std::filesystem::path out, std::optional<std::filesystem::path> corpus = {});

  const PipelineConfig& config() const { return config_; }
  const std::filesystem::path& out() const { return out_; }
  const std::filesystem::path& corpus() const { return corpus_; }
  ProvenanceWriter& provenance() const { return *provenance_; }

  std::filesystem::path mask_path(const std::string& id) const { return out_ / "masks" / (id + ".pgm"); }
  std::filesystem::path stain_path(const std::string& id) const { return out_ / "normalize" / (id + ".json"); }
  std::filesystem::path template_path() const { return out_ / "normalize" / "template.json"; }
  std::filesystem::path models_dir() const { return out_ / "models"; }
  std::filesystem::path weights_path(DetectorKind kind) const;
  std::filesystem::path split_path() const { return models_dir() / "split.json"; }
  std::filesystem::path heatmap_dir(const std::string& id) const { return out_ / "heatmaps" / id; }
  std::filesystem::path features_dir(const std::string& id) const { return out_ / "features" / id; }
  std::filesystem::path features_csv() const { return out_ / "features.csv"; }
  std::filesystem::path predictions_path(const std::string& task) const {
    return out_ / ("predictions_" + task + ".csv");
  }
  std::filesystem::path metrics_path() const { return out_ / "metrics.json"; }
  std::filesystem::path evaluation_path() const { return out_ / "evaluation.json"; }

 private:
  PipelineConfig config_;
  std::filesystem::path out_;
  std::filesystem::path corpus_;
  std::unique_ptr<ProvenanceWriter> provenance_;
};

struct SlideRef {
  std::string id;
  std::filesystem::path dir;
  SlideRecord record;
};

std::vector<SlideRef> list_corpus(const Workspace& ws);

/// Throws kDependency naming the missing artifact and the stage that makes it.
void require_artifact(const std::filesystem::path& path, const std::string& stage);

struct Split {
  std::vector<std::string> detector;    // trains the detectors
  std::vector<std::string> validation;  // stage validation AUC
  std::vector<std::string> held_out;    // all slides not used for detector training
  Json to_json() const;
};

Split make_split(const std::vector<std::string>& ids, const PipelineConfig& config);

void run_synth(Workspace& ws);
void run_mask(Workspace& ws);
void run_normalize(Workspace& ws);
void run_train(Workspace& ws, DetectorKind kind, const std::optional<std::filesystem::path>& corrections = {});
void run_heatmap(Workspace& ws);
void run_features(Workspace& ws);
/// `tasks` holds "grade" and/or "score".
void run_predict(Workspace& ws, const std::vector<std::string>& tasks);
void run_evaluate(Workspace& ws);
void run_pipeline(Workspace& ws);

}  // namespace prolif::cli
