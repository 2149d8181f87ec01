// kasr/runner.h

// Copyright 2026  The kasr Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Experiment configuration, the training loop, evaluation of checkpoints
// and the experiment matrix.  The configuration file schema is documented
// in README.md; ValidateConfig() fills defaults and checks every field.

#ifndef KASR_RUNNER_H_
#define KASR_RUNNER_H_

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kasr/augment.h"
#include "kasr/datapipe.h"
#include "kasr/evalkit.h"
#include "kasr/losses.h"
#include "kasr/model.h"

namespace kasr {

struct DataConfig {
  /// Either explicit split manifests ...
  std::string train, dev, test;
  /// ... or one manifest that is filtered and split by speaker.
  std::string manifest;
  FilterPolicy filter;
  SplitPolicy split;
};

struct TrainConfig {
  int steps = 500;
  int batch_size = 4;
  AdamConfig adam;
  uint64_t seed = 0;
  /// Steps between dev evaluations (0: only at the end).
  int eval_interval = 100;
  /// Steps between rolling checkpoints (0: none).
  int checkpoint_interval = 0;
  /// Stop as soon as a periodic evaluation scores train WER 0.
  bool stop_at_zero_train_wer = false;
  /// Base-model parameters loaded before PEFT is applied.
  std::string init_checkpoint;
};

struct EvalConfig {
  /// In a config file the default is dev and test when they have data,
  /// otherwise train.
  std::vector<std::string> splits{"dev", "test"};
  int max_tokens = 200;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model;
  PeftConfig peft;
  AugmentPolicy augment;
  PifConfig pif;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  std::string output_dir;
};

/// Parses and validates; errors are ConfigErrors prefixed with the field
/// path (e.g. "train.seed: required").  With check_files, every manifest
/// must exist.
ExperimentConfig ParseConfig(const nlohmann::json& j, bool check_files = true);
ExperimentConfig LoadConfig(const std::filesystem::path& path, bool check_files = true);
/// Cross-field checks on an already populated config.
void ValidateConfig(const ExperimentConfig& cfg, bool check_files = true);
/// Normalised form with every default written out.
nlohmann::json ConfigToJson(const ExperimentConfig& cfg);
std::string ConfigHash(const ExperimentConfig& cfg);

struct StepRecord {
  int step = 0;
  double task_loss = 0.0;
  double pif_loss = 0.0;
  double total = 0.0;
};

struct RunRecord {
  std::string config_hash;
  std::vector<StepRecord> steps;
  /// Final scores, one row per evaluated split.
  ResultsTable results;
  size_t trainable_params = 0;
  double wall_time_s = 0.0;
  int best_step = -1;
  double best_dev_wer = NAN;

  nlohmann::json ToJson() const;
};

/// Splits the configured data into train/dev/test entries (filtering each).
std::array<std::vector<ManifestEntry>, 3> LoadSplits(const ExperimentConfig& cfg);

/// Log-mel frontend shared by training and evaluation (CMVN on).
FbankOptions FrontendOptions(const ModelConfig& model);
FeatureMatrix ExtractFeatures(const ManifestEntry& e, const FbankOptions& opts);

/// Model with the configured vocabulary size, initial checkpoint and PEFT.
Model InitialModel(const ExperimentConfig& cfg);

/// Trains per cfg, writing train_log.jsonl, best.ckpt, final.ckpt and
/// run.json into cfg.output_dir.  Throws DivergedError on a non-finite
/// loss and InfeasibleAlignmentError naming the utterance.
RunRecord Train(const ExperimentConfig& cfg);

struct LoadedModel {
  ExperimentConfig config;
  Model model;
  Vocabulary vocab;
  int step = 0;
};

/// Rebuilds the model described by the checkpoint metadata.  Throws
/// IntegrityError if the parameters do not match that architecture.
LoadedModel LoadModelCheckpoint(const std::filesystem::path& path);
void SaveModelCheckpoint(const std::filesystem::path& path, const ExperimentConfig& cfg,
                         const Model& model, const Vocabulary& vocab, int step);

struct Hypothesis {
  std::string id;
  std::string ref;
  std::string hyp;
  WerReport report;
};

std::vector<Hypothesis> DecodeEntries(const Model& model, const Vocabulary& vocab,
                                      std::span<const ManifestEntry> entries, int max_tokens);

/// Scores a checkpoint on a manifest.  If `expected` is given its hash must
/// match the checkpoint's configuration (IntegrityError otherwise).  An
/// empty manifest is an ArgumentError.
ResultsTable Evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                      const std::string& split_label,
                      const std::optional<ExperimentConfig>& expected = std::nullopt,
                      std::vector<Hypothesis>* hyps = nullptr);

struct ModelAxisValue {
  std::string label;
  /// Overrides applied to the base model section.
  nlohmann::json model;
};

struct MatrixSpec {
  ExperimentConfig base;
  std::vector<PeftMethod> peft;
  std::vector<AugmentMethod> augment;
  std::vector<ModelAxisValue> models;
};

MatrixSpec ParseMatrixSpec(const nlohmann::json& j, bool check_files = true);
std::string CellLabel(const std::string& model, PeftMethod peft, AugmentMethod augment);

/// Trains and evaluates every cell of the Cartesian product under
/// <base.output_dir>/cells/, each with seed base ^ Fnv1a64(label).  A
/// failing cell gives rows with its error status and the matrix goes on.
/// Writes results.tsv and results.txt into base.output_dir.
ResultsTable RunMatrix(const MatrixSpec& spec);

}  // namespace kasr

#endif  // KASR_RUNNER_H_
