// Copyright 2026 The heartmur Authors. All Rights Reserved.
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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heartmur/dataset.h"
#include "heartmur/eval.h"
#include "heartmur/features.h"
#include "heartmur/nn.h"

namespace heartmur::train {

enum class Backbone { EmbeddingProbe, Mlp };
enum class LossWeighting { Proportional, None };
enum class SelectionMetric { WAcc, Uar };

struct TrainConfig {
  double base_lr = 0.00025;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 5;
  // nullopt disables augmentation entirely; {0, 0} is the identity mask.
  std::optional<features::SpecAugmentConfig> specaugment = features::SpecAugmentConfig{};
  Backbone backbone = Backbone::EmbeddingProbe;
  LossWeighting loss_weighting = LossWeighting::Proportional;
  std::uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::WAcc;
  double weight_decay = 0.01;
  std::vector<std::size_t> mlp_hidden = {128, 64};

  // lr 0.00025, batch 32, no masking.
  static TrainConfig embedding_probe_defaults();
  // lr 0.001, batch 256, masking 20/50.
  static TrainConfig mlp_defaults();

  void validate() const;
};

// `key = value` lines; `#` starts a comment. Keys: base_lr, batch_size,
// epochs, warmup_epochs, specaugment (`F/T` or `off`), backbone
// (`embedding-probe` | `mlp`), loss_weighting (`proportional` | `none`),
// seed, selection_metric (`wacc` | `uar`), weight_decay, mlp_hidden
// (comma-separated sizes). Unset keys take the defaults of the chosen
// backbone. Unknown keys, repeated keys and bad values throw FormatError.
TrainConfig parse_config(std::istream& in);
TrainConfig read_config(const std::filesystem::path& path);
std::string format_config(const TrainConfig& config);

// --- feature store ---------------------------------------------------------

enum class InputKind { LogMel, Embedding };

struct RecordingFeatures {
  std::string recording_id;
  std::string patient_id;
  MurmurLabel label = MurmurLabel::Absent;
  std::size_t num_samples = 0;            // at 16 kHz
  std::vector<std::size_t> train_windows;  // grid indices, segment_train order
  std::vector<std::size_t> test_windows;   // grid indices, segment_test order
  // Model input per grid window: pooled log-mel statistics or the embedding.
  std::map<std::size_t, std::vector<float>> vectors;
  // Full spectrograms of the training windows (log-mel mode, when kept).
  std::map<std::size_t, features::LogMelSpec> spectrograms;
};

struct FeatureStore {
  InputKind kind = InputKind::LogMel;
  std::size_t dim = 0;
  std::map<std::string, RecordingFeatures> recordings;

  const RecordingFeatures& at(const std::string& recording_id) const;
};

// Decodes, resamples, segments and featurizes every recording. Spectrograms
// of training windows are kept when `keep_spectrograms` (needed for masking).
FeatureStore extract_logmel_features(const std::vector<dataset::PatientRecord>& patients,
                                     const features::LogMelConfig& mel = {}, bool keep_spectrograms = true,
                                     unsigned threads = 1);

// Looks up every planned window (from the WAV header lengths) in `set`.
// A missing entry throws DataError naming the recording and window.
FeatureStore load_embedding_features(const std::vector<dataset::PatientRecord>& patients,
                                     const dataset::EmbeddingSet& set);

// --- training -----------------------------------------------------------------

struct Example {
  std::string recording_id;
  std::size_t window = 0;  // grid index
  MurmurLabel label = MurmurLabel::Absent;
};

// One example per training window of every recording of `patients`.
std::vector<Example> build_training_set(const std::vector<dataset::PatientRecord>& patients,
                                        const FeatureStore& store);

// Example visiting order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Fixed per-dimension standardization of model inputs.
struct InputTransform {
  std::vector<float> mean;
  std::vector<float> inv_std;

  bool empty() const { return mean.empty(); }
  void apply(std::span<float> x) const;
};

// A trained classifier with what it needs to consume features.
struct LoadedModel {
  nn::Classifier<float> model;
  InputKind kind = InputKind::LogMel;
  InputTransform transform;
  nlohmann::json metadata;
};

LoadedModel load_model(const nn::Checkpoint& ckpt);

struct RunResult {
  nn::Checkpoint best_checkpoint;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::vector<double> val_curve;  // selection metric per epoch
  eval::MetricsReport test_report;
  std::vector<eval::RecordingPrediction> test_predictions;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
};

// Segment logits -> recording probabilities for every recording of `patients`.
std::vector<eval::RecordingPrediction> predict(LoadedModel& model, const std::vector<dataset::PatientRecord>& patients,
                                               const FeatureStore& store);

struct FoldEvaluation {
  std::vector<eval::RecordingPrediction> predictions;
  eval::MetricsReport report;
};

FoldEvaluation evaluate_fold(LoadedModel& model, const std::vector<dataset::PatientRecord>& patients,
                             const FeatureStore& store, eval::PatientRule rule = eval::PatientRule::Decision);

// Trains for config.epochs, validating each epoch; returns the best
// checkpoint (ties go to the earlier epoch) evaluated on the test fold.
// `max_epochs` cuts the run short without changing the lr schedule, which
// still spans config.epochs (an under-trained model for ablations).
RunResult train_one(const TrainConfig& config, const dataset::SplitAssignment& split,
                    const std::vector<dataset::PatientRecord>& patients, const FeatureStore& store,
                    std::size_t max_epochs = std::numeric_limits<std::size_t>::max());

// checkpoint.hsck, val_curve.csv, test_predictions.json, report.json
void write_run_outputs(const RunResult& run, const std::filesystem::path& dir);

struct ProtocolResult {
  std::vector<RunResult> runs;
  eval::MetricsReport mean;
};

// n_splits stratified splits (seeds split_seed, split_seed + 1, ...), each
// trained runs_per_split times with distinct run seeds.
ProtocolResult run_protocol(const TrainConfig& config, const std::vector<dataset::PatientRecord>& patients,
                            const FeatureStore& store, std::size_t n_splits = 3, std::size_t runs_per_split = 5,
                            std::uint64_t split_seed = 0);

}  // namespace heartmur::train
