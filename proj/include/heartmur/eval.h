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

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "heartmur/dataset.h"
#include "json.hpp"

namespace heartmur::eval {

enum class ScoreKind { Logits, Probabilities };

// Three class scores in canonical order (Present, Unknown, Absent).
struct ClassScores {
  std::array<double, kNumClasses> values{};
  ScoreKind kind = ScoreKind::Logits;
};

// Argmax with ties resolved towards Present, then Unknown.
MurmurLabel argmax_label(const ClassScores& scores);

// Mean of the segment logits, then softmax.
ClassScores recording_probs(std::span<const ClassScores> segment_logits);

// Present if any recording's argmax is Present, else Unknown if any is
// Unknown, else Absent.
MurmurLabel patient_label_rule(std::span<const ClassScores> recording_probs);

// Argmax of the per-class mean probability over the recordings.
MurmurLabel patient_prob_average(std::span<const ClassScores> recording_probs);

enum class PatientRule { Decision, ProbAverage };

MurmurLabel aggregate_patient(std::span<const ClassScores> recording_probs, PatientRule rule);

struct ConfusionCounts {
  // matrix[true][predicted]
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> matrix{};

  std::size_t correct(std::size_t cls) const { return matrix[cls][cls]; }
  std::size_t total(std::size_t cls) const;
  void add(MurmurLabel truth, MurmurLabel predicted) { ++matrix[index_of(truth)][index_of(predicted)]; }

  // Counts with the given correct/true totals per class; misses are booked
  // as Absent predictions (Present for true Absent).
  static ConfusionCounts from_totals(const std::array<std::size_t, kNumClasses>& correct,
                                     const std::array<std::size_t, kNumClasses>& totals);
};

// (5 c_p + 3 c_u + c_a) / (5 t_p + 3 t_u + t_a)
double weighted_accuracy(const ConfusionCounts& cc);

// Mean of the per-class recalls; every class must have a true instance.
double unweighted_average_recall(const ConfusionCounts& cc);
double unweighted_average_recall(const std::array<double, kNumClasses>& recalls);

struct MetricsReport {
  double w_acc = 0.0;
  double uar = 0.0;  // NaN when some class has no true patients
  std::array<double, kNumClasses> recalls{};  // NaN for classes without patients
  ConfusionCounts confusion;
};

// Fills the confusion matrix from patient-level labels keyed by patient id.
MetricsReport score_patients(const std::map<std::string, MurmurLabel>& predicted,
                             const std::map<std::string, MurmurLabel>& truth);

// Arithmetic mean of each metric over runs; confusion counts are summed.
MetricsReport mean_report(std::span<const MetricsReport> runs);

// recording id -> probabilities
using PredictionSet = std::map<std::string, ClassScores>;

// For every recording, the mean over all |A| x |B| pairs of the pairwise
// average probability.
PredictionSet ensemble_two(std::span<const PredictionSet> runs_a, std::span<const PredictionSet> runs_b);

// --- files ---------------------------------------------------------------------

struct RecordingPrediction {
  std::string recording_id;
  std::string patient_id;
  ClassScores logits;
  ClassScores probs;
};

nlohmann::json predictions_to_json(const std::vector<RecordingPrediction>& preds);
std::vector<RecordingPrediction> predictions_from_json(const nlohmann::json& j);
void write_predictions(const std::vector<RecordingPrediction>& preds, const std::filesystem::path& path);
std::vector<RecordingPrediction> read_predictions(const std::filesystem::path& path);

PredictionSet to_prediction_set(const std::vector<RecordingPrediction>& preds);

// Patient labels from recording probabilities under the given rule.
std::map<std::string, MurmurLabel> patient_labels(const std::vector<RecordingPrediction>& preds, PatientRule rule);

nlohmann::json report_to_json(const MetricsReport& report, std::size_t runs);
MetricsReport report_from_json(const nlohmann::json& j);

// Plain-text table: Model, W.acc, UAR, Present, Unknown, Absent.
std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace heartmur::eval
