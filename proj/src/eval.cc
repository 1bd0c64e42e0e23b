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

#include "heartmur/eval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "heartmur/errors.h"

namespace heartmur::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::array<double, kNumClasses> softmax(const std::array<double, kNumClasses>& logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::array<double, kNumClasses> out{};
  double sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) sum += out[c] = std::exp(logits[c] - peak);
  for (auto& v : out) v /= sum;
  return out;
}

void require_nonempty(std::span<const ClassScores> scores, const char* op) {
  if (scores.empty()) throw PreconditionError(std::string(op) + ": empty score list");
}

}  // namespace

MurmurLabel argmax_label(const ClassScores& scores) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c)
    if (scores.values[c] > scores.values[best]) best = c;
  return label_at(best);
}

ClassScores recording_probs(std::span<const ClassScores> segment_logits) {
  require_nonempty(segment_logits, "recording_probs");
  std::array<double, kNumClasses> mean{};
  for (const auto& s : segment_logits) {
    if (s.kind != ScoreKind::Logits) throw PreconditionError("recording_probs expects segment logits");
    for (std::size_t c = 0; c < kNumClasses; ++c) mean[c] += s.values[c];
  }
  for (auto& v : mean) v /= static_cast<double>(segment_logits.size());
  return {softmax(mean), ScoreKind::Probabilities};
}

MurmurLabel patient_label_rule(std::span<const ClassScores> recording_probs) {
  require_nonempty(recording_probs, "patient_label_rule");
  bool any_unknown = false;
  for (const auto& r : recording_probs) {
    const MurmurLabel label = argmax_label(r);
    if (label == MurmurLabel::Present) return MurmurLabel::Present;
    any_unknown = any_unknown || label == MurmurLabel::Unknown;
  }
  return any_unknown ? MurmurLabel::Unknown : MurmurLabel::Absent;
}

MurmurLabel patient_prob_average(std::span<const ClassScores> recording_probs) {
  require_nonempty(recording_probs, "patient_prob_average");
  ClassScores mean{{}, ScoreKind::Probabilities};
  for (const auto& r : recording_probs)
    for (std::size_t c = 0; c < kNumClasses; ++c) mean.values[c] += r.values[c];
  for (auto& v : mean.values) v /= static_cast<double>(recording_probs.size());
  return argmax_label(mean);
}

MurmurLabel aggregate_patient(std::span<const ClassScores> recording_probs, PatientRule rule) {
  return rule == PatientRule::Decision ? patient_label_rule(recording_probs) : patient_prob_average(recording_probs);
}

std::size_t ConfusionCounts::total(std::size_t cls) const {
  std::size_t t = 0;
  for (std::size_t p = 0; p < kNumClasses; ++p) t += matrix[cls][p];
  return t;
}

ConfusionCounts ConfusionCounts::from_totals(const std::array<std::size_t, kNumClasses>& correct,
                                             const std::array<std::size_t, kNumClasses>& totals) {
  ConfusionCounts cc;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (correct[c] > totals[c]) throw PreconditionError("correct count exceeds true count");
    cc.matrix[c][c] = correct[c];
    const std::size_t miss = c == index_of(MurmurLabel::Absent) ? index_of(MurmurLabel::Present)
                                                                 : index_of(MurmurLabel::Absent);
    cc.matrix[c][miss] += totals[c] - correct[c];
  }
  return cc;
}

double weighted_accuracy(const ConfusionCounts& cc) {
  static constexpr std::array<double, kNumClasses> kWeights = {5.0, 3.0, 1.0};
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    num += kWeights[c] * static_cast<double>(cc.correct(c));
    den += kWeights[c] * static_cast<double>(cc.total(c));
  }
  if (den == 0.0) throw PreconditionError("weighted accuracy undefined: no true labels");
  return num / den;
}

double unweighted_average_recall(const std::array<double, kNumClasses>& recalls) {
  return (recalls[0] + recalls[1] + recalls[2]) / static_cast<double>(kNumClasses);
}

double unweighted_average_recall(const ConfusionCounts& cc) {
  std::array<double, kNumClasses> recalls{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t t = cc.total(c);
    if (t == 0)
      throw PreconditionError("UAR undefined: class " + std::string(label_name(label_at(c))) + " has no true labels");
    recalls[c] = static_cast<double>(cc.correct(c)) / static_cast<double>(t);
  }
  return unweighted_average_recall(recalls);
}

MetricsReport score_patients(const std::map<std::string, MurmurLabel>& predicted,
                             const std::map<std::string, MurmurLabel>& truth) {
  std::vector<std::string> only_pred, only_truth;
  for (const auto& [id, l] : predicted)
    if (!truth.count(id)) only_pred.push_back(id);
  for (const auto& [id, l] : truth)
    if (!predicted.count(id)) only_truth.push_back(id);
  if (!only_pred.empty() || !only_truth.empty()) {
    std::string msg = "predicted and true patient sets differ:";
    for (const auto& id : only_pred) msg += " +" + id;
    for (const auto& id : only_truth) msg += " -" + id;
    throw DataError(msg);
  }
  MetricsReport report;
  for (const auto& [id, label] : truth) report.confusion.add(label, predicted.at(id));
  report.w_acc = weighted_accuracy(report.confusion);
  bool complete = true;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t t = report.confusion.total(c);
    report.recalls[c] = t ? static_cast<double>(report.confusion.correct(c)) / static_cast<double>(t) : kNaN;
    complete = complete && t > 0;
  }
  report.uar = complete ? unweighted_average_recall(report.recalls) : kNaN;
  return report;
}

MetricsReport mean_report(std::span<const MetricsReport> runs) {
  if (runs.empty()) throw PreconditionError("mean_report: no runs");
  MetricsReport out;
  const auto n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    out.w_acc += r.w_acc;
    out.uar += r.uar;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      out.recalls[c] += r.recalls[c];
      for (std::size_t p = 0; p < kNumClasses; ++p) out.confusion.matrix[c][p] += r.confusion.matrix[c][p];
    }
  }
  out.w_acc /= n;
  out.uar /= n;
  for (auto& v : out.recalls) v /= n;
  return out;
}

PredictionSet ensemble_two(std::span<const PredictionSet> runs_a, std::span<const PredictionSet> runs_b) {
  if (runs_a.empty() || runs_b.empty()) throw PreconditionError("ensemble_two needs runs on both sides");
  const PredictionSet& reference = runs_a.front();
  auto check = [&](const PredictionSet& other, const std::string& which) {
    std::vector<std::string> diff;
    for (const auto& [id, s] : reference)
      if (!other.count(id)) diff.push_back(id);
    for (const auto& [id, s] : other)
      if (!reference.count(id)) diff.push_back(id);
    if (!diff.empty()) {
      std::sort(diff.begin(), diff.end());
      std::string msg = which + " covers different recordings; symmetric difference:";
      for (const auto& id : diff) msg += " " + id;
      throw DataError(msg);
    }
    for (const auto& [id, s] : other)
      if (s.kind != ScoreKind::Probabilities) throw PreconditionError("ensemble_two expects probabilities");
  };
  for (std::size_t i = 0; i < runs_a.size(); ++i) check(runs_a[i], "model A run " + std::to_string(i));
  for (std::size_t j = 0; j < runs_b.size(); ++j) check(runs_b[j], "model B run " + std::to_string(j));

  const double pairs = static_cast<double>(runs_a.size() * runs_b.size());
  PredictionSet out;
  for (const auto& [id, unused] : reference) {
    ClassScores acc{{}, ScoreKind::Probabilities};
    for (const auto& a : runs_a)
      for (const auto& b : runs_b)
        for (std::size_t c = 0; c < kNumClasses; ++c) acc.values[c] += 0.5 * (a.at(id).values[c] + b.at(id).values[c]);
    for (auto& v : acc.values) v /= pairs;
    out.emplace(id, acc);
  }
  return out;
}

// --- files ---------------------------------------------------------------------

namespace {

nlohmann::json scores_json(const ClassScores& s) { return nlohmann::json(s.values); }

ClassScores scores_from(const nlohmann::json& j, ScoreKind kind) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != kNumClasses) throw FormatError("score arrays must have 3 entries");
  ClassScores s{{}, kind};
  std::copy(v.begin(), v.end(), s.values.begin());
  return s;
}

double json_number(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

nlohmann::json predictions_to_json(const std::vector<RecordingPrediction>& preds) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : preds)
    arr.push_back({{"recording_id", p.recording_id},
                   {"patient_id", p.patient_id},
                   {"logits", scores_json(p.logits)},
                   {"probs", scores_json(p.probs)}});
  return arr;
}

std::vector<RecordingPrediction> predictions_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_array()) throw FormatError("prediction file must hold a JSON array");
    std::vector<RecordingPrediction> out;
    std::set<std::string> seen;
    for (const auto& e : j) {
      RecordingPrediction p;
      p.recording_id = e.at("recording_id").get<std::string>();
      p.patient_id = e.at("patient_id").get<std::string>();
      p.logits = scores_from(e.at("logits"), ScoreKind::Logits);
      p.probs = scores_from(e.at("probs"), ScoreKind::Probabilities);
      if (!seen.insert(p.recording_id).second) throw FormatError("recording " + p.recording_id + " listed twice");
      out.push_back(std::move(p));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed prediction file: ") + e.what());
  }
}

void write_predictions(const std::vector<RecordingPrediction>& preds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << predictions_to_json(preds).dump(1) << '\n';
}

std::vector<RecordingPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return predictions_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

PredictionSet to_prediction_set(const std::vector<RecordingPrediction>& preds) {
  PredictionSet set;
  for (const auto& p : preds) set[p.recording_id] = p.probs;
  return set;
}

std::map<std::string, MurmurLabel> patient_labels(const std::vector<RecordingPrediction>& preds, PatientRule rule) {
  std::map<std::string, std::vector<ClassScores>> by_patient;
  for (const auto& p : preds) by_patient[p.patient_id].push_back(p.probs);
  std::map<std::string, MurmurLabel> out;
  for (const auto& [id, probs] : by_patient) out[id] = aggregate_patient(probs, rule);
  return out;
}

nlohmann::json report_to_json(const MetricsReport& report, std::size_t runs) {
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : report.confusion.matrix) confusion.push_back(row);
  return {{"w_acc", report.w_acc},
          {"uar", report.uar},
          {"recalls",
           {{"present", report.recalls[0]}, {"unknown", report.recalls[1]}, {"absent", report.recalls[2]}}},
          {"confusion", confusion},
          {"runs", runs}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.w_acc = json_number(j.at("w_acc"));
    r.uar = json_number(j.at("uar"));
    const auto& rec = j.at("recalls");
    r.recalls = {json_number(rec.at("present")), json_number(rec.at("unknown")), json_number(rec.at("absent"))};
    const auto& conf = j.at("confusion");
    if (conf.size() != kNumClasses) throw FormatError("confusion must be 3x3");
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (conf[c].size() != kNumClasses) throw FormatError("confusion must be 3x3");
      for (std::size_t p = 0; p < kNumClasses; ++p) r.confusion.matrix[c][p] = conf[c][p].get<std::size_t>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::size_t width = 5;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Model" << std::right;
  for (const char* h : {"W.acc", "UAR", "Present", "Unknown", "Absent"}) out << std::setw(9) << h;
  out << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << name << std::right;
    for (double v : {r.w_acc, r.uar, r.recalls[0], r.recalls[1], r.recalls[2]}) {
      if (std::isnan(v))
        out << std::setw(9) << "-";
      else
        out << std::setw(9) << v;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace heartmur::eval
