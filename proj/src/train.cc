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

#include "heartmur/train.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "heartmur/audio.h"
#include "heartmur/errors.h"
#include "heartmur/random.h"

namespace heartmur::train {

// --- config --------------------------------------------------------------------

TrainConfig TrainConfig::embedding_probe_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::mlp_defaults() {
  TrainConfig c;
  c.backbone = Backbone::Mlp;
  c.base_lr = 0.001;
  c.batch_size = 256;
  c.specaugment = features::SpecAugmentConfig{20, 50, 1};
  return c;
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw PreconditionError("base_lr must be positive");
  if (batch_size < 2) throw PreconditionError("batch_size must be at least 2 (batch norm)");
  if (epochs <= warmup_epochs) throw PreconditionError("epochs must exceed warmup_epochs");
  if (!(weight_decay >= 0.0)) throw PreconditionError("weight_decay must be non-negative");
  if (backbone == Backbone::Mlp && mlp_hidden.empty()) throw PreconditionError("mlp backbone needs hidden sizes");
  for (auto h : mlp_hidden)
    if (h == 0) throw PreconditionError("mlp hidden sizes must be positive");
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename Int>
Int parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  if (used != v.size()) throw FormatError("config key '" + key + "': trailing characters in '" + v + "'");
  return static_cast<Int>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  if (used != v.size() || !std::isfinite(x)) throw FormatError("config key '" + key + "': bad number '" + v + "'");
  return x;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

TrainConfig parse_config(std::istream& in) {
  static const std::set<std::string> kKeys = {"base_lr", "batch_size", "epochs", "warmup_epochs",
                                              "specaugment", "backbone", "loss_weighting", "seed",
                                              "selection_metric", "weight_decay", "mlp_hidden"};
  std::map<std::string, std::string> kv;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!kKeys.count(key)) throw FormatError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!kv.emplace(key, value).second) throw FormatError("config key '" + key + "' given twice");
  }

  TrainConfig c;
  if (const auto it = kv.find("backbone"); it != kv.end()) {
    if (it->second == "mlp")
      c = TrainConfig::mlp_defaults();
    else if (it->second == "embedding-probe")
      c = TrainConfig::embedding_probe_defaults();
    else
      throw FormatError("config key 'backbone': expected embedding-probe or mlp, got '" + it->second + "'");
  }
  for (const auto& [key, v] : kv) {
    if (key == "base_lr") {
      c.base_lr = parse_real(key, v);
    } else if (key == "batch_size") {
      c.batch_size = parse_uint<std::size_t>(key, v);
    } else if (key == "epochs") {
      c.epochs = parse_uint<std::size_t>(key, v);
    } else if (key == "warmup_epochs") {
      c.warmup_epochs = parse_uint<std::size_t>(key, v);
    } else if (key == "seed") {
      c.seed = parse_uint<std::uint64_t>(key, v);
    } else if (key == "weight_decay") {
      c.weight_decay = parse_real(key, v);
    } else if (key == "specaugment") {
      if (v == "off") {
        c.specaugment.reset();
      } else {
        const auto slash = v.find('/');
        if (slash == std::string::npos) throw FormatError("config key 'specaugment': expected F/T or off");
        c.specaugment = features::SpecAugmentConfig{parse_uint<std::size_t>(key, trim(v.substr(0, slash))),
                                                    parse_uint<std::size_t>(key, trim(v.substr(slash + 1))), 1};
      }
    } else if (key == "loss_weighting") {
      if (v == "proportional")
        c.loss_weighting = LossWeighting::Proportional;
      else if (v == "none")
        c.loss_weighting = LossWeighting::None;
      else
        throw FormatError("config key 'loss_weighting': expected proportional or none");
    } else if (key == "selection_metric") {
      if (v == "wacc")
        c.selection_metric = SelectionMetric::WAcc;
      else if (v == "uar")
        c.selection_metric = SelectionMetric::Uar;
      else
        throw FormatError("config key 'selection_metric': expected wacc or uar");
    } else if (key == "mlp_hidden") {
      c.mlp_hidden.clear();
      std::istringstream parts(v);
      for (std::string tok; std::getline(parts, tok, ',');) c.mlp_hidden.push_back(parse_uint<std::size_t>(key, trim(tok)));
    }
  }
  try {
    c.validate();
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("invalid config: ") + e.what());
  }
  return c;
}

TrainConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  return parse_config(in);
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "backbone = " << (c.backbone == Backbone::Mlp ? "mlp" : "embedding-probe") << '\n';
  out << "base_lr = " << c.base_lr << '\n';
  out << "batch_size = " << c.batch_size << '\n';
  out << "epochs = " << c.epochs << '\n';
  out << "warmup_epochs = " << c.warmup_epochs << '\n';
  if (c.specaugment)
    out << "specaugment = " << c.specaugment->freq_param << '/' << c.specaugment->time_param << '\n';
  else
    out << "specaugment = off\n";
  out << "loss_weighting = " << (c.loss_weighting == LossWeighting::Proportional ? "proportional" : "none") << '\n';
  out << "seed = " << c.seed << '\n';
  out << "selection_metric = " << (c.selection_metric == SelectionMetric::WAcc ? "wacc" : "uar") << '\n';
  out << "weight_decay = " << c.weight_decay << '\n';
  out << "mlp_hidden = " << join_sizes(c.mlp_hidden) << '\n';
  return out.str();
}

// --- feature store ---------------------------------------------------------

const RecordingFeatures& FeatureStore::at(const std::string& recording_id) const {
  const auto it = recordings.find(recording_id);
  if (it == recordings.end()) throw DataError("no features for recording " + recording_id);
  return it->second;
}

namespace {

std::vector<std::size_t> grid_indices(const std::vector<audio::WindowPlacement>& plan) {
  std::vector<std::size_t> out;
  out.reserve(plan.size());
  for (const auto& p : plan) out.push_back(p.grid_index);
  return out;
}

RecordingFeatures plan_recording(const dataset::PatientRecord& patient, const dataset::Recording& rec,
                                 std::size_t num_samples) {
  RecordingFeatures f;
  f.recording_id = rec.id;
  f.patient_id = patient.patient_id;
  f.label = patient.label;
  f.num_samples = num_samples;
  f.train_windows = grid_indices(audio::plan_train_windows(num_samples));
  f.test_windows = grid_indices(audio::plan_test_windows(num_samples));
  return f;
}

struct Job {
  const dataset::PatientRecord* patient;
  const dataset::Recording* recording;
};

std::vector<Job> jobs_for(const std::vector<dataset::PatientRecord>& patients) {
  std::vector<Job> jobs;
  std::set<std::string> seen;
  for (const auto& p : patients)
    for (const auto& r : p.recordings) {
      if (!seen.insert(r.id).second) throw DataError("recording " + r.id + " appears twice");
      jobs.push_back({&p, &r});
    }
  return jobs;
}

}  // namespace

FeatureStore extract_logmel_features(const std::vector<dataset::PatientRecord>& patients,
                                     const features::LogMelConfig& mel, bool keep_spectrograms, unsigned threads) {
  const auto jobs = jobs_for(patients);
  const features::LogMelExtractor extractor(mel);
  std::vector<RecordingFeatures> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const auto wave = audio::resample_to_16k(audio::decode_wav(jobs[i].recording->path));
        auto f = plan_recording(*jobs[i].patient, *jobs[i].recording, wave.samples.size());
        std::set<std::size_t> needed(f.train_windows.begin(), f.train_windows.end());
        needed.insert(f.test_windows.begin(), f.test_windows.end());
        const std::set<std::size_t> train_set(f.train_windows.begin(), f.train_windows.end());
        for (std::size_t g : needed) {
          auto seg = audio::cut_segment(wave, g * audio::kTrainHop);
          seg.recording_id = f.recording_id;
          auto spec = extractor(seg);
          f.vectors[g] = features::pool_mean_max(spec);
          if (keep_spectrograms && train_set.count(g)) f.spectrograms.emplace(g, std::move(spec));
        }
        results[i] = std::move(f);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  FeatureStore store;
  store.kind = InputKind::LogMel;
  store.dim = 2 * mel.mel_bins;
  for (auto& f : results) store.recordings.emplace(f.recording_id, std::move(f));
  return store;
}

FeatureStore load_embedding_features(const std::vector<dataset::PatientRecord>& patients,
                                     const dataset::EmbeddingSet& set) {
  FeatureStore store;
  store.kind = InputKind::Embedding;
  store.dim = set.dim;
  for (const auto& job : jobs_for(patients)) {
    const auto info = audio::probe_wav(job.recording->path);
    auto f = plan_recording(*job.patient, *job.recording, audio::resampled_length(info.frames, info.sample_rate));
    std::set<std::size_t> needed(f.train_windows.begin(), f.train_windows.end());
    needed.insert(f.test_windows.begin(), f.test_windows.end());
    for (std::size_t g : needed) {
      const auto it = set.entries.find({f.recording_id, static_cast<std::uint32_t>(g)});
      if (it == set.entries.end())
        throw DataError("missing embedding for (recording " + f.recording_id + ", segment " + std::to_string(g) + ")");
      f.vectors[g] = it->second;
    }
    store.recordings.emplace(f.recording_id, std::move(f));
  }
  return store;
}

// --- training -----------------------------------------------------------------

std::vector<Example> build_training_set(const std::vector<dataset::PatientRecord>& patients,
                                        const FeatureStore& store) {
  if (patients.empty()) throw PreconditionError("empty training fold");
  std::vector<Example> out;
  for (const auto& p : patients)
    for (const auto& r : p.recordings) {
      const auto& f = store.at(r.id);
      for (std::size_t g : f.train_windows) {
        if (!f.vectors.count(g))
          throw DataError("missing features for (recording " + r.id + ", segment " + std::to_string(g) + ")");
        out.push_back({r.id, g, p.label});
      }
    }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(seed, 2), epoch));
  rng.shuffle(order);
  return order;
}

void InputTransform::apply(std::span<float> x) const {
  if (empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean[i]) * inv_std[i];
}

namespace {

InputTransform fit_transform(const std::vector<Example>& examples, const FeatureStore& store) {
  const std::size_t dim = store.dim;
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  for (const auto& e : examples) {
    const auto& v = store.at(e.recording_id).vectors.at(e.window);
    for (std::size_t i = 0; i < dim; ++i) {
      sum[i] += v[i];
      sq[i] += static_cast<double>(v[i]) * v[i];
    }
  }
  InputTransform t;
  t.mean.resize(dim);
  t.inv_std.resize(dim);
  const auto n = static_cast<double>(examples.size());
  for (std::size_t i = 0; i < dim; ++i) {
    const double mean = sum[i] / n;
    const double var = std::max(0.0, sq[i] / n - mean * mean);
    t.mean[i] = static_cast<float>(mean);
    t.inv_std[i] = static_cast<float>(1.0 / std::sqrt(var + 1e-6));
  }
  return t;
}

nlohmann::json transform_json(const InputTransform& t) {
  if (t.empty()) return nullptr;
  return {{"mean", t.mean}, {"inv_std", t.inv_std}};
}

double selection_value(const eval::MetricsReport& r, SelectionMetric metric) {
  const double v = metric == SelectionMetric::WAcc ? r.w_acc : r.uar;
  return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

}  // namespace

LoadedModel load_model(const nn::Checkpoint& ckpt) {
  LoadedModel out;
  out.model = nn::from_checkpoint(ckpt);
  out.metadata = ckpt.metadata;
  try {
    const auto kind = ckpt.metadata.at("input_kind").get<std::string>();
    if (kind == "logmel")
      out.kind = InputKind::LogMel;
    else if (kind == "embedding")
      out.kind = InputKind::Embedding;
    else
      throw FormatError("checkpoint has unknown input_kind " + kind);
    const auto& t = ckpt.metadata.at("input_transform");
    if (!t.is_null()) {
      out.transform.mean = t.at("mean").get<std::vector<float>>();
      out.transform.inv_std = t.at("inv_std").get<std::vector<float>>();
      if (out.transform.mean.size() != out.model.input_dim() || out.transform.inv_std.size() != out.model.input_dim())
        throw FormatError("checkpoint input transform does not match the model input");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  return out;
}

std::vector<eval::RecordingPrediction> predict(LoadedModel& model, const std::vector<dataset::PatientRecord>& patients,
                                               const FeatureStore& store) {
  if (store.kind != model.kind)
    throw DataError(std::string("checkpoint expects ") + (model.kind == InputKind::LogMel ? "log-mel" : "embedding") +
                    " features");
  if (store.dim != model.model.input_dim())
    throw DataError("feature dim " + std::to_string(store.dim) + " does not match checkpoint input dim " +
                    std::to_string(model.model.input_dim()));
  std::vector<eval::RecordingPrediction> out;
  for (const auto& p : patients)
    for (const auto& r : p.recordings) {
      const auto& f = store.at(r.id);
      nn::Tensor<float> batch({f.test_windows.size(), store.dim});
      for (std::size_t k = 0; k < f.test_windows.size(); ++k) {
        const auto it = f.vectors.find(f.test_windows[k]);
        if (it == f.vectors.end())
          throw DataError("missing features for (recording " + r.id + ", segment " + std::to_string(f.test_windows[k]) + ")");
        std::span<float> row(batch.values.data() + k * store.dim, store.dim);
        std::copy(it->second.begin(), it->second.end(), row.begin());
        model.transform.apply(row);
      }
      const auto logits = model.model.forward(batch, nn::Mode::Eval);
      std::vector<eval::ClassScores> segs(f.test_windows.size());
      for (std::size_t k = 0; k < segs.size(); ++k)
        for (std::size_t c = 0; c < kNumClasses; ++c) segs[k].values[c] = logits->value.at(k, c);
      eval::RecordingPrediction pred;
      pred.recording_id = r.id;
      pred.patient_id = p.patient_id;
      pred.probs = eval::recording_probs(segs);
      pred.logits.kind = eval::ScoreKind::Logits;
      for (const auto& s : segs)
        for (std::size_t c = 0; c < kNumClasses; ++c) pred.logits.values[c] += s.values[c] / static_cast<double>(segs.size());
      out.push_back(std::move(pred));
    }
  return out;
}

FoldEvaluation evaluate_fold(LoadedModel& model, const std::vector<dataset::PatientRecord>& patients,
                             const FeatureStore& store, eval::PatientRule rule) {
  FoldEvaluation out;
  out.predictions = predict(model, patients, store);
  std::map<std::string, MurmurLabel> truth;
  for (const auto& p : patients) truth[p.patient_id] = p.label;
  out.report = eval::score_patients(eval::patient_labels(out.predictions, rule), truth);
  return out;
}

RunResult train_one(const TrainConfig& config, const dataset::SplitAssignment& split,
                    const std::vector<dataset::PatientRecord>& patients, const FeatureStore& store,
                    std::size_t max_epochs) {
  config.validate();
  if (max_epochs == 0) throw PreconditionError("max_epochs must be positive");
  const std::size_t run_epochs = std::min(config.epochs, max_epochs);
  if (split.train.empty() || split.validation.empty() || split.test.empty())
    throw PreconditionError("every split fold must be non-empty");
  const bool mlp = config.backbone == Backbone::Mlp;
  if (mlp != (store.kind == InputKind::LogMel))
    throw PreconditionError(mlp ? "mlp backbone trains on log-mel features"
                                : "embedding-probe backbone trains on embedding features");

  const auto train_patients = dataset::select_patients(patients, split.train);
  const auto val_patients = dataset::select_patients(patients, split.validation);
  const auto test_patients = dataset::select_patients(patients, split.test);
  const auto examples = build_training_set(train_patients, store);
  if (examples.size() < 2) throw PreconditionError("need at least 2 training segments");

  const std::array<double, 3> weights = config.loss_weighting == LossWeighting::Proportional
                                            ? dataset::class_weights(train_patients)
                                            : std::array<double, 3>{1.0, 1.0, 1.0};

  LoadedModel current;
  current.kind = store.kind;
  if (mlp) current.transform = fit_transform(examples, store);
  Rng init_rng(derive_seed(config.seed, 1));
  current.model = nn::Classifier<float>::create(store.dim, mlp ? config.mlp_hidden : std::vector<std::size_t>{}, init_rng);

  const bool augment = mlp && config.specaugment && !config.specaugment->is_identity();
  if (augment) {
    for (const auto& e : examples)
      if (!store.at(e.recording_id).spectrograms.count(e.window))
        throw DataError("augmentation needs the spectrogram of (recording " + e.recording_id + ", segment " +
                        std::to_string(e.window) + ")");
  }

  const std::size_t batch = std::min(config.batch_size, examples.size());
  const std::size_t full = examples.size() / batch;
  const std::size_t rest = examples.size() % batch;
  const std::size_t steps_per_epoch = full + (rest >= 2 ? 1 : 0);
  const nn::ScheduleConfig schedule{config.base_lr, config.warmup_epochs, config.epochs, steps_per_epoch};
  nn::AdamW<float> optimizer(nn::AdamWConfig{0.9, 0.999, 1e-8, config.weight_decay});

  nlohmann::json base_meta = {{"config", format_config(config)},
                              {"epochs_run", run_epochs},
                              {"input_kind", mlp ? "logmel" : "embedding"},
                              {"input_dim", store.dim},
                              {"input_transform", transform_json(current.transform)},
                              {"seed", config.seed},
                              {"split_seed", split.seed},
                              {"class_weights", weights}};

  RunResult result;
  result.seed = config.seed;
  result.split_seed = split.seed;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t global_step = 0;
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < run_epochs; ++epoch) {
    const auto order = epoch_order(examples.size(), config.seed, epoch);
    Rng aug_rng(derive_seed(derive_seed(config.seed, 3), epoch));
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * batch;
      const std::size_t hi = std::min(lo + batch, examples.size());
      nn::Tensor<float> x({hi - lo, store.dim});
      labels.clear();
      for (std::size_t k = lo; k < hi; ++k) {
        const Example& e = examples[order[k]];
        const auto& f = store.at(e.recording_id);
        std::span<float> row(x.values.data() + (k - lo) * store.dim, store.dim);
        if (augment) {
          const auto pooled = features::pool_mean_max(features::spec_augment(f.spectrograms.at(e.window), *config.specaugment, aug_rng));
          std::copy(pooled.begin(), pooled.end(), row.begin());
        } else {
          const auto& v = f.vectors.at(e.window);
          std::copy(v.begin(), v.end(), row.begin());
        }
        current.transform.apply(row);
        labels.push_back(static_cast<int>(index_of(e.label)));
      }
      try {
        current.model.zero_grad();
        const auto loss = nn::weighted_cross_entropy(current.model.forward(x, nn::Mode::Train), labels, weights);
        nn::backward(loss);
        optimizer.step(current.model.parameters(), nn::lr_at(schedule, global_step));
      } catch (const NumericsError& e) {
        throw NumericsError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
      }
      ++global_step;
    }

    const auto val = evaluate_fold(current, val_patients, store, eval::PatientRule::Decision);
    const double metric = selection_value(val.report, config.selection_metric);
    result.val_curve.push_back(metric);
    // Strict improvement: ties keep the earlier epoch.
    if (metric > best) {
      best = metric;
      nlohmann::json meta = base_meta;
      meta["epoch"] = epoch;
      meta["validation_metric"] = metric;
      result.best_checkpoint = nn::to_checkpoint(current.model, std::move(meta));
      result.best_epoch = epoch;
      result.best_metric = metric;
    }
  }

  auto best_model = load_model(result.best_checkpoint);
  auto test = evaluate_fold(best_model, test_patients, store, eval::PatientRule::Decision);
  result.test_report = test.report;
  result.test_predictions = std::move(test.predictions);
  return result;
}

void write_run_outputs(const RunResult& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::write_checkpoint(run.best_checkpoint, dir / "checkpoint.hsck");
  {
    std::ofstream curve(dir / "val_curve.csv", std::ios::trunc);
    curve << "epoch,metric\n" << std::setprecision(17);
    for (std::size_t e = 0; e < run.val_curve.size(); ++e) curve << e << ',' << run.val_curve[e] << '\n';
  }
  eval::write_predictions(run.test_predictions, dir / "test_predictions.json");
  auto report = eval::report_to_json(run.test_report, 1);
  report["seed"] = run.seed;
  report["split_seed"] = run.split_seed;
  report["best_epoch"] = run.best_epoch;
  report["config"] = run.best_checkpoint.metadata.value("config", std::string());
  std::ofstream(dir / "report.json", std::ios::trunc) << report.dump(2) << '\n';
}

ProtocolResult run_protocol(const TrainConfig& config, const std::vector<dataset::PatientRecord>& patients,
                            const FeatureStore& store, std::size_t n_splits, std::size_t runs_per_split,
                            std::uint64_t split_seed) {
  if (n_splits == 0 || runs_per_split == 0) throw PreconditionError("protocol needs at least one split and run");
  ProtocolResult out;
  std::vector<eval::MetricsReport> reports;
  for (std::size_t s = 0; s < n_splits; ++s) {
    const auto split = dataset::stratified_split(patients, split_seed + s);
    for (std::size_t r = 0; r < runs_per_split; ++r) {
      TrainConfig run_config = config;
      run_config.seed = config.seed + 1000 * s + r;
      out.runs.push_back(train_one(run_config, split, patients, store));
      reports.push_back(out.runs.back().test_report);
    }
  }
  out.mean = eval::mean_report(reports);
  return out;
}

}  // namespace heartmur::train
