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

#include "cli.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "heartmur/audio.h"
#include "heartmur/dataset.h"
#include "heartmur/errors.h"
#include "heartmur/eval.h"
#include "heartmur/features.h"
#include "heartmur/nn.h"
#include "heartmur/random.h"
#include "heartmur/train.h"
#include "json.hpp"

namespace heartmur::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad flags or flag values, detected after CLI11 has parsed the line.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Globals {
  unsigned threads = 1;
  bool quiet = false;
  bool json_output = false;
};

struct Source {
  std::string data_dir;
  std::string manifest;
};

void add_source(CLI::App* cmd, Source& src) {
  auto* d = cmd->add_option("--data-dir", src.data_dir, "CirCor-style directory (*.txt headers + WAVs)");
  auto* m = cmd->add_option("--manifest", src.manifest, "CSV manifest: patient_id,label,wav_path");
  d->excludes(m);
}

std::vector<dataset::PatientRecord> load_patients(const Source& src, const Globals& g, std::ostream& err) {
  if (src.data_dir.empty() && src.manifest.empty()) throw UsageError("one of --data-dir or --manifest is required");
  if (!src.manifest.empty()) return dataset::ingest_manifest(src.manifest);
  dataset::IngestReport report;
  auto patients = dataset::ingest_circor(src.data_dir, &report);
  if (!g.quiet) {
    for (const auto& w : report.warnings) err << "warning: " << w << '\n';
    for (const auto& id : report.skipped_patients) err << "warning: skipped patient " << id << '\n';
  }
  return patients;
}

std::vector<std::string> split_ids(const dataset::SplitAssignment& split) {
  std::vector<std::string> ids = split.train;
  ids.insert(ids.end(), split.validation.begin(), split.validation.end());
  ids.insert(ids.end(), split.test.begin(), split.test.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct FeatureSpec {
  bool embeddings = false;
  fs::path path;
};

FeatureSpec parse_feature_spec(const std::string& text) {
  if (text == "logmel") return {};
  const std::string prefix = "embeddings:";
  if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size()) return {true, text.substr(prefix.size())};
  throw UsageError("--features must be 'logmel' or 'embeddings:PATH', got '" + text + "'");
}

train::FeatureStore load_features(const FeatureSpec& spec, const std::vector<dataset::PatientRecord>& patients,
                                  bool keep_spectrograms, const Globals& g) {
  if (spec.embeddings) return train::load_embedding_features(patients, dataset::read_embeddings(spec.path));
  return train::extract_logmel_features(patients, {}, keep_spectrograms, g.threads);
}

eval::PatientRule parse_rule(const std::string& text) {
  if (text == "decision") return eval::PatientRule::Decision;
  if (text == "prob-average") return eval::PatientRule::ProbAverage;
  throw UsageError("--rule must be 'decision' or 'prob-average'");
}

std::map<std::string, MurmurLabel> truth_of(const std::vector<dataset::PatientRecord>& patients) {
  std::map<std::string, MurmurLabel> out;
  for (const auto& p : patients) out[p.patient_id] = p.label;
  return out;
}

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void print_report(const std::string& name, const eval::MetricsReport& report, std::size_t runs, const Globals& g,
                  std::ostream& out) {
  if (g.json_output)
    out << eval::report_to_json(report, runs).dump(2) << '\n';
  else
    out << eval::format_table({{name, report}});
}

// Accepts a run directory or the file itself.
fs::path run_file(const fs::path& p, const char* name) { return fs::is_directory(p) ? p / name : p; }

// --- commands -------------------------------------------------------------

struct SplitArgs {
  Source src;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_split(const SplitArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto patients = load_patients(a.src, g, err);
  const auto split = dataset::stratified_split(patients, a.seed);
  const auto truth = truth_of(patients);
  dataset::write_split(split, a.out);

  json counts = json::object();
  for (const auto& [fold, ids] : {std::pair{"train", &split.train}, std::pair{"validation", &split.validation},
                                  std::pair{"test", &split.test}}) {
    std::array<std::size_t, kNumClasses> per{};
    for (const auto& id : *ids) ++per[index_of(truth.at(id))];
    counts[fold] = {{"patients", ids->size()}, {"present", per[0]}, {"unknown", per[1]}, {"absent", per[2]}};
  }
  if (g.json_output) {
    out << counts.dump(2) << '\n';
  } else if (!g.quiet) {
    out << std::left << std::setw(12) << "fold" << std::right << std::setw(9) << "patients" << std::setw(9)
        << "Present" << std::setw(9) << "Unknown" << std::setw(9) << "Absent" << '\n';
    for (const char* fold : {"train", "validation", "test"}) {
      const auto& c = counts[fold];
      out << std::left << std::setw(12) << fold << std::right << std::setw(9) << c["patients"].get<std::size_t>()
          << std::setw(9) << c["present"].get<std::size_t>() << std::setw(9) << c["unknown"].get<std::size_t>()
          << std::setw(9) << c["absent"].get<std::size_t>() << '\n';
    }
  }
  return kOk;
}

struct FeaturizeArgs {
  Source src;
  std::string out;
  std::string dump_csv;
};

int cmd_featurize(const FeaturizeArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto patients = load_patients(a.src, g, err);
  const auto store = train::extract_logmel_features(patients, {}, !a.dump_csv.empty(), g.threads);
  dataset::EmbeddingSet set;
  set.dim = store.dim;
  for (const auto& [rec, f] : store.recordings)
    for (const auto& [grid, v] : f.vectors) set.entries[{rec, static_cast<std::uint32_t>(grid)}] = v;
  dataset::write_embeddings(set, a.out);
  std::size_t dumped = 0;
  if (!a.dump_csv.empty()) {
    fs::create_directories(a.dump_csv);
    for (const auto& [rec, f] : store.recordings)
      for (const auto& [grid, spec] : f.spectrograms) {
        std::ofstream csv(fs::path(a.dump_csv) / (rec + "_" + std::to_string(grid) + ".csv"), std::ios::trunc);
        features::write_csv(spec, csv);
        ++dumped;
      }
  }
  if (!g.quiet)
    out << "wrote " << set.entries.size() << " vectors of dim " << set.dim << " for " << store.recordings.size()
        << " recordings to " << a.out << (dumped ? " (" + std::to_string(dumped) + " spectrogram CSVs)" : "")
        << '\n';
  return kOk;
}

struct TrainArgs {
  Source src;
  std::string config;
  std::string split;
  std::string features = "logmel";
  std::string outdir;
  std::size_t max_epochs = std::numeric_limits<std::size_t>::max();
};

int cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  train::TrainConfig config;
  try {
    config = train::read_config(a.config);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  const auto spec = parse_feature_spec(a.features);
  if ((config.backbone == train::Backbone::Mlp) == spec.embeddings)
    throw UsageError(config.backbone == train::Backbone::Mlp ? "the mlp backbone needs --features logmel"
                                                               : "the embedding-probe backbone needs --features embeddings:PATH");
  const auto split = dataset::read_split(a.split);
  const auto patients = dataset::select_patients(load_patients(a.src, g, err), split_ids(split));
  const bool augment = config.specaugment && !config.specaugment->is_identity();
  const auto store = load_features(spec, patients, augment, g);

  if (a.max_epochs == 0) throw UsageError("--max-epochs must be positive");
  const auto run = train::train_one(config, split, patients, store, a.max_epochs);
  train::write_run_outputs(run, a.outdir);
  if (g.json_output) {
    out << json{{"best_epoch", run.best_epoch},
                {"best_validation_metric", run.best_metric},
                {"test", eval::report_to_json(run.test_report, 1)}}
               .dump(2)
        << '\n';
  } else if (!g.quiet) {
    out << "best epoch " << run.best_epoch << " (validation " << run.best_metric << "), outputs in " << a.outdir
        << '\n';
    out << eval::format_table({{"test", run.test_report}});
  }
  return kOk;
}

struct EvaluateArgs {
  Source src;
  std::string checkpoint;
  std::string split;
  std::string fold = "test";
  std::string rule = "decision";
  std::string features = "logmel";
  std::string out;
  std::string report;
};

int cmd_evaluate(const EvaluateArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto rule = parse_rule(a.rule);
  const auto spec = parse_feature_spec(a.features);
  if (a.fold != "train" && a.fold != "validation" && a.fold != "test")
    throw UsageError("--fold must be train, validation or test");
  auto model = train::load_model(nn::read_checkpoint(a.checkpoint));
  const auto split = dataset::read_split(a.split);
  const auto& ids = a.fold == "train" ? split.train : a.fold == "validation" ? split.validation : split.test;
  if (ids.empty()) throw DataError("fold '" + a.fold + "' is empty");
  const auto patients = dataset::select_patients(load_patients(a.src, g, err), ids);
  const auto store = load_features(spec, patients, false, g);
  const auto result = train::evaluate_fold(model, patients, store, rule);

  eval::write_predictions(result.predictions, a.out);
  if (!a.report.empty()) write_json(eval::report_to_json(result.report, 1), a.report);
  if (!g.quiet || g.json_output) print_report(a.fold, result.report, 1, g, out);
  return kOk;
}

struct EnsembleArgs {
  Source src;
  std::vector<std::string> runs_a;
  std::vector<std::string> runs_b;
  std::size_t expected = 5;
  std::string rule = "decision";
  std::string out;
};

int cmd_ensemble(const EnsembleArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto rule = parse_rule(a.rule);
  if (a.runs_a.size() != a.expected || a.runs_b.size() != a.expected)
    throw UsageError("--runs-a and --runs-b need exactly " + std::to_string(a.expected) + " runs each (got " +
                     std::to_string(a.runs_a.size()) + " and " + std::to_string(a.runs_b.size()) + ")");
  const auto truth = truth_of(load_patients(a.src, g, err));

  std::map<std::string, std::string> patient_of;
  auto load_side = [&](const std::vector<std::string>& dirs) {
    std::vector<eval::PredictionSet> sets;
    for (const auto& d : dirs) {
      const auto preds = eval::read_predictions(run_file(d, "test_predictions.json"));
      for (const auto& p : preds) {
        const auto [it, inserted] = patient_of.emplace(p.recording_id, p.patient_id);
        if (!inserted && it->second != p.patient_id)
          throw DataError("recording " + p.recording_id + " is assigned to two patients");
      }
      sets.push_back(eval::to_prediction_set(preds));
    }
    return sets;
  };
  const auto side_a = load_side(a.runs_a);
  const auto side_b = load_side(a.runs_b);
  const auto merged = eval::ensemble_two(side_a, side_b);

  std::vector<eval::RecordingPrediction> preds;
  for (const auto& [rec, probs] : merged) {
    eval::RecordingPrediction p;
    p.recording_id = rec;
    p.patient_id = patient_of.at(rec);
    p.probs = probs;
    p.logits.kind = eval::ScoreKind::Logits;
    for (std::size_t c = 0; c < kNumClasses; ++c) p.logits.values[c] = std::log(probs.values[c]);
    preds.push_back(std::move(p));
  }
  std::map<std::string, MurmurLabel> subset;
  for (const auto& p : preds) {
    const auto it = truth.find(p.patient_id);
    if (it == truth.end()) throw DataError("patient " + p.patient_id + " is not in the dataset");
    subset[p.patient_id] = it->second;
  }
  const auto report = eval::score_patients(eval::patient_labels(preds, rule), subset);

  fs::create_directories(a.out);
  eval::write_predictions(preds, fs::path(a.out) / "test_predictions.json");
  auto j = eval::report_to_json(report, 1);
  j["members"] = {{"a", a.runs_a}, {"b", a.runs_b}};
  write_json(j, fs::path(a.out) / "report.json");
  if (!g.quiet || g.json_output) print_report("ensemble", report, 1, g, out);
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string name = "mean";
  std::string out;
};

std::string strip_seed(const std::string& config) {
  std::istringstream in(config);
  std::string line, kept;
  while (std::getline(in, line))
    if (line.rfind("seed", 0) != 0) kept += line + '\n';
  return kept;
}

int cmd_report(const ReportArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  std::vector<eval::MetricsReport> reports;
  std::optional<std::string> first_config;
  for (const auto& r : a.runs) {
    const auto path = run_file(r, "report.json");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    reports.push_back(eval::report_from_json(j));
    const std::string config = strip_seed(j.value("config", std::string()));
    if (!first_config) {
      first_config = config;
    } else if (config != *first_config && !g.quiet) {
      err << "warning: " << path.string() << " was trained with a different config than " << a.runs.front() << '\n';
    }
  }
  const auto mean = eval::mean_report(reports);
  if (!a.out.empty()) write_json(eval::report_to_json(mean, reports.size()), a.out);
  print_report(a.name, mean, reports.size(), g, out);
  return kOk;
}

struct SynthArgs {
  std::string out;
  dataset::SyntheticSpec spec;
};

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  if (a.spec.patients_per_class == 0 || a.spec.recordings_per_patient == 0)
    throw UsageError("--patients-per-class and --recordings must be positive");
  const auto patients = dataset::generate_synthetic(a.spec, a.out);
  if (!g.quiet)
    out << "wrote " << patients.size() << " patients to " << a.out << " (manifest "
        << (fs::path(a.out) / "manifest.csv").string() << ")\n";
  return kOk;
}

struct GradcheckArgs {
  std::string backbone = "mlp";
  std::size_t dim = 16;
  std::vector<std::size_t> hidden = {8, 4};
  std::size_t batch = 4;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  if (a.backbone != "mlp" && a.backbone != "head") throw UsageError("--backbone must be mlp or head");
  if (a.batch < 2 || a.dim == 0) throw UsageError("--batch must be at least 2 and --dim positive");
  const std::vector<std::size_t> hidden = a.backbone == "mlp" ? a.hidden : std::vector<std::size_t>{};
  // Redraw until the finite differences themselves are accurate enough to
  // judge the autodiff gradients (see gradcheck_conditioned).
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Rng rng(derive_seed(a.seed, attempt));
    auto model = nn::Classifier<double>::create(a.dim, hidden, rng);
    nn::randomize_for_gradcheck(model, rng);
    nn::Tensor<double> x({a.batch, a.dim});
    for (auto& v : x.values) v = rng.normal();
    std::vector<int> labels(a.batch);
    for (std::size_t i = 0; i < a.batch; ++i) labels[i] = static_cast<int>(i % kNumClasses);
    const std::array<double, 3> weights = {1.0 + rng.uniform(), 1.0 + rng.uniform(), 1.0 + rng.uniform()};
    if (!nn::gradcheck_conditioned(model, x, labels, weights)) continue;
    const auto r = nn::gradient_check(model, x, labels, weights);
    const bool ok = r.max_rel_error < 1e-4;
    if (g.json_output)
      out << json{{"max_rel_error", r.max_rel_error}, {"worst", r.worst_parameter}, {"checked", r.checked},
                  {"pass", ok}}
                 .dump(2)
          << '\n';
    else
      out << "max relative error " << std::scientific << std::setprecision(3) << r.max_rel_error << " at "
          << r.worst_parameter << " over " << r.checked << " parameters: " << (ok ? "ok" : "FAILED") << '\n';
    return ok ? kOk : kNumericsError;
  }
  err << "could not draw a well-conditioned model and batch\n";
  return kNumericsError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Heart murmur classification pipeline", "heartmur"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads for feature extraction")->check(CLI::Range(1u, 1024u));
  app.add_flag("--quiet", g.quiet, "Suppress progress output and warnings");
  app.add_flag("--json", g.json_output, "Machine-readable output");

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Stratified patient-level train/validation/test split");
  add_source(c_split, split.src);
  c_split->add_option("--seed", split.seed, "Split seed");
  c_split->add_option("--out", split.out, "Split JSON to write")->required();

  FeaturizeArgs feat;
  auto* c_feat = app.add_subcommand("featurize", "Pooled log-mel features for every window, as an embedding file");
  add_source(c_feat, feat.src);
  c_feat->add_option("--out", feat.out, "Embedding file to write")->required();
  c_feat->add_option("--dump-csv", feat.dump_csv, "Directory for per-window spectrogram CSVs");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train one model on one split");
  add_source(c_train, tr.src);
  c_train->add_option("--config", tr.config, "Config file")->required();
  c_train->add_option("--split", tr.split, "Split JSON")->required();
  c_train->add_option("--features", tr.features, "logmel or embeddings:PATH");
  c_train->add_option("--outdir", tr.outdir, "Run output directory")->required();
  c_train->add_option("--max-epochs", tr.max_epochs, "Stop early; the lr schedule still spans the configured epochs");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Score a checkpoint on one fold");
  add_source(c_eval, ev.src);
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--split", ev.split, "Split JSON")->required();
  c_eval->add_option("--fold", ev.fold, "train, validation or test");
  c_eval->add_option("--rule", ev.rule, "decision or prob-average");
  c_eval->add_option("--features", ev.features, "logmel or embeddings:PATH");
  c_eval->add_option("--out", ev.out, "Prediction JSON to write")->required();
  c_eval->add_option("--report", ev.report, "Report JSON to write");

  EnsembleArgs en;
  auto* c_ens = app.add_subcommand("ensemble", "Average two sets of runs");
  add_source(c_ens, en.src);
  c_ens->add_option("--runs-a", en.runs_a, "Run directories of the first model")->required();
  c_ens->add_option("--runs-b", en.runs_b, "Run directories of the second model")->required();
  c_ens->add_option("--expected", en.expected, "Runs required per side");
  c_ens->add_option("--rule", en.rule, "decision or prob-average");
  c_ens->add_option("--out", en.out, "Output directory")->required();

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Mean metrics over run reports");
  c_rep->add_option("--runs", rep.runs, "Run directories or report files")->required();
  c_rep->add_option("--name", rep.name, "Row label");
  c_rep->add_option("--out", rep.out, "Report JSON to write");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate a synthetic dataset");
  c_syn->add_option("--out", syn.out, "Output directory")->required();
  c_syn->add_option("--patients-per-class", syn.spec.patients_per_class, "Patients per class")->capture_default_str();
  c_syn->add_option("--recordings", syn.spec.recordings_per_patient, "Recordings per patient")->capture_default_str();
  c_syn->add_option("--seed", syn.spec.seed, "Seed")->capture_default_str();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare autodiff gradients with finite differences");
  c_gc->add_option("--backbone", gc.backbone, "mlp or head");
  c_gc->add_option("--dim", gc.dim, "Input dimension");
  c_gc->add_option("--hidden", gc.hidden, "Hidden sizes (mlp)")->delimiter(',');
  c_gc->add_option("--batch", gc.batch, "Batch size");
  c_gc->add_option("--seed", gc.seed, "Seed");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    if (c_split->parsed()) return cmd_split(split, g, out, err);
    if (c_feat->parsed()) return cmd_featurize(feat, g, out, err);
    if (c_train->parsed()) return cmd_train(tr, g, out, err);
    if (c_eval->parsed()) return cmd_evaluate(ev, g, out, err);
    if (c_ens->parsed()) return cmd_ensemble(en, g, out, err);
    if (c_rep->parsed()) return cmd_report(rep, g, out, err);
    if (c_syn->parsed()) return cmd_synth(syn, g, out, err);
    if (c_gc->parsed()) return cmd_gradcheck(gc, g, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  } catch (const NumericsError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericsError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}

}  // namespace heartmur::cli
