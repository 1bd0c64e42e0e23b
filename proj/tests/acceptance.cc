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

// One PASS/FAIL line per acceptance criterion. Tolerances and time budgets
// are fixed here; the exit status is non-zero if any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <malloc.h>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "heartmur/audio.h"
#include "heartmur/dataset.h"
#include "heartmur/eval.h"
#include "heartmur/nn.h"
#include "heartmur/train.h"
#include "support.h"

using namespace heartmur;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

int failures = 0;

void criterion(const char* name, double budget_s, const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    if (v.pass) v.detail = "over the " + std::to_string(budget_s) + " s budget";
    v.pass = false;
  }
  std::printf("%s  %-28s %8.2f s  %s\n", v.pass ? "PASS" : "FAIL", name, secs, v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(6);
  s << x;
  return s.str();
}

// --- metrics ----------------------------------------------------------------

Verdict metric_fidelity() {
  Verdict v;
  const double uar = eval::unweighted_average_recall(std::array<double, 3>{0.911, 0.361, 0.868});
  v.require(std::abs(uar - 0.713) <= 5e-4, "UAR " + fmt(uar));

  Rng rng(2026);
  for (int t = 0; t < 1000; ++t) {
    eval::ConfusionCounts cc;
    std::array<std::size_t, 3> hits{}, totals{};
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        cc.matrix[i][j] = static_cast<std::size_t>(rng.uniform_int(i == 0 ? 1 : 0, 60));
        totals[i] += cc.matrix[i][j];
      }
    for (std::size_t i = 0; i < 3; ++i) hits[i] = cc.matrix[i][i];
    const double oracle = static_cast<double>(5 * hits[0] + 3 * hits[1] + hits[2]) /
                          static_cast<double>(5 * totals[0] + 3 * totals[1] + totals[2]);
    const double got = eval::weighted_accuracy(cc);
    v.require(got == oracle, "W.acc " + fmt(got) + " vs " + fmt(oracle) + " at trial " + std::to_string(t));
  }
  if (v.pass) v.detail = "UAR " + fmt(uar) + ", 1000 W.acc matrices exact";
  return v;
}

// --- decision rule -------------------------------------------------------------

MurmurLabel literal_rule(const std::vector<MurmurLabel>& labels) {
  for (auto l : labels)
    if (l == MurmurLabel::Present) return MurmurLabel::Present;
  for (auto l : labels)
    if (l == MurmurLabel::Unknown) return MurmurLabel::Unknown;
  return MurmurLabel::Absent;
}

Verdict decision_rule() {
  Verdict v;
  std::size_t cases = 0;
  Rng rng(5);
  for (std::size_t len = 1; len <= 4; ++len) {
    std::size_t combos = 1;
    for (std::size_t i = 0; i < len; ++i) combos *= 3;
    for (std::size_t code = 0; code < combos; ++code) {
      std::vector<MurmurLabel> labels;
      std::vector<eval::ClassScores> probs;
      for (std::size_t i = 0, c = code; i < len; ++i, c /= 3) {
        labels.push_back(label_at(c % 3));
        // random probabilities whose strict argmax is the chosen class
        eval::ClassScores s;
        s.kind = eval::ScoreKind::Probabilities;
        double rest = 0;
        for (std::size_t k = 0; k < 3; ++k) rest += (s.values[k] = rng.uniform(0.0, 1.0));
        s.values[c % 3] = rest;
        double sum = 0;
        for (double x : s.values) sum += x;
        for (double& x : s.values) x /= sum;
        probs.push_back(s);
      }
      v.require(eval::patient_label_rule(probs) == literal_rule(labels), "mismatch at length " + std::to_string(len));
      ++cases;
    }
  }
  v.require(cases == 120, "enumerated " + std::to_string(cases));
  if (v.pass) v.detail = std::to_string(cases) + " sequences";
  return v;
}

// --- ensemble -------------------------------------------------------------------

Verdict ensemble_identity() {
  Verdict v;
  Rng rng(99);
  auto random_set = [&] {
    eval::PredictionSet set;
    for (int r = 0; r < 40; ++r) {
      eval::ClassScores s;
      s.kind = eval::ScoreKind::Probabilities;
      double sum = 0;
      for (double& x : s.values) sum += (x = rng.uniform(0.01, 1.0));
      for (double& x : s.values) x /= sum;
      set["rec" + std::to_string(r)] = s;
    }
    return set;
  };
  std::vector<eval::PredictionSet> a, b;
  for (int i = 0; i < 5; ++i) a.push_back(random_set());
  for (int i = 0; i < 5; ++i) b.push_back(random_set());
  const auto merged = eval::ensemble_two(a, b);
  v.require(merged.size() == 40, "recording count");
  double worst = 0;
  for (const auto& [rec, s] : merged)
    for (std::size_t c = 0; c < 3; ++c) {
      double ma = 0, mb = 0;
      for (const auto& set : a) ma += set.at(rec).values[c];
      for (const auto& set : b) mb += set.at(rec).values[c];
      worst = std::max(worst, std::abs(s.values[c] - (ma / 5 + mb / 5) / 2));
    }
  v.require(worst <= 1e-12, "max deviation " + fmt(worst));
  if (v.pass) v.detail = "max deviation " + fmt(worst);
  return v;
}

// --- gradients -------------------------------------------------------------------

double train_loss(nn::Classifier<double>& model, const nn::Tensor<double>& x, std::span<const int> y,
                  const std::array<double, 3>& w) {
  nn::NoGradGuard guard;
  return nn::weighted_cross_entropy(model.forward(x, nn::Mode::Train), y, w)->value.values[0];
}

Verdict gradients() {
  Verdict v;
  std::size_t checked = 0, attempts = 0;
  double worst = 0;
  Rng shapes(314);
  while (checked < 50 && attempts < 5000) {
    ++attempts;
    const auto dim = static_cast<std::size_t>(shapes.uniform_int(1, 16));
    const auto batch = static_cast<std::size_t>(shapes.uniform_int(2, 8));
    std::vector<std::size_t> hidden;
    if (attempts % 2 == 0) hidden = {static_cast<std::size_t>(shapes.uniform_int(2, 12)),
                                     static_cast<std::size_t>(shapes.uniform_int(2, 8))};
    Rng rng(derive_seed(17, attempts));
    auto model = nn::Classifier<double>::create(dim, hidden, rng);
    nn::randomize_for_gradcheck(model, rng);
    nn::Tensor<double> x({batch, dim});
    for (auto& e : x.values) e = rng.normal();
    std::vector<int> y(batch);
    for (auto& l : y) l = static_cast<int>(rng.uniform_int(0, 2));
    const std::array<double, 3> w = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    if (!nn::gradcheck_conditioned(model, x, y, w)) continue;

    model.zero_grad();
    nn::backward(nn::weighted_cross_entropy(model.forward(x, nn::Mode::Train), y, w));
    const double h = 1e-3;
    for (const auto& p : model.parameters())
      for (std::size_t i = 0; i < p->value.values.size(); ++i) {
        const double saved = p->value.values[i];
        p->value.values[i] = saved + h;
        const double up = train_loss(model, x, y, w);
        p->value.values[i] = saved - h;
        const double down = train_loss(model, x, y, w);
        p->value.values[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double analytic = p->grad[i];
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), nn::kGradCheckFloor});
        worst = std::max(worst, rel);
        v.require(rel < 1e-4, p->name + " rel " + fmt(rel));
      }
    ++checked;
  }
  v.require(checked == 50, "only " + std::to_string(checked) + " conditioned configurations");
  if (v.pass) v.detail = std::to_string(checked) + " configs, max rel " + fmt(worst);
  return v;
}

// --- schedule and optimizer -------------------------------------------------------

Verdict schedule_optimizer() {
  Verdict v;
  const nn::ScheduleConfig s{0.001, 5, 50, 10};
  const std::size_t warm = 50, total = 500;
  const std::size_t mid = warm + (total - warm) / 2;
  v.require(std::abs(nn::lr_at(s, warm) - 0.001) < 1e-15, "warmup end " + fmt(nn::lr_at(s, warm)));
  v.require(std::abs(nn::lr_at(s, mid) - 0.0005) < 1e-15, "midpoint " + fmt(nn::lr_at(s, mid)));
  v.require(nn::lr_at(s, total - 1) < 1e-6, "final step " + fmt(nn::lr_at(s, total - 1)));

  Rng rng(8);
  nn::Tensor<double> t({4, 3});
  for (auto& e : t.values) e = rng.normal();
  auto p = nn::parameter(t, "w");
  p->grad.assign(t.size(), 0.0);
  const double lr = 0.003, wd = 0.05;
  nn::AdamW<double> opt({0.9, 0.999, 1e-8, wd});
  opt.step({p}, lr);
  for (std::size_t i = 0; i < t.size(); ++i)
    v.require(p->value.values[i] == t.values[i] * (1.0 - lr * wd), "decay step not exact");
  if (v.pass) v.detail = "warmup/midpoint/final lr and exact decay";
  return v;
}

// --- segmentation ----------------------------------------------------------------

Verdict segmentation() {
  Verdict v;
  Rng rng(1000);
  const auto longest = static_cast<std::size_t>(120 * audio::kModelRate) + 1;
  std::vector<float> source(longest);
  for (std::size_t i = 0; i < longest; ++i) source[i] = static_cast<float>(i % 65521) + 1.0f;
  audio::Waveform w;
  w.sample_rate = audio::kModelRate;
  w.samples.reserve(longest);
  std::vector<float> rebuilt;
  rebuilt.reserve(longest + audio::kSegmentSamples);
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<std::size_t>(std::llround(rng.uniform(0.1, 120.0) * audio::kModelRate));
    std::vector<std::pair<std::size_t, std::size_t>> train, test;  // (start, padding)
    for (std::size_t start = 0; start < n; start += 40000) {
      const std::size_t pad = 80000 - std::min<std::size_t>(80000, n - start);
      if (2 * pad < 80000) train.emplace_back(start, pad);
    }
    if (train.empty()) train.emplace_back(0, 80000 - n);
    for (std::size_t start = 0; start < n; start += 80000)
      test.emplace_back(start, 80000 - std::min<std::size_t>(80000, n - start));

    w.samples.assign(source.begin(), source.begin() + static_cast<long>(n));

    const auto tr = audio::segment_train(w);
    v.require(tr.size() == train.size(), "train count at n=" + std::to_string(n));
    for (std::size_t k = 0; k < std::min(tr.size(), train.size()); ++k)
      v.require(tr[k].start_sample == train[k].first && tr[k].padded_samples == train[k].second &&
                    tr[k].samples.size() == audio::kSegmentSamples,
                "train window at n=" + std::to_string(n));

    const auto te = audio::segment_test(w);
    v.require(te.size() == test.size(), "test count at n=" + std::to_string(n));
    rebuilt.clear();
    for (std::size_t k = 0; k < std::min(te.size(), test.size()); ++k) {
      v.require(te[k].start_sample == test[k].first && te[k].padded_samples == test[k].second,
                "test window at n=" + std::to_string(n));
      const auto keep = te[k].samples.size() - te[k].padded_samples;
      rebuilt.insert(rebuilt.end(), te[k].samples.begin(), te[k].samples.begin() + static_cast<long>(keep));
      v.require(std::all_of(te[k].samples.begin() + static_cast<long>(keep), te[k].samples.end(),
                            [](float x) { return x == 0.0f; }),
                "nonzero pad at n=" + std::to_string(n));
    }
    v.require(rebuilt == w.samples, "reconstruction at n=" + std::to_string(n));
  }
  if (v.pass) v.detail = "1000 durations";
  return v;
}

// --- end to end ------------------------------------------------------------------

struct Pipeline {
  std::vector<dataset::PatientRecord> patients;
  dataset::SplitAssignment split;
  train::FeatureStore store;
  train::RunResult full;
  train::RunResult one_epoch;
};

train::TrainConfig e2e_config() {
  auto c = train::TrainConfig::mlp_defaults();
  c.epochs = 50;
  return c;
}

std::string run_bytes(const train::RunResult& run, const fs::path& dir) {
  train::write_run_outputs(run, dir);
  std::string all;
  for (const char* f : {"checkpoint.hsck", "test_predictions.json", "report.json", "val_curve.csv"})
    all += testing::read_bytes(dir / f) + '\0';
  return all;
}

Verdict end_to_end(const fs::path& root, Pipeline& pipe) {
  Verdict v;
  pipe.patients = dataset::generate_synthetic({20, 4, 7}, root / "synth");
  pipe.split = dataset::stratified_split(pipe.patients, 0);
  pipe.store = train::extract_logmel_features(pipe.patients, {}, true, 1);
  pipe.full = train::train_one(e2e_config(), pipe.split, pipe.patients, pipe.store);
  const auto& r = pipe.full.test_report;
  v.require(r.w_acc >= 0.9, "W.acc " + fmt(r.w_acc));
  v.require(r.uar >= 0.85, "UAR " + fmt(r.uar));
  v.detail = (v.pass ? "" : v.detail + "; ") + "W.acc " + fmt(r.w_acc) + ", UAR " + fmt(r.uar) + ", best epoch " +
             std::to_string(pipe.full.best_epoch) + " (validation W.acc " + fmt(pipe.full.best_metric) + ")";
  return v;
}

Verdict ablations(Pipeline& pipe) {
  Verdict v;
  // (a) rule-off: look for a configuration where probability averaging and
  // the decision rule disagree at the confusion-matrix level.
  pipe.one_epoch = train::train_one(e2e_config(), pipe.split, pipe.patients, pipe.store, 1);
  const auto test = dataset::select_patients(pipe.patients, pipe.split.test);
  bool differs = false;
  std::string which;
  for (const auto* run : {&pipe.full, &pipe.one_epoch}) {
    auto model = train::load_model(run->best_checkpoint);
    const auto decision = train::evaluate_fold(model, test, pipe.store, eval::PatientRule::Decision);
    const auto average = train::evaluate_fold(model, test, pipe.store, eval::PatientRule::ProbAverage);
    if (decision.report.confusion.matrix != average.report.confusion.matrix) {
      differs = true;
      which = run == &pipe.full ? "50-epoch" : "1-epoch";
      break;
    }
  }
  v.require(differs, "prob-average matched the decision rule on every configuration");
  // (c) under-trained model scores lower
  const double w1 = pipe.one_epoch.test_report.w_acc, w50 = pipe.full.test_report.w_acc;
  v.require(w1 < w50, "1-epoch W.acc " + fmt(w1) + " not below " + fmt(w50));
  if (v.pass) v.detail = "rules differ on the " + which + " model; W.acc 1 epoch " + fmt(w1) + " < 50 epochs " + fmt(w50);
  return v;
}

Verdict determinism(const fs::path& root, const Pipeline& pipe) {
  Verdict v;
  const auto again_patients = dataset::generate_synthetic({20, 4, 7}, root / "synth2");
  const auto again_split = dataset::stratified_split(again_patients, 0);
  v.require(dataset::split_to_json(again_split) == dataset::split_to_json(pipe.split), "split differs");
  const auto store = train::extract_logmel_features(again_patients, {}, true, 1);
  const auto rerun = train::train_one(e2e_config(), again_split, again_patients, store);
  v.require(run_bytes(pipe.full, root / "run_a") == run_bytes(rerun, root / "run_b"), "run outputs differ");
  if (v.pass) v.detail = "checkpoint, predictions, report and curve byte-identical";
  return v;
}

// --- embedding bridge ---------------------------------------------------------------

Verdict embedding_bridge(const fs::path& root) {
  Verdict v;
  Rng rng(64);
  dataset::EmbeddingSet big;
  big.dim = 32;
  for (std::uint32_t i = 0; i < 10000; ++i) {
    std::vector<float> e(big.dim);
    for (auto& x : e) x = static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform(-8.0, 8.0)));
    big.entries[{"r" + std::to_string(i % 997), i}] = std::move(e);
  }
  dataset::write_embeddings(big, root / "big.hseb");
  const auto back = dataset::read_embeddings(root / "big.hseb");
  bool exact = back.dim == big.dim && back.entries.size() == big.entries.size();
  for (auto a = big.entries.cbegin(), b = back.entries.cbegin(); exact && a != big.entries.end(); ++a, ++b)
    exact = a->first == b->first &&
            std::memcmp(a->second.data(), b->second.data(), a->second.size() * sizeof(float)) == 0;
  v.require(exact, "round trip not bit-exact");

  // Class-separable Gaussian embeddings for one-window recordings.
  const std::size_t dim = 64;
  std::array<std::vector<float>, 3> centers;
  for (auto& c : centers) {
    c.resize(dim);
    for (auto& x : c) x = static_cast<float>(rng.normal() * 2.0);
  }
  fs::create_directories(root / "emb");
  const std::string wav = testing::make_wav(std::vector<std::int16_t>(4000), 4000);  // 1 s of silence
  std::vector<dataset::PatientRecord> patients;
  dataset::EmbeddingSet set;
  set.dim = dim;
  for (std::size_t cls = 0; cls < 3; ++cls)
    for (int p = 0; p < 30; ++p) {
      dataset::PatientRecord rec;
      rec.patient_id = std::string(1, "PUA"[cls]) + std::to_string(p);
      rec.label = label_at(cls);
      for (int r = 0; r < 2; ++r) {
        const std::string id = rec.patient_id + "_" + std::to_string(r);
        testing::write_bytes(root / "emb" / (id + ".wav"), wav);
        rec.recordings.push_back({id, root / "emb" / (id + ".wav")});
        std::vector<float> e(dim);
        for (std::size_t k = 0; k < dim; ++k) e[k] = centers[cls][k] + static_cast<float>(rng.normal());
        set.entries[{id, 0}] = std::move(e);
      }
      patients.push_back(std::move(rec));
    }
  const auto split = dataset::stratified_split(patients, 0);
  const auto store = train::load_embedding_features(patients, set);
  const auto run = train::train_one(train::TrainConfig::embedding_probe_defaults(), split, patients, store);
  v.require(run.test_report.w_acc >= 0.95, "probe W.acc " + fmt(run.test_report.w_acc));
  if (v.pass) v.detail = "10000 vectors bit-exact; probe W.acc " + fmt(run.test_report.w_acc);
  return v;
}

}  // namespace

int main() {
  // Keep freed segment buffers in the heap instead of handing them back to
  // the kernel after every recording; otherwise page faults dominate the
  // timings and vary run to run.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  testing::TempDir root;
  criterion("metric fidelity", 1, metric_fidelity);
  criterion("decision rule", 1, decision_rule);
  criterion("ensemble identity", 1, ensemble_identity);
  criterion("gradient correctness", 30, gradients);
  criterion("schedule and optimizer", 1, schedule_optimizer);
  criterion("segmentation", 5, segmentation);
  Pipeline pipe;
  criterion("end-to-end synthetic run", 300, [&] { return end_to_end(root.path(), pipe); });
  criterion("ablation directions", 300, [&] { return ablations(pipe); });
  criterion("determinism", 600, [&] { return determinism(root.path(), pipe); });
  criterion("embedding bridge", 60, [&] { return embedding_bridge(root.path()); });
  std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
