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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <set>

#include "heartmur/audio.h"
#include "heartmur/dataset.h"
#include "heartmur/errors.h"
#include "heartmur/random.h"
#include "support.h"

using namespace heartmur;
using namespace heartmur::dataset;
using heartmur::testing::TempDir;

namespace {

void write_header(const std::filesystem::path& dir, const std::string& id, const std::vector<std::string>& locs,
                  const std::string& murmur_line) {
  std::ofstream out(dir / (id + ".txt"));
  out << id << ' ' << locs.size() << " 4000\n";
  for (const auto& loc : locs) out << loc << ' ' << id << '_' << loc << ".hea " << id << '_' << loc << ".wav\n";
  out << "#Age: Child\n" << murmur_line << "\n#Outcome: Normal\n";
}

void write_tone(const std::filesystem::path& path) {
  testing::write_bytes(path, testing::make_wav(std::vector<std::int16_t>(400, 1000), 4000));
}

std::vector<PatientRecord> make_patients(const std::array<std::size_t, 3>& counts) {
  std::vector<PatientRecord> out;
  int next = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      PatientRecord p;
      p.patient_id = "p" + std::to_string(1000 + next++);
      p.label = label_at(c);
      p.recordings.push_back({p.patient_id + "_AV", "/data/" + p.patient_id + "_AV.wav"});
      out.push_back(p);
    }
  return out;
}

// Largest remainder in exact integer arithmetic (percent quotas).
std::array<std::size_t, 3> oracle_folds(std::size_t n) {
  const std::array<std::size_t, 3> pct = {65, 10, 25};
  std::array<std::size_t, 3> size{}, rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    size[i] = n * pct[i] / 100;
    rem[i] = n * pct[i] % 100;
    used += size[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++size[best];
    rem[best] = 0;
    ++used;
  }
  return size;
}

double band_power(const std::vector<float>& x, std::size_t n, double lo, double hi, double fs) {
  // Goertzel over every DFT bin inside [lo, hi].
  double total = 0;
  const auto k_lo = static_cast<std::size_t>(std::ceil(lo * static_cast<double>(n) / fs));
  const auto k_hi = static_cast<std::size_t>(std::floor(hi * static_cast<double>(n) / fs));
  for (std::size_t k = k_lo; k <= k_hi; ++k) {
    const double coeff = 2 * std::cos(2 * M_PI * static_cast<double>(k) / static_cast<double>(n));
    double s1 = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s0 = x[i] + coeff * s1 - s2;
      s2 = s1;
      s1 = s0;
    }
    total += s1 * s1 + s2 * s2 - coeff * s1 * s2;
  }
  return total;
}

}  // namespace

TEST_CASE("labels: canonical order and case-insensitive parsing") {
  CHECK(index_of(MurmurLabel::Present) == 0);
  CHECK(index_of(MurmurLabel::Unknown) == 1);
  CHECK(index_of(MurmurLabel::Absent) == 2);
  CHECK(parse_label("present") == MurmurLabel::Present);
  CHECK(parse_label("ABSENT") == MurmurLabel::Absent);
  CHECK(parse_label("Unknown") == MurmurLabel::Unknown);
  CHECK_FALSE(parse_label("Maybe").has_value());
  CHECK(label_name(MurmurLabel::Unknown) == "Unknown");
}

TEST_CASE("ingest_circor: headers, labels and warnings") {
  TempDir dir;
  write_header(dir.path(), "50149", {"AV", "PV"}, "#Murmur: Present");
  write_tone(dir / "50149_AV.wav");
  write_tone(dir / "50149_PV.wav");
  write_header(dir.path(), "50150", {"MV"}, "#Murmur: absent");
  write_tone(dir / "50150_MV.wav");
  write_header(dir.path(), "50151", {"TV", "AV"}, "#Murmur: Unknown");
  write_tone(dir / "50151_TV.wav");  // 50151_AV.wav missing
  write_header(dir.path(), "50152", {"AV"}, "#Murmur: Present");
  testing::write_bytes(dir / "50152_AV.wav", "not a wav");

  IngestReport report;
  const auto patients = ingest_circor(dir.path(), &report);
  REQUIRE(patients.size() == 3);
  CHECK(patients[0].patient_id == "50149");
  CHECK(patients[0].label == MurmurLabel::Present);
  REQUIRE(patients[0].recordings.size() == 2);
  CHECK(patients[0].recordings[0].id == "50149_AV");
  CHECK(patients[1].label == MurmurLabel::Absent);
  CHECK(patients[2].recordings.size() == 1);
  CHECK(report.skipped_patients == std::vector<std::string>{"50152"});
  CHECK(report.warnings.size() == 3);
}

TEST_CASE("ingest_circor: metadata errors name the file") {
  TempDir dir;
  write_header(dir.path(), "1", {"AV"}, "#Outcome: Abnormal");
  write_tone(dir / "1_AV.wav");
  try {
    ingest_circor(dir.path());
    FAIL("expected MetadataError");
  } catch (const MetadataError& e) {
    CHECK(std::string(e.what()).find("1.txt") != std::string::npos);
  }
  write_header(dir.path(), "1", {"AV"}, "#Murmur: Sometimes");
  CHECK_THROWS_AS(ingest_circor(dir.path()), MetadataError);
}

TEST_CASE("ingest_manifest: grouping, labels and duplicates") {
  TempDir dir;
  auto write = [&](const std::string& body) {
    std::ofstream(dir / "m.csv") << "patient_id,label,wav_path\n" << body;
  };
  write("a,Present,a_AV.wav\na,Present,a_PV.wav\nb,present,sub/b_MV.wav\n");
  const auto p = ingest_manifest(dir / "m.csv");
  REQUIRE(p.size() == 2);
  CHECK(p[0].recordings.size() == 2);
  CHECK(p[1].label == MurmurLabel::Present);
  CHECK(p[1].recordings[0].path == (dir.path() / "sub/b_MV.wav").lexically_normal());

  write("a,Maybe,a_AV.wav\n");
  CHECK_THROWS_AS(ingest_manifest(dir / "m.csv"), FormatError);
  write("a,Absent,a_AV.wav\na,Absent,a_AV.wav\n");
  CHECK_THROWS_AS(ingest_manifest(dir / "m.csv"), FormatError);
  write("a,Absent,a_AV.wav,extra\n");
  CHECK_THROWS_AS(ingest_manifest(dir / "m.csv"), FormatError);
}

TEST_CASE("export then ingest manifest is the identity") {
  TempDir dir;
  auto patients = make_patients({3, 4, 5});
  for (auto& p : patients) {
    p.recordings.clear();
    for (const char* loc : {"AV", "MV"})
      p.recordings.push_back({p.patient_id + "_" + loc, (dir.path() / "wav" / (p.patient_id + "_" + loc + ".wav")).lexically_normal()});
  }
  export_manifest(patients, dir / "manifest.csv");
  CHECK(ingest_manifest(dir / "manifest.csv") == patients);
  CHECK(testing::read_bytes(dir / "manifest.csv").find(dir.path().string()) == std::string::npos);
}

TEST_CASE("fold sizes: largest remainder") {
  for (std::size_t n = 0; n <= 1000; ++n) {
    const auto got = fold_sizes(n, {});
    CHECK(got == oracle_folds(n));
    CHECK(got[0] + got[1] + got[2] == n);
  }
  CHECK(fold_sizes(100, {}) == std::array<std::size_t, 3>{65, 10, 25});
  CHECK(fold_sizes(179, {}) == std::array<std::size_t, 3>{116, 18, 45});
  CHECK(fold_sizes(68, {}) == std::array<std::size_t, 3>{44, 7, 17});
  CHECK(fold_sizes(695, {}) == std::array<std::size_t, 3>{452, 69, 174});
}

TEST_CASE("stratified split: invariants and determinism") {
  const auto patients = make_patients({179, 68, 695});
  const auto a = stratified_split(patients, 3);
  CHECK(a == stratified_split(patients, 3));
  CHECK_FALSE(a == stratified_split(patients, 4));
  CHECK(a.seed == 3);

  std::map<std::string, MurmurLabel> label;
  for (const auto& p : patients) label[p.patient_id] = p.label;
  std::set<std::string> seen;
  std::array<std::array<std::size_t, 3>, 3> counts{};
  int f = 0;
  for (const auto* fold : {&a.train, &a.validation, &a.test}) {
    for (const auto& id : *fold) {
      CHECK(seen.insert(id).second);
      ++counts[index_of(label.at(id))][f];
    }
    ++f;
  }
  CHECK(seen.size() == patients.size());
  CHECK(counts[0] == std::array<std::size_t, 3>{116, 18, 45});
  CHECK(counts[1] == std::array<std::size_t, 3>{44, 7, 17});
  CHECK(counts[2] == std::array<std::size_t, 3>{452, 69, 174});

  const auto all_one = stratified_split(make_patients({0, 0, 100}), 1);
  CHECK(all_one.train.size() == 65);
  CHECK(all_one.validation.size() == 10);
  CHECK(all_one.test.size() == 25);

  CHECK_THROWS_AS(stratified_split(make_patients({2, 5, 5}), 1), PreconditionError);
}

TEST_CASE("stratified split: random inputs stay within one of the proportions") {
  Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    std::array<std::size_t, 3> n{};
    for (auto& c : n) c = static_cast<std::size_t>(rng.uniform_int(3, 60));
    const auto patients = make_patients(n);
    const auto s = stratified_split(patients, rng.next());
    std::map<std::string, std::size_t> cls;
    for (const auto& p : patients) cls[p.patient_id] = index_of(p.label);
    const std::array<double, 3> frac = {0.65, 0.10, 0.25};
    int f = 0;
    std::set<std::string> seen;
    for (const auto* fold : {&s.train, &s.validation, &s.test}) {
      std::array<std::size_t, 3> per{};
      for (const auto& id : *fold) {
        ++per[cls.at(id)];
        CHECK(seen.insert(id).second);
      }
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(static_cast<double>(per[c]) - frac[f] * static_cast<double>(n[c])) < 1.0);
      ++f;
    }
    CHECK(seen.size() == patients.size());
  }
}

TEST_CASE("split file round trip") {
  TempDir dir;
  const auto s = stratified_split(make_patients({5, 5, 5}), 9);
  write_split(s, dir / "split.json");
  CHECK(read_split(dir / "split.json") == s);
  const auto j = nlohmann::json::parse(testing::read_bytes(dir / "split.json"));
  CHECK(j.at("seed") == 9);
  CHECK(j.at("train").size() + j.at("validation").size() + j.at("test").size() == 15);

  testing::write_bytes(dir / "bad.json", R"({"seed": 1, "train": ["a"], "validation": ["a"], "test": []})");
  CHECK_THROWS_AS(read_split(dir / "bad.json"), FormatError);
  const auto patients = make_patients({1, 1, 1});
  CHECK_THROWS_AS(select_patients(patients, {"nobody"}), DataError);
}

TEST_CASE("class weights") {
  auto w = class_weights(std::array<std::size_t, 3>{10, 10, 10});
  for (double v : w) CHECK(v == doctest::Approx(1.0));
  w = class_weights(std::array<std::size_t, 3>{179, 68, 695});
  CHECK(w[0] == doctest::Approx(1.7542).epsilon(1e-4 / 1.7542));
  CHECK(w[1] == doctest::Approx(4.6176).epsilon(1e-4 / 4.6176));
  CHECK(w[2] == doctest::Approx(0.4518).epsilon(1e-4 / 0.4518));
  w = class_weights(std::array<std::size_t, 3>{1, 1, 2});
  CHECK(w[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(class_weights(std::array<std::size_t, 3>{0, 1, 2}), PreconditionError);
  CHECK(class_weights(make_patients({2, 3, 4})) == class_weights(std::array<std::size_t, 3>{2, 3, 4}));

  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::array<std::size_t, 3> n{};
    for (auto& c : n) c = static_cast<std::size_t>(rng.uniform_int(1, 5000));
    const auto cw = class_weights(n);
    const double mass = cw[0] * static_cast<double>(n[0]) + cw[1] * static_cast<double>(n[1]) + cw[2] * static_cast<double>(n[2]);
    CHECK(std::abs(mass - static_cast<double>(n[0] + n[1] + n[2])) < 1e-12 * static_cast<double>(n[0] + n[1] + n[2]));
  }
}

TEST_CASE("embedding file: layout, round trip and corruption") {
  TempDir dir;
  EmbeddingSet empty;
  empty.dim = 8;
  write_embeddings(empty, dir / "e.hseb");
  CHECK(read_embeddings(dir / "e.hseb") == empty);
  CHECK(testing::read_bytes(dir / "e.hseb").size() == 16);

  EmbeddingSet two;
  two.dim = 3;
  two.entries[{"a", 0}] = {1.0f, 2.0f, 3.0f};
  two.entries[{"bb", 7}] = {-1.5f, 0.0f, 1e-30f};
  write_embeddings(two, dir / "t.hseb");
  const auto bytes = testing::read_bytes(dir / "t.hseb");
  // header 16, then (u16 + id + u32 + 12 bytes of floats) per entry
  CHECK(bytes.size() == 16 + (2 + 1 + 4 + 12) + (2 + 2 + 4 + 12));
  CHECK(bytes.substr(0, 4) == "HSEB");
  std::string expected_floats;
  for (float f : {1.0f, 2.0f, 3.0f}) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    testing::put_u32(expected_floats, u);
  }
  CHECK(bytes.substr(16 + 2 + 1 + 4, 12) == expected_floats);
  CHECK(read_embeddings(dir / "t.hseb") == two);

  auto bad = bytes;
  bad[0] = 'X';
  testing::write_bytes(dir / "bad.hseb", bad);
  CHECK_THROWS_AS(read_embeddings(dir / "bad.hseb"), FormatError);
  bad = bytes;
  bad[4] = 2;
  testing::write_bytes(dir / "bad.hseb", bad);
  CHECK_THROWS_AS(read_embeddings(dir / "bad.hseb"), FormatError);
  testing::write_bytes(dir / "bad.hseb", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_embeddings(dir / "bad.hseb"), FormatError);
  testing::write_bytes(dir / "bad.hseb", bytes + "x");
  CHECK_THROWS_AS(read_embeddings(dir / "bad.hseb"), FormatError);

  const auto index = embedding_index(two);
  CHECK(index.at("bb") == nlohmann::json::array({7}));
}

TEST_CASE("embedding round trip on random sets") {
  TempDir dir;
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    EmbeddingSet s;
    s.dim = static_cast<std::size_t>(rng.uniform_int(1, 40));
    const auto n = rng.uniform_int(0, 50);
    for (int i = 0; i < n; ++i) {
      std::vector<float> v(s.dim);
      for (auto& x : v) {
        std::uint32_t bits;
        do {
          bits = static_cast<std::uint32_t>(rng.next());
          std::memcpy(&x, &bits, 4);
        } while (!std::isfinite(x));
      }
      s.entries[{"rec" + std::to_string(rng.uniform_int(0, 30)), static_cast<std::uint32_t>(rng.uniform_int(0, 50))}] = v;
    }
    write_embeddings(s, dir / "r.hseb");
    CHECK(read_embeddings(dir / "r.hseb") == s);
  }
}

TEST_CASE("synthetic data: counts, determinism and ingestibility") {
  TempDir a, b;
  const SyntheticSpec spec{20, 2, 7};
  const auto pa = generate_synthetic(spec, a.path());
  const auto pb = generate_synthetic(spec, b.path());
  REQUIRE(pa.size() == 60);
  std::size_t recordings = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    recordings += pa[i].recordings.size();
    for (std::size_t r = 0; r < pa[i].recordings.size(); ++r) {
      const auto& rec = pa[i].recordings[r];
      CHECK(testing::read_bytes(rec.path) == testing::read_bytes(pb[i].recordings[r].path));
      const auto info = audio::probe_wav(rec.path);
      CHECK(info.sample_rate == 4000);
      CHECK(info.frames >= 8 * 4000);
      CHECK(info.frames <= 20 * 4000);
    }
  }
  CHECK(recordings == 120);
  CHECK(count_by_class(pa) == std::array<std::size_t, 3>{20, 20, 20});

  const auto circor = ingest_circor(a.path());
  REQUIRE(circor.size() == pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(circor[i].patient_id == pa[i].patient_id);
    CHECK(circor[i].label == pa[i].label);
    CHECK(circor[i].recordings.size() == 2);
  }
  CHECK(ingest_manifest(a / "manifest.csv") == pa);
}

TEST_CASE("synthetic data: murmurs add at least 6 dB in 150-400 Hz") {
  // Patients 10000 + 3k (Present) and 10002 + 3k (Absent) share their base seed.
  for (std::uint64_t k = 0; k < 20; ++k)
    for (std::uint64_t r = 0; r < 2; ++r) {
      const auto seed = derive_seed(derive_seed(7, k), r);
      const auto present = synthesize_recording(MurmurLabel::Present, seed);
      const auto absent = synthesize_recording(MurmurLabel::Absent, seed);
      REQUIRE(present.size() == absent.size());
      const std::size_t n = 16000;  // first 4 s
      const double ratio_db =
          10 * std::log10(band_power(present, n, 150, 400, 4000) / band_power(absent, n, 150, 400, 4000));
      CHECK(ratio_db >= 6.0);
    }
}

TEST_CASE("synthetic data: unknown recordings carry broadband noise") {
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto seed = derive_seed(derive_seed(7, k), 0);
    const auto unknown = synthesize_recording(MurmurLabel::Unknown, seed);
    const auto absent = synthesize_recording(MurmurLabel::Absent, seed);
    const double ratio_db =
        10 * std::log10(band_power(unknown, 4000, 800, 1800, 4000) / band_power(absent, 4000, 800, 1800, 4000));
    CHECK(ratio_db >= 10.0);
  }
}
