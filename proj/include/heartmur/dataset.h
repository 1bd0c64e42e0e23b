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
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace heartmur {

// Canonical class order; score vectors, confusion matrices and loss
// weights are all indexed by it.
enum class MurmurLabel : int { Present = 0, Unknown = 1, Absent = 2 };

inline constexpr std::size_t kNumClasses = 3;

inline std::size_t index_of(MurmurLabel label) { return static_cast<std::size_t>(label); }
inline MurmurLabel label_at(std::size_t index) { return static_cast<MurmurLabel>(index); }

std::string_view label_name(MurmurLabel label);

// Case-insensitive; nullopt for anything but Present/Unknown/Absent.
std::optional<MurmurLabel> parse_label(std::string_view text);

}  // namespace heartmur

namespace heartmur::dataset {

struct Recording {
  std::string id;  // WAV file stem, e.g. "50149_AV"
  std::filesystem::path path;

  friend bool operator==(const Recording&, const Recording&) = default;
};

struct PatientRecord {
  std::string patient_id;
  MurmurLabel label = MurmurLabel::Absent;
  std::vector<Recording> recordings;

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

struct IngestReport {
  std::vector<std::string> warnings;
  std::vector<std::string> skipped_patients;
};

// Reads CirCor-style `<patient_id>.txt` headers from `dir`. Only the
// recording list and the `#Murmur:` line are interpreted. Recordings whose
// WAV header cannot be read are reported in `report` and left out.
std::vector<PatientRecord> ingest_circor(const std::filesystem::path& dir,
                                         IngestReport* report = nullptr);

// CSV with header `patient_id,label,wav_path`. Relative paths resolve
// against the manifest's directory. Output is sorted by patient id.
std::vector<PatientRecord> ingest_manifest(const std::filesystem::path& path);

void export_manifest(const std::vector<PatientRecord>& patients, const std::filesystem::path& path);

std::array<std::size_t, kNumClasses> count_by_class(const std::vector<PatientRecord>& patients);

struct SplitFractions {
  double train = 0.65;
  double validation = 0.10;
  double test = 0.25;
};

struct SplitAssignment {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

// Largest-remainder apportionment of n items over the three folds.
// Ties in the fractional part go to the earlier fold.
std::array<std::size_t, 3> fold_sizes(std::size_t n, const SplitFractions& fractions);

// Per-class seeded shuffle (classes ordered by patient id before the
// shuffle) followed by fold_sizes partitioning. Fold id lists are sorted.
SplitAssignment stratified_split(const std::vector<PatientRecord>& patients, std::uint64_t seed,
                                 const SplitFractions& fractions = {});

nlohmann::json split_to_json(const SplitAssignment& split);
SplitAssignment split_from_json(const nlohmann::json& j);
void write_split(const SplitAssignment& split, const std::filesystem::path& path);
SplitAssignment read_split(const std::filesystem::path& path);

// Patients whose ids appear in `ids`, in the order of `ids`.
std::vector<PatientRecord> select_patients(const std::vector<PatientRecord>& patients,
                                           const std::vector<std::string>& ids);

// Inverse-frequency weights N / (3 N_i), from patient counts.
std::array<double, kNumClasses> class_weights(const std::vector<PatientRecord>& patients);
std::array<double, kNumClasses> class_weights(const std::array<std::size_t, kNumClasses>& counts);

// --- Embedding bridge --------------------------------------------------------

// (recording id, window index on the 2.5-s stride grid)
using EmbeddingKey = std::pair<std::string, std::uint32_t>;

struct EmbeddingSet {
  std::size_t dim = 0;
  std::map<EmbeddingKey, std::vector<float>> entries;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

// Binary layout (little endian): "HSEB", u32 version = 1, u32 dim,
// u32 count, then per entry u16 id length, id bytes, u32 segment index,
// dim x f32.
void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

// Optional sidecar: {recording_id: [segment indices]}.
nlohmann::json embedding_index(const EmbeddingSet& set);

// --- Synthetic data ------------------------------------------------------------

struct SyntheticSpec {
  std::size_t patients_per_class = 20;
  std::size_t recordings_per_patient = 4;
  std::uint64_t seed = 7;
};

inline constexpr int kSyntheticRate = 4000;

// One 4 kHz recording. Recordings of different classes built from the same
// `base_seed` share heart-cycle timing and background noise, so a Present
// recording differs from its paired Absent one only by the murmur.
std::vector<float> synthesize_recording(MurmurLabel label, std::uint64_t base_seed);

// Writes `<id>_<loc>.wav`, CirCor-style `<id>.txt` headers and
// `manifest.csv` into `dir`, and returns the patient list (sorted by id).
std::vector<PatientRecord> generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace heartmur::dataset
