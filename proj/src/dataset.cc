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

#include "heartmur/dataset.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "heartmur/audio.h"
#include "heartmur/errors.h"
#include "heartmur/random.h"

namespace heartmur {

std::string_view label_name(MurmurLabel label) {
  switch (label) {
    case MurmurLabel::Present:
      return "Present";
    case MurmurLabel::Unknown:
      return "Unknown";
    case MurmurLabel::Absent:
      return "Absent";
  }
  return "?";
}

std::optional<MurmurLabel> parse_label(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "present") return MurmurLabel::Present;
  if (lower == "unknown") return MurmurLabel::Unknown;
  if (lower == "absent") return MurmurLabel::Absent;
  return std::nullopt;
}

}  // namespace heartmur

namespace heartmur::dataset {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool ends_with_icase(const std::string& s, std::string_view suffix) {
  if (s.size() < suffix.size()) return false;
  for (std::size_t i = 0; i < suffix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[s.size() - suffix.size() + i])) != suffix[i]) return false;
  return true;
}

}  // namespace

std::vector<PatientRecord> ingest_circor(const std::filesystem::path& dir, IngestReport* report) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw MetadataError("not a directory: " + dir.string());
  std::vector<fs::path> headers;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt") headers.push_back(entry.path());
  std::sort(headers.begin(), headers.end());

  IngestReport local;
  IngestReport& rep = report ? *report : local;
  std::vector<PatientRecord> out;
  std::set<std::string> seen_recordings;
  for (const auto& header : headers) {
    std::ifstream in(header);
    if (!in) throw MetadataError("cannot read " + header.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(trim(line));
    if (lines.empty()) throw MetadataError(header.string() + ": empty metadata file");

    const auto head = split_ws(lines.front());
    if (head.size() < 2) throw MetadataError(header.string() + ": malformed header line");
    PatientRecord patient;
    patient.patient_id = head[0];
    std::size_t declared = 0;
    try {
      declared = std::stoul(head[1]);
    } catch (const std::exception&) {
      throw MetadataError(header.string() + ": recording count is not a number");
    }
    if (lines.size() < declared + 1)
      throw MetadataError(header.string() + ": fewer recording lines than declared");

    std::optional<MurmurLabel> label;
    for (const auto& line : lines) {
      if (line.rfind("#Murmur:", 0) != 0) continue;
      const std::string value = trim(std::string_view(line).substr(8));
      label = parse_label(value);
      if (!label) throw MetadataError(header.string() + ": unknown murmur label '" + value + "'");
    }
    if (!label) throw MetadataError(header.string() + ": missing #Murmur line");
    patient.label = *label;

    for (std::size_t i = 1; i <= declared; ++i) {
      const auto tokens = split_ws(lines[i]);
      std::string wav;
      for (const auto& tok : tokens)
        if (ends_with_icase(tok, ".wav")) wav = tok;
      if (wav.empty() && !tokens.empty()) wav = patient.patient_id + "_" + tokens[0] + ".wav";
      if (wav.empty()) throw MetadataError(header.string() + ": empty recording line");
      Recording rec{fs::path(wav).stem().string(), dir / wav};
      if (!seen_recordings.insert(rec.id).second)
        throw MetadataError(header.string() + ": recording " + rec.id + " listed twice");
      try {
        audio::probe_wav(rec.path);
      } catch (const Error& e) {
        rep.warnings.push_back(std::string("unreadable recording: ") + e.what());
        continue;
      }
      patient.recordings.push_back(std::move(rec));
    }
    if (patient.recordings.empty()) {
      rep.warnings.push_back("patient " + patient.patient_id + " has no readable recordings; skipped");
      rep.skipped_patients.push_back(patient.patient_id);
      continue;
    }
    out.push_back(std::move(patient));
  }
  std::sort(out.begin(), out.end(),
            [](const PatientRecord& a, const PatientRecord& b) { return a.patient_id < b.patient_id; });
  return out;
}

std::vector<PatientRecord> ingest_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::string line;
  if (!std::getline(in, line) || trim(line) != "patient_id,label,wav_path")
    throw FormatError(path.string() + ": header must be 'patient_id,label,wav_path'");

  std::map<std::string, PatientRecord> by_id;
  std::map<std::string, std::string> owner_of_wav;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    const auto fields = split_fields(line, ',');
    if (fields.size() != 3 || fields[0].empty() || fields[2].empty())
      throw FormatError(where + ": expected patient_id,label,wav_path");
    const auto label = parse_label(fields[1]);
    if (!label) throw FormatError(where + ": bad label '" + fields[1] + "'");
    std::filesystem::path wav(fields[2]);
    if (wav.is_relative()) wav = base / wav;
    wav = wav.lexically_normal();

    const auto [it, inserted] = owner_of_wav.emplace(wav.string(), fields[0]);
    if (!inserted) {
      if (it->second == fields[0]) throw FormatError(where + ": duplicate row for " + fields[2]);
      throw FormatError(where + ": " + fields[2] + " already belongs to patient " + it->second);
    }
    auto& patient = by_id[fields[0]];
    if (patient.patient_id.empty()) {
      patient.patient_id = fields[0];
      patient.label = *label;
    } else if (patient.label != *label) {
      throw FormatError(where + ": conflicting labels for patient " + fields[0]);
    }
    Recording rec{wav.stem().string(), wav};
    for (const auto& existing : patient.recordings)
      if (existing.id == rec.id) throw FormatError(where + ": recording id " + rec.id + " repeated");
    patient.recordings.push_back(std::move(rec));
  }
  std::vector<PatientRecord> out;
  out.reserve(by_id.size());
  for (auto& [id, p] : by_id) out.push_back(std::move(p));
  return out;
}

void export_manifest(const std::vector<PatientRecord>& patients, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  const auto base = path.parent_path();
  out << "patient_id,label,wav_path\n";
  for (const auto& p : patients) {
    for (const auto& rec : p.recordings) {
      std::filesystem::path wav = rec.path;
      if (!base.empty() || wav.is_relative()) {
        const auto rel = wav.lexically_relative(base.empty() ? "." : base);
        if (!rel.empty() && *rel.begin() != "..") wav = rel;
      }
      out << p.patient_id << ',' << label_name(p.label) << ',' << wav.generic_string() << '\n';
    }
  }
}

std::array<std::size_t, kNumClasses> count_by_class(const std::vector<PatientRecord>& patients) {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& p : patients) ++counts[index_of(p.label)];
  return counts;
}

std::array<std::size_t, 3> fold_sizes(std::size_t n, const SplitFractions& fractions) {
  const std::array<double, 3> f = {fractions.train, fractions.validation, fractions.test};
  const double total = f[0] + f[1] + f[2];
  if (!(total > 0.0) || f[0] < 0 || f[1] < 0 || f[2] < 0)
    throw PreconditionError("split fractions must be non-negative with a positive sum");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * f[i] / total;
    // Guard against 0.65 * 100 landing at 64.99999...
    const double whole = std::floor(quota + 1e-9);
    sizes[i] = static_cast<std::size_t>(whole);
    remainder[i] = std::max(0.0, quota - whole);
    assigned += sizes[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b] + 1e-9; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

SplitAssignment stratified_split(const std::vector<PatientRecord>& patients, std::uint64_t seed,
                                 const SplitFractions& fractions) {
  std::array<std::vector<std::string>, kNumClasses> by_class;
  std::set<std::string> ids;
  for (const auto& p : patients) {
    if (!ids.insert(p.patient_id).second)
      throw PreconditionError("duplicate patient id " + p.patient_id);
    by_class[index_of(p.label)].push_back(p.patient_id);
  }
  SplitAssignment split;
  split.seed = seed;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 3)
      throw PreconditionError("class " + std::string(label_name(label_at(c))) + " has only " +
                              std::to_string(members.size()) + " patients; stratification needs 3");
    std::sort(members.begin(), members.end());
    Rng rng(derive_seed(seed, c));
    rng.shuffle(members);
    const auto sizes = fold_sizes(members.size(), fractions);
    auto it = members.begin();
    for (auto [fold, size] : {std::pair{&split.train, sizes[0]}, std::pair{&split.validation, sizes[1]},
                              std::pair{&split.test, sizes[2]}}) {
      fold->insert(fold->end(), it, it + static_cast<std::ptrdiff_t>(size));
      it += static_cast<std::ptrdiff_t>(size);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

nlohmann::json split_to_json(const SplitAssignment& split) {
  return {{"seed", split.seed}, {"train", split.train}, {"validation", split.validation}, {"test", split.test}};
}

SplitAssignment split_from_json(const nlohmann::json& j) {
  try {
    SplitAssignment s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.validation = j.at("validation").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    std::set<std::string> all;
    for (const auto* fold : {&s.train, &s.validation, &s.test})
      for (const auto& id : *fold)
        if (!all.insert(id).second) throw FormatError("split lists patient " + id + " in more than one fold");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed split file: ") + e.what());
  }
}

void write_split(const SplitAssignment& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write split file " + path.string());
  out << split_to_json(split).dump(2) << '\n';
}

SplitAssignment read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open split file " + path.string());
  try {
    return split_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<PatientRecord> select_patients(const std::vector<PatientRecord>& patients,
                                           const std::vector<std::string>& ids) {
  std::map<std::string, const PatientRecord*> index;
  for (const auto& p : patients) index[p.patient_id] = &p;
  std::vector<PatientRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw DataError("split references unknown patient " + id);
    out.push_back(*it->second);
  }
  return out;
}

std::array<double, kNumClasses> class_weights(const std::array<std::size_t, kNumClasses>& counts) {
  std::size_t total = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0)
      throw PreconditionError("class " + std::string(label_name(label_at(c))) + " has no patients");
    total += counts[c];
  }
  std::array<double, kNumClasses> w{};
  for (std::size_t c = 0; c < kNumClasses; ++c)
    w[c] = static_cast<double>(total) / (static_cast<double>(kNumClasses) * static_cast<double>(counts[c]));
  return w;
}

std::array<double, kNumClasses> class_weights(const std::vector<PatientRecord>& patients) {
  return class_weights(count_by_class(patients));
}

// --- Embedding bridge --------------------------------------------------------

namespace {

constexpr char kEmbeddingMagic[4] = {'H', 'S', 'E', 'B'};
constexpr std::uint32_t kEmbeddingVersion = 1;

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<char>((v >> s) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw FormatError(name_ + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint16_t u16(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(2, what));
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4, what));
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  if (set.dim == 0) throw PreconditionError("embedding dim must be positive");
  std::string buf(kEmbeddingMagic, 4);
  put_u32(buf, kEmbeddingVersion);
  put_u32(buf, static_cast<std::uint32_t>(set.dim));
  put_u32(buf, static_cast<std::uint32_t>(set.entries.size()));
  for (const auto& [key, vec] : set.entries) {
    if (vec.size() != set.dim)
      throw PreconditionError("embedding for " + key.first + "#" + std::to_string(key.second) +
                              " has length " + std::to_string(vec.size()) + ", expected " +
                              std::to_string(set.dim));
    if (key.first.size() > 0xFFFF) throw PreconditionError("recording id too long: " + key.first);
    put_u16(buf, static_cast<std::uint16_t>(key.first.size()));
    buf += key.first;
    put_u32(buf, key.second);
    for (float v : vec) {
      if (!std::isfinite(v)) throw PreconditionError("non-finite embedding value for " + key.first);
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u32(buf, bits);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write embeddings " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open embeddings " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  ByteReader r(bytes, path.string());
  if (std::memcmp(r.take(4, "magic"), kEmbeddingMagic, 4) != 0)
    throw FormatError(path.string() + ": bad magic (expected HSEB)");
  const auto version = r.u32("version");
  if (version != kEmbeddingVersion)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  EmbeddingSet set;
  set.dim = r.u32("dim");
  if (set.dim == 0) throw FormatError(path.string() + ": zero embedding dim");
  const auto count = r.u32("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto id_len = r.u16("id length");
    std::string id(r.take(id_len, "recording id"), id_len);
    const auto index = r.u32("segment index");
    std::vector<float> vec(set.dim);
    const char* payload = r.take(set.dim * 4, "vector payload");
    for (std::size_t k = 0; k < set.dim; ++k) {
      const auto* p = reinterpret_cast<const unsigned char*>(payload + 4 * k);
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) |
                                 (static_cast<std::uint32_t>(p[3]) << 24);
      std::memcpy(&vec[k], &bits, sizeof bits);
      if (!std::isfinite(vec[k])) throw FormatError(path.string() + ": non-finite value for " + id);
    }
    if (!set.entries.emplace(EmbeddingKey{id, index}, std::move(vec)).second)
      throw FormatError(path.string() + ": duplicate entry " + id + "#" + std::to_string(index));
  }
  if (r.remaining() != 0)
    throw FormatError(path.string() + ": " + std::to_string(r.remaining()) +
                      " trailing bytes after the declared entries");
  return set;
}

nlohmann::json embedding_index(const EmbeddingSet& set) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, vec] : set.entries) j[key.first].push_back(key.second);
  return j;
}

// --- Synthetic data ------------------------------------------------------------

namespace {

struct Biquad {
  double b0, b1, b2, a1, a2;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  static Biquad lowpass(double f0, double fs) { return make(f0, fs, false); }
  static Biquad highpass(double f0, double fs) { return make(f0, fs, true); }

  double operator()(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }

 private:
  static Biquad make(double f0, double fs, bool high) {
    const double w0 = 2.0 * M_PI * f0 / fs;
    const double alpha = std::sin(w0) / (2.0 * M_SQRT1_2);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad q{};
    if (high) {
      q.b0 = (1.0 + c) / 2.0 / a0;
      q.b1 = -(1.0 + c) / a0;
    } else {
      q.b0 = (1.0 - c) / 2.0 / a0;
      q.b1 = (1.0 - c) / a0;
    }
    q.b2 = q.b0;
    q.a1 = -2.0 * c / a0;
    q.a2 = (1.0 - alpha) / a0;
    return q;
  }
};

double rms(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : std::sqrt(s / static_cast<double>(x.size()));
}

std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  // Paul Kellet's refined pink filter.
  std::vector<double> out(n);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double white = rng.normal();
    b0 = 0.99886 * b0 + white * 0.0555179;
    b1 = 0.99332 * b1 + white * 0.0750759;
    b2 = 0.96900 * b2 + white * 0.1538520;
    b3 = 0.86650 * b3 + white * 0.3104856;
    b4 = 0.55000 * b4 + white * 0.5329522;
    b5 = -0.7616 * b5 - white * 0.0168980;
    out[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362;
    b6 = white * 0.115926;
  }
  return out;
}

void normalize_rms(std::vector<double>& x, double target) {
  const double r = rms(x);
  if (r > 0.0)
    for (double& v : x) v *= target / r;
}

}  // namespace

std::vector<float> synthesize_recording(MurmurLabel label, std::uint64_t base_seed) {
  constexpr double fs = kSyntheticRate;
  Rng base(base_seed);
  const double seconds = base.uniform(8.0, 20.0);
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  const double period = 60.0 / base.uniform(60.0, 110.0);
  const double systole = base.uniform(0.28, 0.36) * period;
  const double offset = base.uniform(0.0, period);
  const double s1_freq = base.uniform(40.0, 70.0);
  const double s2_freq = base.uniform(50.0, 90.0);
  const double gain = base.uniform(0.5, 1.0);

  // Heart cycle: S1 and S2 as Gaussian-enveloped low-frequency tones.
  std::vector<double> signal(n, 0.0);
  constexpr double sigma = 0.015;
  auto add_click = [&](double center, double freq, double amp) {
    const auto lo = static_cast<std::int64_t>(std::floor((center - 4 * sigma) * fs));
    const auto hi = static_cast<std::int64_t>(std::ceil((center + 4 * sigma) * fs));
    for (std::int64_t i = std::max<std::int64_t>(lo, 0); i <= hi && i < static_cast<std::int64_t>(n); ++i) {
      const double t = static_cast<double>(i) / fs - center;
      signal[static_cast<std::size_t>(i)] += amp * std::exp(-0.5 * t * t / (sigma * sigma)) * std::sin(2 * M_PI * freq * t);
    }
  };
  std::vector<double> beats;
  for (double t = offset - period; t < seconds + period; t += period) beats.push_back(t);
  for (double t : beats) {
    add_click(t, s1_freq, 0.5);
    add_click(t + systole, s2_freq, 0.4);
  }

  auto background = pink_noise(n, base);
  normalize_rms(background, 0.02);
  for (std::size_t i = 0; i < n; ++i) signal[i] += background[i];

  if (label == MurmurLabel::Present) {
    // 150-400 Hz noise, gated to the systolic interval between S1 and S2.
    Rng murmur_rng(derive_seed(base_seed, 101));
    const double level = murmur_rng.uniform(0.15, 0.25);
    std::vector<double> murmur(n);
    Biquad hp1 = Biquad::highpass(150.0, fs), hp2 = Biquad::highpass(150.0, fs);
    Biquad lp1 = Biquad::lowpass(400.0, fs), lp2 = Biquad::lowpass(400.0, fs);
    for (auto& v : murmur) v = lp2(lp1(hp2(hp1(murmur_rng.normal()))));
    normalize_rms(murmur, level);
    for (double beat : beats) {
      const double start = beat + 0.05 * period;
      const double stop = beat + systole - 0.03 * period;
      const auto lo = static_cast<std::int64_t>(std::ceil(start * fs));
      const auto hi = static_cast<std::int64_t>(std::floor(stop * fs));
      for (std::int64_t i = std::max<std::int64_t>(lo, 0); i <= hi && i < static_cast<std::int64_t>(n); ++i) {
        const double phase = (static_cast<double>(i) / fs - start) / (stop - start);
        signal[static_cast<std::size_t>(i)] += murmur[static_cast<std::size_t>(i)] * std::sin(M_PI * phase);
      }
    }
  } else if (label == MurmurLabel::Unknown) {
    // Heavy broadband noise: the heart cycle sits at low SNR.
    Rng noise_rng(derive_seed(base_seed, 202));
    const double level = noise_rng.uniform(0.12, 0.18);
    for (auto& v : signal) v += level * noise_rng.normal();
  }

  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(std::clamp(gain * signal[i], -1.0, 32767.0 / 32768.0));
  return out;
}

std::vector<PatientRecord> generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  if (spec.patients_per_class < 1 || spec.recordings_per_patient < 1)
    throw PreconditionError("synthetic spec needs at least one patient per class and one recording");
  static constexpr std::array<const char*, 5> kLocations = {"AV", "PV", "TV", "MV", "Phc"};
  std::filesystem::create_directories(dir);
  std::vector<PatientRecord> patients;
  for (std::size_t k = 0; k < spec.patients_per_class; ++k) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      PatientRecord p;
      p.patient_id = std::to_string(10000 + k * kNumClasses + c);
      p.label = label_at(c);
      std::ostringstream header;
      header << p.patient_id << ' ' << spec.recordings_per_patient << ' ' << kSyntheticRate << '\n';
      for (std::size_t r = 0; r < spec.recordings_per_patient; ++r) {
        std::string loc = kLocations[r % kLocations.size()];
        if (r >= kLocations.size()) loc += "_" + std::to_string(r / kLocations.size() + 1);
        const std::string id = p.patient_id + "_" + loc;
        const auto samples = synthesize_recording(p.label, derive_seed(derive_seed(spec.seed, k), r));
        audio::write_wav_pcm16(dir / (id + ".wav"), samples, kSyntheticRate);
        header << loc << ' ' << id << ".hea " << id << ".wav " << id << ".tsv\n";
        p.recordings.push_back({id, (dir / (id + ".wav")).lexically_normal()});
      }
      header << "#Age: nan\n#Murmur: " << label_name(p.label) << '\n';
      std::ofstream(dir / (p.patient_id + ".txt"), std::ios::trunc) << header.str();
      patients.push_back(std::move(p));
    }
  }
  std::sort(patients.begin(), patients.end(),
            [](const PatientRecord& a, const PatientRecord& b) { return a.patient_id < b.patient_id; });
  export_manifest(patients, dir / "manifest.csv");
  return patients;
}

}  // namespace heartmur::dataset
