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

#include "heartmur/audio.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "heartmur/errors.h"

namespace heartmur::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct ParsedWav {
  WavInfo info;
  std::uint16_t format = 0;
  std::uint16_t bits = 0;
  std::size_t data_offset = 0;
  std::size_t data_size = 0;
};

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open WAV file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ParsedWav parse_header(const std::vector<unsigned char>& bytes, const std::string& name) {
  if (bytes.size() < 12) throw FormatError(name + ": file too short for a RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0)
    throw FormatError(name + ": missing RIFF magic");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(name + ": RIFF form type is not WAVE");

  ParsedWav out;
  bool have_fmt = false;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size())
        throw FormatError(name + ": truncated fmt chunk");
      const unsigned char* f = bytes.data() + body;
      out.format = read_u16(f);
      out.info.channels = read_u16(f + 2);
      out.info.sample_rate = static_cast<int>(read_u32(f + 4));
      out.bits = read_u16(f + 14);
      if (out.format == kFormatExtensible) {
        if (size < 40) throw FormatError(name + ": truncated extensible fmt chunk");
        out.format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (body + size > bytes.size())
        throw FormatError(name + ": data chunk truncated (declares " + std::to_string(size) +
                          " bytes, " + std::to_string(bytes.size() - body) + " present)");
      out.data_offset = body;
      out.data_size = size;
      have_data = true;
      break;
    }
    // Chunks are word aligned.
    pos = body + size + (size & 1U);
  }
  if (!have_fmt) throw FormatError(name + ": no fmt chunk");
  if (!have_data) throw FormatError(name + ": no data chunk");
  if (out.info.channels != 1)
    throw UnsupportedError(name + ": " + std::to_string(out.info.channels) +
                           " channels (only mono is supported)");
  if (out.info.sample_rate <= 0) throw FormatError(name + ": non-positive sample rate");
  const bool pcm16 = out.format == kFormatPcm && out.bits == 16;
  const bool float32 = out.format == kFormatFloat && out.bits == 32;
  if (!pcm16 && !float32)
    throw UnsupportedError(name + ": sample format " + std::to_string(out.format) + "/" +
                           std::to_string(out.bits) + " bits (need PCM16 or float32)");
  const std::size_t frame_bytes = out.bits / 8;
  if (out.data_size % frame_bytes != 0)
    throw FormatError(name + ": data chunk size is not a whole number of samples");
  out.info.frames = out.data_size / frame_bytes;
  if (out.info.frames == 0) throw FormatError(name + ": no samples");
  return out;
}

double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

constexpr int kTaps = 64;
constexpr int kHalfTaps = kTaps / 2;
constexpr double kKaiserBeta = 8.6;

// Filter bank: one row of kTaps coefficients per output phase. Row p
// serves output positions that fall p/up of an input sample past
// an input index; tap k multiplies input[base + k - kHalfTaps + 1].
std::vector<double> design_polyphase(int up, int down) {
  const double cutoff = std::min(1.0, static_cast<double>(up) / down);
  const double i0_beta = bessel_i0(kKaiserBeta);
  std::vector<double> bank(static_cast<std::size_t>(up) * kTaps);
  for (int p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    double* row = bank.data() + static_cast<std::size_t>(p) * kTaps;
    double sum = 0.0;
    for (int k = 0; k < kTaps; ++k) {
      const double t = (k - kHalfTaps + 1) - frac;
      const double x = cutoff * t;
      const double sinc = x == 0.0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
      const double r = t / kHalfTaps;
      const double window = std::abs(r) >= 1.0 ? 0.0 : bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      row[k] = cutoff * sinc * window;
      sum += row[k];
    }
    for (int k = 0; k < kTaps; ++k) row[k] /= sum;
  }
  return bank;
}

}  // namespace

WavInfo probe_wav(const std::filesystem::path& path) {
  return parse_header(slurp(path), path.string()).info;
}

Waveform decode_wav(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const ParsedWav wav = parse_header(bytes, path.string());
  Waveform out;
  out.sample_rate = wav.info.sample_rate;
  out.recording_id = path.stem().string();
  out.samples.resize(wav.info.frames);
  const unsigned char* data = bytes.data() + wav.data_offset;
  if (wav.bits == 16) {
    for (std::size_t i = 0; i < wav.info.frames; ++i) {
      const auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
      out.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else {
    for (std::size_t i = 0; i < wav.info.frames; ++i) {
      const std::uint32_t bits = read_u32(data + 4 * i);
      float v;
      std::memcpy(&v, &bits, sizeof v);
      if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite float sample");
      out.samples[i] = v;
    }
  }
  return out;
}

void write_wav_pcm16(const std::filesystem::path& path, std::span<const float> samples,
                     int sample_rate) {
  std::vector<unsigned char> bytes;
  bytes.reserve(44 + samples.size() * 2);
  auto put_u16 = [&](std::uint16_t v) {
    bytes.push_back(static_cast<unsigned char>(v & 0xFF));
    bytes.push_back(static_cast<unsigned char>(v >> 8));
  };
  auto put_u32 = [&](std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) bytes.push_back(static_cast<unsigned char>((v >> s) & 0xFF));
  };
  auto put_tag = [&](const char* tag) { bytes.insert(bytes.end(), tag, tag + 4); };
  const auto data_size = static_cast<std::uint32_t>(samples.size() * 2);
  put_tag("RIFF");
  put_u32(36 + data_size);
  put_tag("WAVE");
  put_tag("fmt ");
  put_u32(16);
  put_u16(kFormatPcm);
  put_u16(1);
  put_u32(static_cast<std::uint32_t>(sample_rate));
  put_u32(static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  put_tag("data");
  put_u32(data_size);
  for (float s : samples) {
    const double scaled = std::nearbyint(static_cast<double>(s) * 32768.0);
    put_u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write WAV file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

bool is_supported_rate(int rate) {
  static constexpr std::array<int, 6> kRates = {4000, 8000, 16000, 22050, 44100, 48000};
  return std::find(kRates.begin(), kRates.end(), rate) != kRates.end();
}

std::size_t resampled_length(std::size_t frames, int rate) {
  if (!is_supported_rate(rate))
    throw UnsupportedError("unsupported sample rate " + std::to_string(rate));
  const auto g = static_cast<std::size_t>(std::gcd(kModelRate, rate));
  const std::size_t up = kModelRate / g;
  const std::size_t down = static_cast<std::size_t>(rate) / g;
  return (frames * up + down / 2) / down;
}

Waveform resample_to_16k(const Waveform& w) {
  if (!is_supported_rate(w.sample_rate))
    throw UnsupportedError("unsupported sample rate " + std::to_string(w.sample_rate));
  if (w.sample_rate == kModelRate) return w;

  const int g = std::gcd(kModelRate, w.sample_rate);
  const int up = kModelRate / g;
  const int down = w.sample_rate / g;
  const auto bank = design_polyphase(up, down);
  const std::size_t n_out = resampled_length(w.samples.size(), w.sample_rate);
  const auto n_in = static_cast<std::int64_t>(w.samples.size());

  Waveform out;
  out.sample_rate = kModelRate;
  out.recording_id = w.recording_id;
  out.samples.resize(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const std::uint64_t pos = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(down);
    const auto base = static_cast<std::int64_t>(pos / static_cast<std::uint64_t>(up));
    const auto phase = static_cast<std::size_t>(pos % static_cast<std::uint64_t>(up));
    const double* row = bank.data() + phase * kTaps;
    const std::int64_t first = base - kHalfTaps + 1;
    double acc = 0.0;
    const int k_lo = static_cast<int>(std::max<std::int64_t>(0, -first));
    const int k_hi = static_cast<int>(std::min<std::int64_t>(kTaps, n_in - first));
    for (int k = k_lo; k < k_hi; ++k) acc += row[k] * w.samples[static_cast<std::size_t>(first + k)];
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

std::size_t grid_size(std::size_t num_samples) {
  return (num_samples + kTrainHop - 1) / kTrainHop;
}

std::vector<WindowPlacement> plan_train_windows(std::size_t num_samples) {
  std::vector<WindowPlacement> out;
  const std::size_t candidates = grid_size(num_samples);
  for (std::size_t k = 0; k < candidates; ++k) {
    const std::size_t start = k * kTrainHop;
    const std::size_t real = std::min(kSegmentSamples, num_samples - start);
    const std::size_t padded = kSegmentSamples - real;
    // Windows that are at least half padding are dropped, except the first.
    if (k > 0 && 2 * padded >= kSegmentSamples) continue;
    out.push_back({k, start, padded});
  }
  return out;
}

std::vector<WindowPlacement> plan_test_windows(std::size_t num_samples) {
  std::vector<WindowPlacement> out;
  for (std::size_t start = 0; start < num_samples || out.empty(); start += kSegmentSamples) {
    const std::size_t real = start < num_samples ? std::min(kSegmentSamples, num_samples - start) : 0;
    out.push_back({start / kTrainHop, start, kSegmentSamples - real});
  }
  return out;
}

Segment cut_segment(const Waveform& w, std::size_t start_sample) {
  Segment seg;
  seg.recording_id = w.recording_id;
  seg.start_sample = start_sample;
  const std::size_t real = start_sample < w.samples.size() ? std::min(kSegmentSamples, w.samples.size() - start_sample) : 0;
  seg.samples.reserve(kSegmentSamples);
  const auto first = w.samples.begin() + static_cast<std::ptrdiff_t>(std::min(start_sample, w.samples.size()));
  seg.samples.assign(first, first + static_cast<std::ptrdiff_t>(real));
  seg.samples.resize(kSegmentSamples, 0.0f);
  seg.padded_samples = kSegmentSamples - real;
  return seg;
}

namespace {

std::vector<Segment> cut_all(const Waveform& w, const std::vector<WindowPlacement>& plan) {
  std::vector<Segment> out;
  out.reserve(plan.size());
  for (const auto& p : plan) out.push_back(cut_segment(w, p.start_sample));
  return out;
}

void require_model_rate(const Waveform& w) {
  if (w.sample_rate != kModelRate)
    throw PreconditionError("segmentation needs 16 kHz audio, got " +
                            std::to_string(w.sample_rate) + " Hz for " + w.recording_id);
  if (w.samples.empty()) throw PreconditionError("empty waveform " + w.recording_id);
}

}  // namespace

std::vector<Segment> segment_train(const Waveform& w) {
  require_model_rate(w);
  return cut_all(w, plan_train_windows(w.samples.size()));
}

std::vector<Segment> segment_test(const Waveform& w) {
  require_model_rate(w);
  return cut_all(w, plan_test_windows(w.samples.size()));
}

}  // namespace heartmur::audio
