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
#include <memory>
#include <ostream>
#include <vector>

#include "heartmur/audio.h"
#include "heartmur/random.h"

namespace heartmur::features {

// Row-major (frames x mel_bins) log-mel spectrogram.
struct LogMelSpec {
  std::size_t frames = 0;
  std::size_t mel_bins = 0;
  double frame_hop = 0.0;  // seconds
  std::vector<float> values;

  float& at(std::size_t frame, std::size_t bin) { return values[frame * mel_bins + bin]; }
  float at(std::size_t frame, std::size_t bin) const { return values[frame * mel_bins + bin]; }
};

struct LogMelConfig {
  std::size_t mel_bins = 64;
  std::size_t win_length = 400;
  std::size_t hop_length = 160;
  double fmin = 50.0;
  double fmax = 8000.0;
};

inline constexpr double kLogFloor = 1e-10;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular HTK filterbank, row-major (mel_bins x (fft_size / 2 + 1)).
std::vector<double> mel_filterbank(std::size_t mel_bins, std::size_t fft_size, double sample_rate,
                                   double fmin, double fmax);

std::size_t frame_count(std::size_t num_samples, std::size_t win_length, std::size_t hop_length);

// Hann-windowed STFT (no centering, FFT size = next power of two above the
// window) -> mel power -> ln(power + 1e-10). Holds an FFTW plan; calls are
// safe from multiple threads.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(const LogMelConfig& config = {});
  ~LogMelExtractor();
  LogMelExtractor(const LogMelExtractor&) = delete;
  LogMelExtractor& operator=(const LogMelExtractor&) = delete;

  LogMelSpec operator()(const audio::Segment& seg) const;

  const LogMelConfig& config() const { return config_; }
  std::size_t fft_size() const { return fft_size_; }
  const std::vector<double>& filterbank() const { return filterbank_; }

 private:
  struct Plan;
  LogMelConfig config_;
  std::size_t fft_size_;
  std::vector<double> window_;
  std::vector<double> filterbank_;
  std::unique_ptr<Plan> plan_;
};

LogMelSpec log_mel(const audio::Segment& seg, std::size_t mel_bins = 64,
                   std::size_t win_length = 400, std::size_t hop_length = 160);

struct SpecAugmentConfig {
  std::size_t freq_param = 0;
  std::size_t time_param = 0;
  std::size_t num_masks_per_axis = 1;

  bool is_identity() const { return (freq_param == 0 && time_param == 0) || num_masks_per_axis == 0; }
};

struct MaskBand {
  std::size_t start = 0;
  std::size_t width = 0;
};

struct MaskPlan {
  std::vector<MaskBand> freq;
  std::vector<MaskBand> time;
};

// Draws, per mask, a width uniform in [0, param] (param clamped to the
// axis length) and then a start uniform over the valid positions.
// Frequency masks are drawn before time masks.
MaskPlan draw_masks(std::size_t frames, std::size_t mel_bins, const SpecAugmentConfig& cfg, Rng& rng);

// Fills every masked cell with the mean of the input (taken before masking).
LogMelSpec apply_masks(const LogMelSpec& spec, const MaskPlan& plan);

LogMelSpec spec_augment(const LogMelSpec& spec, const SpecAugmentConfig& cfg, Rng& rng);

// Concatenation of the per-bin time mean and time max (2 * mel_bins values).
std::vector<float> pool_mean_max(const LogMelSpec& spec);

void write_csv(const LogMelSpec& spec, std::ostream& out);

}  // namespace heartmur::features
