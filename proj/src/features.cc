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

#include "heartmur/features.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <string>

#include "heartmur/errors.h"

namespace heartmur::features {

namespace {

// FFTW planning is not thread-safe; execution on fresh buffers is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(std::size_t mel_bins, std::size_t fft_size, double sample_rate,
                                   double fmin, double fmax) {
  if (mel_bins == 0 || fft_size < 2 || !(fmin >= 0.0) || !(fmax > fmin))
    throw PreconditionError("invalid mel filterbank parameters");
  const std::size_t n_freq = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(mel_bins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(mel_bins + 1));

  std::vector<double> bank(mel_bins * n_freq, 0.0);
  for (std::size_t m = 0; m < mel_bins; ++m) {
    const double lo = edges[m];
    const double center = edges[m + 1];
    const double hi = edges[m + 2];
    for (std::size_t k = 0; k < n_freq; ++k) {
      const double f = sample_rate * static_cast<double>(k) / static_cast<double>(fft_size);
      double w = 0.0;
      if (f > lo && f <= center)
        w = (f - lo) / (center - lo);
      else if (f > center && f < hi)
        w = (hi - f) / (hi - center);
      bank[m * n_freq + k] = w;
    }
  }
  return bank;
}

std::size_t frame_count(std::size_t num_samples, std::size_t win_length, std::size_t hop_length) {
  if (num_samples < win_length) return 0;
  return 1 + (num_samples - win_length) / hop_length;
}

struct LogMelExtractor::Plan {
  fftw_plan plan = nullptr;
};

LogMelExtractor::LogMelExtractor(const LogMelConfig& config)
    : config_(config), plan_(std::make_unique<Plan>()) {
  if (config.mel_bins < 1) throw PreconditionError("mel_bins must be >= 1");
  if (config.hop_length == 0 || config.hop_length > config.win_length ||
      config.win_length > audio::kSegmentSamples)
    throw PreconditionError("need 0 < hop_length <= win_length <= 80000, got hop " +
                            std::to_string(config.hop_length) + ", win " +
                            std::to_string(config.win_length));
  fft_size_ = next_pow2(config.win_length);
  window_.resize(config.win_length);
  // Periodic Hann.
  for (std::size_t i = 0; i < window_.size(); ++i)
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(window_.size()));
  filterbank_ = mel_filterbank(config.mel_bins, fft_size_, audio::kModelRate, config.fmin, config.fmax);

  std::lock_guard lock(planner_mutex());
  double* in = fftw_alloc_real(fft_size_);
  fftw_complex* out = fftw_alloc_complex(fft_size_ / 2 + 1);
  // FFTW_ESTIMATE picks the same algorithm on every run; measured plans may not.
  plan_->plan = fftw_plan_dft_r2c_1d(static_cast<int>(fft_size_), in, out, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  if (plan_->plan == nullptr) throw Error("FFTW planning failed");
}

LogMelExtractor::~LogMelExtractor() {
  if (plan_ && plan_->plan) {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_->plan);
  }
}

LogMelSpec LogMelExtractor::operator()(const audio::Segment& seg) const {
  if (seg.samples.size() != audio::kSegmentSamples)
    throw PreconditionError("segment must hold exactly 80000 samples");
  const std::size_t n_freq = fft_size_ / 2 + 1;
  LogMelSpec spec;
  spec.mel_bins = config_.mel_bins;
  spec.frames = frame_count(seg.samples.size(), config_.win_length, config_.hop_length);
  spec.frame_hop = static_cast<double>(config_.hop_length) / audio::kModelRate;
  spec.values.resize(spec.frames * spec.mel_bins);

  double* in = fftw_alloc_real(fft_size_);
  fftw_complex* out = fftw_alloc_complex(n_freq);
  std::vector<double> power(n_freq);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const float* frame = seg.samples.data() + t * config_.hop_length;
    for (std::size_t i = 0; i < config_.win_length; ++i) in[i] = window_[i] * frame[i];
    std::fill(in + config_.win_length, in + fft_size_, 0.0);
    fftw_execute_dft_r2c(plan_->plan, in, out);
    for (std::size_t k = 0; k < n_freq; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    for (std::size_t m = 0; m < spec.mel_bins; ++m) {
      const double* row = filterbank_.data() + m * n_freq;
      double e = 0.0;
      for (std::size_t k = 0; k < n_freq; ++k) e += row[k] * power[k];
      spec.at(t, m) = static_cast<float>(std::log(e + kLogFloor));
    }
  }
  fftw_free(in);
  fftw_free(out);
  return spec;
}

LogMelSpec log_mel(const audio::Segment& seg, std::size_t mel_bins, std::size_t win_length,
                   std::size_t hop_length) {
  LogMelConfig cfg;
  cfg.mel_bins = mel_bins;
  cfg.win_length = win_length;
  cfg.hop_length = hop_length;
  return LogMelExtractor(cfg)(seg);
}

MaskPlan draw_masks(std::size_t frames, std::size_t mel_bins, const SpecAugmentConfig& cfg, Rng& rng) {
  MaskPlan plan;
  auto draw = [&rng](std::size_t axis_len, std::size_t param) {
    const auto max_width = static_cast<std::int64_t>(std::min(param, axis_len));
    const auto width = rng.uniform_int(0, max_width);
    const auto start = rng.uniform_int(0, static_cast<std::int64_t>(axis_len) - width);
    return MaskBand{static_cast<std::size_t>(start), static_cast<std::size_t>(width)};
  };
  for (std::size_t i = 0; i < cfg.num_masks_per_axis; ++i) plan.freq.push_back(draw(mel_bins, cfg.freq_param));
  for (std::size_t i = 0; i < cfg.num_masks_per_axis; ++i) plan.time.push_back(draw(frames, cfg.time_param));
  return plan;
}

LogMelSpec apply_masks(const LogMelSpec& spec, const MaskPlan& plan) {
  LogMelSpec out = spec;
  if (spec.values.empty()) return out;
  double sum = 0.0;
  for (float v : spec.values) sum += v;
  const auto fill = static_cast<float>(sum / static_cast<double>(spec.values.size()));
  for (const auto& band : plan.freq) {
    const std::size_t end = std::min(spec.mel_bins, band.start + band.width);
    for (std::size_t t = 0; t < spec.frames; ++t)
      for (std::size_t b = band.start; b < end; ++b) out.at(t, b) = fill;
  }
  for (const auto& band : plan.time) {
    const std::size_t end = std::min(spec.frames, band.start + band.width);
    for (std::size_t t = band.start; t < end; ++t)
      for (std::size_t b = 0; b < spec.mel_bins; ++b) out.at(t, b) = fill;
  }
  return out;
}

LogMelSpec spec_augment(const LogMelSpec& spec, const SpecAugmentConfig& cfg, Rng& rng) {
  if (cfg.is_identity()) return spec;
  return apply_masks(spec, draw_masks(spec.frames, spec.mel_bins, cfg, rng));
}

std::vector<float> pool_mean_max(const LogMelSpec& spec) {
  std::vector<float> out(2 * spec.mel_bins);
  for (std::size_t b = 0; b < spec.mel_bins; ++b) {
    double sum = 0.0;
    float peak = -std::numeric_limits<float>::infinity();
    for (std::size_t t = 0; t < spec.frames; ++t) {
      sum += spec.at(t, b);
      peak = std::max(peak, spec.at(t, b));
    }
    out[b] = spec.frames ? static_cast<float>(sum / static_cast<double>(spec.frames)) : 0.0f;
    out[spec.mel_bins + b] = spec.frames ? peak : 0.0f;
  }
  return out;
}

void write_csv(const LogMelSpec& spec, std::ostream& out) {
  out << std::setprecision(9);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t b = 0; b < spec.mel_bins; ++b) {
      if (b) out << ',';
      out << spec.at(t, b);
    }
    out << '\n';
  }
}

}  // namespace heartmur::features
