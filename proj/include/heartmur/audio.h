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
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace heartmur::audio {

inline constexpr int kModelRate = 16000;
inline constexpr std::size_t kSegmentSamples = 80000;  // 5 s at 16 kHz
inline constexpr std::size_t kTrainHop = 40000;        // 2.5 s stride

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 0;
  std::string recording_id;
};

struct Segment {
  std::vector<float> samples;  // always kSegmentSamples long
  std::string recording_id;
  std::size_t start_sample = 0;
  std::size_t padded_samples = 0;
};

// Where a window sits in a recording. `grid_index` counts positions on the
// 2.5-s stride grid (start = grid_index * kTrainHop); test windows fall on
// the even grid positions.
struct WindowPlacement {
  std::size_t grid_index = 0;
  std::size_t start_sample = 0;
  std::size_t padded_samples = 0;
};

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  std::size_t frames = 0;
};

// Reads only the header chunks of a WAV file. Same validation as decode_wav.
WavInfo probe_wav(const std::filesystem::path& path);

// PCM16 or float32 mono RIFF/WAVE. Unknown chunks are skipped.
Waveform decode_wav(const std::filesystem::path& path);

void write_wav_pcm16(const std::filesystem::path& path, std::span<const float> samples,
                     int sample_rate);

bool is_supported_rate(int rate);

// Output length of resample_to_16k for `frames` input samples at `rate`.
std::size_t resampled_length(std::size_t frames, int rate);

// Windowed-sinc polyphase resampler (64 taps, Kaiser beta 8.6).
// Returns an exact copy when the input is already 16 kHz.
Waveform resample_to_16k(const Waveform& w);

std::vector<WindowPlacement> plan_train_windows(std::size_t num_samples);
std::vector<WindowPlacement> plan_test_windows(std::size_t num_samples);

// Number of 2.5-s grid positions with a start inside the recording.
std::size_t grid_size(std::size_t num_samples);

Segment cut_segment(const Waveform& w, std::size_t start_sample);

std::vector<Segment> segment_train(const Waveform& w);
std::vector<Segment> segment_test(const Waveform& w);

}  // namespace heartmur::audio
