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

// Shared helpers for the test binaries.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "heartmur/random.h"

namespace heartmur::testing {

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    Rng rng(derive_seed(static_cast<std::uint64_t>(::getpid()), counter++));
    path_ = std::filesystem::temp_directory_path() / ("heartmur-test-" + std::to_string(rng.next()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
}

inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<char>((v >> s) & 0xFF));
}

// Minimal RIFF/WAVE writer, independent of the library's.
inline std::string make_wav(const std::vector<std::int16_t>& pcm, std::uint32_t rate, std::uint16_t channels = 1,
                            const std::string& extra_chunk = {}) {
  std::string data;
  for (auto s : pcm) put_u16(data, static_cast<std::uint16_t>(s));
  std::string b = "RIFF";
  put_u32(b, static_cast<std::uint32_t>(4 + 8 + 16 + extra_chunk.size() + 8 + data.size()));
  b += "WAVEfmt ";
  put_u32(b, 16);
  put_u16(b, 1);
  put_u16(b, channels);
  put_u32(b, rate);
  put_u32(b, rate * channels * 2);
  put_u16(b, static_cast<std::uint16_t>(channels * 2));
  put_u16(b, 16);
  b += extra_chunk;
  b += "data";
  put_u32(b, static_cast<std::uint32_t>(data.size()));
  return b + data;
}

inline std::string make_float_wav(const std::vector<float>& samples, std::uint32_t rate) {
  std::string b = "RIFF";
  put_u32(b, static_cast<std::uint32_t>(4 + 8 + 16 + 8 + samples.size() * 4));
  b += "WAVEfmt ";
  put_u32(b, 16);
  put_u16(b, 3);
  put_u16(b, 1);
  put_u32(b, rate);
  put_u32(b, rate * 4);
  put_u16(b, 4);
  put_u16(b, 32);
  b += "data";
  put_u32(b, static_cast<std::uint32_t>(samples.size() * 4));
  for (float f : samples) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(b, u);
  }
  return b;
}

}  // namespace heartmur::testing
