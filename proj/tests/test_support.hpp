#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sdd/audio.hpp"
#include "sdd/rng.hpp"

namespace sdd::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("sdd_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
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

inline AudioBuffer sine(double freq_hz, double seconds, int rate, double amplitude = 0.5, double phase = 0.0) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.channels = 1;
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  b.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.samples[i] = static_cast<float>(
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / rate + phase));
  }
  return b;
}

inline AudioBuffer noise(std::size_t n, std::uint64_t seed, double scale = 0.1, int rate = kModelSampleRate) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.channels = 1;
  b.samples.resize(n);
  Rng rng(seed);
  for (auto& s : b.samples) s = static_cast<float>(scale * gaussian(rng));
  return b;
}

inline double peak(const AudioBuffer& b) {
  double p = 0.0;
  for (float v : b.samples) p = std::max(p, static_cast<double>(std::abs(v)));
  return p;
}

}  // namespace sdd::testing
