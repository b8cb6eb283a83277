#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sdd/audio.hpp"

namespace sdd {

enum class SampleFormat { pcm8, pcm16, pcm24, pcm32, float32 };

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  SampleFormat format = SampleFormat::pcm16;
  std::uint64_t frames = 0;

  double duration_s() const { return static_cast<double>(frames) / sample_rate; }
};

/// Reads the RIFF header only.
WavInfo probe_wav(const std::filesystem::path& path);

/// Decodes PCM 8/16/24/32-bit integer or 32-bit float WAV.
/// Integer samples are scaled by 1/2^(bits-1).
AudioBuffer load_wav(const std::filesystem::path& path);
AudioBuffer decode_wav(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_wav(const AudioBuffer& buf,
                                     SampleFormat format = SampleFormat::pcm16);
void save_wav(const std::filesystem::path& path, const AudioBuffer& buf,
              SampleFormat format = SampleFormat::pcm16);

}  // namespace sdd
