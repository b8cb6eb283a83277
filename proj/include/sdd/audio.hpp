#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace sdd {

/// Rate every model-facing buffer is resampled to.
inline constexpr int kModelSampleRate = 16000;

/// Interleaved float samples in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 0;
  int channels = 1;

  std::size_t frames() const {
    return channels > 0 ? samples.size() / static_cast<std::size_t>(channels) : 0;
  }
  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(frames()) / sample_rate : 0.0;
  }
};

struct Segment {
  std::string parent_id;
  int index = 0;
  std::vector<float> samples;
  double start_s = 0.0;
  double end_s = 0.0;
};

/// Mean across channels. Mono input is returned unchanged.
AudioBuffer downmix(const AudioBuffer& buf);

/// Kaiser-windowed sinc resampling (beta 8.6, 64 zero crossings). Mono only.
AudioBuffer resample(const AudioBuffer& buf, int target_rate = 16000);

enum class NormMode { peak, none };

NormMode parse_norm_mode(const std::string& text);

inline constexpr float kPeakTarget = 0.95f;

/// Scales so that max |x| == 0.95. All-zero input is returned unchanged with
/// a warning.
AudioBuffer normalize(const AudioBuffer& buf, NormMode mode = NormMode::peak);

/// Non-overlapping windows from t=0. The remainder becomes a final segment
/// only if it lasts at least `min_tail_s`.
std::vector<Segment> segment(const AudioBuffer& buf, double seg_seconds, double min_tail_s = 1.0,
                             const std::string& parent_id = {});

/// Number of samples in a window of `seconds` at `sample_rate`.
std::size_t seconds_to_samples(double seconds, int sample_rate);

/// downmix -> resample(16 kHz) -> normalize.
AudioBuffer preprocess(const AudioBuffer& buf, NormMode mode = NormMode::peak);

}  // namespace sdd
