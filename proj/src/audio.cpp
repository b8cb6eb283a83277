#include "sdd/audio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdd/diag.hpp"
#include "sdd/error.hpp"

namespace sdd {

AudioBuffer downmix(const AudioBuffer& buf) {
  if (buf.channels < 1) throw Error("downmix: buffer has no channels");
  if (buf.channels == 1) return buf;
  AudioBuffer out;
  out.sample_rate = buf.sample_rate;
  out.channels = 1;
  const std::size_t frames = buf.frames();
  const auto ch = static_cast<std::size_t>(buf.channels);
  out.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const float* frame = buf.samples.data() + f * ch;
    // Identical channels must reproduce the channel exactly, so skip the
    // division round trip in that case.
    if (std::all_of(frame + 1, frame + ch, [&](float v) { return v == frame[0]; })) {
      out.samples[f] = frame[0];
      continue;
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < ch; ++c) sum += frame[c];
    out.samples[f] = static_cast<float>(sum / static_cast<double>(ch));
  }
  return out;
}

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kKaiserBeta = 8.6;
constexpr double kZeroCrossings = 64.0;

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(kPi * x) / (kPi * x);
}

double kaiser(double u, double i0_beta) {
  if (std::abs(u) >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - u * u)) / i0_beta;
}

// Polyphase filter bank for rational conversion by up/down.
class PolyphaseBank {
 public:
  PolyphaseBank(std::int64_t up, std::int64_t down) : up_(up) {
    const double cutoff = std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
    const double half_width = kZeroCrossings / cutoff;
    reach_ = static_cast<std::int64_t>(std::ceil(half_width));
    taps_ = static_cast<std::size_t>(2 * reach_ + 1);
    table_.assign(static_cast<std::size_t>(up) * taps_, 0.0);
    const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);
    for (std::int64_t phase = 0; phase < up; ++phase) {
      const double frac = static_cast<double>(phase) / static_cast<double>(up);
      double* row = table_.data() + static_cast<std::size_t>(phase) * taps_;
      double sum = 0.0;
      for (std::int64_t j = -reach_; j <= reach_; ++j) {
        const double t = frac - static_cast<double>(j);
        const double h = cutoff * sinc(cutoff * t) * kaiser(t / half_width, i0_beta);
        row[j + reach_] = h;
        sum += h;
      }
      for (std::size_t k = 0; k < taps_; ++k) row[k] /= sum;
    }
  }

  std::int64_t reach() const { return reach_; }
  const double* phase(std::int64_t p) const { return table_.data() + static_cast<std::size_t>(p) * taps_; }

 private:
  std::int64_t up_;
  std::int64_t reach_ = 0;
  std::size_t taps_ = 0;
  std::vector<double> table_;
};

}  // namespace

AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
  if (target_rate <= 0) throw Error("resample: target rate must be positive");
  if (buf.channels != 1) throw Error("resample: input must be mono");
  if (buf.sample_rate <= 0) throw Error("resample: invalid source rate");
  if (buf.sample_rate == target_rate) return buf;

  const std::int64_t g = std::gcd(static_cast<std::int64_t>(target_rate),
                                  static_cast<std::int64_t>(buf.sample_rate));
  const std::int64_t up = target_rate / g;
  const std::int64_t down = buf.sample_rate / g;
  const auto n_in = static_cast<std::int64_t>(buf.samples.size());
  const std::int64_t n_out = (n_in * up + down / 2) / down;

  const PolyphaseBank bank(up, down);
  const std::int64_t reach = bank.reach();
  AudioBuffer out;
  out.sample_rate = target_rate;
  out.channels = 1;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    const std::int64_t pos = n * down;
    const std::int64_t base = pos / up;
    const std::int64_t phase = pos % up;
    const double* h = bank.phase(phase);
    // y[n] = sum_j x[base + j] * h(frac - j)
    const std::int64_t j_lo = std::max(-reach, -base);
    const std::int64_t j_hi = std::min(reach, n_in - 1 - base);
    double acc = 0.0;
    for (std::int64_t j = j_lo; j <= j_hi; ++j) {
      acc += static_cast<double>(buf.samples[static_cast<std::size_t>(base + j)]) * h[j + reach];
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(acc);
  }
  return out;
}

NormMode parse_norm_mode(const std::string& text) {
  if (text == "peak") return NormMode::peak;
  if (text == "none") return NormMode::none;
  throw UsageError("unknown normalization '" + text + "' (expected peak|none)");
}

AudioBuffer normalize(const AudioBuffer& buf, NormMode mode) {
  if (mode == NormMode::none) return buf;
  float peak = 0.0f;
  for (float x : buf.samples) peak = std::max(peak, std::abs(x));
  if (peak == 0.0f) {
    warn("normalize: all-zero buffer left unchanged");
    return buf;
  }
  if (peak == kPeakTarget) return buf;
  AudioBuffer out = buf;
  const double scale = static_cast<double>(kPeakTarget) / static_cast<double>(peak);
  for (float& x : out.samples) x = static_cast<float>(x * scale);
  return out;
}

std::size_t seconds_to_samples(double seconds, int sample_rate) {
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

std::vector<Segment> segment(const AudioBuffer& buf, double seg_seconds, double min_tail_s,
                             const std::string& parent_id) {
  if (!(seg_seconds > 0.0)) throw Error("segment: window length must be positive");
  if (buf.channels != 1) throw Error("segment: input must be mono");
  const std::size_t window = std::max<std::size_t>(1, seconds_to_samples(seg_seconds, buf.sample_rate));
  const std::size_t min_tail = seconds_to_samples(std::max(0.0, min_tail_s), buf.sample_rate);
  const std::size_t n = buf.samples.size();
  const std::size_t full = n / window;
  const std::size_t tail = n - full * window;
  const bool keep_tail = tail > 0 && tail >= min_tail;

  std::vector<Segment> out;
  out.reserve(full + (keep_tail ? 1 : 0));
  auto emit = [&](std::size_t begin, std::size_t end) {
    Segment s;
    s.parent_id = parent_id;
    s.index = static_cast<int>(out.size());
    s.samples.assign(buf.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     buf.samples.begin() + static_cast<std::ptrdiff_t>(end));
    s.start_s = static_cast<double>(begin) / buf.sample_rate;
    s.end_s = static_cast<double>(end) / buf.sample_rate;
    out.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < full; ++i) emit(i * window, (i + 1) * window);
  if (keep_tail) emit(full * window, n);
  return out;
}

AudioBuffer preprocess(const AudioBuffer& buf, NormMode mode) {
  return normalize(resample(downmix(buf), kModelSampleRate), mode);
}

}  // namespace sdd
