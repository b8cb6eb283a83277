#include "sdd/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdd/error.hpp"
#include "sdd/fir.hpp"

namespace sdd {

std::string to_string(RawBoostMode mode) {
  switch (mode) {
    case RawBoostMode::off: return "off";
    case RawBoostMode::lnl: return "lnl";
    case RawBoostMode::isd: return "isd";
    case RawBoostMode::ssi: return "ssi";
    case RawBoostMode::series_lnl_isd: return "series_lnl_isd";
    case RawBoostMode::parallel: return "parallel";
    case RawBoostMode::full_series: return "full_series";
  }
  return "?";
}

RawBoostMode parse_rawboost_mode(const std::string& text) {
  for (auto m : {RawBoostMode::off, RawBoostMode::lnl, RawBoostMode::isd, RawBoostMode::ssi,
                 RawBoostMode::series_lnl_isd, RawBoostMode::parallel, RawBoostMode::full_series}) {
    if (to_string(m) == text) return m;
  }
  throw UsageError("unknown rawboost mode '" + text + "'");
}

namespace {

void check_range(double lo, double hi, const char* what) {
  if (!(lo <= hi)) throw UsageError(std::string("rawboost: ") + what + " range has min > max");
}

void check_filter(const NotchFilterRanges& f) {
  if (f.bands < 0) throw UsageError("rawboost: negative band count");
  check_range(f.min_center_hz, f.max_center_hz, "centre frequency");
  check_range(f.min_bandwidth_hz, f.max_bandwidth_hz, "bandwidth");
  check_range(f.min_taps, f.max_taps, "filter taps");
  check_range(f.min_gain_db, f.max_gain_db, "gain");
  if (f.min_taps < 1) throw UsageError("rawboost: filters need at least one tap");
}

}  // namespace

void RawBoostConfig::validate() const {
  check_filter(lnl.filter);
  check_filter(ssi.filter);
  if (lnl.nonlinearity_order < 1) throw UsageError("rawboost: nonlinearity order must be >= 1");
  check_range(lnl.min_bias_db, lnl.max_bias_db, "nonlinear bias");
  check_range(isd.min_percent, isd.max_percent, "perturbed percentage");
  if (isd.min_percent < 0.0 || isd.max_percent > 100.0) {
    throw UsageError("rawboost: percentages must lie in [0, 100]");
  }
  check_range(isd.min_scale, isd.max_scale, "amplitude scale");
  check_range(ssi.min_snr_db, ssi.max_snr_db, "SNR");
  if (ssi.min_snr_db < -10.0 || ssi.max_snr_db > 60.0) {
    throw UsageError("rawboost: SNR range must lie within [-10, 60] dB");
  }
  if (!(apply_prob >= 0.0 && apply_prob <= 1.0)) throw UsageError("rawboost: apply_prob must lie in [0, 1]");
}

RawBoostConfig rawboost_preset(const std::string& name) {
  if (name == "asvspoof-best") return RawBoostConfig{};
  if (name == "off") {
    RawBoostConfig cfg;
    cfg.mode = RawBoostMode::off;
    return cfg;
  }
  throw UsageError("unknown rawboost preset '" + name + "'");
}

namespace {

std::vector<double> to_double(const AudioBuffer& x) { return {x.samples.begin(), x.samples.end()}; }

AudioBuffer from_double(const AudioBuffer& like, const std::vector<double>& y) {
  AudioBuffer out;
  out.sample_rate = like.sample_rate;
  out.channels = 1;
  out.samples.resize(y.size());
  std::transform(y.begin(), y.end(), out.samples.begin(), [](double v) { return static_cast<float>(v); });
  return out;
}

double peak(const std::vector<double>& v) {
  double p = 0.0;
  for (double x : v) p = std::max(p, std::abs(x));
  return p;
}

void require_mono(const AudioBuffer& x, const char* op) {
  if (x.channels != 1) throw Error(std::string(op) + ": input must be mono");
}

// Draws a cascade of band-stop filters; returns taps scaled so the peak
// magnitude response equals the drawn gain.
std::vector<double> draw_notch_cascade(const NotchFilterRanges& f, double min_gain_db,
                                       double max_gain_db, double fs, Rng& rng,
                                       std::vector<double>* centers) {
  std::vector<double> taps{1.0};
  for (int band = 0; band < f.bands; ++band) {
    const double fc = uniform(rng, f.min_center_hz, f.max_center_hz);
    const double bw = uniform(rng, f.min_bandwidth_hz, f.max_bandwidth_hz);
    auto n = static_cast<int>(uniform_int(rng, f.min_taps, f.max_taps));
    if (n % 2 == 0) ++n;  // band-stop designs need an odd length
    double lo = fc - bw / 2.0;
    double hi = fc + bw / 2.0;
    if (lo <= 0.0) lo = 1e-3;
    if (hi >= fs / 2.0) hi = fs / 2.0 - 1e-3;
    const double edges[2] = {lo, hi};
    taps = fir::convolve(fir::firwin(n, edges, true, fs), taps);
    if (centers != nullptr) centers->push_back(fc);
  }
  const double gain_db = uniform(rng, min_gain_db, max_gain_db);
  const double scale = std::pow(10.0, gain_db / 20.0) / fir::max_magnitude(taps);
  for (double& t : taps) t *= scale;
  return taps;
}

}  // namespace

AudioBuffer lnl_convolutive_noise(const AudioBuffer& x, const LnlParams& p, Rng& rng, LnlTrace* trace) {
  require_mono(x, "lnl_convolutive_noise");
  const auto in = to_double(x);
  const double fs = x.sample_rate;
  std::vector<double> y(in.size(), 0.0);
  std::vector<double> power(in.size());
  double min_g = p.filter.min_gain_db;
  double max_g = p.filter.max_gain_db;
  if (trace != nullptr) trace->centers_hz.clear();
  for (int order = 1; order <= p.nonlinearity_order; ++order) {
    if (order == 2) {
      min_g -= p.min_bias_db;
      max_g -= p.max_bias_db;
    }
    // With the bias applied the bounds can swap; keep the draw well defined.
    const double lo = std::min(min_g, max_g);
    const double hi = std::max(min_g, max_g);
    std::vector<double> centers;
    const auto taps = draw_notch_cascade(p.filter, lo, hi, fs, rng, &centers);
    if (trace != nullptr) trace->centers_hz.push_back(std::move(centers));
    if (order == 1) {
      power = in;
    } else {
      for (std::size_t i = 0; i < power.size(); ++i) power[i] *= in[i];
    }
    const auto filtered = fir::filtfilt(taps, power);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += filtered[i];
  }
  // Even powers add a DC offset.
  if (p.nonlinearity_order >= 2 && !y.empty()) {
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    for (double& v : y) v -= mean;
  }
  const double in_peak = peak(in);
  const double out_peak = peak(y);
  if (out_peak > 0.0) {
    const double s = in_peak / out_peak;
    for (double& v : y) v *= s;
  }
  return from_double(x, y);
}

AudioBuffer impulsive_sd_noise(const AudioBuffer& x, const IsdParams& p, Rng& rng, IsdTrace* trace) {
  require_mono(x, "impulsive_sd_noise");
  const double percent = uniform(rng, p.min_percent, p.max_percent);
  const std::size_t len = x.samples.size();
  const auto count = std::min(
      len, static_cast<std::size_t>(std::floor(static_cast<double>(len) * percent / 100.0)));

  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  std::vector<std::size_t> order(len);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(len - 1)));
    std::swap(order[i], order[j]);
  }
  order.resize(count);

  std::vector<double> y = to_double(x);
  for (std::size_t pos : order) {
    const double scale = uniform(rng, p.min_scale, p.max_scale);
    const double r = (2.0 * uniform(rng, 0.0, 1.0) - 1.0) * (2.0 * uniform(rng, 0.0, 1.0) - 1.0);
    y[pos] += scale * y[pos] * r;
  }
  const double pk = peak(y);
  if (pk > 1.0) {
    for (double& v : y) v /= pk;
  }
  if (trace != nullptr) trace->positions = std::move(order);
  return from_double(x, y);
}

AudioBuffer stationary_si_noise(const AudioBuffer& x, const SsiParams& p, Rng& rng, SsiTrace* trace) {
  require_mono(x, "stationary_si_noise");
  const auto in = to_double(x);
  double signal_norm = 0.0;
  for (double v : in) signal_norm += v * v;
  signal_norm = std::sqrt(signal_norm);
  if (signal_norm == 0.0) throw Error("stationary_si_noise: all-zero input (SNR undefined)");

  std::vector<double> white(in.size());
  for (double& v : white) v = gaussian(rng);
  const auto taps = draw_notch_cascade(p.filter, p.filter.min_gain_db, p.filter.max_gain_db,
                                       x.sample_rate, rng, nullptr);
  auto noise = fir::lfilter(taps, white);
  const double snr_db = uniform(rng, p.min_snr_db, p.max_snr_db);
  double noise_norm = 0.0;
  for (double v : noise) noise_norm += v * v;
  noise_norm = std::sqrt(noise_norm);
  const double gain = noise_norm > 0.0 ? signal_norm / noise_norm / std::pow(10.0, 0.05 * snr_db) : 0.0;
  for (double& v : noise) v *= gain;

  std::vector<double> y(in.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[i] + noise[i];
  const double pk = peak(y);
  if (pk > 1.0) {
    for (double& v : y) v /= pk;
  }
  if (trace != nullptr) {
    trace->noise = std::move(noise);
    trace->target_snr_db = snr_db;
  }
  return from_double(x, y);
}

RawBoostStreams split_streams(Rng& rng) {
  RawBoostStreams s{};
  s.gate = rng();
  s.lnl = rng();
  s.isd = rng();
  s.ssi = rng();
  return s;
}

AudioBuffer rawboost(const AudioBuffer& x, const RawBoostConfig& cfg, Rng& rng) {
  const RawBoostStreams streams = split_streams(rng);
  if (cfg.mode == RawBoostMode::off) return x;
  if (cfg.apply_prob < 1.0) {
    Rng gate(streams.gate);
    if (uniform(gate, 0.0, 1.0) >= cfg.apply_prob) return x;
  }
  Rng lnl_rng(streams.lnl);
  Rng isd_rng(streams.isd);
  Rng ssi_rng(streams.ssi);
  switch (cfg.mode) {
    case RawBoostMode::off:
      return x;
    case RawBoostMode::lnl:
      return lnl_convolutive_noise(x, cfg.lnl, lnl_rng);
    case RawBoostMode::isd:
      return impulsive_sd_noise(x, cfg.isd, isd_rng);
    case RawBoostMode::ssi:
      return stationary_si_noise(x, cfg.ssi, ssi_rng);
    case RawBoostMode::series_lnl_isd:
      return impulsive_sd_noise(lnl_convolutive_noise(x, cfg.lnl, lnl_rng), cfg.isd, isd_rng);
    case RawBoostMode::full_series:
      return stationary_si_noise(
          impulsive_sd_noise(lnl_convolutive_noise(x, cfg.lnl, lnl_rng), cfg.isd, isd_rng), cfg.ssi,
          ssi_rng);
    case RawBoostMode::parallel: {
      const auto a = lnl_convolutive_noise(x, cfg.lnl, lnl_rng);
      const auto b = impulsive_sd_noise(x, cfg.isd, isd_rng);
      std::vector<double> y(x.samples.size());
      for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = static_cast<double>(a.samples[i]) + static_cast<double>(b.samples[i]);
      }
      const double pk = peak(y);
      if (pk > 1.0) {
        for (double& v : y) v /= pk;
      }
      return from_double(x, y);
    }
  }
  return x;
}

}  // namespace sdd
