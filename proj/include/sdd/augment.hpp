#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdd/audio.hpp"
#include "sdd/rng.hpp"

namespace sdd {

enum class RawBoostMode { off, lnl, isd, ssi, series_lnl_isd, parallel, full_series };

std::string to_string(RawBoostMode mode);
RawBoostMode parse_rawboost_mode(const std::string& text);

/// Ranges for one randomly drawn cascade of band-stop FIR filters.
struct NotchFilterRanges {
  int bands = 5;
  double min_center_hz = 20.0;
  double max_center_hz = 8000.0;
  double min_bandwidth_hz = 100.0;
  double max_bandwidth_hz = 1000.0;
  int min_taps = 10;
  int max_taps = 100;
  double min_gain_db = 0.0;
  double max_gain_db = 0.0;
};

struct LnlParams {
  NotchFilterRanges filter;
  int nonlinearity_order = 5;
  // Gain offsets subtracted for the nonlinear (order >= 2) terms.
  double min_bias_db = 5.0;
  double max_bias_db = 20.0;
};

struct IsdParams {
  double min_percent = 0.0;
  double max_percent = 10.0;
  double min_scale = 2.0;
  double max_scale = 2.0;
};

struct SsiParams {
  double min_snr_db = 10.0;
  double max_snr_db = 40.0;
  NotchFilterRanges filter;
};

struct RawBoostConfig {
  RawBoostMode mode = RawBoostMode::series_lnl_isd;
  LnlParams lnl;
  IsdParams isd;
  SsiParams ssi;
  double apply_prob = 1.0;

  /// Throws UsageError on inverted ranges, out-of-range percentages or SNRs.
  void validate() const;
};

/// Named presets; "asvspoof-best" is series convolutive + impulsive noise.
RawBoostConfig rawboost_preset(const std::string& name);

struct LnlTrace {
  // Drawn band centres, one list per nonlinearity order.
  std::vector<std::vector<double>> centers_hz;
};

struct IsdTrace {
  std::vector<std::size_t> positions;
};

struct SsiTrace {
  std::vector<double> noise;  // exactly what was added to the input
  double target_snr_db = 0.0;
};

AudioBuffer lnl_convolutive_noise(const AudioBuffer& x, const LnlParams& p, Rng& rng,
                                  LnlTrace* trace = nullptr);
AudioBuffer impulsive_sd_noise(const AudioBuffer& x, const IsdParams& p, Rng& rng,
                               IsdTrace* trace = nullptr);
/// Throws on all-zero input.
AudioBuffer stationary_si_noise(const AudioBuffer& x, const SsiParams& p, Rng& rng,
                                SsiTrace* trace = nullptr);

/// Seeds for the three stages, drawn up front from the caller's generator so
/// that every mode consumes it identically.
struct RawBoostStreams {
  std::uint64_t gate;
  std::uint64_t lnl;
  std::uint64_t isd;
  std::uint64_t ssi;
};

RawBoostStreams split_streams(Rng& rng);

AudioBuffer rawboost(const AudioBuffer& x, const RawBoostConfig& cfg, Rng& rng);

}  // namespace sdd
