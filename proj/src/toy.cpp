#include "sdd/toy.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <thread>

#include <json.hpp>

#include "sdd/error.hpp"
#include "sdd/fir.hpp"
#include "sdd/wav.hpp"

namespace sdd {
namespace fs = std::filesystem;

namespace {

constexpr double kFs = kModelSampleRate;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::vector<double> genuine_signal(std::size_t n, Rng& rng) {
  const double f0 = uniform(rng, 90.0, 260.0);
  const double vibrato_hz = uniform(rng, 3.0, 7.0);
  const double vibrato_depth = uniform(rng, 0.01, 0.06);
  const double tilt = uniform(rng, 0.7, 1.2);
  const double syllable_hz = uniform(rng, 2.0, 5.0);
  const double noise_level = uniform(rng, 0.05, 0.2);
  const double phase0 = uniform(rng, 0.0, kTwoPi);

  // Noise excitation shaped by a random band-pass.
  const double lo = uniform(rng, 100.0, 600.0);
  const double hi = uniform(rng, 6000.0, 7800.0);
  const std::array<double, 2> edges{lo, hi};
  const auto band = fir::firwin(63, edges, false, kFs);
  std::vector<double> white(n);
  for (auto& w : white) w = gaussian(rng);
  const auto noise = fir::lfilter(band, white);

  std::vector<double> amp(static_cast<std::size_t>(7800.0 / (f0 * (1.0 - vibrato_depth))) + 2);
  for (std::size_t k = 1; k < amp.size(); ++k) amp[k] = std::pow(static_cast<double>(k), -tilt);

  std::vector<double> y(n);
  double phase = phase0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kFs;
    const double f = f0 * (1.0 + vibrato_depth * std::sin(kTwoPi * vibrato_hz * t));
    phase += kTwoPi * f / kFs;
    if (phase > kTwoPi) phase -= kTwoPi;
    // sin(k*phase) by the Chebyshev recurrence, harmonics kept below 7.8 kHz.
    const double c2 = 2.0 * std::cos(phase);
    double s_prev = 0.0;
    double s = std::sin(phase);
    double acc = 0.0;
    const int harmonics = static_cast<int>(7800.0 / f);
    for (int k = 1; k <= harmonics; ++k) {
      acc += s * amp[static_cast<std::size_t>(k)];
      const double next = c2 * s - s_prev;
      s_prev = s;
      s = next;
    }
    const double env = 0.35 + 0.65 * std::pow(std::sin(std::numbers::pi * syllable_hz * t + phase0), 2.0);
    y[i] = env * (acc + noise_level * noise[i]);
  }
  return y;
}

void apply_artifact(std::vector<double>& y, ArtifactCategory category, const ToyDomain& d) {
  switch (category) {
    case ArtifactCategory::genuine:
    case ArtifactCategory::tts_vc:
      return;
    case ArtifactCategory::vocoded: {
      const std::array<double, 1> edge{d.lowpass_hz};
      y = fir::lfilter(fir::firwin(101, edge, true, kFs), y);
      return;
    }
    case ArtifactCategory::restored: {
      const std::array<double, 2> edges{d.notch_center_hz - d.notch_width_hz / 2, d.notch_center_hz + d.notch_width_hz / 2};
      y = fir::lfilter(fir::firwin(101, edges, true, kFs), y);
      return;
    }
    case ArtifactCategory::neural_codec: {
      double peak = 0.0;
      for (double v : y) peak = std::max(peak, std::abs(v));
      if (peak == 0.0) return;
      const double levels = std::ldexp(1.0, d.quant_bits - 1);
      for (auto& v : y) v = std::round(v / peak * levels) / levels * peak;
      return;
    }
  }
}

std::string split_dir(Split s) { return std::string(to_string(s)); }

}  // namespace

ArtifactCategory toy_category(std::size_t index) {
  static constexpr std::array<ArtifactCategory, 6> cycle{ArtifactCategory::genuine,  ArtifactCategory::vocoded,
                                                        ArtifactCategory::genuine,  ArtifactCategory::neural_codec,
                                                        ArtifactCategory::genuine,  ArtifactCategory::restored};
  return cycle[index % cycle.size()];
}

AudioBuffer toy_clip(ArtifactCategory category, double seconds, const ToyDomain& domain, Rng& rng) {
  const auto n = seconds_to_samples(seconds, kModelSampleRate);
  auto y = genuine_signal(n, rng);
  apply_artifact(y, category, domain);
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  const double target = uniform(rng, 0.3, 0.9);
  AudioBuffer out;
  out.sample_rate = kModelSampleRate;
  out.channels = 1;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(peak > 0 ? y[i] / peak * target : 0.0);
  return out;
}

ToyCorpusConfig toy_source_corpus(std::uint64_t seed) {
  ToyCorpusConfig c;
  c.seed = seed;
  c.domain = ToyDomain::source();
  c.splits = {{Split::train, 350, 2.0, 6.0}, {Split::val, 50, 2.0, 6.0}, {Split::test, 100, 8.0, 20.0}};
  return c;
}

ToyCorpusConfig toy_target_corpus(std::uint64_t seed) {
  ToyCorpusConfig c;
  c.seed = seed;
  c.domain = ToyDomain::shifted();
  c.dataset = "toy-target";
  c.prefix = "target";
  c.splits = {{Split::train, 120, 2.0, 6.0}, {Split::test, 80, 4.0, 12.0}};
  return c;
}

Manifest generate_toy_corpus(const ToyCorpusConfig& cfg, const fs::path& out_dir, unsigned threads) {
  struct Item {
    ManifestEntry entry;
    double seconds = 0.0;
    std::size_t index = 0;
  };
  std::vector<Item> items;
  std::size_t index = 0;
  for (const auto& s : cfg.splits) {
    if (!(s.min_s > 0.0 && s.max_s >= s.min_s)) throw UsageError("toy corpus: bad duration range");
    for (std::size_t k = 0; k < s.count; ++k, ++index) {
      Item it;
      it.index = index;
      char name[64];
      std::snprintf(name, sizeof(name), "%s%04zu", cfg.prefix.c_str(), index);
      it.entry.category = toy_category(index);
      const fs::path rel = fs::path(split_dir(s.split)) / std::string(to_string(it.entry.category)) / (std::string(name) + ".wav");
      it.entry.id = name;
      it.entry.path = (out_dir / rel).string();
      it.entry.dataset = cfg.dataset;
      it.entry.language = "none";
      it.entry.split = s.split;
      Rng dur_rng(derive_seed(cfg.seed, "toy-duration", index));
      it.seconds = uniform(dur_rng, s.min_s, s.max_s);
      items.push_back(std::move(it));
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      auto& it = items[i];
      try {
        Rng rng(derive_seed(cfg.seed, "toy-clip", it.index));
        const AudioBuffer clip = toy_clip(it.entry.category, it.seconds, cfg.domain, rng);
        fs::create_directories(fs::path(it.entry.path).parent_path());
        save_wav(it.entry.path, clip);
        it.entry.duration_s = static_cast<double>(clip.frames()) / clip.sample_rate;
      } catch (const std::exception& e) {
        std::lock_guard lock(failure_mutex);
        failed = true;
        failure = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < std::max(1U, threads); ++t) pool.emplace_back(worker);
    worker();
  }
  if (failed) throw Error("toy corpus generation failed: " + failure);

  std::vector<ManifestEntry> entries;
  for (auto& it : items) entries.push_back(std::move(it.entry));
  Manifest manifest(std::move(entries));
  write_manifest(out_dir / "manifest.jsonl", manifest);

  nlohmann::ordered_json rules = nlohmann::ordered_json::array();
  for (const auto& s : cfg.splits) {
    for (ArtifactCategory c : kAllCategories) {
      rules.push_back({{"glob", split_dir(s.split) + "/" + std::string(to_string(c)) + "/*.wav"},
                       {"category", std::string(to_string(c))},
                       {"dataset", cfg.dataset},
                       {"language", "none"},
                       {"split", split_dir(s.split)}});
    }
  }
  std::ofstream(out_dir / "rules.json") << rules.dump(2) << '\n';
  return manifest;
}

}  // namespace sdd
