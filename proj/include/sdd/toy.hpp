#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sdd/audio.hpp"
#include "sdd/catalog.hpp"
#include "sdd/rng.hpp"

namespace sdd {

/// Artifact settings of a synthetic domain. Each fake category carries one
/// artifact family: vocoded = low-pass, neural_codec = coarse quantisation,
/// restored = band-stop notch.
struct ToyDomain {
  double lowpass_hz = 4000.0;
  int quant_bits = 4;
  double notch_center_hz = 1500.0;
  double notch_width_hz = 800.0;

  /// Source domain used for post-training.
  static ToyDomain source() { return {}; }
  /// Shifted target domain used for fine-tuning.
  static ToyDomain shifted() { return {6500.0, 8, 5000.0, 300.0}; }
};

struct ToySplit {
  Split split = Split::train;
  std::size_t count = 0;
  double min_s = 2.0;
  double max_s = 6.0;
};

struct ToyCorpusConfig {
  std::vector<ToySplit> splits;
  ToyDomain domain;
  std::uint64_t seed = 0;
  std::string dataset = "toy";
  std::string prefix = "clip";
};

/// 500 clips: 350 train and 50 val of 2-6 s, 100 test of 8-20 s.
ToyCorpusConfig toy_source_corpus(std::uint64_t seed);
/// 200 clips in the shifted domain: 120 train of 2-6 s, 80 test of 4-12 s.
ToyCorpusConfig toy_target_corpus(std::uint64_t seed);

/// Harmonic tone complex over filtered-noise excitation, with the artifact of
/// `category` applied. Peak level is drawn at random so level is no cue.
AudioBuffer toy_clip(ArtifactCategory category, double seconds, const ToyDomain& domain, Rng& rng);

/// Categories cycle genuine, vocoded, genuine, neural_codec, genuine, restored.
ArtifactCategory toy_category(std::size_t index);

/// Writes `<out_dir>/<split>/<category>/<prefix>NNNN.wav`, plus
/// `manifest.jsonl` and a matching `rules.json` for `manifest build`.
Manifest generate_toy_corpus(const ToyCorpusConfig& cfg, const std::filesystem::path& out_dir, unsigned threads = 1);

}  // namespace sdd
