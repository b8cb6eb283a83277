#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdd/audio.hpp"
#include "sdd/catalog.hpp"
#include "sdd/rng.hpp"
#include "sdd/types.hpp"

namespace sdd {

inline constexpr double kTrimThresholdSeconds = 13.0;
inline constexpr double kTrimMinSeconds = 10.0;

/// Zero-padded batch; mask rows are a prefix of trues.
template <typename Scalar>
struct PaddedBatch {
  Matrix<Scalar> waveforms;  // B x L
  MaskMatrix mask;           // B x L
  std::vector<int> labels;
  std::vector<std::string> entry_ids;
  std::vector<std::size_t> lengths;

  std::size_t size() const { return lengths.size(); }
  std::size_t max_length() const { return static_cast<std::size_t>(waveforms.cols()); }
};

/// Files longer than 13 s get a random contiguous crop of 10-13 s.
AudioBuffer trim(const AudioBuffer& x, Rng& rng, std::size_t* offset = nullptr);

/// Duration a planned entry costs against the batch budget.
inline double effective_duration(double duration_s) {
  return duration_s > kTrimThresholdSeconds ? kTrimThresholdSeconds : duration_s;
}

struct BatchPlan {
  std::vector<std::vector<std::string>> batches;
  std::uint64_t epoch_seed = 0;

  std::size_t size() const { return batches.size(); }
};

struct BatcherConfig {
  double max_batch_seconds = 100.0;
  double bucket_width_s = 1.0;
};

/// Fixed-width duration buckets, shuffled within each bucket, packed first-fit
/// under the seconds budget; batch order is shuffled as well.
BatchPlan plan_epoch(const Manifest& manifest, const BatcherConfig& cfg, std::uint64_t seed);

template <typename Scalar>
PaddedBatch<Scalar> collate(std::span<const AudioBuffer> buffers, std::span<const int> labels,
                            std::span<const std::string> ids);

extern template PaddedBatch<float> collate<float>(std::span<const AudioBuffer>, std::span<const int>,
                                                  std::span<const std::string>);
extern template PaddedBatch<double> collate<double>(std::span<const AudioBuffer>, std::span<const int>,
                                                    std::span<const std::string>);

}  // namespace sdd
