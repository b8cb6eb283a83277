#include "sdd/batcher.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sdd/error.hpp"

namespace sdd {

AudioBuffer trim(const AudioBuffer& x, Rng& rng, std::size_t* offset) {
  if (offset != nullptr) *offset = 0;
  const std::size_t n = x.frames();
  const auto threshold = seconds_to_samples(kTrimThresholdSeconds, x.sample_rate);
  if (n <= threshold) return x;
  const auto min_len = static_cast<std::int64_t>(seconds_to_samples(kTrimMinSeconds, x.sample_rate));
  const auto len = static_cast<std::size_t>(uniform_int(rng, min_len, static_cast<std::int64_t>(threshold)));
  const auto start = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n - len)));
  if (offset != nullptr) *offset = start;
  AudioBuffer out;
  out.sample_rate = x.sample_rate;
  out.channels = x.channels;
  const auto ch = static_cast<std::size_t>(x.channels);
  out.samples.assign(x.samples.begin() + static_cast<std::ptrdiff_t>(start * ch),
                     x.samples.begin() + static_cast<std::ptrdiff_t>((start + len) * ch));
  return out;
}

BatchPlan plan_epoch(const Manifest& manifest, const BatcherConfig& cfg, std::uint64_t seed) {
  if (cfg.max_batch_seconds < kTrimThresholdSeconds) {
    throw UsageError("max_batch_seconds must be at least 13");
  }
  if (!(cfg.bucket_width_s > 0.0)) throw UsageError("bucket_width_s must be positive");

  std::map<std::int64_t, std::vector<const ManifestEntry*>> buckets;
  for (const auto& e : manifest) {
    const double cost = effective_duration(e.duration_s);
    if (cost > cfg.max_batch_seconds) {
      throw Error("entry '" + e.id + "' alone exceeds the batch budget");
    }
    buckets[static_cast<std::int64_t>(std::floor(cost / cfg.bucket_width_s))].push_back(&e);
  }

  BatchPlan plan;
  plan.epoch_seed = seed;
  Rng rng(seed);
  for (auto& [key, members] : buckets) {
    shuffle(members.begin(), members.end(), rng);
    // First fit over the batches opened for this bucket.
    std::vector<std::vector<std::string>> open;
    std::vector<double> used;
    for (const ManifestEntry* e : members) {
      const double cost = effective_duration(e->duration_s);
      std::size_t slot = 0;
      while (slot < open.size() && used[slot] + cost > cfg.max_batch_seconds) ++slot;
      if (slot == open.size()) {
        open.emplace_back();
        used.push_back(0.0);
      }
      open[slot].push_back(e->id);
      used[slot] += cost;
    }
    for (auto& b : open) plan.batches.push_back(std::move(b));
  }
  shuffle(plan.batches.begin(), plan.batches.end(), rng);
  return plan;
}

template <typename Scalar>
PaddedBatch<Scalar> collate(std::span<const AudioBuffer> buffers, std::span<const int> labels,
                            std::span<const std::string> ids) {
  if (buffers.empty()) throw Error("collate: empty batch");
  if (labels.size() != buffers.size() || ids.size() != buffers.size()) {
    throw Error("collate: buffers, labels and ids differ in length");
  }
  std::size_t max_len = 0;
  for (const auto& b : buffers) {
    if (b.channels != 1 || b.sample_rate != kModelSampleRate) {
      throw Error("collate: every buffer must be 16 kHz mono");
    }
    max_len = std::max(max_len, b.samples.size());
  }
  PaddedBatch<Scalar> batch;
  const auto rows = static_cast<Eigen::Index>(buffers.size());
  const auto cols = static_cast<Eigen::Index>(max_len);
  batch.waveforms = Matrix<Scalar>::Zero(rows, cols);
  batch.mask = MaskMatrix::Constant(rows, cols, false);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& s = buffers[static_cast<std::size_t>(r)].samples;
    const auto n = static_cast<Eigen::Index>(s.size());
    for (Eigen::Index c = 0; c < n; ++c) batch.waveforms(r, c) = static_cast<Scalar>(s[static_cast<std::size_t>(c)]);
    batch.mask.row(r).head(n).setConstant(true);
    batch.lengths.push_back(s.size());
  }
  batch.labels.assign(labels.begin(), labels.end());
  batch.entry_ids.assign(ids.begin(), ids.end());
  return batch;
}

template PaddedBatch<float> collate<float>(std::span<const AudioBuffer>, std::span<const int>,
                                           std::span<const std::string>);
template PaddedBatch<double> collate<double>(std::span<const AudioBuffer>, std::span<const int>,
                                             std::span<const std::string>);

}  // namespace sdd
