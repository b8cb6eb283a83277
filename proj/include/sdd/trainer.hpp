#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "sdd/catalog.hpp"
#include "sdd/checkpoint.hpp"
#include "sdd/config.hpp"

namespace sdd {

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics;
  double best_val_loss = 0.0;  // NaN when no validation ran
  std::int64_t steps_done = 0;
};

// Files written to TrainRunConfig::out_dir.
inline constexpr const char* kInitCheckpoint = "init.ckpt";
inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kLastCheckpoint = "last.ckpt";
inline constexpr const char* kMetricsFile = "metrics.tsv";

/// Post-training loop. With `resume`, continues from a checkpoint written by
/// an earlier run of the same config; the data order and augmentation draws
/// depend only on (seed, step), so the trajectory matches an uninterrupted run.
/// Validation runs exactly at multiples of validation_interval; the best
/// checkpoint has the lowest validation loss. A non-finite loss aborts with
/// the last good checkpoint left on disk.
TrainResult post_train(const TrainRunConfig& cfg, const std::optional<std::filesystem::path>& resume = {});

/// Fine-tuning from a post-trained checkpoint on cfg.train_manifest: a seeded
/// train/val split (finetune_train_fraction), fresh optimizer moments, constant
/// finetune_lr for finetune_steps steps.
TrainResult fine_tune(const std::filesystem::path& checkpoint, const TrainRunConfig& cfg);

// Lower-level pieces, exposed for tests.

struct TrainData {
  Manifest train;
  Manifest val;
};

/// Train entries come from cfg.train_manifest (split == train when the file
/// mixes splits); validation entries from cfg.val_manifest or the val split.
TrainData load_train_data(const TrainRunConfig& cfg);

/// Mean per-file validation loss and whole-file EER (NaN when a class is absent).
struct ValidationResult {
  double loss = 0.0;
  double eer = 0.0;
};

ValidationResult validate_model(const ParameterSet<float>& params, const ModelConfig& model, const Manifest& val,
                                unsigned threads);

}  // namespace sdd
