#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sdd/augment.hpp"
#include "sdd/batcher.hpp"
#include "sdd/model.hpp"
#include "sdd/optimizer.hpp"

namespace sdd {

/// TOML run configuration flattened to "table.key" entries. Values may be
/// strings, integers, floats, booleans and flat arrays.
class ConfigFile {
 public:
  using Value = std::variant<std::string, std::int64_t, double, bool, std::vector<double>, std::vector<std::string>>;

  static ConfigFile parse(std::string_view text);
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.contains(key); }
  /// Overrides or adds a key from a "key=value" command-line string.
  void set_from_string(const std::string& assignment);
  void set(const std::string& key, Value value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  /// Throws UsageError naming the first key never read by a getter.
  void reject_unused() const;

 private:
  const Value* lookup(const std::string& key) const;

  std::map<std::string, Value> values_;
  mutable std::set<std::string> used_;
};

struct TrainRunConfig {
  std::string train_manifest;
  std::string val_manifest;  // empty: use the val split of train_manifest
  std::string out_dir = "run";
  ModelConfig model;
  RawBoostConfig rawboost;
  bool augment = true;
  BatcherConfig batcher;
  Schedule schedule;
  AdamWConfig adamw;
  std::int64_t total_steps = 880'000;
  std::int64_t validation_interval = 100'000;
  std::int64_t log_interval = 100;
  std::uint64_t seed = 0;
  bool cache_audio = true;
  unsigned threads = 1;

  // Fine-tuning stage.
  std::int64_t finetune_steps = 6'000;
  double finetune_lr = 1e-6;
  double finetune_train_fraction = 0.9;
  bool finetune_augment = true;

  void validate(bool post_train) const;
};

TrainRunConfig load_run_config(const ConfigFile& file);

}  // namespace sdd
