#include "sdd/config.hpp"

#include <toml.hpp>

#include <fstream>
#include <sstream>

#include "sdd/error.hpp"

namespace sdd {
namespace {

ConfigFile::Value convert(const toml::node& node, const std::string& key) {
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* arr = node.as_array()) {
    std::vector<double> numbers;
    std::vector<std::string> strings;
    for (const auto& item : *arr) {
      if (const auto* str = item.as_string()) {
        strings.push_back(str->get());
      } else if (const auto num = item.value<double>()) {
        numbers.push_back(*num);
      } else {
        throw UsageError("config key '" + key + "': arrays may hold only numbers or only strings");
      }
    }
    if (!strings.empty() && !numbers.empty()) throw UsageError("config key '" + key + "': mixed array");
    if (!strings.empty()) return strings;
    return numbers;
  }
  throw UsageError("config key '" + key + "' has an unsupported type");
}

void flatten(const toml::table& table, const std::string& prefix, std::map<std::string, ConfigFile::Value>& out) {
  for (const auto& [k, node] : table) {
    const std::string key = prefix + std::string(k.str());
    if (const auto* sub = node.as_table()) {
      flatten(*sub, key + ".", out);
    } else {
      out[key] = convert(node, key);
    }
  }
}

toml::table parse_toml(std::string_view text, const std::string& source) {
  try {
    return toml::parse(text);
  } catch (const toml::parse_error& e) {
    const auto& where = e.source().begin;
    throw UsageError(source + " line " + std::to_string(where.line) + ": " + std::string(e.description()));
  }
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text) {
  ConfigFile cfg;
  flatten(parse_toml(text, "config"), "", cfg.values_);
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ConfigFile cfg;
  flatten(parse_toml(ss.str(), path.string()), "", cfg.values_);
  return cfg;
}

void ConfigFile::set_from_string(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("override must look like key=value: " + assignment);
  auto trim = [](std::string_view v) {
    const auto b = v.find_first_not_of(" \t");
    return b == std::string_view::npos ? std::string_view{} : v.substr(b, v.find_last_not_of(" \t") - b + 1);
  };
  const std::string key(trim(std::string_view(assignment).substr(0, eq)));
  const std::string value(trim(std::string_view(assignment).substr(eq + 1)));
  if (key.empty() || value.empty()) throw UsageError("override must look like key=value: " + assignment);
  // Parsed as a TOML value; anything that is not one is taken as a bare string.
  try {
    const auto doc = toml::parse("v = " + value);
    values_[key] = convert(*doc.get("v"), key);
  } catch (const toml::parse_error&) {
    values_[key] = value;
  }
}

const ConfigFile::Value* ConfigFile::lookup(const std::string& key) const {
  used_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  const Value* v = lookup(key);
  if (v == nullptr) return fallback;
  if (const auto* s = std::get_if<std::string>(v)) return *s;
  throw UsageError("config key '" + key + "' must be a string");
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const Value* v = lookup(key);
  if (v == nullptr) return fallback;
  if (const auto* d = std::get_if<double>(v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(v)) return static_cast<double>(*i);
  throw UsageError("config key '" + key + "' must be a number");
}

std::int64_t ConfigFile::get_int(const std::string& key, std::int64_t fallback) const {
  const Value* v = lookup(key);
  if (v == nullptr) return fallback;
  if (const auto* i = std::get_if<std::int64_t>(v)) return *i;
  if (const auto* d = std::get_if<double>(v)) {
    if (*d == static_cast<double>(static_cast<std::int64_t>(*d))) return static_cast<std::int64_t>(*d);
  }
  throw UsageError("config key '" + key + "' must be an integer");
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const Value* v = lookup(key);
  if (v == nullptr) return fallback;
  if (const auto* b = std::get_if<bool>(v)) return *b;
  if (const auto* s = std::get_if<std::string>(v)) {
    if (*s == "true") return true;
    if (*s == "false") return false;
  }
  throw UsageError("config key '" + key + "' must be true or false");
}

std::vector<int> ConfigFile::get_ints(const std::string& key, const std::vector<int>& fallback) const {
  const Value* v = lookup(key);
  if (v == nullptr) return fallback;
  const auto* list = std::get_if<std::vector<double>>(v);
  if (list == nullptr) throw UsageError("config key '" + key + "' must be an array of integers");
  std::vector<int> out;
  for (double d : *list) {
    if (d != static_cast<double>(static_cast<int>(d))) throw UsageError("config key '" + key + "' holds a non-integer");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

void ConfigFile::reject_unused() const {
  for (const auto& [key, value] : values_) {
    if (!used_.contains(key)) throw UsageError("unknown config key '" + key + "'");
  }
}

namespace {

void read_filter(const ConfigFile& f, const std::string& prefix, NotchFilterRanges& r) {
  r.bands = static_cast<int>(f.get_int(prefix + "bands", r.bands));
  r.min_center_hz = f.get_double(prefix + "min_center_hz", r.min_center_hz);
  r.max_center_hz = f.get_double(prefix + "max_center_hz", r.max_center_hz);
  r.min_bandwidth_hz = f.get_double(prefix + "min_bandwidth_hz", r.min_bandwidth_hz);
  r.max_bandwidth_hz = f.get_double(prefix + "max_bandwidth_hz", r.max_bandwidth_hz);
  r.min_taps = static_cast<int>(f.get_int(prefix + "min_taps", r.min_taps));
  r.max_taps = static_cast<int>(f.get_int(prefix + "max_taps", r.max_taps));
  r.min_gain_db = f.get_double(prefix + "min_gain_db", r.min_gain_db);
  r.max_gain_db = f.get_double(prefix + "max_gain_db", r.max_gain_db);
}

}  // namespace

void TrainRunConfig::validate(bool post_train) const {
  if (train_manifest.empty()) throw UsageError("data.train_manifest is required");
  model.validate();
  rawboost.validate();
  schedule.validate();
  if (total_steps < 0) throw UsageError("total_steps must be non-negative");
  if (post_train && !schedule.constant && total_steps > schedule.total_steps()) {
    throw UsageError("total_steps exceeds warmup_steps + decay_steps");
  }
  if (validation_interval <= 0) throw UsageError("validation_interval must be positive");
  if (log_interval <= 0) throw UsageError("log_interval must be positive");
  if (batcher.max_batch_seconds < kTrimThresholdSeconds) throw UsageError("max_batch_seconds must be at least 13");
  if (!(batcher.bucket_width_s > 0.0)) throw UsageError("bucket_width_s must be positive");
  if (finetune_steps < 0) throw UsageError("finetune.steps must be non-negative");
  if (!(finetune_train_fraction > 0.0 && finetune_train_fraction < 1.0)) {
    throw UsageError("finetune.train_fraction must lie in (0, 1)");
  }
}

TrainRunConfig load_run_config(const ConfigFile& f) {
  TrainRunConfig c;
  c.seed = static_cast<std::uint64_t>(f.get_int("seed", 0));
  c.out_dir = f.get_string("out_dir", c.out_dir);
  c.total_steps = f.get_int("total_steps", c.total_steps);
  c.validation_interval = f.get_int("validation_interval", c.validation_interval);
  c.log_interval = f.get_int("log_interval", c.log_interval);
  c.threads = static_cast<unsigned>(f.get_int("threads", 1));

  c.train_manifest = f.get_string("data.train_manifest", "");
  c.val_manifest = f.get_string("data.val_manifest", "");
  c.cache_audio = f.get_bool("data.cache_audio", c.cache_audio);

  const auto channels = f.get_ints("model.conv_channels", {32, 64, 64});
  const auto kernels = f.get_ints("model.conv_kernels", {10, 8, 8});
  const auto strides = f.get_ints("model.conv_strides", {8, 5, 8});
  if (channels.size() != kernels.size() || channels.size() != strides.size()) {
    throw UsageError("model.conv_channels, conv_kernels and conv_strides must have equal length");
  }
  c.model.conv.clear();
  for (std::size_t i = 0; i < channels.size(); ++i) c.model.conv.push_back({channels[i], kernels[i], strides[i]});
  c.model.dim = static_cast<int>(f.get_int("model.dim", c.model.dim));
  c.model.depth = static_cast<int>(f.get_int("model.depth", c.model.depth));
  c.model.heads = static_cast<int>(f.get_int("model.heads", c.model.heads));
  c.model.ff_dim = static_cast<int>(f.get_int("model.ff_dim", c.model.ff_dim));
  c.model.head = parse_head_mode(f.get_string("model.head", "multiclass"));

  c.schedule = schedule_preset(f.get_string("schedule.preset", "faithful"));
  c.schedule.peak_lr = f.get_double("schedule.peak_lr", c.schedule.peak_lr);
  c.schedule.warmup_steps = f.get_int("schedule.warmup_steps", c.schedule.warmup_steps);
  c.schedule.decay_steps = f.get_int("schedule.decay_steps", c.schedule.decay_steps);

  c.adamw.beta1 = f.get_double("optimizer.beta1", c.adamw.beta1);
  c.adamw.beta2 = f.get_double("optimizer.beta2", c.adamw.beta2);
  c.adamw.eps = f.get_double("optimizer.eps", c.adamw.eps);
  c.adamw.weight_decay = f.get_double("optimizer.weight_decay", c.adamw.weight_decay);
  c.adamw.grad_clip = f.get_double("optimizer.grad_clip", c.adamw.grad_clip);

  c.batcher.max_batch_seconds = f.get_double("batcher.max_batch_seconds", c.batcher.max_batch_seconds);
  c.batcher.bucket_width_s = f.get_double("batcher.bucket_width_s", c.batcher.bucket_width_s);

  c.rawboost = rawboost_preset(f.get_string("rawboost.preset", "asvspoof-best"));
  c.augment = f.get_bool("rawboost.enabled", c.augment);
  c.rawboost.mode = parse_rawboost_mode(f.get_string("rawboost.mode", to_string(c.rawboost.mode)));
  c.rawboost.apply_prob = f.get_double("rawboost.apply_prob", c.rawboost.apply_prob);
  read_filter(f, "rawboost.lnl_", c.rawboost.lnl.filter);
  c.rawboost.lnl.nonlinearity_order = static_cast<int>(f.get_int("rawboost.lnl_order", c.rawboost.lnl.nonlinearity_order));
  c.rawboost.lnl.min_bias_db = f.get_double("rawboost.lnl_min_bias_db", c.rawboost.lnl.min_bias_db);
  c.rawboost.lnl.max_bias_db = f.get_double("rawboost.lnl_max_bias_db", c.rawboost.lnl.max_bias_db);
  c.rawboost.isd.min_percent = f.get_double("rawboost.isd_min_percent", c.rawboost.isd.min_percent);
  c.rawboost.isd.max_percent = f.get_double("rawboost.isd_max_percent", c.rawboost.isd.max_percent);
  c.rawboost.isd.min_scale = f.get_double("rawboost.isd_min_scale", c.rawboost.isd.min_scale);
  c.rawboost.isd.max_scale = f.get_double("rawboost.isd_max_scale", c.rawboost.isd.max_scale);
  c.rawboost.ssi.min_snr_db = f.get_double("rawboost.ssi_min_snr_db", c.rawboost.ssi.min_snr_db);
  c.rawboost.ssi.max_snr_db = f.get_double("rawboost.ssi_max_snr_db", c.rawboost.ssi.max_snr_db);
  read_filter(f, "rawboost.ssi_", c.rawboost.ssi.filter);

  c.finetune_steps = f.get_int("finetune.steps", c.finetune_steps);
  c.finetune_lr = f.get_double("finetune.lr", c.finetune_lr);
  c.finetune_train_fraction = f.get_double("finetune.train_fraction", c.finetune_train_fraction);
  c.finetune_augment = f.get_bool("finetune.rawboost", c.finetune_augment);

  f.reject_unused();
  return c;
}

}  // namespace sdd
