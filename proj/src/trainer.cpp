#include "sdd/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include <json.hpp>

#include "sdd/augment.hpp"
#include "sdd/batcher.hpp"
#include "sdd/diag.hpp"
#include "sdd/error.hpp"
#include "sdd/eval.hpp"
#include "sdd/optimizer.hpp"

namespace sdd {
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Model-ready audio, optionally memoised across epochs.
class AudioSource {
 public:
  explicit AudioSource(bool cache) : cache_(cache) {}

  AudioBuffer get(const ManifestEntry& entry) {
    if (!cache_) return load_model_input(entry.path);
    {
      std::shared_lock lock(mutex_);
      const auto it = store_.find(entry.id);
      if (it != store_.end()) return it->second;
    }
    AudioBuffer buf = load_model_input(entry.path);
    std::unique_lock lock(mutex_);
    return store_.emplace(entry.id, std::move(buf)).first->second;
  }

 private:
  bool cache_;
  std::shared_mutex mutex_;
  std::map<std::string, AudioBuffer> store_;
};

template <typename Job>
void parallel_for(std::size_t n, unsigned threads, Job&& job) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) job(i);
  };
  const unsigned count = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
}

ValidationResult run_validation(const ParameterSet<float>& params, const ModelConfig& model, const Manifest& val,
                                unsigned threads, AudioSource& source) {
  std::vector<double> losses(val.size(), 0.0);
  std::vector<ScoreRecord> records(val.size());
  std::vector<std::string> failures(val.size());
  parallel_for(val.size(), threads, [&](std::size_t i) {
    const auto& entry = val[i];
    try {
      const AudioBuffer audio = source.get(entry);
      const std::array<int, 1> labels{class_index(entry.category, model.head)};
      const std::array<std::string, 1> ids{entry.id};
      const auto batch = collate<float>(std::span<const AudioBuffer>(&audio, 1), labels, ids);
      const auto fwd = forward<float>(batch, params, model, false);
      losses[i] = static_cast<double>(cross_entropy_sum<float>(fwd.logits, labels));
      records[i] = {entry.id, kWholeFile, static_cast<double>(score<float>(fwd.logits)(0)),
                    is_genuine(entry.category) ? 1 : 0};
    } catch (const std::exception& e) {
      failures[i] = entry.id + ": " + e.what();
    }
  });
  for (const auto& f : failures) {
    if (!f.empty()) throw Error("validation failed on " + f);
  }
  // Summed in manifest order so the result does not depend on thread timing.
  double total = 0.0;
  for (double l : losses) total += l;
  ValidationResult out;
  out.loss = total / static_cast<double>(val.size());
  bool has_genuine = false;
  bool has_fake = false;
  for (const auto& r : records) (r.label == 1 ? has_genuine : has_fake) = true;
  out.eer = has_genuine && has_fake ? compute_eer(records).eer : kNaN;
  return out;
}

std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

struct Job {
  TrainData data;
  ModelConfig model;
  ParameterSet<float> params;
  OptimizerState<float> opt;
  std::int64_t start_step = 0;
  std::int64_t total_steps = 0;
  Schedule schedule;
  AdamWConfig adamw;
  BatcherConfig batcher;
  bool augment = true;
  RawBoostConfig rawboost;
  std::uint64_t seed = 0;
  std::int64_t validation_interval = 1;
  std::int64_t log_interval = 1;
  bool cache_audio = true;
  unsigned threads = 1;
  fs::path out_dir;
  double best_val_loss = kNaN;
  std::string stage;
};

std::string metadata_json(const Job& job, double best_val_loss) {
  nlohmann::ordered_json meta;
  meta["stage"] = job.stage;
  meta["seed"] = job.seed;
  meta["best_val_loss"] = std::isnan(best_val_loss) ? nlohmann::ordered_json(nullptr)
                                                     : nlohmann::ordered_json(best_val_loss);
  return meta.dump();
}

Checkpoint make_checkpoint(const Job& job, const ParameterSet<float>& params, const OptimizerState<float>& opt,
                           std::int64_t step, double best_val_loss) {
  Checkpoint ckpt;
  ckpt.config = job.model;
  ckpt.step = static_cast<std::uint64_t>(step);
  ckpt.metadata = metadata_json(job, best_val_loss);
  ckpt.params = params;
  ckpt.adam_m = opt.m;
  ckpt.adam_v = opt.v;
  return ckpt;
}

// Locates the batch consumed by update number `step` (0-based): epochs are
// planned one after another until the step falls inside one.
class StepPlanner {
 public:
  StepPlanner(const Manifest& train, const BatcherConfig& cfg, std::uint64_t seed)
      : train_(train), cfg_(cfg), seed_(seed) {}

  // Returns (epoch, batch ids) for `step`. Steps must be queried in
  // non-decreasing order.
  std::pair<std::uint64_t, const std::vector<std::string>*> at(std::int64_t step) {
    if (!plan_) load(0);
    while (step >= epoch_start_ + static_cast<std::int64_t>(plan_->size())) {
      epoch_start_ += static_cast<std::int64_t>(plan_->size());
      load(epoch_ + 1);
    }
    return {epoch_, &plan_->batches[static_cast<std::size_t>(step - epoch_start_)]};
  }

 private:
  void load(std::uint64_t epoch) {
    epoch_ = epoch;
    plan_ = plan_epoch(train_, cfg_, derive_seed(seed_, "plan", epoch));
    if (plan_->size() == 0) throw Error("epoch plan is empty");
  }

  const Manifest& train_;
  BatcherConfig cfg_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::int64_t epoch_start_ = 0;
  std::optional<BatchPlan> plan_;
};

TrainResult run_job(Job& job) {
  fs::create_directories(job.out_dir);
  TrainResult result;
  result.metrics = job.out_dir / kMetricsFile;
  result.best_checkpoint = job.out_dir / kBestCheckpoint;
  result.last_checkpoint = job.out_dir / kLastCheckpoint;

  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : job.data.train) by_id[e.id] = &e;

  const bool fresh = job.start_step == 0;
  std::ofstream metrics(result.metrics, fresh ? std::ios::trunc : std::ios::app);
  if (!metrics) throw Error("cannot write " + result.metrics.string());
  if (fresh) {
    metrics << "step\tlr\ttrain_loss\tval_loss\tval_eer\n";
    const auto init = make_checkpoint(job, job.params, job.opt, 0, kNaN);
    save_checkpoint(job.out_dir / kInitCheckpoint, init);
    save_checkpoint(result.last_checkpoint, init);
  }

  AudioSource source(job.cache_audio);
  StepPlanner planner(job.data.train, job.batcher, job.seed);
  double best = job.best_val_loss;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  double last_lr = 0.0;

  for (std::int64_t step = job.start_step; step < job.total_steps; ++step) {
    const auto [epoch, ids] = planner.at(step);
    std::vector<AudioBuffer> buffers(ids->size());
    std::vector<int> labels(ids->size());
    parallel_for(ids->size(), job.threads, [&](std::size_t i) {
      const ManifestEntry& entry = *by_id.at((*ids)[i]);
      const AudioBuffer audio = source.get(entry);
      Rng trim_rng(derive_seed(job.seed, "trim", epoch, entry.id));
      AudioBuffer x = trim(audio, trim_rng);
      if (job.augment) {
        Rng aug_rng(derive_seed(job.seed, "rawboost", epoch, entry.id));
        x = rawboost(x, job.rawboost, aug_rng);
      }
      buffers[i] = std::move(x);
      labels[i] = class_index(entry.category, job.model.head);
    });
    const auto batch = collate<float>(buffers, labels, *ids);
    const auto fwd = forward<float>(batch, job.params, job.model, true);
    auto lg = loss_and_grads<float>(fwd, labels, job.params, job.model);
    if (!std::isfinite(lg.loss)) {
      throw Error("training diverged at step " + std::to_string(step + 1) + " (non-finite loss); last good checkpoint: " +
                  result.last_checkpoint.string());
    }
    last_lr = lr_at(step, job.schedule);
    try {
      adamw_step(job.params, lg.grads, job.opt, last_lr, job.adamw);
    } catch (const Error& e) {
      throw Error("training diverged at step " + std::to_string(step + 1) + ": " + e.what() +
                  "; last good checkpoint: " + result.last_checkpoint.string());
    }
    loss_sum += static_cast<double>(lg.loss);
    loss_count += labels.size();

    const std::int64_t done = step + 1;
    const bool validate = done % job.validation_interval == 0;
    const bool log = validate || done % job.log_interval == 0 || done == job.total_steps;
    double val_loss = kNaN;
    double val_eer = kNaN;
    if (validate) {
      const auto v = run_validation(job.params, job.model, job.data.val, job.threads, source);
      val_loss = v.loss;
      val_eer = v.eer;
      if (!std::isfinite(val_loss)) {
        throw Error("validation loss is non-finite at step " + std::to_string(done) +
                    "; last good checkpoint: " + result.last_checkpoint.string());
      }
      if (std::isnan(best) || val_loss < best) {
        best = val_loss;
        save_checkpoint(result.best_checkpoint, make_checkpoint(job, job.params, job.opt, done, best));
      }
      save_checkpoint(result.last_checkpoint, make_checkpoint(job, job.params, job.opt, done, best));
    }
    if (log) {
      metrics << done << '\t' << format_metric(last_lr) << '\t'
              << format_metric(loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : kNaN) << '\t'
              << format_metric(val_loss) << '\t' << format_metric(val_eer) << '\n';
      metrics.flush();
      loss_sum = 0.0;
      loss_count = 0;
    }
  }

  const auto final_ckpt = make_checkpoint(job, job.params, job.opt, job.total_steps, best);
  if (job.total_steps % job.validation_interval != 0 || job.total_steps == 0) {
    save_checkpoint(result.last_checkpoint, final_ckpt);
  }
  if (std::isnan(best)) {
    // No validation ran: the final parameters are the only candidate.
    save_checkpoint(result.best_checkpoint, final_ckpt);
  }
  result.best_val_loss = best;
  result.steps_done = job.total_steps;
  return result;
}

Manifest train_entries(const Manifest& m) {
  const Manifest train = m.filter(Split::train);
  return train.empty() ? m : train;
}

}  // namespace

TrainData load_train_data(const TrainRunConfig& cfg) {
  if (cfg.train_manifest.empty()) throw UsageError("data.train_manifest is not set");
  const Manifest all = read_manifest(fs::path(cfg.train_manifest));
  TrainData data;
  if (cfg.val_manifest.empty()) {
    data.train = all.filter(Split::train);
    data.val = all.filter(Split::val);
  } else {
    data.train = train_entries(all);
    data.val = read_manifest(fs::path(cfg.val_manifest));
  }
  if (data.train.empty()) throw Error("training manifest has no train entries");
  if (data.val.empty()) throw Error("no validation entries (set data.val_manifest or add a val split)");
  return data;
}

ValidationResult validate_model(const ParameterSet<float>& params, const ModelConfig& model, const Manifest& val,
                                unsigned threads) {
  AudioSource source(false);
  return run_validation(params, model, val, threads, source);
}

TrainResult post_train(const TrainRunConfig& cfg, const std::optional<fs::path>& resume) {
  cfg.validate(true);
  Job job;
  job.stage = "post-train";
  job.data = load_train_data(cfg);
  job.model = cfg.model;
  job.total_steps = cfg.total_steps;
  job.schedule = cfg.schedule;
  job.adamw = cfg.adamw;
  job.batcher = cfg.batcher;
  job.augment = cfg.augment;
  job.rawboost = cfg.rawboost;
  job.seed = cfg.seed;
  job.validation_interval = cfg.validation_interval;
  job.log_interval = cfg.log_interval;
  job.cache_audio = cfg.cache_audio;
  job.threads = cfg.threads;
  job.out_dir = cfg.out_dir;
  if (resume) {
    Checkpoint ckpt = load_checkpoint(*resume);
    require_fingerprint(ckpt, cfg.model);
    if (ckpt.adam_m.size() == 0) throw Error("cannot resume from " + resume->string() + ": no optimizer state");
    job.params = std::move(ckpt.params);
    job.opt.m = std::move(ckpt.adam_m);
    job.opt.v = std::move(ckpt.adam_v);
    job.opt.step = static_cast<std::int64_t>(ckpt.step);
    job.start_step = static_cast<std::int64_t>(ckpt.step);
    const auto meta = nlohmann::json::parse(ckpt.metadata);
    if (meta.contains("best_val_loss") && meta["best_val_loss"].is_number()) {
      job.best_val_loss = meta["best_val_loss"].get<double>();
    }
    if (job.start_step > job.total_steps) throw UsageError("checkpoint step exceeds total_steps");
  } else {
    job.params = init_parameters<float>(cfg.model, cfg.seed);
    job.opt = OptimizerState<float>::zeros_for(job.params);
  }
  return run_job(job);
}

TrainResult fine_tune(const fs::path& checkpoint, const TrainRunConfig& cfg) {
  cfg.validate(false);
  Checkpoint ckpt = load_checkpoint(checkpoint);
  require_fingerprint(ckpt, cfg.model);
  if (cfg.train_manifest.empty()) throw UsageError("data.train_manifest is not set");
  const Manifest target = train_entries(read_manifest(fs::path(cfg.train_manifest)));
  auto [train, val] = split_manifest(target, cfg.finetune_train_fraction, derive_seed(cfg.seed, "split"));
  if (train.empty() || val.empty()) throw Error("fine-tune split left an empty side");

  Job job;
  job.stage = "fine-tune";
  job.data = {std::move(train), std::move(val)};
  job.model = cfg.model;
  job.params = std::move(ckpt.params);
  job.opt = OptimizerState<float>::zeros_for(job.params);
  job.total_steps = cfg.finetune_steps;
  job.schedule.peak_lr = cfg.finetune_lr;
  job.schedule.constant = true;
  job.adamw = cfg.adamw;
  job.batcher = cfg.batcher;
  job.augment = cfg.finetune_augment;
  job.rawboost = cfg.rawboost;
  job.seed = derive_seed(cfg.seed, "fine-tune");
  job.validation_interval = cfg.validation_interval;
  job.log_interval = cfg.log_interval;
  job.cache_audio = cfg.cache_audio;
  job.threads = cfg.threads;
  job.out_dir = cfg.out_dir;
  return run_job(job);
}

}  // namespace sdd
