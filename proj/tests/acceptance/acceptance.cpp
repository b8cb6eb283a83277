// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sdd/augment.hpp"
#include "sdd/batcher.hpp"
#include "sdd/checkpoint.hpp"
#include "sdd/eval.hpp"
#include "sdd/model.hpp"
#include "sdd/optimizer.hpp"
#include "sdd/toy.hpp"
#include "sdd/trainer.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace sdd;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    n += static_cast<std::size_t>(shape.first) * static_cast<std::size_t>(shape.second);
  }
  return n;
}

// ---------------------------------------------------------------- gradients

ModelConfig random_tiny_config(Rng& rng) {
  for (;;) {
    ModelConfig cfg;
    cfg.conv.clear();
    const auto layers = uniform_int(rng, 1, 2);
    for (std::int64_t i = 0; i < layers; ++i) {
      const int k = static_cast<int>(uniform_int(rng, 2, 6));
      cfg.conv.push_back({static_cast<int>(uniform_int(rng, 2, 6)), k, static_cast<int>(uniform_int(rng, 1, k))});
    }
    cfg.heads = static_cast<int>(uniform_int(rng, 1, 3));
    cfg.dim = cfg.heads * static_cast<int>(uniform_int(rng, 2, 4));
    // A layer norm over fewer than four features is close to a sign function.
    if (cfg.dim < 4) continue;
    cfg.depth = static_cast<int>(uniform_int(rng, 1, 2));
    cfg.ff_dim = static_cast<int>(uniform_int(rng, 4, 12));
    cfg.head = uniform_int(rng, 0, 1) == 0 ? HeadMode::multiclass : HeadMode::binary;
    if (parameter_count(cfg) < 5000) return cfg;
  }
}

Outcome gradient_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(20240601);
  double worst = 0.0;
  std::size_t entries = 0;
  constexpr int kConfigs = 24;
  for (int c = 0; c < kConfigs; ++c) {
    const ModelConfig cfg = random_tiny_config(rng);
    const auto params = init_parameters<double>(cfg, static_cast<std::uint64_t>(c));
    const auto rf = cfg.receptive_field();
    const auto rows = static_cast<std::size_t>(uniform_int(rng, 1, 3));
    std::vector<std::size_t> lengths;
    for (std::size_t r = 0; r < rows; ++r) {
      // At least four frames; statistics over two frames are near-singular.
      lengths.push_back(rf + cfg.stride_product() * static_cast<std::size_t>(uniform_int(rng, 3, 8)));
    }
    const auto batch = sdd::testing::random_batch<double>(lengths, cfg.num_classes(), rng,
                                                          static_cast<std::size_t>(uniform_int(rng, 0, 7)));
    const auto g = sdd::testing::check_gradients(cfg, params, batch);
    worst = std::max(worst, g.worst_rel);
    entries += g.checked;
  }
  const double secs = seconds_since(t0);
  o.require(worst < 1e-4, "relative error " + fmt("%.3g", worst));
  o.require(secs < 120.0, "runtime " + fmt("%.1f s", secs));
  o.detail = std::to_string(kConfigs) + " configs, " + std::to_string(entries) + " entries, worst rel " +
             fmt("%.2e", worst) + ", " + fmt("%.1f s", secs) + (o.pass ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------- EER

std::vector<ScoreRecord> labelled(const std::vector<double>& genuine, const std::vector<double>& fake) {
  std::vector<ScoreRecord> r;
  for (double s : genuine) r.push_back({"g" + std::to_string(r.size()), kWholeFile, s, 1});
  for (double s : fake) r.push_back({"f" + std::to_string(r.size()), kWholeFile, s, 0});
  return r;
}

Outcome eer_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 200));
    const int quant = static_cast<int>(uniform_int(rng, 0, 2));  // 0: continuous, else coarse grid with ties
    const double shift = uniform(rng, -0.5, 1.0);
    std::vector<ScoreRecord> r;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = i == 0 ? 1 : (i == 1 ? 0 : static_cast<int>(uniform_int(rng, 0, 1)));
      double s = uniform(rng, 0.0, 1.0) + (label == 1 ? shift : 0.0);
      if (quant > 0) s = std::round(s * 4.0 * quant) / (4.0 * quant);
      r.push_back({"r" + std::to_string(i), kWholeFile, s, label});
    }
    worst = std::max(worst, std::abs(compute_eer(r).eer - sdd::testing::brute_force_eer(r)));
  }
  o.require(worst <= 1e-9, "max deviation " + fmt("%.3g", worst));
  const double sep = compute_eer(labelled({0.9, 0.8, 0.7}, {0.1, 0.2})).eer;
  const double inv = compute_eer(labelled({0.1, 0.2}, {0.9, 0.8, 0.7})).eer;
  const double third = compute_eer(labelled({0.8, 0.6, 0.4}, {0.7, 0.5, 0.3})).eer;
  o.require(sep == 0.0, "separable EER " + fmt("%.17g", sep));
  o.require(inv == 1.0, "inverted EER " + fmt("%.17g", inv));
  o.require(std::abs(third - 1.0 / 3.0) <= 1e-12, "six-record EER " + fmt("%.17g", third));
  const double secs = seconds_since(t0);
  o.require(secs < 60.0, "runtime " + fmt("%.1f s", secs));
  o.detail = "1000 sets, max deviation " + fmt("%.2e", worst) + ", exact cases " + fmt("%g", sep) + "/" +
             fmt("%g", inv) + "/" + fmt("%.12f", third) + ", " + fmt("%.1f s", secs) +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

// ----------------------------------------------------------------- schedule

Outcome schedule_exactness() {
  Outcome o;
  const Schedule s = schedule_preset("faithful");
  const std::vector<std::pair<std::int64_t, double>> expected = {
      {0, 0.0}, {80'000, 1e-7}, {480'000, 5e-8}, {880'000, 0.0}};
  for (const auto& [step, lr] : expected) {
    const double got = lr_at(step, s);
    o.require(got == lr, "lr_at(" + std::to_string(step) + ") = " + fmt("%.17g", got));
    // Stable across calls and across independently constructed presets.
    o.require(lr_at(step, schedule_preset("faithful")) == got, "unstable at " + std::to_string(step));
  }
  o.detail = o.pass ? "0, 1e-7, 5e-8, 0 at steps 0, 80000, 480000, 880000" : o.detail;
  return o;
}

// -------------------------------------------------------------------- AdamW

Outcome adamw_decoupling() {
  Outcome o;
  const ModelConfig cfg = [] {
    ModelConfig c;
    c.conv = {{4, 5, 3}};
    c.dim = 8;
    c.heads = 2;
    c.depth = 1;
    c.ff_dim = 8;
    return c;
  }();
  const auto theta0 = init_parameters<double>(cfg, 11);
  auto theta = theta0;
  auto opt = OptimizerState<double>::zeros_for(theta);
  const AdamWConfig ac;
  const double lr = 1e-3;
  const auto zero = theta.zeros_like();
  std::size_t mismatches = 0;
  for (int t = 1; t <= 100; ++t) {
    adamw_step(theta, zero, opt, lr, ac);
    // Reference: repeated multiplication by (1 - lr * wd), matching t-fold application.
    const double factor = 1.0 - lr * ac.weight_decay;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      Matrix<double> ref = theta0[k];
      for (int i = 0; i < t; ++i) ref *= factor;
      if (theta[k] != ref) ++mismatches;
    }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " tensor-steps differ");
  o.detail = o.pass ? "100 steps, " + std::to_string(theta.size()) + " tensors, bit-exact" : o.detail;
  return o;
}

// ------------------------------------------------------------------ batcher

Outcome batcher_invariants() {
  Outcome o;
  Rng rng(4242);
  std::size_t batches = 0;
  std::size_t trims = 0;
  for (int trial = 0; trial < 1000 && o.pass; ++trial) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 200));
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < n; ++i) {
      ManifestEntry e;
      e.id = "f" + std::to_string(i);
      e.path = e.id + ".wav";
      e.duration_s = uniform(rng, 0.3, 60.0);
      e.dataset = "d";
      entries.push_back(e);
    }
    const Manifest m(entries);
    std::map<std::string, double> cost;
    for (const auto& e : m) cost[e.id] = effective_duration(e.duration_s);
    const auto plan = plan_epoch(m, BatcherConfig{}, static_cast<std::uint64_t>(trial));
    std::multiset<std::string> seen;
    for (const auto& b : plan.batches) {
      double total = 0.0;
      for (const auto& id : b) {
        seen.insert(id);
        total += cost.at(id);
      }
      o.require(total <= 100.0 + 1e-9, "batch of " + fmt("%.3f s", total) + " in trial " + std::to_string(trial));
      ++batches;
    }
    o.require(seen.size() == n && std::set<std::string>(seen.begin(), seen.end()).size() == n,
              "coverage broken in trial " + std::to_string(trial));

    // Trim a couple of the long entries of each manifest.
    int trimmed = 0;
    for (const auto& e : m) {
      if (e.duration_s <= kTrimThresholdSeconds || trimmed == 2) continue;
      AudioBuffer x;
      x.sample_rate = 16000;
      x.samples.resize(seconds_to_samples(e.duration_s, 16000));
      for (std::size_t i = 0; i < x.samples.size(); ++i) x.samples[i] = static_cast<float>(i);
      std::size_t offset = 0;
      Rng trim_rng(derive_seed(static_cast<std::uint64_t>(trial), "trim", 0, e.id));
      const auto y = trim(x, trim_rng, &offset);
      const double secs = static_cast<double>(y.samples.size()) / 16000.0;
      o.require(secs >= 10.0 && secs <= 13.0, "trim to " + fmt("%.4f s", secs));
      o.require(y.samples.front() == static_cast<float>(offset) &&
                    y.samples.back() == static_cast<float>(offset + y.samples.size() - 1),
                "trim is not a contiguous span");
      ++trimmed;
      ++trims;
    }
  }
  if (o.pass) o.detail = "1000 manifests, " + std::to_string(batches) + " batches, " + std::to_string(trims) + " trims";
  return o;
}

// ------------------------------------------------------------------ padding

Outcome padding_invariance() {
  Outcome o;
  const ModelConfig cfg;
  const auto params = init_parameters<float>(cfg, 5);
  Rng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto rows = static_cast<std::size_t>(uniform_int(rng, 1, 4));
    std::vector<std::size_t> lengths;
    for (std::size_t r = 0; r < rows; ++r) lengths.push_back(static_cast<std::size_t>(uniform_int(rng, 800, 12000)));
    const auto batch = sdd::testing::random_batch<float>(lengths, cfg.num_classes(), rng);
    const auto padded = sdd::testing::with_padding(batch, static_cast<std::size_t>(uniform_int(rng, 1, 8000)));
    const auto a = score<float>(forward<float>(batch, params, cfg, false).logits);
    const auto b = score<float>(forward<float>(padded, params, cfg, false).logits);
    worst = std::max(worst, static_cast<double>((a - b).cwiseAbs().maxCoeff()));
  }
  o.require(worst < 1e-6, "max score change " + fmt("%.3g", worst));
  o.detail = "100 batches, max score change " + fmt("%.2e", worst) + (o.pass ? "" : "; " + o.detail);
  return o;
}

// ----------------------------------------------------------------- RawBoost

Outcome rawboost_properties() {
  Outcome o;
  const auto x = sdd::testing::noise(16000, 3, 0.1);

  // Identity configurations.
  {
    LnlParams p;
    p.filter.bands = 0;
    p.nonlinearity_order = 1;
    Rng rng(1);
    const auto y = lnl_convolutive_noise(x, p, rng);
    double dev = 0.0;
    for (std::size_t i = 0; i < x.samples.size(); ++i) dev = std::max(dev, std::abs(double(y.samples[i]) - x.samples[i]));
    o.require(dev <= 1e-6, "LnL identity deviates by " + fmt("%.3g", dev));
    IsdParams q;
    q.min_percent = q.max_percent = 0.0;
    o.require(impulsive_sd_noise(x, q, rng).samples == x.samples, "ISD at 0% is not the identity");
    o.require(rawboost(x, rawboost_preset("off"), rng).samples == x.samples, "mode off is not the identity");
    RawBoostConfig never;
    never.apply_prob = 0.0;
    o.require(rawboost(x, never, rng).samples == x.samples, "apply_prob 0 is not the identity");
  }

  // Stationary noise realises the drawn SNR.
  double worst_db = 0.0;
  {
    const auto clean = sdd::testing::sine(330.0, 1.0, 16000, 0.4);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      SsiTrace trace;
      const auto y = stationary_si_noise(clean, SsiParams{}, rng, &trace);
      double ps = 0.0;
      double pd = 0.0;
      for (std::size_t i = 0; i < clean.samples.size(); ++i) {
        const double d = double(y.samples[i]) - clean.samples[i];
        ps += double(clean.samples[i]) * clean.samples[i];
        pd += d * d;
      }
      worst_db = std::max(worst_db, std::abs(10.0 * std::log10(ps / pd) - trace.target_snr_db));
    }
    o.require(worst_db <= 0.5, "SSI SNR off by " + fmt("%.3f dB", worst_db));
  }

  // Impulsive noise touches exactly the drawn number of samples.
  {
    const auto tone = sdd::testing::sine(440.0, 1.0, 16000, 0.3, 0.1);
    for (double pct : {1.0, 5.0, 10.0, 25.0}) {
      IsdParams p;
      p.min_percent = p.max_percent = pct;
      Rng rng(static_cast<std::uint64_t>(pct));
      const auto y = impulsive_sd_noise(tone, p, rng);
      std::size_t differ = 0;
      for (std::size_t i = 0; i < tone.samples.size(); ++i) differ += y.samples[i] != tone.samples[i];
      const auto expected = static_cast<std::size_t>(std::floor(tone.samples.size() * pct / 100.0));
      o.require(differ == expected, "ISD at " + fmt("%g%%", pct) + " changed " + std::to_string(differ));
    }
  }

  // Determinism of every mode.
  for (auto mode : {RawBoostMode::lnl, RawBoostMode::isd, RawBoostMode::ssi, RawBoostMode::series_lnl_isd,
                    RawBoostMode::parallel, RawBoostMode::full_series}) {
    RawBoostConfig cfg;
    cfg.mode = mode;
    Rng a(123);
    Rng b(123);
    o.require(rawboost(x, cfg, a).samples == rawboost(x, cfg, b).samples, "mode " + to_string(mode) + " not deterministic");
  }
  if (o.pass) o.detail = "identities exact, SSI worst " + fmt("%.3f dB", worst_db) + " over 100 draws, ISD counts exact, 6 modes deterministic";
  return o;
}

// -------------------------------------------------------------- end to end

struct E2eSettings {
  std::int64_t post_steps = 3000;
  std::int64_t finetune_steps = 500;
  double finetune_lr = 1e-4;
  std::uint64_t seed = 7;
};

TrainRunConfig toy_run_config(const fs::path& manifest, const fs::path& out_dir, const E2eSettings& s) {
  TrainRunConfig cfg;
  cfg.train_manifest = manifest.string();
  cfg.out_dir = out_dir.string();
  cfg.schedule = schedule_preset("toy");
  // The toy artifacts are notches, low-pass and quantisation noise, i.e. the
  // same family RawBoost draws from, so augmentation would relabel genuine clips.
  cfg.augment = false;
  cfg.finetune_augment = false;
  cfg.batcher.max_batch_seconds = 16.0;
  cfg.total_steps = s.post_steps;
  cfg.validation_interval = 500;
  cfg.log_interval = 100;
  cfg.seed = s.seed;
  cfg.finetune_steps = s.finetune_steps;
  cfg.finetune_lr = s.finetune_lr;
  return cfg;
}

double whole_file_eer(const ParameterSet<float>& params, const ModelConfig& cfg, const Manifest& m) {
  return compute_eer(score_manifest(model_scorer(params, cfg), m, std::nullopt).records).eer;
}

std::vector<Outcome> end_to_end(const fs::path& work, const E2eSettings& s) {
  const auto t0 = Clock::now();
  const fs::path src_dir = work / "toy_source";
  const fs::path tgt_dir = work / "toy_target";
  fs::remove_all(work / "toy_post");
  fs::remove_all(work / "toy_finetune");
  const Manifest src = generate_toy_corpus(toy_source_corpus(s.seed), src_dir);
  const Manifest tgt = generate_toy_corpus(toy_target_corpus(s.seed + 1), tgt_dir);

  const auto cfg = toy_run_config(src_dir / "manifest.jsonl", work / "toy_post", s);
  const auto post = post_train(cfg);
  const auto best = load_checkpoint(post.best_checkpoint);

  Outcome whole;
  const Manifest test = src.filter(Split::test);
  const double eer = whole_file_eer(best.params, cfg.model, test);
  whole.require(src.size() == 500, "corpus has " + std::to_string(src.size()) + " clips");
  whole.require(eer <= 0.05, "whole-file EER " + fmt("%.4f", eer));
  whole.detail = std::to_string(test.size()) + " held-out clips, " + std::to_string(post.steps_done) +
                 " steps, whole-file EER " + fmt("%.4f", eer) + (whole.pass ? "" : "; " + whole.detail);

  Outcome multi;
  const std::vector<double> durations = {4.0, 10.0, 13.0};
  const auto md = multi_duration_eval(model_scorer(best.params, cfg.model), test, durations);
  std::string rows;
  for (const auto& row : md.rows) {
    multi.require(row.eer.eer <= 0.08, fmt("%g s", row.duration_s) + " EER " + fmt("%.4f", row.eer.eer));
    rows += (rows.empty() ? "" : ", ") + fmt("%g s", row.duration_s) + " " + fmt("%.4f", row.eer.eer);
  }
  multi.require(md.rows.size() == durations.size(), "missing duration rows");
  multi.detail = "segment EER " + rows + (multi.pass ? "" : "; " + multi.detail);

  Outcome ft;
  const Manifest tgt_test = tgt.filter(Split::test);
  const double zero_shot = whole_file_eer(best.params, cfg.model, tgt_test);
  auto ft_cfg = toy_run_config(tgt_dir / "manifest.jsonl", work / "toy_finetune", s);
  const auto tuned = fine_tune(post.best_checkpoint, ft_cfg);
  const double after = whole_file_eer(load_checkpoint(tuned.last_checkpoint).params, cfg.model, tgt_test);
  ft.require(after < zero_shot, "fine-tuned " + fmt("%.4f", after) + " vs zero-shot " + fmt("%.4f", zero_shot));
  const double secs = seconds_since(t0);
  ft.require(secs < 900.0, "pipeline took " + fmt("%.0f s", secs));
  ft.detail = "target EER zero-shot " + fmt("%.4f", zero_shot) + " -> fine-tuned " + fmt("%.4f", after) + " after " +
              std::to_string(s.finetune_steps) + " steps; pipeline " + fmt("%.0f s", secs) +
              (ft.pass ? "" : "; " + ft.detail);
  return {whole, multi, ft};
}

// ------------------------------------------------------------- determinism

Outcome determinism(const fs::path& work) {
  Outcome o;
  const fs::path corpus = work / "det_corpus";
  ToyCorpusConfig cc;
  cc.seed = 9;
  cc.splits = {{Split::train, 12, 0.5, 1.5}, {Split::val, 4, 0.5, 1.5}, {Split::test, 6, 1.0, 3.0}};
  const Manifest m = generate_toy_corpus(cc, corpus);

  auto run = [&](const std::string& name) {
    TrainRunConfig cfg;
    cfg.train_manifest = (corpus / "manifest.jsonl").string();
    cfg.out_dir = (work / name).string();
    fs::remove_all(cfg.out_dir);
    cfg.model.conv = {{6, 10, 8}, {8, 5, 5}};
    cfg.model.dim = 8;
    cfg.model.depth = 1;
    cfg.model.heads = 2;
    cfg.model.ff_dim = 16;
    cfg.schedule = schedule_preset("toy");
    cfg.batcher.max_batch_seconds = 13.0;
    cfg.total_steps = 30;
    cfg.validation_interval = 15;
    cfg.log_interval = 5;
    cfg.seed = 21;
    const auto res = post_train(cfg);
    const auto ckpt = load_checkpoint(res.last_checkpoint);
    const auto scores = score_manifest(model_scorer(ckpt.params, cfg.model), m.filter(Split::test), 1.0);
    write_scores(work / (name + ".scores.tsv"), scores.records);
    return res;
  };
  const auto a = run("det_a");
  const auto b = run("det_b");
  for (const char* f : {kLastCheckpoint, kBestCheckpoint, kMetricsFile}) {
    o.require(slurp(work / "det_a" / f) == slurp(work / "det_b" / f), std::string(f) + " differs");
  }
  o.require(slurp(work / "det_a.scores.tsv") == slurp(work / "det_b.scores.tsv"), "score files differ");

  const auto bytes = slurp(a.last_checkpoint);
  save_checkpoint(work / "resaved.ckpt", load_checkpoint(a.last_checkpoint));
  o.require(slurp(work / "resaved.ckpt") == bytes, "save-load-save changed the checkpoint");
  o.require(!bytes.empty(), "empty checkpoint");
  (void)b;
  if (o.pass) o.detail = "checkpoints, metrics and score files identical; save-load-save bit-exact";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work_dir = (fs::temp_directory_path() / "sdd_acceptance").string();
  bool skip_e2e = false;
  E2eSettings e2e;
  app.add_option("--work-dir", work_dir, "Scratch directory (kept after the run)");
  app.add_flag("--skip-e2e", skip_e2e, "Skip the synthetic end-to-end training run");
  app.add_option("--post-steps", e2e.post_steps, "Post-training steps of the end-to-end run");
  CLI11_PARSE(app, argc, argv);
  const fs::path work(work_dir);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failures += o.pass ? 0 : 1;
  };
  auto guarded = [&](const std::string& name, const std::function<Outcome()>& fn) {
    try {
      report(name, fn());
    } catch (const std::exception& e) {
      report(name, Outcome{false, std::string("exception: ") + e.what()});
    }
  };

  guarded("gradient oracle", gradient_oracle);
  guarded("EER oracle", eer_oracle);
  guarded("schedule exactness", schedule_exactness);
  guarded("AdamW decoupling", adamw_decoupling);
  guarded("batcher invariants", batcher_invariants);
  guarded("padding invariance", padding_invariance);
  guarded("RawBoost properties", rawboost_properties);
  if (!skip_e2e) {
    const char* names[] = {"end-to-end whole-file EER", "end-to-end multi-duration EER", "end-to-end fine-tune"};
    try {
      const auto outcomes = end_to_end(work, e2e);
      for (std::size_t i = 0; i < outcomes.size(); ++i) report(names[i], outcomes[i]);
    } catch (const std::exception& e) {
      for (const char* n : names) report(n, Outcome{false, std::string("exception: ") + e.what()});
    }
  }
  guarded("determinism and persistence", [&] { return determinism(work); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
