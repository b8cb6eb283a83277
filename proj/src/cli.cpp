#include "sdd/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "sdd/audio.hpp"
#include "sdd/augment.hpp"
#include "sdd/catalog.hpp"
#include "sdd/checkpoint.hpp"
#include "sdd/config.hpp"
#include "sdd/error.hpp"
#include "sdd/eval.hpp"
#include "sdd/toy.hpp"
#include "sdd/trainer.hpp"
#include "sdd/wav.hpp"

namespace sdd {
namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

std::vector<double> parse_durations(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad duration '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--durations is empty");
  return out;
}

Manifest load_eval_manifest(const std::string& path, const std::string& split) {
  require_file(path, "manifest");
  Manifest m = read_manifest(fs::path(path));
  if (!split.empty()) m = m.filter(parse_split(split));
  if (m.empty()) throw Error("manifest " + path + " has no entries" + (split.empty() ? "" : " in split " + split));
  return m;
}

TrainRunConfig load_config(const std::string& path, const std::vector<std::string>& overrides, unsigned threads) {
  std::string resolved = path;
  if (resolved.empty()) {
    const char* env = std::getenv(kConfigEnv);
    if (env == nullptr || *env == '\0') throw UsageError(std::string("--config is required (or set ") + kConfigEnv + ")");
    resolved = env;
  }
  require_file(resolved, "config");
  ConfigFile file = ConfigFile::load(resolved);
  for (const auto& o : overrides) file.set_from_string(o);
  if (threads > 0 && !file.has("threads")) file.set("threads", static_cast<std::int64_t>(threads));
  TrainRunConfig cfg = load_run_config(file);
  // Relative manifest paths are taken relative to the config file.
  const fs::path base = fs::path(resolved).parent_path();
  auto rebase = [&base](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative() && !fs::exists(p)) p = (base / p).string();
  };
  rebase(cfg.train_manifest);
  rebase(cfg.val_manifest);
  require_file(cfg.train_manifest, "data.train_manifest");
  if (!cfg.val_manifest.empty()) require_file(cfg.val_manifest, "data.val_manifest");
  return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deepfake speech detection: manifests, augmentation, post-training, fine-tuning and evaluation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  unsigned threads = std::max(1U, std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);

  // manifest
  auto* manifest_cmd = app.add_subcommand("manifest", "Build, split and summarise JSONL manifests");
  manifest_cmd->require_subcommand(1);
  std::string root, rules, out_path, in_path;
  auto* build_cmd = manifest_cmd->add_subcommand("build", "Scan a corpus directory into a manifest");
  build_cmd->add_option("--root", root, "Corpus root")->required();
  build_cmd->add_option("--rules", rules, "Rules JSON file")->required();
  build_cmd->add_option("--out", out_path, "Output manifest")->required();

  double train_frac = 0.9;
  std::uint64_t seed = 0;
  std::string out_train, out_val;
  auto* split_cmd = manifest_cmd->add_subcommand("split", "Seeded train/val partition");
  split_cmd->add_option("--in", in_path, "Input manifest")->required();
  split_cmd->add_option("--train-frac", train_frac, "Train fraction")->check(CLI::Range(0.0, 1.0));
  split_cmd->add_option("--seed", seed, "Seed");
  split_cmd->add_option("--out-train", out_train, "Train output (default <stem>.train.jsonl)");
  split_cmd->add_option("--out-val", out_val, "Val output (default <stem>.val.jsonl)");

  auto* stats_cmd = manifest_cmd->add_subcommand("stats", "Hours per category and language");
  stats_cmd->add_option("--in", in_path, "Input manifest")->required();

  // preprocess
  std::string out_dir, norm = "peak";
  auto* pre_cmd = app.add_subcommand("preprocess", "Convert manifest audio to 16 kHz mono 16-bit PCM");
  pre_cmd->add_option("--in", in_path, "Input manifest")->required();
  pre_cmd->add_option("--out-dir", out_dir, "Output directory")->required();
  pre_cmd->add_option("--norm", norm, "peak|none")->check(CLI::IsMember({"peak", "none"}));

  // augment
  std::string mode = "series_lnl_isd", preset = "asvspoof-best";
  auto* aug_cmd = app.add_subcommand("augment", "Apply RawBoost to one file");
  aug_cmd->add_option("--in", in_path, "Input WAV")->required();
  aug_cmd->add_option("--mode", mode, "RawBoost mode");
  aug_cmd->add_option("--preset", preset, "Parameter preset");
  aug_cmd->add_option("--seed", seed, "Seed");
  aug_cmd->add_option("--out", out_path, "Output WAV")->required();

  // training
  std::string config_path, resume, from;
  std::vector<std::string> overrides;
  auto* post_cmd = app.add_subcommand("post-train", "Post-train a model");
  post_cmd->add_option("--config", config_path, std::string("Run config (default $") + kConfigEnv + ")");
  post_cmd->add_option("--set", overrides, "Override a config key, e.g. --set total_steps=100");
  post_cmd->add_option("--resume", resume, "Continue from a checkpoint of this run");

  auto* ft_cmd = app.add_subcommand("fine-tune", "Fine-tune a post-trained checkpoint");
  ft_cmd->add_option("--from", from, "Post-trained checkpoint")->required();
  ft_cmd->add_option("--config", config_path, std::string("Run config (default $") + kConfigEnv + ")");
  ft_cmd->add_option("--set", overrides, "Override a config key");

  // evaluation
  std::string ckpt, manifest_path, split, durations;
  std::optional<double> segment_seconds;
  double min_tail = 1.0;
  bool strict = false;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a manifest and report EER");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--manifest", manifest_path, "Manifest")->required();
  auto* seg_opt = eval_cmd->add_option("--segment-seconds", segment_seconds, "Score fixed-length segments");
  eval_cmd->add_option("--durations", durations, "Comma-separated segment lengths, e.g. 4,10,13,30,50")
      ->excludes(seg_opt);
  eval_cmd->add_option("--out-dir", out_dir, "Output directory")->required();
  eval_cmd->add_option("--split", split, "Only entries of this split");
  eval_cmd->add_option("--min-tail", min_tail, "Shortest trailing segment kept, seconds");
  eval_cmd->add_flag("--strict", strict, "Fail on unreadable files");

  auto* embed_cmd = app.add_subcommand("embed", "Export pooled embeddings as CSV");
  embed_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  embed_cmd->add_option("--manifest", manifest_path, "Manifest")->required();
  embed_cmd->add_option("--out", out_path, "Output CSV")->required();
  embed_cmd->add_option("--split", split, "Only entries of this split");

  // synthetic data
  std::string domain = "source";
  auto* toy_cmd = app.add_subcommand("toy-corpus", "Write the synthetic test corpus");
  toy_cmd->add_option("--out-dir", out_dir, "Output directory")->required();
  toy_cmd->add_option("--seed", seed, "Seed");
  toy_cmd->add_option("--domain", domain, "source|shifted")->check(CLI::IsMember({"source", "shifted"}));

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << '\n';
    return kExitUsage;
  }

  try {
    if (*build_cmd) {
      require_file(rules, "rules file");
      if (!fs::is_directory(root)) throw UsageError("corpus root not found: " + root);
      const auto report = build_manifest(root, read_rules(rules), threads);
      write_manifest(fs::path(out_path), report.manifest);
      out << "wrote " << report.manifest.size() << " entries to " << out_path;
      if (!report.skipped.empty()) out << " (" << report.skipped.size() << " skipped)";
      out << '\n';
    } else if (*split_cmd) {
      require_file(in_path, "manifest");
      const auto [train, val] = split_manifest(read_manifest(fs::path(in_path)), train_frac, seed);
      fs::path base = fs::path(in_path);
      base.replace_extension();
      if (out_train.empty()) out_train = base.string() + ".train.jsonl";
      if (out_val.empty()) out_val = base.string() + ".val.jsonl";
      write_manifest(fs::path(out_train), train);
      write_manifest(fs::path(out_val), val);
      out << "train " << train.size() << " -> " << out_train << "\nval " << val.size() << " -> " << out_val << '\n';
    } else if (*stats_cmd) {
      require_file(in_path, "manifest");
      out << format_stats(stats(read_manifest(fs::path(in_path))));
    } else if (*pre_cmd) {
      require_file(in_path, "manifest");
      const Manifest m = read_manifest(fs::path(in_path));
      const NormMode nm = parse_norm_mode(norm);
      fs::create_directories(out_dir);
      std::vector<ManifestEntry> entries;
      for (const auto& e : m) {
        ManifestEntry o = e;
        const AudioBuffer buf = preprocess(load_wav(e.path), nm);
        o.path = (fs::path(out_dir) / (e.id + ".wav")).string();
        save_wav(o.path, buf);
        o.duration_s = static_cast<double>(buf.frames()) / buf.sample_rate;
        entries.push_back(std::move(o));
      }
      const fs::path manifest_out = fs::path(out_dir) / "manifest.jsonl";
      write_manifest(manifest_out, Manifest(std::move(entries)));
      out << "wrote " << m.size() << " files and " << manifest_out.string() << '\n';
    } else if (*aug_cmd) {
      require_file(in_path, "input");
      RawBoostConfig rb = rawboost_preset(preset);
      rb.mode = parse_rawboost_mode(mode);
      rb.validate();
      AudioBuffer x = load_wav(in_path);
      if (x.channels != 1) x = downmix(x);
      Rng rng(derive_seed(seed, "rawboost"));
      save_wav(out_path, rawboost(x, rb, rng));
    } else if (*post_cmd) {
      const TrainRunConfig cfg = load_config(config_path, overrides, threads);
      std::optional<fs::path> resume_path;
      if (!resume.empty()) {
        require_file(resume, "resume checkpoint");
        resume_path = resume;
      }
      const auto res = post_train(cfg, resume_path);
      out << "best checkpoint " << res.best_checkpoint.string() << " (val loss " << format_double(res.best_val_loss)
          << ")\nmetrics " << res.metrics.string() << '\n';
    } else if (*ft_cmd) {
      require_file(from, "checkpoint");
      const TrainRunConfig cfg = load_config(config_path, overrides, threads);
      const auto res = fine_tune(from, cfg);
      out << "best checkpoint " << res.best_checkpoint.string() << "\nmetrics " << res.metrics.string() << '\n';
    } else if (*eval_cmd) {
      require_file(ckpt, "checkpoint");
      const Manifest m = load_eval_manifest(manifest_path, split);
      const Checkpoint c = load_checkpoint(ckpt);
      const auto scorer = model_scorer(c.params, c.config);
      const EvalOptions opt{min_tail, threads, strict};
      fs::create_directories(out_dir);
      if (!durations.empty()) {
        const auto ds = parse_durations(durations);
        const auto res = multi_duration_eval(scorer, m, ds, opt);
        for (std::size_t i = 0; i < ds.size(); ++i) {
          write_scores(fs::path(out_dir) / ("scores_" + format_double(ds[i]) + "s.tsv"), res.runs[i].records);
        }
        std::ofstream table(fs::path(out_dir) / "eer.tsv", std::ios::binary);
        write_duration_table(table, res.rows);
        write_duration_table(out, res.rows);
        if (!res.runs.front().missing.empty()) out << "missing " << res.runs.front().missing.size() << " files\n";
      } else {
        const auto run_result = score_manifest(scorer, m, segment_seconds, opt);
        write_scores(fs::path(out_dir) / "scores.tsv", run_result.records);
        const auto eer = compute_eer(run_result.records);
        out << "records " << run_result.records.size() << "\neer " << format_double(eer.eer) << "\nthreshold "
            << format_double(eer.threshold) << '\n';
        if (!run_result.missing.empty()) out << "missing " << run_result.missing.size() << " files\n";
      }
    } else if (*embed_cmd) {
      require_file(ckpt, "checkpoint");
      const Manifest m = load_eval_manifest(manifest_path, split);
      const Checkpoint c = load_checkpoint(ckpt);
      const auto rows = export_embeddings(c.params, c.config, m, EvalOptions{1.0, threads, false});
      write_embeddings(fs::path(out_path), rows);
      out << "wrote " << rows.size() << " embeddings to " << out_path << '\n';
    } else if (*toy_cmd) {
      ToyCorpusConfig cfg = domain == "source" ? toy_source_corpus(seed) : toy_target_corpus(seed);
      fs::create_directories(out_dir);
      const Manifest m = generate_toy_corpus(cfg, out_dir, threads);
      out << "wrote " << m.size() << " clips to " << out_dir << '\n';
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace sdd
