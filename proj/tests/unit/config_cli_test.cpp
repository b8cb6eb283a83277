#include <doctest.h>

#include <fstream>
#include <sstream>

#include "sdd/catalog.hpp"
#include "sdd/checkpoint.hpp"
#include "sdd/cli.hpp"
#include "sdd/config.hpp"
#include "sdd/error.hpp"
#include "sdd/wav.hpp"
#include "test_support.hpp"

using namespace sdd;
using sdd::testing::TempDir;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sdd");
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

Manifest write_tones(const TempDir& dir, int n, int rate = 16000, int channels = 1) {
  std::vector<ManifestEntry> v;
  for (int i = 0; i < n; ++i) {
    AudioBuffer b;
    b.sample_rate = rate;
    b.channels = channels;
    const auto tone = sdd::testing::sine(200.0 + 50.0 * i, 0.5, rate, 0.3);
    for (float s : tone.samples) {
      for (int c = 0; c < channels; ++c) b.samples.push_back(s);
    }
    const auto path = dir / ("t" + std::to_string(i) + ".wav");
    save_wav(path, b);
    ManifestEntry e;
    e.id = "t" + std::to_string(i);
    e.path = path.string();
    e.duration_s = 0.5;
    e.category = i % 2 == 0 ? ArtifactCategory::genuine : ArtifactCategory::neural_codec;
    e.dataset = "cli";
    v.push_back(e);
  }
  return Manifest(v);
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("parses tables, scalars, arrays and comments") {
    const auto f = ConfigFile::parse(R"(
# run
seed = 42
out_dir = "runs/a"   # trailing comment
[model]
conv_channels = [8, 16]
head = "binary"
[schedule]
peak_lr = 2.5e-4
[data]
cache_audio = false
)");
    CHECK(f.get_int("seed", 0) == 42);
    CHECK(f.get_string("out_dir", "") == "runs/a");
    CHECK(f.get_ints("model.conv_channels", {}) == std::vector<int>{8, 16});
    CHECK(f.get_double("schedule.peak_lr", 0.0) == 2.5e-4);
    CHECK_FALSE(f.get_bool("data.cache_audio", true));
    CHECK(f.get_int("missing", 7) == 7);
  }

  TEST_CASE("malformed files are rejected") {
    CHECK_THROWS_AS(ConfigFile::parse("seed 3"), UsageError);
    CHECK_THROWS_AS(ConfigFile::parse("[model\ndim = 3"), UsageError);
    CHECK_THROWS_AS(ConfigFile::parse("out_dir = bare"), UsageError);
    CHECK_THROWS_AS(ConfigFile::parse("seed = 1\nseed = 2"), UsageError);
  }

  TEST_CASE("type mismatches and unknown keys are usage errors") {
    auto f = ConfigFile::parse("seed = \"abc\"\ntypo = 1");
    CHECK_THROWS_AS(f.get_int("seed", 0), UsageError);
    CHECK_THROWS_AS(f.reject_unused(), UsageError);
  }

  TEST_CASE("command-line overrides") {
    auto f = ConfigFile::parse("total_steps = 10\n[model]\ndim = 32");
    f.set_from_string("total_steps=25");
    f.set_from_string("model.head=binary");
    f.set_from_string("schedule.peak_lr=1e-3");
    CHECK(f.get_int("total_steps", 0) == 25);
    CHECK(f.get_string("model.head", "") == "binary");
    CHECK(f.get_double("schedule.peak_lr", 0.0) == 1e-3);
    CHECK_THROWS_AS(f.set_from_string("novalue"), UsageError);
  }

  TEST_CASE("run config defaults and presets") {
    const auto cfg = load_run_config(ConfigFile::parse("[data]\ntrain_manifest = \"m.jsonl\""));
    CHECK(cfg.total_steps == 880'000);
    CHECK(cfg.validation_interval == 100'000);
    CHECK(cfg.schedule.peak_lr == 1e-7);
    CHECK(cfg.adamw.weight_decay == 0.01);
    CHECK(cfg.batcher.max_batch_seconds == 100.0);
    CHECK(cfg.rawboost.mode == RawBoostMode::series_lnl_isd);
    CHECK(cfg.model == ModelConfig{});
    CHECK(cfg.finetune_steps == 6000);
    CHECK(cfg.finetune_lr == 1e-6);

    const auto toy = load_run_config(ConfigFile::parse(
        "total_steps = 100\n[data]\ntrain_manifest = \"m.jsonl\"\n[schedule]\npreset = \"toy\"\n"
        "[model]\nconv_channels = [8, 8]\nconv_kernels = [4, 4]\nconv_strides = [2, 2]\ndim = 16\n"
        "[rawboost]\nenabled = false"));
    CHECK(toy.schedule.peak_lr == 1e-3);
    CHECK(toy.model.conv.size() == 2);
    CHECK(toy.model.conv[1] == ConvLayerSpec{8, 4, 2});
    CHECK_FALSE(toy.augment);
  }

  TEST_CASE("run config validation") {
    CHECK_THROWS_AS(load_run_config(ConfigFile::parse("[schedule]\npreset = \"nope\"")), UsageError);
    CHECK_THROWS_AS(load_run_config(ConfigFile::parse("[model]\nunknown = 1")), UsageError);
    auto cfg = load_run_config(ConfigFile::parse("[data]\ntrain_manifest = \"m.jsonl\""));
    cfg.total_steps = 900'000;
    CHECK_THROWS_AS(cfg.validate(true), UsageError);
    cfg.total_steps = 10;
    cfg.train_manifest.clear();
    CHECK_THROWS_AS(cfg.validate(true), UsageError);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("help and version exit 0") {
    const auto help = cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("post-train") != std::string::npos);
    const auto version = cli({"--version"});
    CHECK(version.code == 0);
    CHECK(version.out == std::string(kVersion) + "\n");
  }

  TEST_CASE("unknown flags and missing subcommands are usage errors") {
    CHECK(cli({"--bogus"}).code == 2);
    CHECK(cli({"manifest", "stats"}).code == 2);
    CHECK(cli({}).code == 2);
  }

  TEST_CASE("evaluate with a missing manifest exits 2 naming the path") {
    TempDir dir("cli_eval");
    Checkpoint c;
    c.config.dim = 8;
    c.config.heads = 2;
    c.params = init_parameters<float>(c.config, 0);
    save_checkpoint(dir / "m.ckpt", c);
    const auto missing = (dir / "absent.jsonl").string();
    const auto r = cli({"evaluate", "--ckpt", (dir / "m.ckpt").string(), "--manifest", missing, "--out-dir",
                        (dir / "out").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find(missing) != std::string::npos);
    CHECK(r.err.rfind("error: ", 0) == 0);
  }

  TEST_CASE("post-train without any config is a usage error") {
    CHECK(cli({"post-train"}).code == 2);
  }

  TEST_CASE("manifest split and stats") {
    TempDir dir("cli_split");
    const Manifest m = write_tones(dir, 10);
    write_manifest(dir / "all.jsonl", m);
    const auto r = cli({"manifest", "split", "--in", (dir / "all.jsonl").string(), "--train-frac", "0.8", "--seed", "3"});
    CHECK(r.code == 0);
    const auto train = read_manifest(dir / "all.train.jsonl");
    const auto val = read_manifest(dir / "all.val.jsonl");
    CHECK(train.size() == 8);
    CHECK(val.size() == 2);
    const auto s = cli({"manifest", "stats", "--in", (dir / "all.jsonl").string()});
    CHECK(s.code == 0);
    CHECK(s.out.find("genuine") != std::string::npos);
  }

  TEST_CASE("preprocess converts to 16 kHz mono") {
    TempDir dir("cli_pre");
    const Manifest m = write_tones(dir, 2, 22050, 2);
    write_manifest(dir / "in.jsonl", m);
    const auto r = cli({"preprocess", "--in", (dir / "in.jsonl").string(), "--out-dir", (dir / "out").string()});
    REQUIRE(r.code == 0);
    const auto out = read_manifest(dir / "out" / "manifest.jsonl");
    REQUIRE(out.size() == 2);
    const auto buf = load_wav(out[0].path);
    CHECK(buf.sample_rate == 16000);
    CHECK(buf.channels == 1);
    CHECK(out[0].duration_s == doctest::Approx(0.5).epsilon(1e-3));
  }

  TEST_CASE("augment writes a same-length file deterministically") {
    TempDir dir("cli_aug");
    save_wav(dir / "in.wav", sdd::testing::sine(300.0, 1.0, 16000, 0.5));
    for (const char* name : {"a.wav", "b.wav"}) {
      CHECK(cli({"augment", "--in", (dir / "in.wav").string(), "--mode", "series_lnl_isd", "--seed", "4", "--out",
                 (dir / name).string()}).code == 0);
    }
    const auto a = load_wav(dir / "a.wav");
    const auto b = load_wav(dir / "b.wav");
    CHECK(a.samples.size() == 16000);
    CHECK(a.samples == b.samples);
    CHECK(cli({"augment", "--in", (dir / "in.wav").string(), "--mode", "sideways", "--out",
               (dir / "c.wav").string()}).code == 2);
  }
}
