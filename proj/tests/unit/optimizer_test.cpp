#include <doctest.h>

#include <cmath>
#include <fstream>

#include "sdd/checkpoint.hpp"
#include "sdd/error.hpp"
#include "sdd/optimizer.hpp"
#include "test_support.hpp"

using namespace sdd;

namespace {

ParameterSet<double> scalar_set(double value) {
  ParameterSet<double> p;
  p.tensors.push_back({"w", Matrix<double>::Constant(1, 1, value)});
  return p;
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.conv = {{4, 5, 3}, {4, 3, 2}};
  cfg.dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.ff_dim = 8;
  return cfg;
}

}  // namespace

TEST_SUITE("optimizer") {
  TEST_CASE("faithful schedule values") {
    const Schedule s = schedule_preset("faithful");
    CHECK(lr_at(0, s) == 0.0);
    CHECK(lr_at(40'000, s) == 5e-8);
    CHECK(lr_at(80'000, s) == 1e-7);
    CHECK(lr_at(480'000, s) == 5e-8);
    CHECK(lr_at(880'000, s) == 0.0);
    CHECK(lr_at(2'000'000, s) == 0.0);
  }

  TEST_CASE("schedule is continuous at the warmup boundary and never negative") {
    const Schedule s = schedule_preset("toy");
    CHECK(std::abs(lr_at(499, s) - lr_at(500, s)) <= s.peak_lr / 500.0 + 1e-18);
    CHECK(std::abs(lr_at(501, s) - lr_at(500, s)) <= s.peak_lr / 5000.0 + 1e-18);
    for (std::int64_t step = -5; step < 6000; step += 7) CHECK(lr_at(step, s) >= 0.0);
    // Independent piecewise-linear oracle.
    for (std::int64_t step : {1, 250, 500, 2750, 5499}) {
      const double expected = step <= 500 ? 1e-3 * step / 500.0 : 1e-3 * (5500.0 - step) / 5000.0;
      CHECK(lr_at(step, s) == doctest::Approx(expected).epsilon(1e-15));
    }
  }

  TEST_CASE("constant schedule for fine-tuning") {
    const Schedule s = schedule_preset("fine-tune");
    for (std::int64_t step : {0, 1, 3000, 6000, 100000}) CHECK(lr_at(step, s) == 1e-6);
    CHECK(schedule_preset("hubert-xl").peak_lr == 5e-6);
    CHECK_THROWS_AS(schedule_preset("bogus"), UsageError);
    Schedule bad;
    bad.warmup_steps = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
  }

  TEST_CASE("zero gradient without decay is a fixed point") {
    auto p = scalar_set(0.37);
    auto opt = OptimizerState<double>::zeros_for(p);
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    for (int i = 0; i < 10; ++i) adamw_step(p, p.zeros_like(), opt, 0.1, cfg);
    CHECK(p[0](0, 0) == 0.37);
    CHECK(opt.step == 10);
  }

  TEST_CASE("decay is a multiplicative shrink") {
    auto p = scalar_set(1.0);
    auto opt = OptimizerState<double>::zeros_for(p);
    adamw_step(p, p.zeros_like(), opt, 0.1, AdamWConfig{});
    CHECK(p[0](0, 0) == doctest::Approx(0.999).epsilon(1e-15));
  }

  TEST_CASE("first step moves by about lr against the gradient") {
    auto p = scalar_set(0.0);
    auto g = scalar_set(1.0);
    auto opt = OptimizerState<double>::zeros_for(p);
    adamw_step(p, g, opt, 0.001, AdamWConfig{});
    // m = 0.1, v = 0.001; corrected both to 1: step = lr / (1 + eps).
    CHECK(p[0](0, 0) == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
  }

  TEST_CASE("hand-computed AdamW recurrence over several steps") {
    auto p = scalar_set(0.5);
    auto opt = OptimizerState<double>::zeros_for(p);
    const AdamWConfig cfg;
    double theta = 0.5, m = 0.0, v = 0.0;
    const double grads[] = {0.3, -1.2, 0.05, 2.0};
    for (int t = 1; t <= 4; ++t) {
      const double g = grads[t - 1];
      adamw_step(p, scalar_set(g), opt, 0.01, cfg);
      theta *= 1.0 - 0.01 * 0.01;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      theta -= 0.01 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
      CHECK(p[0](0, 0) == doctest::Approx(theta).epsilon(1e-12));
    }
  }

  TEST_CASE("non-finite gradients are rejected by name") {
    auto p = scalar_set(1.0);
    auto opt = OptimizerState<double>::zeros_for(p);
    try {
      adamw_step(p, scalar_set(std::nan("")), opt, 0.1, AdamWConfig{});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
  }

  TEST_CASE("gradient clipping bounds the global norm") {
    ParameterSet<double> g;
    g.tensors.push_back({"a", Matrix<double>::Constant(1, 2, 3.0)});
    g.tensors.push_back({"b", Matrix<double>::Constant(1, 1, 4.0)});
    CHECK(global_norm(g) == doctest::Approx(std::sqrt(34.0)));
  }

  TEST_CASE("checkpoint save-load-save is bit exact") {
    sdd::testing::TempDir dir("ckpt");
    Checkpoint c;
    c.config = small_model();
    c.step = 1234;
    c.metadata = R"({"stage":"post-train"})";
    c.params = init_parameters<float>(c.config, 3);
    c.adam_m = init_parameters<float>(c.config, 4);
    c.adam_v = init_parameters<float>(c.config, 5);
    save_checkpoint(dir / "a.ckpt", c);
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    CHECK(back.step == 1234);
    CHECK(back.metadata == c.metadata);
    CHECK(back.config == c.config);
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      CHECK(back.params.tensors[i].name == c.params.tensors[i].name);
      CHECK(back.params[i] == c.params[i]);
      CHECK(back.adam_v[i] == c.adam_v[i]);
    }
    save_checkpoint(dir / "b.ckpt", back);
    CHECK(serialize(back) == serialize(c));
    std::ifstream fa(dir / "a.ckpt", std::ios::binary);
    std::ifstream fb(dir / "b.ckpt", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {}));
  }

  TEST_CASE("checkpoints without moments, corrupt files and fingerprints") {
    Checkpoint c;
    c.config = small_model();
    c.params = init_parameters<float>(c.config, 1);
    auto bytes = serialize(c);
    CHECK(deserialize(bytes).adam_m.size() == 0);
    CHECK(std::string(bytes.begin(), bytes.begin() + 7) == "SDDCKPT");
    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    CHECK_THROWS_AS(deserialize(truncated), Error);
    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize(wrong_magic), Error);
    ModelConfig other = c.config;
    other.depth = 2;
    CHECK_THROWS_AS(require_fingerprint(c, other), Error);
    CHECK_NOTHROW(require_fingerprint(c, c.config));
  }
}
