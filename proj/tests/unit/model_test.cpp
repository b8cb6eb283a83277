#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "sdd/error.hpp"
#include "sdd/model.hpp"

using namespace sdd;
using sdd::testing::random_batch;

namespace {

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.conv = {{3, 4, 2}, {4, 3, 2}};
  cfg.dim = 4;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.ff_dim = 6;
  return cfg;
}

std::size_t layer_formula(std::size_t len, const ModelConfig& cfg) {
  for (const auto& c : cfg.conv) {
    if (len < static_cast<std::size_t>(c.kernel)) return 0;
    len = (len - static_cast<std::size_t>(c.kernel)) / static_cast<std::size_t>(c.stride) + 1;
  }
  return len;
}

EncodedBatch<double> encoded(const std::vector<Matrix<double>>& frames, const std::vector<int>& valid) {
  EncodedBatch<double> e;
  e.frames = frames;
  e.frame_mask = MaskMatrix::Constant(static_cast<Eigen::Index>(frames.size()), frames[0].rows(), false);
  for (std::size_t b = 0; b < frames.size(); ++b) e.frame_mask.row(static_cast<Eigen::Index>(b)).head(valid[b]).setConstant(true);
  return e;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("default config: 320x subsampling and about 100 frames for 2 s") {
    const ModelConfig cfg;
    CHECK(cfg.stride_product() == 320);
    CHECK(cfg.frames_for(32000) == layer_formula(32000, cfg));
    CHECK(cfg.frames_for(32000) == 99);
    Rng rng(1);
    const auto batch = random_batch<float>({32000, 32000}, 5, rng);
    const auto enc = encode<float>(batch, init_parameters<float>(cfg, 1), cfg);
    CHECK(enc.frame_mask.cols() == 99);
    CHECK(enc.frames[0].rows() == 99);
    CHECK(enc.frames[0].cols() == 64);
  }

  TEST_CASE("frame formula and receptive field agree") {
    for (const auto& cfg : {ModelConfig{}, tiny()}) {
      for (std::size_t len = 1; len < 3000; len += 7) CHECK(cfg.frames_for(len) == layer_formula(len, cfg));
      std::size_t first = 1;
      while (layer_formula(first, cfg) == 0) ++first;
      CHECK(cfg.receptive_field() == first);
    }
  }

  TEST_CASE("input shorter than the receptive field is rejected") {
    const ModelConfig cfg;
    Rng rng(2);
    const auto batch = random_batch<float>({cfg.receptive_field() - 1}, 5, rng);
    CHECK_THROWS_AS(encode<float>(batch, init_parameters<float>(cfg, 1), cfg), Error);
  }

  TEST_CASE("parameter count matches the layer shapes") {
    const ModelConfig cfg;
    std::size_t expected = 0;
    int in = 1;
    for (const auto& c : cfg.conv) {
      expected += static_cast<std::size_t>(c.channels * c.kernel * in + c.channels);
      in = c.channels;
    }
    expected += static_cast<std::size_t>(cfg.conv[0].channels);  // first-layer norm replaces its bias
    expected += 2 * static_cast<std::size_t>(in) + static_cast<std::size_t>(cfg.dim * in + cfg.dim);
    const int d = cfg.dim;
    // Query, value and output projections carry a bias, the key projection does not.
    const std::size_t block = 4 * d + 4 * d * d + 3 * d + (cfg.ff_dim * d + cfg.ff_dim) + (d * cfg.ff_dim + d);
    expected += static_cast<std::size_t>(cfg.depth) * block + 2 * d + (5 * d + 5);
    CHECK(init_parameters<float>(cfg, 0).scalar_count() == expected);
    CHECK(expected == 121221);
  }

  TEST_CASE("init: unit gains, zero norm biases, bounded weights, seeded") {
    const ModelConfig cfg;
    const auto p = init_parameters<double>(cfg, 4);
    CHECK((p.at("final_norm.gain").array() == 1.0).all());
    CHECK((p.at("layer0.norm1.bias").array() == 0.0).all());
    CHECK((p.at("conv0.norm.bias").array() == 0.0).all());
    CHECK(p.at("conv0.weight").cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(10.0));
    CHECK(p.at("head.weight").cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(64.0));
    const auto q = init_parameters<double>(cfg, 4);
    const auto r = init_parameters<double>(cfg, 5);
    CHECK(p.at("proj.weight") == q.at("proj.weight"));
    CHECK(p.at("proj.weight") != r.at("proj.weight"));
  }

  TEST_CASE("zero input with zero conv biases makes conv weights irrelevant") {
    const ModelConfig cfg = tiny();
    auto a = init_parameters<double>(cfg, 1);
    auto b = init_parameters<double>(cfg, 1);
    for (const char* name : {"conv0.bias", "conv1.bias"}) {
      for (auto& t : a.tensors) if (t.name == name) t.value.setZero();
      for (auto& t : b.tensors) if (t.name == name) t.value.setZero();
    }
    for (auto& t : b.tensors) if (t.name == "conv0.weight" || t.name == "conv1.weight") t.value *= 3.0;
    PaddedBatch<double> batch;
    batch.waveforms = Matrix<double>::Zero(1, 50);
    batch.mask = MaskMatrix::Constant(1, 50, true);
    batch.lengths = {50};
    batch.labels = {0};
    batch.entry_ids = {"z"};
    CHECK(forward<double>(batch, a, cfg, false).logits == forward<double>(batch, b, cfg, false).logits);
  }

  TEST_CASE("pool is a mask-aware mean") {
    Matrix<double> c(4, 3);
    c.rowwise() = RowVector<double>::Constant(3, 0.7);
    CHECK(pool<double>(encoded({c}, {4})).row(0).isApprox(RowVector<double>::Constant(3, 0.7)));

    Matrix<double> f(2, 2);
    f << 1.0, 2.0, 3.0, 6.0;
    const Matrix<double> two = pool<double>(encoded({f}, {2}));
    CHECK(two(0, 0) == 2.0);
    CHECK(two(0, 1) == 4.0);

    Matrix<double> g(5, 2);
    g.topRows(2) = f;
    g.bottomRows(3).setConstant(1e6);
    CHECK(pool<double>(encoded({g}, {2})) == two);

    CHECK_THROWS_AS(pool<double>(encoded({f}, {0})), Error);
  }

  TEST_CASE("classify is an affine map") {
    ModelConfig cfg;
    cfg.conv = {{1, 2, 1}};
    cfg.dim = 1;
    cfg.depth = 0;
    cfg.heads = 1;
    cfg.ff_dim = 1;
    cfg.head = HeadMode::binary;
    auto p = init_parameters<double>(cfg, 0);
    for (auto& t : p.tensors) {
      if (t.name == "head.weight") t.value << 2.0, -2.0;
      if (t.name == "head.bias") t.value.setZero();
    }
    Matrix<double> e(1, 1);
    e << 0.5;
    const auto logits = classify<double>(e, p, cfg);
    CHECK(logits(0, 0) == 1.0);
    CHECK(logits(0, 1) == -1.0);
    CHECK((classify<double>(Matrix<double>::Zero(1, 1), p, cfg).array() == 0.0).all());
    Matrix<double> same(3, 1);
    same.setConstant(0.25);
    const auto rows = classify<double>(same, p, cfg);
    CHECK(rows.row(0) == rows.row(2));
  }

  TEST_CASE("cross-entropy values") {
    const Matrix<double> uniform = Matrix<double>::Zero(3, 5);
    const std::vector<int> labels{0, 2, 4};
    CHECK(cross_entropy_sum<double>(uniform, labels) == doctest::Approx(3.0 * std::log(5.0)).epsilon(1e-12));
    Matrix<double> margin = Matrix<double>::Zero(1, 5);
    margin(0, 3) = 50.0;
    const std::vector<int> three{3};
    CHECK(cross_entropy_sum<double>(margin, three) < 1e-20);
    margin(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(cross_entropy_sum<double>(margin, three), Error);
    const std::vector<int> bad{5};
    CHECK_THROWS_AS(cross_entropy_sum<double>(Matrix<double>::Zero(1, 5), bad), Error);
  }

  TEST_CASE("scores are genuine posteriors") {
    CHECK(score<double>(Matrix<double>::Zero(2, 5))(1) == doctest::Approx(0.2).epsilon(1e-12));
    Matrix<double> big = Matrix<double>::Zero(1, 5);
    big(0, 0) = 100.0;
    CHECK(score<double>(big)(0) == doctest::Approx(1.0).epsilon(1e-12));
    Rng rng(3);
    Matrix<double> r(6, 5);
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = 4.0 * gaussian(rng);
    const auto sm = softmax_rows<double>(r);
    const auto s = score<double>(r);
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      CHECK(std::abs(sm.row(i).sum() - 1.0) < 1e-6);
      CHECK(s(i) > 0.0);
      CHECK(s(i) < 1.0);
      CHECK(std::abs(s(i) + sm.row(i).tail(4).sum() - 1.0) < 1e-12);
    }
  }

  TEST_CASE("class index mapping") {
    CHECK(class_index(ArtifactCategory::genuine, HeadMode::multiclass) == 0);
    for (std::size_t i = 0; i < kAllCategories.size(); ++i) {
      CHECK(class_index(kAllCategories[i], HeadMode::multiclass) == static_cast<int>(i));
    }
    CHECK(class_index(ArtifactCategory::genuine, HeadMode::binary) == 0);
    CHECK(class_index(ArtifactCategory::tts_vc, HeadMode::binary) == 1);
  }

  TEST_CASE("tiny model gradients match central differences") {
    // D=4, C=5, B=2 with T'=3 frames per row.
    const ModelConfig cfg = tiny();
    const std::size_t len = 18;
    REQUIRE(cfg.frames_for(len) == 3);
    Rng rng(11);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto params = init_parameters<double>(cfg, seed);
      const auto batch = random_batch<double>({len, len}, 5, rng);
      const auto gc = sdd::testing::check_gradients(cfg, params, batch);
      CHECK(gc.checked == params.scalar_count());
      CHECK(gc.worst_rel < 1e-4);
    }
  }

  TEST_CASE("binary head gradients and mixed lengths") {
    ModelConfig cfg = tiny();
    cfg.head = HeadMode::binary;
    cfg.depth = 2;
    Rng rng(5);
    const auto batch = random_batch<double>({30, 19, 25}, 2, rng);
    CHECK(sdd::testing::check_gradients(cfg, init_parameters<double>(cfg, 9), batch).worst_rel < 1e-4);
  }

  TEST_CASE("extra padding leaves scores unchanged") {
    const ModelConfig cfg;
    const auto params = init_parameters<float>(cfg, 2);
    Rng rng(6);
    const auto batch = random_batch<float>({8000, 5000, 6400}, 5, rng);
    const auto padded = sdd::testing::with_padding(batch, 3210);
    const auto a = score<float>(forward<float>(batch, params, cfg, false).logits);
    const auto b = score<float>(forward<float>(padded, params, cfg, false).logits);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("batch rows are permutation equivariant and deterministic") {
    const ModelConfig cfg = tiny();
    const auto params = init_parameters<double>(cfg, 3);
    Rng rng(8);
    const auto batch = random_batch<double>({40, 30}, 5, rng);
    PaddedBatch<double> swapped = batch;
    swapped.waveforms.row(0) = batch.waveforms.row(1);
    swapped.waveforms.row(1) = batch.waveforms.row(0);
    swapped.lengths = {30, 40};
    const auto l = forward<double>(batch, params, cfg, false).logits;
    const auto s = forward<double>(swapped, params, cfg, false).logits;
    CHECK(l.row(0) == s.row(1));
    CHECK(l.row(1) == s.row(0));
    CHECK(forward<double>(batch, params, cfg, false).logits == l);
  }

  TEST_CASE("config json round trip and fingerprint") {
    ModelConfig cfg = tiny();
    cfg.head = HeadMode::binary;
    const auto back = ModelConfig::from_json(cfg.to_json());
    CHECK(back == cfg);
    CHECK(back.fingerprint() == cfg.fingerprint());
    ModelConfig other = cfg;
    other.dim = 8;
    CHECK(other.fingerprint() != cfg.fingerprint());
    other.dim = 6;
    other.heads = 4;
    CHECK_THROWS_AS(other.validate(), UsageError);
    CHECK_THROWS_AS(ModelConfig::from_json("{\"conv\": 3}"), Error);
  }
}
