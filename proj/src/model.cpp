#include "sdd/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "sdd/error.hpp"
#include "sdd/rng.hpp"

namespace sdd {

std::string to_string(HeadMode mode) { return mode == HeadMode::multiclass ? "multiclass" : "binary"; }

HeadMode parse_head_mode(const std::string& text) {
  if (text == "multiclass") return HeadMode::multiclass;
  if (text == "binary") return HeadMode::binary;
  throw UsageError("unknown head mode '" + text + "' (expected multiclass|binary)");
}

int class_index(ArtifactCategory category, HeadMode mode) {
  if (mode == HeadMode::multiclass) return static_cast<int>(category);
  return is_genuine(category) ? 0 : 1;
}

std::size_t ModelConfig::stride_product() const {
  std::size_t p = 1;
  for (const auto& c : conv) p *= static_cast<std::size_t>(c.stride);
  return p;
}

std::size_t ModelConfig::receptive_field() const {
  // Walk backwards: one output frame of layer i needs k + (n - 1) * s inputs.
  std::size_t need = 1;
  for (auto it = conv.rbegin(); it != conv.rend(); ++it) {
    need = static_cast<std::size_t>(it->kernel) + (need - 1) * static_cast<std::size_t>(it->stride);
  }
  return need;
}

std::size_t ModelConfig::frames_for(std::size_t samples) const {
  std::size_t len = samples;
  for (const auto& c : conv) {
    const auto k = static_cast<std::size_t>(c.kernel);
    if (len < k) return 0;
    len = (len - k) / static_cast<std::size_t>(c.stride) + 1;
  }
  return len;
}

void ModelConfig::validate() const {
  if (conv.empty()) throw UsageError("model: need at least one conv layer");
  for (const auto& c : conv) {
    if (c.channels < 1 || c.kernel < 1 || c.stride < 1) {
      throw UsageError("model: conv channels, kernel and stride must be positive");
    }
  }
  if (dim < 1 || depth < 0 || heads < 1 || ff_dim < 1) throw UsageError("model: invalid transformer sizes");
  if (dim % heads != 0) throw UsageError("model: dim must be divisible by heads");
  if (num_classes() < 2) throw UsageError("model: need at least two classes");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& c : conv) {
    layers.push_back(nlohmann::ordered_json{{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}});
  }
  j["conv"] = layers;
  j["dim"] = dim;
  j["depth"] = depth;
  j["heads"] = heads;
  j["ff_dim"] = ff_dim;
  j["head"] = to_string(head);
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.conv.clear();
    for (const auto& c : j.at("conv")) {
      cfg.conv.push_back({c.at("channels").get<int>(), c.at("kernel").get<int>(), c.at("stride").get<int>()});
    }
    cfg.dim = j.at("dim").get<int>();
    cfg.depth = j.at("depth").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.ff_dim = j.at("ff_dim").get<int>();
    cfg.head = parse_head_mode(j.at("head").get<std::string>());
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed model config: ") + e.what());
  }
}

std::uint64_t ModelConfig::fingerprint() const { return fnv1a(to_json()); }

std::vector<std::pair<std::string, std::pair<int, int>>> parameter_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::pair<int, int>>> shapes;
  int in_channels = 1;
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const auto& c = cfg.conv[i];
    const std::string p = "conv" + std::to_string(i);
    shapes.push_back({p + ".weight", {c.channels, c.kernel * in_channels}});
    if (i == 0) {
      // The norm removes any per-channel offset, so this layer has no bias.
      shapes.push_back({p + ".norm.gain", {1, c.channels}});
      shapes.push_back({p + ".norm.bias", {1, c.channels}});
    } else {
      shapes.push_back({p + ".bias", {1, c.channels}});
    }
    in_channels = c.channels;
  }
  shapes.push_back({"feature_norm.gain", {1, in_channels}});
  shapes.push_back({"feature_norm.bias", {1, in_channels}});
  shapes.push_back({"proj.weight", {cfg.dim, in_channels}});
  shapes.push_back({"proj.bias", {1, cfg.dim}});
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string p = "layer" + std::to_string(l);
    shapes.push_back({p + ".norm1.gain", {1, cfg.dim}});
    shapes.push_back({p + ".norm1.bias", {1, cfg.dim}});
    for (const std::string w : {"query", "key", "value", "out"}) {
      shapes.push_back({p + ".attn." + w + ".weight", {cfg.dim, cfg.dim}});
      // A key bias shifts every score of a query equally; softmax ignores it.
      if (w != "key") shapes.push_back({p + ".attn." + w + ".bias", {1, cfg.dim}});
    }
    shapes.push_back({p + ".norm2.gain", {1, cfg.dim}});
    shapes.push_back({p + ".norm2.bias", {1, cfg.dim}});
    shapes.push_back({p + ".ff1.weight", {cfg.ff_dim, cfg.dim}});
    shapes.push_back({p + ".ff1.bias", {1, cfg.ff_dim}});
    shapes.push_back({p + ".ff2.weight", {cfg.dim, cfg.ff_dim}});
    shapes.push_back({p + ".ff2.bias", {1, cfg.dim}});
  }
  shapes.push_back({"final_norm.gain", {1, cfg.dim}});
  shapes.push_back({"final_norm.bias", {1, cfg.dim}});
  shapes.push_back({"head.weight", {cfg.num_classes(), cfg.dim}});
  shapes.push_back({"head.bias", {1, cfg.num_classes()}});
  return shapes;
}

namespace {

constexpr std::size_t kNoTensor = static_cast<std::size_t>(-1);

// Tensor indices in canonical order; mirrors parameter_shapes().
struct Layout {
  struct Block {
    std::size_t norm1_gain, norm1_bias;
    std::size_t wq, bq, wk, wv, bv, wo, bo;
    std::size_t norm2_gain, norm2_bias;
    std::size_t ff1_w, ff1_b, ff2_w, ff2_b;
  };
  std::vector<std::size_t> conv_w, conv_b;
  std::size_t conv_norm_gain = 0, conv_norm_bias = 0;
  std::size_t feat_gain = 0, feat_bias = 0, proj_w = 0, proj_b = 0;
  std::vector<Block> blocks;
  std::size_t out_gain = 0, out_bias = 0, head_w = 0, head_b = 0;

  explicit Layout(const ModelConfig& cfg) {
    std::size_t i = 0;
    for (std::size_t c = 0; c < cfg.conv.size(); ++c) {
      conv_w.push_back(i++);
      if (c == 0) {
        conv_norm_gain = i++;
        conv_norm_bias = i++;
        conv_b.push_back(kNoTensor);
      } else {
        conv_b.push_back(i++);
      }
    }
    feat_gain = i++;
    feat_bias = i++;
    proj_w = i++;
    proj_b = i++;
    for (int l = 0; l < cfg.depth; ++l) {
      Block b{};
      b.norm1_gain = i++;
      b.norm1_bias = i++;
      b.wq = i++;
      b.bq = i++;
      b.wk = i++;
      b.wv = i++;
      b.bv = i++;
      b.wo = i++;
      b.bo = i++;
      b.norm2_gain = i++;
      b.norm2_bias = i++;
      b.ff1_w = i++;
      b.ff1_b = i++;
      b.ff2_w = i++;
      b.ff2_b = i++;
      blocks.push_back(b);
    }
    out_gain = i++;
    out_bias = i++;
    head_w = i++;
    head_b = i++;
  }
};

bool is_norm_gain(const std::string& name) { return name.ends_with(".gain"); }
bool is_norm_bias(const std::string& name) {
  return name.ends_with("norm.bias") || name.ends_with("norm1.bias") || name.ends_with("norm2.bias");
}

}  // namespace

template <typename Scalar>
std::size_t ParameterSet<Scalar>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

template <typename Scalar>
const Matrix<Scalar>& ParameterSet<Scalar>::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw Error("no parameter named '" + name + "'");
}

template <typename Scalar>
ParameterSet<Scalar> ParameterSet<Scalar>::zeros_like() const {
  ParameterSet out;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) out.tensors.push_back({t.name, Matrix<Scalar>::Zero(t.value.rows(), t.value.cols())});
  return out;
}

template <typename Scalar>
bool ParameterSet<Scalar>::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const NamedTensor<Scalar>& t) { return t.value.allFinite(); });
}

template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "init"));
  ParameterSet<Scalar> params;
  double bound = 1.0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Matrix<Scalar> m(shape.first, shape.second);
    if (is_norm_gain(name)) {
      m.setOnes();
    } else if (is_norm_bias(name)) {
      m.setZero();
    } else {
      // Weights set the bound; the bias that follows reuses it.
      if (name.ends_with(".weight")) bound = 1.0 / std::sqrt(static_cast<double>(shape.second));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
    }
    params.tensors.push_back({name, std::move(m)});
  }
  return params;
}

namespace detail {

template <typename Scalar>
struct NormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> rstd;
};

template <typename Scalar>
struct BlockCache {
  NormCache<Scalar> norm1;
  Matrix<Scalar> u;        // norm1 output
  Matrix<Scalar> q, k, v;  // projections
  std::vector<Matrix<Scalar>> probs;
  Matrix<Scalar> attn;  // concatenated heads, before the output projection
  NormCache<Scalar> norm2;
  Matrix<Scalar> u2;
  Matrix<Scalar> hidden;  // ff1 pre-activation
  Matrix<Scalar> act;     // gelu(hidden)
};

template <typename Scalar>
struct RowCache {
  std::vector<Matrix<Scalar>> conv_in;
  std::vector<Matrix<Scalar>> conv_pre;  // GELU inputs
  NormCache<Scalar> conv_norm;           // first layer, per channel over time
  NormCache<Scalar> feat_norm;
  Matrix<Scalar> feat;  // normalised conv features
  std::vector<BlockCache<Scalar>> blocks;
  NormCache<Scalar> out_norm;
  std::size_t frames = 0;
};

}  // namespace detail

namespace {

using detail::BlockCache;
using detail::NormCache;
using detail::RowCache;

constexpr double kNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename Scalar>
using ConstStridedMap = Eigen::Map<const Matrix<Scalar>, 0, Eigen::OuterStride<>>;

template <typename Scalar>
Scalar gelu(Scalar z) {
  return static_cast<Scalar>(0.5) * z * (static_cast<Scalar>(1) + std::erf(z * static_cast<Scalar>(kInvSqrt2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar z) {
  const Scalar cdf = static_cast<Scalar>(0.5) * (static_cast<Scalar>(1) + std::erf(z * static_cast<Scalar>(kInvSqrt2)));
  const Scalar pdf = static_cast<Scalar>(kInvSqrt2Pi) * std::exp(static_cast<Scalar>(-0.5) * z * z);
  return cdf + z * pdf;
}

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, const Matrix<Scalar>& bias,
                          NormCache<Scalar>* cache) {
  const Vector<Scalar> mean = x.rowwise().mean();
  Matrix<Scalar> centered = x.colwise() - mean;
  const Vector<Scalar> var = centered.array().square().rowwise().mean();
  const Vector<Scalar> rstd = (var.array() + static_cast<Scalar>(kNormEps)).rsqrt();
  Matrix<Scalar> xhat = centered.array().colwise() * rstd.array();
  Matrix<Scalar> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = rstd;
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const NormCache<Scalar>& cache,
                                   const Matrix<Scalar>& gain, Matrix<Scalar>& dgain, Matrix<Scalar>& dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * gain.row(0).array();
  const Vector<Scalar> m1 = dxhat.rowwise().mean();
  const Vector<Scalar> m2 = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Matrix<Scalar> dx = dxhat.colwise() - m1;
  dx -= (cache.xhat.array().colwise() * m2.array()).matrix();
  return dx.array().colwise() * cache.rstd.array();
}

// Per-column normalisation over rows (time), one gain and bias per channel.
template <typename Scalar>
Matrix<Scalar> channel_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, const Matrix<Scalar>& bias,
                            NormCache<Scalar>* cache) {
  const RowVector<Scalar> mean = x.colwise().mean();
  Matrix<Scalar> centered = x.rowwise() - mean;
  const RowVector<Scalar> var = centered.array().square().colwise().mean();
  const RowVector<Scalar> rstd = (var.array() + static_cast<Scalar>(kNormEps)).rsqrt();
  Matrix<Scalar> xhat = centered.array().rowwise() * rstd.array();
  Matrix<Scalar> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = rstd.transpose();
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> channel_norm_backward(const Matrix<Scalar>& dy, const NormCache<Scalar>& cache,
                                     const Matrix<Scalar>& gain, Matrix<Scalar>& dgain, Matrix<Scalar>& dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * gain.row(0).array();
  const RowVector<Scalar> m1 = dxhat.colwise().mean();
  const RowVector<Scalar> m2 = (dxhat.array() * cache.xhat.array()).colwise().mean();
  Matrix<Scalar> dx = dxhat.rowwise() - m1;
  dx -= (cache.xhat.array().rowwise() * m2.array()).matrix();
  return dx.array().rowwise() * cache.rstd.transpose().array();
}

// y = x W^T + b
template <typename Scalar, typename Derived>
Matrix<Scalar> affine(const Eigen::MatrixBase<Derived>& x, const Matrix<Scalar>& w, const Matrix<Scalar>& b) {
  Matrix<Scalar> y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

template <typename Scalar>
Matrix<Scalar> positional_encoding(std::size_t frames, int dim) {
  Matrix<Scalar> pe(static_cast<Eigen::Index>(frames), dim);
  for (std::size_t t = 0; t < frames; ++t) {
    for (int i = 0; i < dim; i += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(i) / dim);
      const double angle = static_cast<double>(t) * rate;
      pe(static_cast<Eigen::Index>(t), i) = static_cast<Scalar>(std::sin(angle));
      if (i + 1 < dim) pe(static_cast<Eigen::Index>(t), i + 1) = static_cast<Scalar>(std::cos(angle));
    }
  }
  return pe;
}

// Sequential sum so the result does not depend on the container size.
template <typename Scalar>
RowVector<Scalar> mean_of_rows(const Matrix<Scalar>& x, std::size_t rows) {
  RowVector<Scalar> acc = RowVector<Scalar>::Zero(x.cols());
  for (std::size_t t = 0; t < rows; ++t) acc += x.row(static_cast<Eigen::Index>(t));
  return acc / static_cast<Scalar>(rows);
}

// Runs one row's valid samples through conv stack and transformer; returns
// the final-norm frame features (T x D).
template <typename Scalar>
Matrix<Scalar> encode_row(const Scalar* samples, std::size_t length, const ParameterSet<Scalar>& params,
                          const ModelConfig& cfg, const Layout& layout, RowCache<Scalar>* cache) {
  const std::size_t frames = cfg.frames_for(length);
  if (frames == 0) {
    throw Error("input of " + std::to_string(length) + " samples is shorter than the receptive field (" +
                std::to_string(cfg.receptive_field()) + ")");
  }
  Matrix<Scalar> h = Eigen::Map<const Matrix<Scalar>>(samples, static_cast<Eigen::Index>(length), 1);
  int in_channels = 1;
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const auto& spec = cfg.conv[i];
    const Eigen::Index out_len = (h.rows() - spec.kernel) / spec.stride + 1;
    const ConstStridedMap<Scalar> patches(h.data(), out_len, static_cast<Eigen::Index>(spec.kernel) * in_channels,
                                          Eigen::OuterStride<>(static_cast<Eigen::Index>(spec.stride) * in_channels));
    Matrix<Scalar> z = patches * params[layout.conv_w[i]].transpose();
    if (i == 0) {
      z = channel_norm<Scalar>(z, params[layout.conv_norm_gain], params[layout.conv_norm_bias],
                               cache != nullptr ? &cache->conv_norm : nullptr);
    } else {
      z.rowwise() += params[layout.conv_b[i]].row(0);
    }
    Matrix<Scalar> a = z.unaryExpr([](Scalar v) { return gelu(v); });
    if (cache != nullptr) {
      cache->conv_in.push_back(std::move(h));
      cache->conv_pre.push_back(std::move(z));
    }
    h = std::move(a);
    in_channels = spec.channels;
  }

  Matrix<Scalar> feat = layer_norm<Scalar>(h, params[layout.feat_gain], params[layout.feat_bias],
                                           cache != nullptr ? &cache->feat_norm : nullptr);
  Matrix<Scalar> x = affine<Scalar>(feat, params[layout.proj_w], params[layout.proj_b]);
  x += positional_encoding<Scalar>(frames, cfg.dim);
  if (cache != nullptr) {
    cache->feat = std::move(feat);
    cache->frames = frames;
  }

  const int dh = cfg.dim / cfg.heads;
  const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (const auto& blk : layout.blocks) {
    BlockCache<Scalar> local;
    BlockCache<Scalar>& bc = cache != nullptr ? cache->blocks.emplace_back() : local;
    bc.u = layer_norm<Scalar>(x, params[blk.norm1_gain], params[blk.norm1_bias], &bc.norm1);
    bc.q = affine<Scalar>(bc.u, params[blk.wq], params[blk.bq]);
    bc.k = bc.u * params[blk.wk].transpose();
    bc.v = affine<Scalar>(bc.u, params[blk.wv], params[blk.bv]);
    bc.attn.resize(x.rows(), cfg.dim);
    for (int head = 0; head < cfg.heads; ++head) {
      const auto cols = Eigen::seqN(head * dh, dh);
      Matrix<Scalar> s = (bc.q(Eigen::all, cols) * bc.k(Eigen::all, cols).transpose()) * scale;
      const Vector<Scalar> row_max = s.rowwise().maxCoeff();
      s = (s.colwise() - row_max).array().exp();
      const Vector<Scalar> row_sum = s.rowwise().sum();
      s = s.array().colwise() / row_sum.array();
      bc.attn(Eigen::all, cols) = s * bc.v(Eigen::all, cols);
      if (cache != nullptr) bc.probs.push_back(std::move(s));
    }
    x += affine<Scalar>(bc.attn, params[blk.wo], params[blk.bo]);

    bc.u2 = layer_norm<Scalar>(x, params[blk.norm2_gain], params[blk.norm2_bias], &bc.norm2);
    bc.hidden = affine<Scalar>(bc.u2, params[blk.ff1_w], params[blk.ff1_b]);
    bc.act = bc.hidden.unaryExpr([](Scalar v) { return gelu(v); });
    x += affine<Scalar>(bc.act, params[blk.ff2_w], params[blk.ff2_b]);
  }
  return layer_norm<Scalar>(x, params[layout.out_gain], params[layout.out_bias],
                            cache != nullptr ? &cache->out_norm : nullptr);
}

// Backward from d(embedding) (1 x D) through pooling, transformer and conv.
template <typename Scalar>
void backward_row(const RowCache<Scalar>& cache, const RowVector<Scalar>& d_embedding,
                  const ParameterSet<Scalar>& params, const ModelConfig& cfg, const Layout& layout,
                  ParameterSet<Scalar>& grads) {
  const auto frames = static_cast<Eigen::Index>(cache.frames);
  Matrix<Scalar> dy = d_embedding.replicate(frames, 1) / static_cast<Scalar>(frames);
  Matrix<Scalar> dx =
      layer_norm_backward<Scalar>(dy, cache.out_norm, params[layout.out_gain], grads[layout.out_gain], grads[layout.out_bias]);

  const int dh = cfg.dim / cfg.heads;
  const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (std::size_t l = layout.blocks.size(); l-- > 0;) {
    const auto& blk = layout.blocks[l];
    const auto& bc = cache.blocks[l];

    // Feed-forward residual branch.
    grads[blk.ff2_w] += dx.transpose() * bc.act;
    grads[blk.ff2_b].row(0) += dx.colwise().sum();
    Matrix<Scalar> dh_pre = dx * params[blk.ff2_w];
    dh_pre.array() *= bc.hidden.unaryExpr([](Scalar v) { return gelu_grad(v); }).array();
    grads[blk.ff1_w] += dh_pre.transpose() * bc.u2;
    grads[blk.ff1_b].row(0) += dh_pre.colwise().sum();
    const Matrix<Scalar> du2 = dh_pre * params[blk.ff1_w];
    dx += layer_norm_backward<Scalar>(du2, bc.norm2, params[blk.norm2_gain], grads[blk.norm2_gain], grads[blk.norm2_bias]);

    // Attention residual branch.
    grads[blk.wo] += dx.transpose() * bc.attn;
    grads[blk.bo].row(0) += dx.colwise().sum();
    const Matrix<Scalar> dattn = dx * params[blk.wo];
    Matrix<Scalar> dq(frames, cfg.dim);
    Matrix<Scalar> dk(frames, cfg.dim);
    Matrix<Scalar> dv(frames, cfg.dim);
    for (int head = 0; head < cfg.heads; ++head) {
      const auto cols = Eigen::seqN(head * dh, dh);
      const Matrix<Scalar>& p = bc.probs[static_cast<std::size_t>(head)];
      const Matrix<Scalar> dout = dattn(Eigen::all, cols);
      const Matrix<Scalar> dp = dout * bc.v(Eigen::all, cols).transpose();
      dv(Eigen::all, cols) = p.transpose() * dout;
      const Vector<Scalar> inner = (dp.array() * p.array()).rowwise().sum();
      const Matrix<Scalar> ds = (p.array() * (dp.colwise() - inner).array()).matrix() * scale;
      dq(Eigen::all, cols) = ds * bc.k(Eigen::all, cols);
      dk(Eigen::all, cols) = ds.transpose() * bc.q(Eigen::all, cols);
    }
    grads[blk.wq] += dq.transpose() * bc.u;
    grads[blk.bq].row(0) += dq.colwise().sum();
    grads[blk.wk] += dk.transpose() * bc.u;
    grads[blk.wv] += dv.transpose() * bc.u;
    grads[blk.bv].row(0) += dv.colwise().sum();
    const Matrix<Scalar> du = dq * params[blk.wq] + dk * params[blk.wk] + dv * params[blk.wv];
    dx += layer_norm_backward<Scalar>(du, bc.norm1, params[blk.norm1_gain], grads[blk.norm1_gain], grads[blk.norm1_bias]);
  }

  // Projection (positional encoding has no parameters).
  grads[layout.proj_w] += dx.transpose() * cache.feat;
  grads[layout.proj_b].row(0) += dx.colwise().sum();
  const Matrix<Scalar> dfeat = dx * params[layout.proj_w];
  Matrix<Scalar> dact =
      layer_norm_backward<Scalar>(dfeat, cache.feat_norm, params[layout.feat_gain], grads[layout.feat_gain], grads[layout.feat_bias]);

  for (std::size_t i = cfg.conv.size(); i-- > 0;) {
    const auto& spec = cfg.conv[i];
    const Matrix<Scalar>& input = cache.conv_in[i];
    const Matrix<Scalar>& pre = cache.conv_pre[i];
    const Eigen::Index in_channels = input.cols();
    const Eigen::Index window = static_cast<Eigen::Index>(spec.kernel) * in_channels;
    const Eigen::Index step = static_cast<Eigen::Index>(spec.stride) * in_channels;
    const ConstStridedMap<Scalar> patches(input.data(), pre.rows(), window, Eigen::OuterStride<>(step));
    Matrix<Scalar> dz = dact.array() * pre.unaryExpr([](Scalar v) { return gelu_grad(v); }).array();
    if (i == 0) {
      dz = channel_norm_backward<Scalar>(dz, cache.conv_norm, params[layout.conv_norm_gain],
                                         grads[layout.conv_norm_gain], grads[layout.conv_norm_bias]);
    }
    grads[layout.conv_w[i]] += dz.transpose() * patches;
    if (i == 0) break;
    grads[layout.conv_b[i]].row(0) += dz.colwise().sum();
    const Matrix<Scalar> dpatches = dz * params[layout.conv_w[i]];
    Matrix<Scalar> dinput = Matrix<Scalar>::Zero(input.rows(), in_channels);
    for (Eigen::Index t = 0; t < dpatches.rows(); ++t) {
      Eigen::Map<RowVector<Scalar>>(dinput.data() + t * step, window) += dpatches.row(t);
    }
    dact = std::move(dinput);
  }
}

void check_batch(const auto& batch) {
  if (batch.size() == 0) throw Error("empty batch");
  if (static_cast<std::size_t>(batch.waveforms.rows()) != batch.size()) throw Error("batch rows disagree with lengths");
}

}  // namespace

template <typename Scalar>
EncodedBatch<Scalar> encode(const PaddedBatch<Scalar>& batch, const ParameterSet<Scalar>& params,
                            const ModelConfig& cfg) {
  check_batch(batch);
  const Layout layout(cfg);
  const std::size_t padded_frames = cfg.frames_for(batch.max_length());
  EncodedBatch<Scalar> out;
  out.frame_mask = MaskMatrix::Constant(static_cast<Eigen::Index>(batch.size()),
                                        static_cast<Eigen::Index>(padded_frames), false);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Scalar* row = batch.waveforms.data() + static_cast<Eigen::Index>(b) * batch.waveforms.cols();
    const Matrix<Scalar> frames = encode_row<Scalar>(row, batch.lengths[b], params, cfg, layout, nullptr);
    Matrix<Scalar> padded = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(padded_frames), cfg.dim);
    padded.topRows(frames.rows()) = frames;
    out.frame_mask.row(static_cast<Eigen::Index>(b)).head(frames.rows()).setConstant(true);
    out.frames.push_back(std::move(padded));
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> pool(const EncodedBatch<Scalar>& encoded) {
  if (encoded.frames.empty()) throw Error("pool: empty batch");
  const auto dim = encoded.frames.front().cols();
  Matrix<Scalar> out(static_cast<Eigen::Index>(encoded.frames.size()), dim);
  for (std::size_t b = 0; b < encoded.frames.size(); ++b) {
    const auto mask_row = encoded.frame_mask.row(static_cast<Eigen::Index>(b));
    const auto valid = static_cast<std::size_t>(mask_row.count());
    if (valid == 0) throw Error("pool: row " + std::to_string(b) + " has no valid frames");
    if (!mask_row.head(static_cast<Eigen::Index>(valid)).all()) throw Error("pool: frame mask is not a prefix");
    out.row(static_cast<Eigen::Index>(b)) = mean_of_rows<Scalar>(encoded.frames[b], valid);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> classify(const Matrix<Scalar>& embeddings, const ParameterSet<Scalar>& params,
                        const ModelConfig& cfg) {
  const Layout layout(cfg);
  const auto& w = params[layout.head_w];
  if (embeddings.cols() != w.cols()) throw Error("classify: embedding width does not match the head");
  return affine<Scalar>(embeddings, w, params[layout.head_b]);
}

template <typename Scalar>
ForwardResult<Scalar> forward(const PaddedBatch<Scalar>& batch, const ParameterSet<Scalar>& params,
                              const ModelConfig& cfg, bool keep_cache) {
  check_batch(batch);
  const Layout layout(cfg);
  ForwardResult<Scalar> out;
  out.embeddings.resize(static_cast<Eigen::Index>(batch.size()), cfg.dim);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Scalar* row = batch.waveforms.data() + static_cast<Eigen::Index>(b) * batch.waveforms.cols();
    std::shared_ptr<RowCache<Scalar>> cache;
    if (keep_cache) cache = std::make_shared<RowCache<Scalar>>();
    const Matrix<Scalar> frames = encode_row<Scalar>(row, batch.lengths[b], params, cfg, layout, cache.get());
    out.embeddings.row(static_cast<Eigen::Index>(b)) = mean_of_rows<Scalar>(frames, static_cast<std::size_t>(frames.rows()));
    if (keep_cache) out.cache.rows.push_back(std::move(cache));
  }
  out.logits = classify<Scalar>(out.embeddings, params, cfg);
  return out;
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  const Vector<Scalar> row_max = logits.rowwise().maxCoeff();
  Matrix<Scalar> e = (logits.colwise() - row_max).array().exp();
  const Vector<Scalar> sums = e.rowwise().sum();
  return e.array().colwise() / sums.array();
}

template <typename Scalar>
Scalar cross_entropy_sum(const Matrix<Scalar>& logits, std::span<const int> labels) {
  if (!logits.allFinite()) throw Error("non-finite logits");
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw Error("logits and labels differ in length");
  Scalar total = 0;
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= logits.cols()) throw Error("label " + std::to_string(y) + " out of range");
    const Scalar m = logits.row(b).maxCoeff();
    const Scalar lse = m + std::log((logits.row(b).array() - m).exp().sum());
    total += lse - logits(b, y);
  }
  return total;
}

template <typename Scalar>
LossAndGrads<Scalar> loss_and_grads(const ForwardResult<Scalar>& fwd, std::span<const int> labels,
                                    const ParameterSet<Scalar>& params, const ModelConfig& cfg) {
  if (fwd.cache.rows.size() != static_cast<std::size_t>(fwd.logits.rows())) {
    throw Error("loss_and_grads: forward pass was run without a cache");
  }
  LossAndGrads<Scalar> out;
  out.loss = cross_entropy_sum<Scalar>(fwd.logits, labels);
  out.grads = params.zeros_like();
  const Layout layout(cfg);

  Matrix<Scalar> dlogits = softmax_rows<Scalar>(fwd.logits);
  for (Eigen::Index b = 0; b < dlogits.rows(); ++b) dlogits(b, labels[static_cast<std::size_t>(b)]) -= 1;
  out.grads[layout.head_w] += dlogits.transpose() * fwd.embeddings;
  out.grads[layout.head_b].row(0) += dlogits.colwise().sum();
  const Matrix<Scalar> dembed = dlogits * params[layout.head_w];
  for (std::size_t b = 0; b < fwd.cache.rows.size(); ++b) {
    backward_row<Scalar>(*fwd.cache.rows[b], dembed.row(static_cast<Eigen::Index>(b)), params, cfg, layout, out.grads);
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> score(const Matrix<Scalar>& logits) {
  return softmax_rows<Scalar>(logits).col(0);
}

#define SDD_INSTANTIATE_MODEL(S)                                                                              \
  template struct ParameterSet<S>;                                                                            \
  template ParameterSet<S> init_parameters<S>(const ModelConfig&, std::uint64_t);                             \
  template EncodedBatch<S> encode<S>(const PaddedBatch<S>&, const ParameterSet<S>&, const ModelConfig&);      \
  template Matrix<S> pool<S>(const EncodedBatch<S>&);                                                         \
  template Matrix<S> classify<S>(const Matrix<S>&, const ParameterSet<S>&, const ModelConfig&);               \
  template ForwardResult<S> forward<S>(const PaddedBatch<S>&, const ParameterSet<S>&, const ModelConfig&,     \
                                       bool);                                                                 \
  template LossAndGrads<S> loss_and_grads<S>(const ForwardResult<S>&, std::span<const int>,                   \
                                             const ParameterSet<S>&, const ModelConfig&);                     \
  template S cross_entropy_sum<S>(const Matrix<S>&, std::span<const int>);                                    \
  template Matrix<S> softmax_rows<S>(const Matrix<S>&);                                                       \
  template Vector<S> score<S>(const Matrix<S>&);

SDD_INSTANTIATE_MODEL(float)
SDD_INSTANTIATE_MODEL(double)

#undef SDD_INSTANTIATE_MODEL

}  // namespace sdd
