#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdd/batcher.hpp"
#include "sdd/catalog.hpp"
#include "sdd/types.hpp"

namespace sdd {

struct ConvLayerSpec {
  int channels = 0;
  int kernel = 0;
  int stride = 0;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

enum class HeadMode { multiclass, binary };

std::string to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& text);

/// Conv subsampler (first layer normalised per channel over time) + pre-norm
/// transformer + mask-aware average pooling + linear head.
struct ModelConfig {
  std::vector<ConvLayerSpec> conv = {{32, 10, 8}, {64, 8, 5}, {64, 8, 8}};
  int dim = 64;
  int depth = 2;
  int heads = 4;
  int ff_dim = 128;
  HeadMode head = HeadMode::multiclass;

  int num_classes() const { return head == HeadMode::multiclass ? kNumCategories : 2; }
  std::size_t stride_product() const;
  /// Shortest input that yields one frame.
  std::size_t receptive_field() const;
  /// Frame count after the conv stack: floor((L - k) / s) + 1 per layer, 0 if too short.
  std::size_t frames_for(std::size_t samples) const;

  /// Throws UsageError on inconsistent settings.
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  /// FNV-1a of the canonical JSON form.
  std::uint64_t fingerprint() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Class index used by the head: genuine is always 0. In binary mode every
/// artifact category maps to 1.
int class_index(ArtifactCategory category, HeadMode mode);

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Matrix<Scalar> value;
};

/// All trainable tensors in canonical order. Vectors (biases, norm gains) are
/// stored as 1 x n matrices.
template <typename Scalar>
struct ParameterSet {
  std::vector<NamedTensor<Scalar>> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t scalar_count() const;
  Matrix<Scalar>& operator[](std::size_t i) { return tensors[i].value; }
  const Matrix<Scalar>& operator[](std::size_t i) const { return tensors[i].value; }
  const Matrix<Scalar>& at(const std::string& name) const;

  ParameterSet zeros_like() const;
  bool all_finite() const;

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.value.template cast<Other>()});
    return out;
  }
};

/// Fan-in scaled uniform weights and biases, unit norm gains, zero norm biases.
template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Canonical names and shapes for `cfg`, in storage order.
std::vector<std::pair<std::string, std::pair<int, int>>> parameter_shapes(const ModelConfig& cfg);

/// Frame-level encoder output. Rows of `frames[b]` past the valid count are zero.
template <typename Scalar>
struct EncodedBatch {
  std::vector<Matrix<Scalar>> frames;  // per row: T' x D
  MaskMatrix frame_mask;               // B x T'
};

namespace detail {
template <typename Scalar>
struct RowCache;
}

/// Everything the backward pass needs from one forward call.
template <typename Scalar>
struct ForwardCache {
  std::vector<std::shared_ptr<const detail::RowCache<Scalar>>> rows;
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> embeddings;  // B x D, pooled
  Matrix<Scalar> logits;      // B x C
  ForwardCache<Scalar> cache;
};

/// Conv stack and transformer over each row's valid samples. Throws if a row
/// is shorter than the receptive field.
template <typename Scalar>
EncodedBatch<Scalar> encode(const PaddedBatch<Scalar>& batch, const ParameterSet<Scalar>& params,
                            const ModelConfig& cfg);

/// Mean over valid frames. Throws on an all-masked row.
template <typename Scalar>
Matrix<Scalar> pool(const EncodedBatch<Scalar>& encoded);

/// logits = e W^T + b.
template <typename Scalar>
Matrix<Scalar> classify(const Matrix<Scalar>& embeddings, const ParameterSet<Scalar>& params,
                        const ModelConfig& cfg);

/// Full forward pass. With `keep_cache` the result can be fed to loss_and_grads.
template <typename Scalar>
ForwardResult<Scalar> forward(const PaddedBatch<Scalar>& batch, const ParameterSet<Scalar>& params,
                              const ModelConfig& cfg, bool keep_cache);

template <typename Scalar>
struct LossAndGrads {
  Scalar loss = 0;
  ParameterSet<Scalar> grads;
};

/// Unweighted sum over the batch of softmax cross-entropy, with gradients for
/// every parameter.
template <typename Scalar>
LossAndGrads<Scalar> loss_and_grads(const ForwardResult<Scalar>& fwd, std::span<const int> labels,
                                    const ParameterSet<Scalar>& params, const ModelConfig& cfg);

/// Loss only (no backward), same reduction as loss_and_grads.
template <typename Scalar>
Scalar cross_entropy_sum(const Matrix<Scalar>& logits, std::span<const int> labels);

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits);

/// Softmax posterior of the genuine class per row.
template <typename Scalar>
Vector<Scalar> score(const Matrix<Scalar>& logits);

}  // namespace sdd
