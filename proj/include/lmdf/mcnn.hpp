// SPDX-License-Identifier: Apache-2.0
//
// Multi-granularity CNN: one convolutional path per patch, concatenation of the
// path outputs, a fused relu representation and a two-class softmax head.
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lmdf/checkpoint.hpp"
#include "lmdf/config.hpp"
#include "lmdf/ops.hpp"
#include "lmdf/tensor.hpp"

namespace lmdf {

/// Which paths feed the fusion layer.
struct PathMask {
  std::vector<bool> active;

  static PathMask all(std::size_t paths);
  /// "all", "global", "parts", "locals" (standard 15-path layout) or an
  /// explicit string of 0/1 flags, one per path.
  static PathMask parse(std::string_view text, std::size_t paths);
  std::string to_string() const;
  std::size_t active_count() const;
  friend bool operator==(const PathMask&, const PathMask&) = default;
};

struct MCNNConfig {
  std::size_t path_count = 15;
  std::uint32_t patch_size = 64;
  std::uint32_t kernel = 5;
  std::uint32_t channels1 = 32;
  std::uint32_t channels2 = 64;
  std::uint32_t channels3 = 4;
  std::size_t representation_dim = 256;
  PathMask mask = PathMask::all(15);
  /// One parameter set per granularity class instead of per path. Needs the
  /// standard 15-path layout.
  bool share_within_granularity = false;
  std::uint64_t seed = 1;

  /// Flattened length of one path output: (patch/4)^2 * channels3.
  std::size_t path_dim() const;
  std::size_t fusion_input_dim() const;
  /// Closed form of the trainable scalar count.
  std::size_t parameter_count() const;
  void validate() const;

  KeyValues to_map() const;
  static MCNNConfig from_map(const KeyValues& kv);
};

template <typename T>
struct ConvPathParams {
  ParamTensor<T> kernel1, bias1, kernel2, bias2, kernel3, bias3;
};

/// Intermediates of one path, kept for the backward pass.
template <typename T>
struct PathCache {
  BasicTensor<T> input;
  BasicTensor<T> pre1;
  std::vector<std::uint32_t> pool1;
  BasicTensor<T> pooled1;
  BasicTensor<T> pre2;
  BasicTensor<T> act2;
  BasicTensor<T> pre3;
  std::vector<std::uint32_t> pool3;
};

template <typename T>
struct MCNNCache {
  std::vector<PathCache<T>> paths;
  BasicTensor<T> concat;
  BasicTensor<T> fused_pre;
  BasicTensor<T> representation;
  BasicTensor<T> logits;
};

template <typename T>
struct MCNNOutput {
  BasicTensor<T> representation;
  BasicTensor<T> probs;
  std::size_t predicted = 0;
};

template <typename T>
class MCNN {
 public:
  explicit MCNN(const MCNNConfig& config);

  const MCNNConfig& config() const noexcept { return config_; }

  /// conv-relu-pool, conv-relu, conv-relu-pool, row-major flatten.
  BasicTensor<T> path_forward(std::size_t path, const BasicTensor<T>& patch,
                              PathCache<T>* cache = nullptr) const;

  /// Concatenates the active path outputs in path order.
  BasicTensor<T> concat(std::span<const BasicTensor<T>> path_outputs) const;
  /// relu(W_f x + b_f) over the concatenation.
  BasicTensor<T> fuse(const BasicTensor<T>& concatenated,
                      BasicTensor<T>* pre_activation = nullptr) const;
  BasicTensor<T> head_logits(const BasicTensor<T>& representation) const;

  /// `patches` holds one patch per path; patches of masked paths are ignored.
  MCNNOutput<T> forward(std::span<const BasicTensor<T>> patches,
                        MCNNCache<T>* cache = nullptr) const;

  /// Cross-entropy backward from a cached forward. Gradients are added to the
  /// parameters' grad buffers after scaling by `scale`; returns the loss.
  double backward(const MCNNCache<T>& cache, std::size_t target, double scale = 1.0);
  /// Backward from a gradient on the representation (fusion and paths only;
  /// the head is untouched).
  void backward_representation(const MCNNCache<T>& cache, const BasicTensor<T>& grad_representation);

  std::vector<ParamTensor<T>*> parameters();
  std::vector<const ParamTensor<T>*> parameters() const;
  void zero_grad();
  void adam_step(double lr, const AdamConfig& adam = {});

  std::vector<NamedTensor> to_named() const;
  void load_named(std::span<const NamedTensor> tensors);

  /// Parameter set used by `path` (differs from `path` only when sharing).
  std::size_t slot_of(std::size_t path) const { return slot_[path]; }
  ConvPathParams<T>& path_params(std::size_t slot) { return slots_[slot]; }
  const ConvPathParams<T>& path_params(std::size_t slot) const { return slots_[slot]; }
  std::size_t slot_count() const noexcept { return slots_.size(); }

  ParamTensor<T> fusion_w, fusion_b, head_w, head_b;

 private:
  void path_backward(std::size_t path, const PathCache<T>& cache, const BasicTensor<T>& upstream);

  MCNNConfig config_;
  std::vector<ConvPathParams<T>> slots_;
  std::vector<std::size_t> slot_;
};

/// Glorot-style uniform initialisation, limit sqrt(6 / (fan_in + fan_out)).
template <typename T>
void init_uniform(BasicTensor<T>& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// Converts a float patch set to the model precision.
template <typename T>
std::vector<BasicTensor<T>> to_precision(std::span<const Tensor> patches);

extern template class MCNN<float>;
extern template class MCNN<double>;

}  // namespace lmdf
