// SPDX-License-Identifier: Apache-2.0
//
// Layer kernels with analytic backward passes. Spatial tensors are H x W x C,
// convolution kernels k x k x Cin x Cout, dense weights out x in.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lmdf/tensor.hpp"

namespace lmdf {

// ---------------------------------------------------------------------------
// Convolution: stride 1, zero padding of k/2 on every border, so the output
// keeps the input's spatial extent.

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel);

/// Convolution followed by a per-output-channel bias.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias);

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernel;
  BasicTensor<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                               const BasicTensor<T>& upstream);

/// Accumulating form used by the training loops. `grad_input` may be null when
/// the input gradient is not needed (first layer of a path).
template <typename T>
void conv2d_backward_accumulate(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                                const BasicTensor<T>& upstream, BasicTensor<T>* grad_input,
                                BasicTensor<T>& grad_kernel, BasicTensor<T>* grad_bias);

// ---------------------------------------------------------------------------
// 2x2 max pooling with stride 2. Ties go to the first element of the window in
// row-major order.

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  /// Flat index into the input of each output cell's winner.
  std::vector<std::uint32_t> argmax;
};

template <typename T>
PoolResult<T> maxpool2(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                 const BasicTensor<T>& upstream);

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

/// Passes `upstream` where input > 0. The subgradient at exactly 0 is 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& upstream);

// ---------------------------------------------------------------------------
// Dense layer y = W x + b over vectors (any rank, flattened).

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      const BasicTensor<T>& bias);

template <typename T>
struct AffineGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

template <typename T>
AffineGrads<T> affine_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                               const BasicTensor<T>& upstream);

template <typename T>
void affine_backward_accumulate(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                const BasicTensor<T>& upstream, BasicTensor<T>* grad_input,
                                BasicTensor<T>& grad_weights, BasicTensor<T>& grad_bias);

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
struct SoftmaxXent {
  double loss = 0.0;
  BasicTensor<T> probs;
  BasicTensor<T> grad_logits;
};

/// Cross-entropy of softmax(logits) against a one-hot target, stabilised by
/// subtracting the max logit.
template <typename T>
SoftmaxXent<T> softmax_xent(const BasicTensor<T>& logits, const BasicTensor<T>& target);

template <typename T>
BasicTensor<T> one_hot(std::size_t cls, std::size_t classes);

/// Index of the largest entry; ties resolve to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update from `param.grad`. Throws TrainingError
/// naming the parameter if the gradient holds NaN or Inf.
template <typename T>
void adam_step(ParamTensor<T>& param, double lr, const AdamConfig& config = {});

}  // namespace lmdf
