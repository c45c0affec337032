// SPDX-License-Identifier: Apache-2.0
#include "lmdf/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace lmdf {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

struct ConvDims {
  std::size_t height, width, in_channels, out_channels, k;
};

template <typename T>
ConvDims check_conv(const BasicTensor<T>& input, const BasicTensor<T>& kernel) {
  if (input.rank() != 3) {
    throw ShapeError("conv2d input must be H x W x C, got " + shape_to_string(input.shape()));
  }
  if (kernel.rank() != 4) {
    throw ShapeError("conv2d kernel must be k x k x Cin x Cout, got " +
                     shape_to_string(kernel.shape()));
  }
  const auto& ks = kernel.shape();
  if (ks[0] != ks[1] || ks[0] % 2 == 0) {
    throw ShapeError("conv2d kernel must be square with odd extent, got " + shape_to_string(ks));
  }
  if (ks[2] != input.dim(2)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(input.shape()) +
                     ", kernel " + shape_to_string(ks));
  }
  return {input.dim(0), input.dim(1), ks[2], ks[3], ks[0]};
}

// Rows are output pixels, columns are (ky, kx, ci) in kernel memory order.
template <typename T>
RowMat<T> im2col(const BasicTensor<T>& input, const ConvDims& d) {
  const std::size_t pad = d.k / 2;
  const std::size_t patch = d.k * d.k * d.in_channels;
  RowMat<T> cols = RowMat<T>::Zero(static_cast<Eigen::Index>(d.height * d.width),
                                   static_cast<Eigen::Index>(patch));
  const T* src = input.data().data();
  for (std::size_t y = 0; y < d.height; ++y) {
    for (std::size_t x = 0; x < d.width; ++x) {
      T* row = cols.data() + (y * d.width + x) * patch;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(d.height)) continue;
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(d.width)) continue;
          const T* pix = src + (static_cast<std::size_t>(sy) * d.width + static_cast<std::size_t>(sx)) * d.in_channels;
          std::copy(pix, pix + d.in_channels, row + (ky * d.k + kx) * d.in_channels);
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_accumulate(const RowMat<T>& cols, const ConvDims& d, BasicTensor<T>& out) {
  const std::size_t pad = d.k / 2;
  const std::size_t patch = d.k * d.k * d.in_channels;
  T* dst = out.data().data();
  for (std::size_t y = 0; y < d.height; ++y) {
    for (std::size_t x = 0; x < d.width; ++x) {
      const T* row = cols.data() + (y * d.width + x) * patch;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(d.height)) continue;
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(d.width)) continue;
          T* pix = dst + (static_cast<std::size_t>(sy) * d.width + static_cast<std::size_t>(sx)) * d.in_channels;
          const T* g = row + (ky * d.k + kx) * d.in_channels;
          for (std::size_t c = 0; c < d.in_channels; ++c) pix[c] += g[c];
        }
      }
    }
  }
}

template <typename T>
void check_vector_len(const BasicTensor<T>& t, std::size_t n, const char* what) {
  if (t.size() != n) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(n) + " elements, got " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel) {
  const ConvDims d = check_conv(input, kernel);
  const RowMat<T> cols = im2col(input, d);
  BasicTensor<T> out({d.height, d.width, d.out_channels});
  MatMap<T> out_mat(out.data().data(), static_cast<Eigen::Index>(d.height * d.width),
                    static_cast<Eigen::Index>(d.out_channels));
  ConstMatMap<T> k_mat(kernel.data().data(), cols.cols(),
                       static_cast<Eigen::Index>(d.out_channels));
  out_mat.noalias() = cols * k_mat;
  return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias) {
  BasicTensor<T> out = conv2d(input, kernel);
  const std::size_t channels = kernel.dim(3);
  check_vector_len(bias, channels, "conv2d bias");
  T* o = out.data().data();
  const T* b = bias.data().data();
  const std::size_t pixels = out.size() / channels;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < channels; ++c) o[p * channels + c] += b[c];
  }
  return out;
}

template <typename T>
void conv2d_backward_accumulate(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                                const BasicTensor<T>& upstream, BasicTensor<T>* grad_input,
                                BasicTensor<T>& grad_kernel, BasicTensor<T>* grad_bias) {
  const ConvDims d = check_conv(input, kernel);
  require_shape(upstream.shape(), {d.height, d.width, d.out_channels}, "conv2d upstream gradient");
  require_shape(grad_kernel.shape(), kernel.shape(), "conv2d kernel gradient");
  const auto pixels = static_cast<Eigen::Index>(d.height * d.width);
  const auto outc = static_cast<Eigen::Index>(d.out_channels);
  ConstMatMap<T> g(upstream.data().data(), pixels, outc);
  const RowMat<T> cols = im2col(input, d);
  MatMap<T> gk(grad_kernel.data().data(), cols.cols(), outc);
  gk.noalias() += cols.transpose() * g;
  if (grad_bias) {
    check_vector_len(*grad_bias, d.out_channels, "conv2d bias gradient");
    // Plain loop: Eigen's vectorised reductions over mapped buffers sum in an
    // order that depends on the buffer's alignment.
    T* gb = grad_bias->data().data();
    const T* up = upstream.data().data();
    for (Eigen::Index p = 0; p < pixels; ++p) {
      for (Eigen::Index c = 0; c < outc; ++c) gb[c] += up[p * outc + c];
    }
  }
  if (grad_input) {
    require_shape(grad_input->shape(), input.shape(), "conv2d input gradient");
    ConstMatMap<T> k_mat(kernel.data().data(), cols.cols(), outc);
    RowMat<T> gcols(pixels, cols.cols());
    gcols.noalias() = g * k_mat.transpose();
    col2im_accumulate(gcols, d, *grad_input);
  }
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                               const BasicTensor<T>& upstream) {
  check_conv(input, kernel);
  Conv2dGrads<T> grads{BasicTensor<T>(input.shape()), BasicTensor<T>(kernel.shape()),
                       BasicTensor<T>({kernel.dim(3)})};
  conv2d_backward_accumulate(input, kernel, upstream, &grads.input, grads.kernel, &grads.bias);
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
PoolResult<T> maxpool2(const BasicTensor<T>& input) {
  if (input.rank() != 3) {
    throw ShapeError("maxpool2 input must be H x W x C, got " + shape_to_string(input.shape()));
  }
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h % 2 || w % 2) {
    throw ShapeError("maxpool2 needs even spatial extents, got " + shape_to_string(input.shape()));
  }
  PoolResult<T> r{BasicTensor<T>({h / 2, w / 2, c}), {}};
  r.argmax.resize(r.output.size());
  const T* src = input.data().data();
  for (std::size_t oy = 0; oy < h / 2; ++oy) {
    for (std::size_t ox = 0; ox < w / 2; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((2 * oy) * w + 2 * ox) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (oy * (w / 2) + ox) * c + ch;
        r.output[o] = src[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                 const BasicTensor<T>& upstream) {
  if (argmax.size() != upstream.size()) {
    throw ShapeError("maxpool2_backward: index map and upstream gradient differ in size");
  }
  BasicTensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= grad.size()) throw ShapeError("maxpool2_backward: index out of range");
    grad[argmax[i]] += upstream[i];
  }
  return grad;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& upstream) {
  require_shape(upstream.shape(), input.shape(), "relu_backward upstream");
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? upstream[i] : T{0};
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      const BasicTensor<T>& bias) {
  if (weights.rank() != 2) {
    throw ShapeError("affine weights must be rank 2, got " + shape_to_string(weights.shape()));
  }
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  check_vector_len(input, n, "affine input");
  check_vector_len(bias, m, "affine bias");
  BasicTensor<T> out({m});
  VecMap<T> y(out.data().data(), static_cast<Eigen::Index>(m));
  ConstMatMap<T> w(weights.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  ConstVecMap<T> x(input.data().data(), static_cast<Eigen::Index>(n));
  ConstVecMap<T> b(bias.data().data(), static_cast<Eigen::Index>(m));
  y.noalias() = w * x;
  y += b;
  return out;
}

template <typename T>
void affine_backward_accumulate(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                const BasicTensor<T>& upstream, BasicTensor<T>* grad_input,
                                BasicTensor<T>& grad_weights, BasicTensor<T>& grad_bias) {
  if (weights.rank() != 2) {
    throw ShapeError("affine weights must be rank 2, got " + shape_to_string(weights.shape()));
  }
  const auto m = static_cast<Eigen::Index>(weights.dim(0));
  const auto n = static_cast<Eigen::Index>(weights.dim(1));
  check_vector_len(input, weights.dim(1), "affine_backward input");
  check_vector_len(upstream, weights.dim(0), "affine_backward upstream");
  require_shape(grad_weights.shape(), weights.shape(), "affine weight gradient");
  check_vector_len(grad_bias, weights.dim(0), "affine bias gradient");
  ConstVecMap<T> g(upstream.data().data(), m);
  ConstVecMap<T> x(input.data().data(), n);
  MatMap<T> gw(grad_weights.data().data(), m, n);
  gw.noalias() += g * x.transpose();
  VecMap<T>(grad_bias.data().data(), m) += g;
  if (grad_input) {
    check_vector_len(*grad_input, weights.dim(1), "affine input gradient");
    ConstMatMap<T> w(weights.data().data(), m, n);
    VecMap<T>(grad_input->data().data(), n).noalias() += w.transpose() * g;
  }
}

template <typename T>
AffineGrads<T> affine_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                               const BasicTensor<T>& upstream) {
  if (weights.rank() != 2) {
    throw ShapeError("affine weights must be rank 2, got " + shape_to_string(weights.shape()));
  }
  AffineGrads<T> grads{BasicTensor<T>(input.shape()), BasicTensor<T>(weights.shape()),
                       BasicTensor<T>({weights.dim(0)})};
  affine_backward_accumulate(input, weights, upstream, &grads.input, grads.weights, grads.bias);
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const T m = *std::max_element(logits.data().begin(), logits.data().end());
  BasicTensor<T> p(Shape{logits.size()});
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (auto& v : p.data()) v /= sum;
  return p;
}

template <typename T>
SoftmaxXent<T> softmax_xent(const BasicTensor<T>& logits, const BasicTensor<T>& target) {
  if (logits.size() != target.size()) {
    throw ShapeError("softmax_xent: logits " + shape_to_string(logits.shape()) + " vs target " +
                     shape_to_string(target.shape()));
  }
  std::size_t hot = target.size();
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == T{1}) {
      if (hot != target.size()) throw ValidationError("softmax_xent: target has several ones");
      hot = i;
    } else if (target[i] != T{0}) {
      throw ValidationError("softmax_xent: target is not one-hot");
    }
  }
  if (hot == target.size()) throw ValidationError("softmax_xent: target has no hot entry");

  const T m = *std::max_element(logits.data().begin(), logits.data().end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(double(logits[i] - m));
  const double lse = double(m) + std::log(sum);

  SoftmaxXent<T> r;
  r.loss = lse - double(logits[hot]);
  r.probs = BasicTensor<T>(Shape{logits.size()});
  r.grad_logits = BasicTensor<T>(Shape{logits.size()});
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.probs[i] = static_cast<T>(std::exp(double(logits[i]) - lse));
    r.grad_logits[i] = r.probs[i] - target[i];
  }
  return r;
}

template <typename T>
BasicTensor<T> one_hot(std::size_t cls, std::size_t classes) {
  if (cls >= classes) throw ValidationError("one_hot: class index out of range");
  BasicTensor<T> t(Shape{classes});
  t[cls] = T{1};
  return t;
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------

template <typename T>
void adam_step(ParamTensor<T>& param, double lr, const AdamConfig& config) {
  if (!param.grad.all_finite()) {
    throw TrainingError("non-finite gradient in parameter '" + param.name + "'");
  }
  param.step_count += 1;
  const double t = static_cast<double>(param.step_count);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
  const T step = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(config.epsilon);
  T* w = param.value.data().data();
  T* m = param.adam_m.data().data();
  T* v = param.adam_v.data().data();
  const T* g = param.grad.data().data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (T{1} - b1) * g[i];
    v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
    w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
  }
}

// ---------------------------------------------------------------------------

#define LMDF_INSTANTIATE_OPS(T)                                                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                         \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                          const BasicTensor<T>&);                                \
  template void conv2d_backward_accumulate(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                           const BasicTensor<T>&, BasicTensor<T>*,               \
                                           BasicTensor<T>&, BasicTensor<T>*);                    \
  template PoolResult<T> maxpool2(const BasicTensor<T>&);                                        \
  template BasicTensor<T> maxpool2_backward(const Shape&, std::span<const std::uint32_t>,        \
                                            const BasicTensor<T>&);                              \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> affine(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                         \
  template AffineGrads<T> affine_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                          const BasicTensor<T>&);                                \
  template void affine_backward_accumulate(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                           const BasicTensor<T>&, BasicTensor<T>*,               \
                                           BasicTensor<T>&, BasicTensor<T>&);                    \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                        \
  template SoftmaxXent<T> softmax_xent(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> one_hot<T>(std::size_t, std::size_t);                                  \
  template std::size_t argmax(std::span<const T>);                                               \
  template void adam_step(ParamTensor<T>&, double, const AdamConfig&);

LMDF_INSTANTIATE_OPS(float)
LMDF_INSTANTIATE_OPS(double)

#undef LMDF_INSTANTIATE_OPS

}  // namespace lmdf
