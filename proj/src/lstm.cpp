// SPDX-License-Identifier: Apache-2.0
#include "lmdf/lstm.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lmdf/config.hpp"
#include "lmdf/errors.hpp"
#include "lmdf/mcnn.hpp"

namespace lmdf {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMap<T> as_rows(const BasicTensor<T>& t, std::size_t cols) {
  return ConstMap<T>(t.data().data(), static_cast<Eigen::Index>(t.size() / cols),
                     static_cast<Eigen::Index>(cols));
}

template <typename T>
Map<T> as_rows(BasicTensor<T>& t, std::size_t cols) {
  return Map<T>(t.data().data(), static_cast<Eigen::Index>(t.size() / cols),
                static_cast<Eigen::Index>(cols));
}

// Batch size of a B x dim tensor, or 1 for a plain vector of length dim.
template <typename T>
std::size_t batch_of(const BasicTensor<T>& t, std::size_t dim, const char* what) {
  if (t.rank() == 1 && t.size() == dim) return 1;
  if (t.rank() == 2 && t.dim(1) == dim) return t.dim(0);
  throw ShapeError(std::string(what) + ": expected B x " + std::to_string(dim) + ", got " +
                   shape_to_string(t.shape()));
}

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

std::string layer_prefix(std::size_t l) { return "lstm/layer" + std::to_string(l) + "/"; }

}  // namespace

// ---------------------------------------------------------------------------

std::size_t LSTMConfig::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input_dim : hidden_dim;
    n += 4 * hidden_dim * (in + hidden_dim + 1);
  }
  return n + 2 * hidden_dim + 2;
}

void LSTMConfig::validate() const {
  if (!input_dim || !hidden_dim || !layers) throw ValidationError("LSTM sizes must be positive");
  if (!max_memory_steps) throw ValidationError("max_memory_steps must be positive");
  if (!std::isfinite(forget_bias)) throw ValidationError("forget_bias must be finite");
}

KeyValues LSTMConfig::to_map() const {
  return {
      {"lstm_input_dim", std::to_string(input_dim)},
      {"lstm_hidden_dim", std::to_string(hidden_dim)},
      {"lstm_layers", std::to_string(layers)},
      {"max_memory_steps", std::to_string(max_memory_steps)},
      {"forget_bias", format_double(forget_bias)},
      {"lstm_seed", std::to_string(seed)},
  };
}

LSTMConfig LSTMConfig::from_map(const KeyValues& kv) {
  LSTMConfig c;
  c.input_dim = get_u64(kv, "lstm_input_dim", c.input_dim);
  c.hidden_dim = get_u64(kv, "lstm_hidden_dim", c.hidden_dim);
  c.layers = get_u64(kv, "lstm_layers", c.layers);
  c.max_memory_steps = get_u64(kv, "max_memory_steps", c.max_memory_steps);
  c.forget_bias = get_double(kv, "forget_bias", c.forget_bias);
  c.seed = get_u64(kv, "lstm_seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
LSTMState<T> LSTMState<T>::zeros(std::size_t layers, std::size_t hidden, std::size_t batch) {
  LSTMState s;
  for (std::size_t l = 0; l < layers; ++l) {
    s.h.emplace_back(Shape{batch, hidden});
    s.c.emplace_back(Shape{batch, hidden});
  }
  return s;
}

template <typename T>
void LSTMState<T>::reset() {
  for (auto& t : h) t.fill(T{0});
  for (auto& t : c) t.fill(T{0});
  frames_since_reset = 0;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> cell_step(const LSTMLayer<T>& layer, const BasicTensor<T>& x,
                                                    const BasicTensor<T>& h_prev,
                                                    const BasicTensor<T>& c_prev, CellCache<T>* cache) {
  const std::size_t in = layer.input_dim(), hid = layer.hidden_dim();
  const std::size_t b = batch_of(x, in, "LSTM input");
  if (batch_of(h_prev, hid, "LSTM hidden state") != b || batch_of(c_prev, hid, "LSTM cell state") != b) {
    throw ShapeError("LSTM state batch differs from the input batch");
  }
  const auto B = static_cast<Eigen::Index>(b);
  const auto H = static_cast<Eigen::Index>(hid);

  RowMat<T> z(B, 4 * H);
  z.noalias() = as_rows(x, in) * as_rows(layer.w_input.value, in).transpose();
  z.noalias() += as_rows(h_prev, hid) * as_rows(layer.w_recurrent.value, hid).transpose();
  z.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(layer.bias.value.data().data(), 4 * H);

  BasicTensor<T> h({b, hid}), c({b, hid});
  BasicTensor<T> gi({b, hid}), gf({b, hid}), go({b, hid}), gg({b, hid}), tc({b, hid});
  for (Eigen::Index r = 0; r < B; ++r) {
    for (Eigen::Index j = 0; j < H; ++j) {
      const std::size_t k = static_cast<std::size_t>(r * H + j);
      const T i = sigmoid(z(r, j));
      const T f = sigmoid(z(r, H + j));
      const T o = sigmoid(z(r, 2 * H + j));
      const T g = std::tanh(z(r, 3 * H + j));
      const T cn = f * c_prev[k] + i * g;
      const T t = std::tanh(cn);
      c[k] = cn;
      h[k] = o * t;
      gi[k] = i;
      gf[k] = f;
      go[k] = o;
      gg[k] = g;
      tc[k] = t;
    }
  }
  if (cache) {
    cache->x = x.reshaped({b, in});
    cache->h_prev = h_prev.reshaped({b, hid});
    cache->c_prev = c_prev.reshaped({b, hid});
    cache->i = std::move(gi);
    cache->f = std::move(gf);
    cache->o = std::move(go);
    cache->g = std::move(gg);
    cache->c = c;
    cache->tanh_c = std::move(tc);
  }
  return {std::move(h), std::move(c)};
}

template <typename T>
void cell_backward(LSTMLayer<T>& layer, const CellCache<T>& cache, const BasicTensor<T>& dh,
                   const BasicTensor<T>& dc, BasicTensor<T>* dx, BasicTensor<T>* dh_prev,
                   BasicTensor<T>* dc_prev) {
  const std::size_t in = layer.input_dim(), hid = layer.hidden_dim();
  const std::size_t b = cache.c.dim(0);
  require_shape(dh.reshaped({dh.size() / hid, hid}).shape(), {b, hid}, "LSTM dh");
  require_shape(dc.reshaped({dc.size() / hid, hid}).shape(), {b, hid}, "LSTM dc");
  const auto B = static_cast<Eigen::Index>(b);
  const auto H = static_cast<Eigen::Index>(hid);

  RowMat<T> dz(B, 4 * H);
  if (dc_prev) *dc_prev = BasicTensor<T>({b, hid});
  for (Eigen::Index r = 0; r < B; ++r) {
    for (Eigen::Index j = 0; j < H; ++j) {
      const std::size_t k = static_cast<std::size_t>(r * H + j);
      const T i = cache.i[k], f = cache.f[k], o = cache.o[k], g = cache.g[k], t = cache.tanh_c[k];
      const T d_o = dh[k] * t;
      const T d_c = dc[k] + dh[k] * o * (T(1) - t * t);
      dz(r, j) = d_c * g * i * (T(1) - i);
      dz(r, H + j) = d_c * cache.c_prev[k] * f * (T(1) - f);
      dz(r, 2 * H + j) = d_o * o * (T(1) - o);
      dz(r, 3 * H + j) = d_c * i * (T(1) - g * g);
      if (dc_prev) (*dc_prev)[k] = d_c * f;
    }
  }
  as_rows(layer.w_input.grad, in).noalias() += dz.transpose() * as_rows(cache.x, in);
  as_rows(layer.w_recurrent.grad, hid).noalias() += dz.transpose() * as_rows(cache.h_prev, hid);
  as_rows(layer.bias.grad, 4 * hid) += dz.colwise().sum();
  if (dx) {
    *dx = BasicTensor<T>({b, in});
    as_rows(*dx, in).noalias() = dz * as_rows(layer.w_input.value, in);
  }
  if (dh_prev) {
    *dh_prev = BasicTensor<T>({b, hid});
    as_rows(*dh_prev, hid).noalias() = dz * as_rows(layer.w_recurrent.value, hid);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
TemporalHead<T>::TemporalHead(const LSTMConfig& config) : config_(config) {
  config_.validate();
  const std::size_t hid = config_.hidden_dim;
  std::mt19937_64 rng(config_.seed);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::size_t in = l == 0 ? config_.input_dim : hid;
    LSTMLayer<T> layer;
    layer.w_input = ParamTensor<T>(layer_prefix(l) + "w_input", {4 * hid, in});
    layer.w_recurrent = ParamTensor<T>(layer_prefix(l) + "w_recurrent", {4 * hid, hid});
    layer.bias = ParamTensor<T>(layer_prefix(l) + "bias", {4 * hid});
    init_uniform(layer.w_input.value, in, hid, rng);
    init_uniform(layer.w_recurrent.value, hid, hid, rng);
    for (std::size_t j = hid; j < 2 * hid; ++j) layer.bias.value[j] = static_cast<T>(config_.forget_bias);
    layers_.push_back(std::move(layer));
  }
  proj_w = ParamTensor<T>("lstm/proj/weights", {2, hid});
  proj_b = ParamTensor<T>("lstm/proj/bias", {2});
  init_uniform(proj_w.value, hid, 2, rng);
}

template <typename T>
LSTMState<T> TemporalHead<T>::initial_state(std::size_t batch) const {
  return LSTMState<T>::zeros(config_.layers, config_.hidden_dim, batch);
}

template <typename T>
std::pair<LSTMState<T>, BasicTensor<T>> TemporalHead<T>::stack_step(const LSTMState<T>& state,
                                                                    const BasicTensor<T>& x) const {
  if (state.h.size() != layers_.size() || state.c.size() != layers_.size()) {
    throw ShapeError("LSTM state has " + std::to_string(state.h.size()) + " layers, head has " +
                     std::to_string(layers_.size()));
  }
  LSTMState<T> next;
  next.frames_since_reset = state.frames_since_reset + 1;
  const BasicTensor<T>* input = &x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto [h, c] = cell_step(layers_[l], *input, state.h[l], state.c[l]);
    next.h.push_back(std::move(h));
    next.c.push_back(std::move(c));
    input = &next.h.back();
  }
  BasicTensor<T> top = next.h.back();
  return {std::move(next), std::move(top)};
}

template <typename T>
std::vector<BasicTensor<T>> TemporalHead<T>::forward_sequence(std::span<const BasicTensor<T>> inputs,
                                                              LSTMState<T>* state) const {
  LSTMState<T> local = state ? *state : initial_state(inputs.empty() ? 1 : batch_of(inputs[0], config_.input_dim, "LSTM input"));
  std::vector<BasicTensor<T>> seq(inputs.begin(), inputs.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    BasicTensor<T> h = local.h[l], c = local.c[l];
    for (auto& frame : seq) {
      auto [hn, cn] = cell_step(layers_[l], frame, h, c);
      h = std::move(hn);
      c = std::move(cn);
      frame = h;
    }
    local.h[l] = std::move(h);
    local.c[l] = std::move(c);
  }
  local.frames_since_reset += inputs.size();
  if (state) *state = std::move(local);
  return seq;
}

template <typename T>
BasicTensor<T> TemporalHead<T>::logits(const BasicTensor<T>& h_top) const {
  return affine(h_top, proj_w.value, proj_b.value);
}

template <typename T>
Prediction<T> TemporalHead<T>::predict(const BasicTensor<T>& h_top) const {
  Prediction<T> p;
  p.probs = softmax(logits(h_top));
  p.label = argmax<T>(p.probs.data());
  return p;
}

template <typename T>
std::vector<ParamTensor<T>*> TemporalHead<T>::parameters() {
  std::vector<ParamTensor<T>*> out;
  for (auto& l : layers_) {
    out.push_back(&l.w_input);
    out.push_back(&l.w_recurrent);
    out.push_back(&l.bias);
  }
  out.push_back(&proj_w);
  out.push_back(&proj_b);
  return out;
}

template <typename T>
std::vector<const ParamTensor<T>*> TemporalHead<T>::parameters() const {
  auto mut = const_cast<TemporalHead*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
void TemporalHead<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
void TemporalHead<T>::adam_step(double lr, const AdamConfig& adam) {
  for (auto* p : parameters()) lmdf::adam_step(*p, lr, adam);
}

template <typename T>
std::vector<NamedTensor> TemporalHead<T>::to_named() const {
  std::vector<NamedTensor> out;
  for (const auto* p : parameters()) out.push_back({p->name, p->value.template cast<float>()});
  return out;
}

template <typename T>
void TemporalHead<T>::load_named(std::span<const NamedTensor> tensors) {
  for (auto* p : parameters()) p->reset(find_tensor(tensors, p->name, p->shape()).template cast<T>());
}

// ---------------------------------------------------------------------------

template <typename T>
WindowStats window_backward(TemporalHead<T>& head, LSTMState<T>& state,
                            std::span<const BasicTensor<T>> inputs,
                            std::span<const std::vector<int>> labels,
                            std::vector<BasicTensor<T>>* input_grads) {
  if (inputs.size() != labels.size()) {
    throw ValidationError("window has " + std::to_string(inputs.size()) + " frames but " +
                          std::to_string(labels.size()) + " label rows");
  }
  const std::size_t n = inputs.size(), layers = head.layers().size();
  const std::size_t hid = head.config().hidden_dim, in = head.config().input_dim;
  const std::size_t b = state.h.empty() ? 0 : state.h[0].dim(0);
  for (std::size_t t = 0; t < n; ++t) {
    if (labels[t].size() != b || batch_of(inputs[t], in, "LSTM window input") != b) {
      throw ValidationError("label/input batch mismatch at window frame " + std::to_string(t));
    }
    for (int y : labels[t]) {
      if (y != 0 && y != 1 && y != kUnlabeled) {
        throw ValidationError("frame label must be 0, 1 or unlabelled, got " + std::to_string(y));
      }
    }
  }

  // Forward, time-major, caching every cell.
  std::vector<std::vector<CellCache<T>>> caches(layers, std::vector<CellCache<T>>(n));
  std::vector<BasicTensor<T>> top(n);
  for (std::size_t t = 0; t < n; ++t) {
    const BasicTensor<T>* x = &inputs[t];
    for (std::size_t l = 0; l < layers; ++l) {
      auto [h, c] = cell_step(head.layers()[l], *x, state.h[l], state.c[l], &caches[l][t]);
      state.h[l] = std::move(h);
      state.c[l] = std::move(c);
      x = &state.h[l];
    }
    top[t] = state.h.back();
  }
  state.frames_since_reset += n;

  WindowStats stats;
  for (const auto& row : labels)
    for (int y : row) stats.labelled += y != kUnlabeled;
  if (input_grads) input_grads->assign(n, BasicTensor<T>({b, in}));
  if (stats.labelled == 0) return stats;

  // Projection, softmax and the mean cross-entropy.
  const double scale = 1.0 / double(stats.labelled);
  std::vector<BasicTensor<T>> d_top(n, BasicTensor<T>({b, hid}));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t r = 0; r < b; ++r) {
      const int y = labels[t][r];
      if (y == kUnlabeled) continue;
      BasicTensor<T> h({hid});
      std::copy_n(top[t].data().begin() + static_cast<std::ptrdiff_t>(r * hid), hid, h.data().begin());
      SoftmaxXent<T> x = softmax_xent(head.logits(h), one_hot<T>(static_cast<std::size_t>(y), 2));
      stats.loss += x.loss * scale;
      stats.correct += argmax<T>(x.probs.data()) == static_cast<std::size_t>(y);
      for (auto& g : x.grad_logits.data()) g = static_cast<T>(double(g) * scale);
      BasicTensor<T> dh({hid});
      affine_backward_accumulate(h, head.proj_w.value, x.grad_logits, &dh, head.proj_w.grad,
                                 head.proj_b.grad);
      std::copy(dh.data().begin(), dh.data().end(),
                d_top[t].data().begin() + static_cast<std::ptrdiff_t>(r * hid));
    }
  }

  // Backward through the window, top layer first.
  std::vector<BasicTensor<T>> d_from_above = std::move(d_top);
  for (std::size_t l = layers; l-- > 0;) {
    BasicTensor<T> dh_next({b, hid}), dc_next({b, hid});
    std::vector<BasicTensor<T>> d_below(n);
    for (std::size_t t = n; t-- > 0;) {
      BasicTensor<T> dh = d_from_above[t];
      as_rows(dh, hid) += as_rows(dh_next, hid);
      BasicTensor<T> dh_prev, dc_prev;
      cell_backward(head.layers()[l], caches[l][t], dh, dc_next, &d_below[t], &dh_prev, &dc_prev);
      dh_next = std::move(dh_prev);
      dc_next = std::move(dc_prev);
    }
    d_from_above = std::move(d_below);
  }
  if (input_grads) *input_grads = std::move(d_from_above);
  return stats;
}

template <typename T>
TrainTrace tbptt_train(TemporalHead<T>& head, std::span<const LabelledSequence<T>> sequences,
                       const TBPTTConfig& config,
                       const std::function<void(std::size_t iteration, const TrainTrace& trace)>& after_iteration) {
  if (sequences.empty()) throw ValidationError("no training sequences");
  if (!config.max_memory_steps || !config.batch_sequences) {
    throw ValidationError("window and batch sizes must be positive");
  }
  const std::size_t in = head.config().input_dim;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    if (seq.inputs.rank() != 2 || seq.inputs.dim(1) != in || seq.inputs.dim(0) != seq.labels.size()) {
      throw ValidationError("sequence " + std::to_string(s) + ": inputs " +
                            shape_to_string(seq.inputs.shape()) + " do not match " +
                            std::to_string(seq.labels.size()) + " labels of width " + std::to_string(in));
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const std::size_t b = std::min(config.batch_sequences, sequences.size());

  TrainTrace trace;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<std::size_t> batch;
    for (std::size_t k = 0; k < b; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::size_t longest = 0;
    for (std::size_t s : batch) longest = std::max(longest, sequences[s].length());

    // Shorter sequences are padded with unlabelled zero frames; padding only
    // follows real frames, so it cannot influence them.
    LSTMState<T> state = head.initial_state(b);
    for (std::size_t start = 0; start < longest; start += config.max_memory_steps) {
      const std::size_t len = std::min(config.max_memory_steps, longest - start);
      std::vector<BasicTensor<T>> xs(len, BasicTensor<T>({b, in}));
      std::vector<std::vector<int>> ys(len, std::vector<int>(b, kUnlabeled));
      for (std::size_t r = 0; r < b; ++r) {
        const auto& seq = sequences[batch[r]];
        for (std::size_t t = 0; t < len && start + t < seq.length(); ++t) {
          std::copy_n(seq.inputs.data().begin() + static_cast<std::ptrdiff_t>((start + t) * in), in,
                      xs[t].data().begin() + static_cast<std::ptrdiff_t>(r * in));
          ys[t][r] = seq.labels[start + t];
        }
      }
      head.zero_grad();
      WindowStats st = window_backward<T>(head, state, xs, ys);
      if (st.labelled == 0) continue;
      head.adam_step(config.lr, config.adam);
      trace.loss.push_back(st.loss);
      trace.accuracy.push_back(double(st.correct) / double(st.labelled));
    }
    if (after_iteration) after_iteration(it, trace);
  }
  return trace;
}

template <typename T>
std::vector<Prediction<T>> predict_sequence(const TemporalHead<T>& head, const BasicTensor<T>& inputs) {
  const std::size_t in = head.config().input_dim;
  if (inputs.rank() != 2 || inputs.dim(1) != in) {
    throw ShapeError("sequence inputs must be n x " + std::to_string(in) + ", got " +
                     shape_to_string(inputs.shape()));
  }
  std::vector<Prediction<T>> out;
  LSTMState<T> state = head.initial_state();
  for (std::size_t t = 0; t < inputs.dim(0); ++t) {
    BasicTensor<T> x({in});
    std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(t * in), in, x.data().begin());
    auto [next, h] = head.stack_step(state, x);
    state = std::move(next);
    out.push_back(head.predict(h));
  }
  return out;
}

template <typename T>
double sequence_accuracy(const TemporalHead<T>& head, std::span<const LabelledSequence<T>> sequences) {
  std::size_t correct = 0, total = 0;
  for (const auto& seq : sequences) {
    const auto preds = predict_sequence(head, seq.inputs);
    for (std::size_t t = 0; t < seq.labels.size(); ++t) {
      if (seq.labels[t] == kUnlabeled) continue;
      ++total;
      correct += preds[t].label == static_cast<std::size_t>(seq.labels[t]);
    }
  }
  return total ? double(correct) / double(total) : 0.0;
}

#define LMDF_INSTANTIATE(T)                                                                        \
  template struct LSTMState<T>;                                                                    \
  template class TemporalHead<T>;                                                                  \
  template std::pair<BasicTensor<T>, BasicTensor<T>> cell_step(                                    \
      const LSTMLayer<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
      CellCache<T>*);                                                                              \
  template void cell_backward(LSTMLayer<T>&, const CellCache<T>&, const BasicTensor<T>&,           \
                              const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,             \
                              BasicTensor<T>*);                                                    \
  template WindowStats window_backward(TemporalHead<T>&, LSTMState<T>&,                            \
                                       std::span<const BasicTensor<T>>,                            \
                                       std::span<const std::vector<int>>,                          \
                                       std::vector<BasicTensor<T>>*);                              \
  template TrainTrace tbptt_train(TemporalHead<T>&, std::span<const LabelledSequence<T>>,          \
                                  const TBPTTConfig&,                                              \
                                  const std::function<void(std::size_t, const TrainTrace&)>&);     \
  template std::vector<Prediction<T>> predict_sequence(const TemporalHead<T>&,                     \
                                                       const BasicTensor<T>&);                     \
  template double sequence_accuracy(const TemporalHead<T>&, std::span<const LabelledSequence<T>>);

LMDF_INSTANTIATE(float)
LMDF_INSTANTIATE(double)
#undef LMDF_INSTANTIATE

}  // namespace lmdf
