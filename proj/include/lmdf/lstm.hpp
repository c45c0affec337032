// SPDX-License-Identifier: Apache-2.0
//
// Stacked LSTM temporal head with a two-class projection. Vanilla cell with a
// forget gate and no peepholes; the four gates are stacked in the order
// input, forget, output, candidate (rows [0,H), [H,2H), [2H,3H), [3H,4H)).
//
// Batched tensors are B x dim, one row per sequence. Rank-1 tensors are a
// batch of one.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmdf/checkpoint.hpp"
#include "lmdf/ops.hpp"
#include "lmdf/tensor.hpp"

namespace lmdf {

struct LSTMConfig {
  std::size_t input_dim = 256;
  std::size_t hidden_dim = 256;
  std::size_t layers = 3;
  std::size_t max_memory_steps = 60;
  double forget_bias = 1.0;
  std::uint64_t seed = 1;

  std::size_t parameter_count() const;
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static LSTMConfig from_map(const std::map<std::string, std::string>& kv);
};

template <typename T>
struct LSTMLayer {
  ParamTensor<T> w_input;      // 4H x In
  ParamTensor<T> w_recurrent;  // 4H x H
  ParamTensor<T> bias;         // 4H

  std::size_t input_dim() const { return w_input.value.dim(1); }
  std::size_t hidden_dim() const { return w_recurrent.value.dim(1); }
};

template <typename T>
struct LSTMState {
  std::vector<BasicTensor<T>> h;
  std::vector<BasicTensor<T>> c;
  std::uint64_t frames_since_reset = 0;

  static LSTMState zeros(std::size_t layers, std::size_t hidden, std::size_t batch = 1);
  void reset();
  friend bool operator==(const LSTMState&, const LSTMState&) = default;
};

/// Everything one cell update needs for its backward pass.
template <typename T>
struct CellCache {
  BasicTensor<T> x, h_prev, c_prev;
  BasicTensor<T> i, f, o, g;  // post-nonlinearity gate values
  BasicTensor<T> c, tanh_c;
};

/// h = o * tanh(c), c = f * c_prev + i * g.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> cell_step(const LSTMLayer<T>& layer, const BasicTensor<T>& x,
                                                    const BasicTensor<T>& h_prev,
                                                    const BasicTensor<T>& c_prev,
                                                    CellCache<T>* cache = nullptr);

/// Backward through one cell update. `dh` and `dc` are the gradients arriving
/// at h and c; parameter gradients are accumulated into `layer`. Outputs the
/// gradients for x, h_prev and c_prev (any may be null).
template <typename T>
void cell_backward(LSTMLayer<T>& layer, const CellCache<T>& cache, const BasicTensor<T>& dh,
                   const BasicTensor<T>& dc, BasicTensor<T>* dx, BasicTensor<T>* dh_prev,
                   BasicTensor<T>* dc_prev);

template <typename T>
struct Prediction {
  BasicTensor<T> probs;
  std::size_t label = 0;
};

template <typename T>
class TemporalHead {
 public:
  explicit TemporalHead(const LSTMConfig& config);

  const LSTMConfig& config() const noexcept { return config_; }
  LSTMState<T> initial_state(std::size_t batch = 1) const;

  /// Layer 1 consumes x, layer l consumes h_{l-1}. Returns the new state and
  /// the top-layer hidden vector.
  std::pair<LSTMState<T>, BasicTensor<T>> stack_step(const LSTMState<T>& state,
                                                     const BasicTensor<T>& x) const;

  /// Whole-sequence evaluation, one layer at a time over all frames. Starts
  /// from `state` (fresh when null) and leaves the final state there.
  std::vector<BasicTensor<T>> forward_sequence(std::span<const BasicTensor<T>> inputs,
                                               LSTMState<T>* state = nullptr) const;

  BasicTensor<T> logits(const BasicTensor<T>& h_top) const;
  /// Softmax over the projection; ties go to class 0.
  Prediction<T> predict(const BasicTensor<T>& h_top) const;

  std::vector<LSTMLayer<T>>& layers() noexcept { return layers_; }
  const std::vector<LSTMLayer<T>>& layers() const noexcept { return layers_; }

  std::vector<ParamTensor<T>*> parameters();
  std::vector<const ParamTensor<T>*> parameters() const;
  void zero_grad();
  void adam_step(double lr, const AdamConfig& adam = {});
  std::vector<NamedTensor> to_named() const;
  void load_named(std::span<const NamedTensor> tensors);

  ParamTensor<T> proj_w;  // 2 x H
  ParamTensor<T> proj_b;  // 2

 private:
  LSTMConfig config_;
  std::vector<LSTMLayer<T>> layers_;
};

inline constexpr int kUnlabeled = -1;

/// Loss statistics of one truncated window.
struct WindowStats {
  double loss = 0.0;  // mean cross-entropy over labelled frames
  std::size_t labelled = 0;
  std::size_t correct = 0;
};

/// Forward and backward over one window for a batch. `inputs[t]` is B x In,
/// `labels[t][b]` is 0, 1 or kUnlabeled. `state` is the detached carry-in and
/// receives the carry-out. Parameter gradients of the mean loss are added to
/// the head; `input_grads`, when given, receives d loss / d inputs[t].
template <typename T>
WindowStats window_backward(TemporalHead<T>& head, LSTMState<T>& state,
                            std::span<const BasicTensor<T>> inputs,
                            std::span<const std::vector<int>> labels,
                            std::vector<BasicTensor<T>>* input_grads = nullptr);

/// One labelled sequence: n x In inputs and n per-frame labels.
template <typename T>
struct LabelledSequence {
  BasicTensor<T> inputs;
  std::vector<int> labels;
  std::size_t length() const { return labels.size(); }
};

struct TBPTTConfig {
  double lr = 3e-4;
  std::size_t max_memory_steps = 60;
  std::size_t batch_sequences = 16;
  std::size_t iterations = 100;
  std::uint64_t seed = 1;
  AdamConfig adam;
};

struct TrainTrace {
  /// One entry per optimiser step.
  std::vector<double> loss;
  std::vector<double> accuracy;
};

/// Truncated BPTT: each iteration draws a batch of sequences, runs them from a
/// fresh state window by window and takes one Adam step per window that holds
/// labelled frames. State is carried, detached, between windows of a sequence.
template <typename T>
TrainTrace tbptt_train(TemporalHead<T>& head, std::span<const LabelledSequence<T>> sequences,
                       const TBPTTConfig& config,
                       const std::function<void(std::size_t iteration, const TrainTrace& trace)>& after_iteration = {});

/// Streaming per-frame predictions from a fresh state.
template <typename T>
std::vector<Prediction<T>> predict_sequence(const TemporalHead<T>& head, const BasicTensor<T>& inputs);

/// Fraction of labelled frames predicted correctly by streaming evaluation.
template <typename T>
double sequence_accuracy(const TemporalHead<T>& head, std::span<const LabelledSequence<T>> sequences);

extern template class TemporalHead<float>;
extern template class TemporalHead<double>;

}  // namespace lmdf
