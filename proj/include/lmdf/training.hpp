// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training: the MCNN with its classification head on a static image
// set, then the temporal head on frozen per-frame representations.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lmdf/config.hpp"
#include "lmdf/corpus.hpp"
#include "lmdf/lstm.hpp"
#include "lmdf/model.hpp"

namespace lmdf {

struct FrameRef {
  std::size_t entry = 0;
  std::size_t frame = 0;
  int label = 0;
};

/// Every `interval`-th core frame of every clip.
std::vector<FrameRef> static_frame_refs(const Corpus& corpus, std::size_t interval);

using PatchSource = std::function<std::vector<Tensor>(const FrameRef&)>;

/// Extracts patches on demand; the corpus must outlive the returned function.
PatchSource corpus_patch_source(const Corpus& corpus, const MCNNConfig& mcnn, const PatchOptions& options);

struct MetricRow {
  std::size_t step = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct TrainLog {
  std::vector<MetricRow> metrics;
  std::vector<double> step_loss;  // one entry per optimiser step
};

/// CSV with columns step,split,loss,accuracy after a `# manifest: ...` line.
std::string format_metrics_csv(std::span<const MetricRow> rows, const std::string& manifest);

struct MCNNTrainConfig {
  double lr = 1e-4;
  std::size_t steps = 2000;
  std::size_t batch = 16;
  std::size_t eval_every = 0;        // 0: once per epoch over the training set
  std::size_t checkpoint_every = 0;  // 0: no intermediate checkpoints
  bool balanced = false;             // draw both classes equally often
  std::uint64_t seed = 1;
  AdamConfig adam;

  void validate() const;
  KeyValues to_map() const;
  static MCNNTrainConfig from_map(const KeyValues& kv);
};

struct StaticEval {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predicted;
};

StaticEval evaluate_static(const MCNN<float>& model, const PatchSource& patches, std::span<const FrameRef> refs);

/// Frame references together with the source of their patches.
struct StaticSet {
  PatchSource patches;
  std::vector<FrameRef> refs;
};

/// Throws ValidationError unless the training set holds both classes. Test
/// rows are skipped when `test.refs` is empty.
TrainLog train_mcnn(MCNN<float>& model, const StaticSet& train, const StaticSet& test,
                    const MCNNTrainConfig& config, const std::function<void(std::size_t step)>& on_checkpoint = {});

// ---------------------------------------------------------------------------

/// One {frames, representation_dim} tensor per corpus entry.
std::vector<Tensor> extract_representations(const MCNN<float>& model, const Corpus& corpus,
                                            const PatchOptions& options);
void save_representations(const std::filesystem::path& path, const Corpus& corpus,
                          std::span<const Tensor> representations);
std::vector<Tensor> load_representations(const std::filesystem::path& path, const Corpus& corpus,
                                         std::size_t dim);

/// Clip sequences over cached representations. Padding frames are context:
/// labelled normal when `label_padding`, unlabelled otherwise.
std::vector<LabelledSequence<float>> clip_sequences(const Corpus& corpus, std::span<const Tensor> representations,
                                                    bool label_padding);

struct TemporalTrainConfig {
  double lr = 3e-4;
  std::size_t max_memory_steps = 60;
  std::size_t batch_sequences = 16;
  std::size_t iterations = 200;
  std::size_t eval_every = 0;  // iterations between evaluations; 0: only at the end
  bool joint = false;          // also fine-tune the MCNN through the representation
  std::uint64_t seed = 1;
  AdamConfig adam;

  void validate() const;
  KeyValues to_map() const;
  static TemporalTrainConfig from_map(const KeyValues& kv);
};

/// Trains the temporal head on fixed sequences. Test rows score the
/// labelled frames of `test` with a fresh state per sequence.
TrainLog train_temporal(TemporalHead<float>& head, std::span<const LabelledSequence<float>> train,
                        std::span<const LabelledSequence<float>> test, const TemporalTrainConfig& config);

/// Stage 2 on a corpus. With `config.joint` the MCNN is updated through the
/// representation as well; otherwise it is left untouched and `cached` (one
/// tensor per entry of `train`) may supply precomputed representations.
TrainLog train_stage2(LMDFModel& model, const Corpus& train, const Corpus& test, const TemporalTrainConfig& config,
                      const PatchOptions& options, std::span<const Tensor> cached = {});

// ---------------------------------------------------------------------------

struct FramePredictions {
  std::vector<int> truth;
  std::vector<int> predicted;
  std::vector<double> p_drowsy;
  std::vector<std::string> scenario;
};

/// Core-frame predictions of every clip. Temporal predictions restart from a
/// fresh state at each clip start and use the padding frames as context;
/// static predictions apply the MCNN head to each frame on its own.
FramePredictions predict_clips(const LMDFModel& model, const Corpus& corpus, std::span<const Tensor> representations,
                               bool temporal);

/// Config + seed + data hash, written next to every checkpoint.
KeyValues run_manifest(const KeyValues& config, std::uint64_t seed, const std::string& data_hash);

}  // namespace lmdf
