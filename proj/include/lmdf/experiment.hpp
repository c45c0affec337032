// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs on a corpus: persona split, both training stages, frame-level
// evaluation reports and the parameter sweeps.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmdf/synth.hpp"
#include "lmdf/training.hpp"

namespace lmdf {

struct ExperimentConfig {
  SyntheticConfig synth;
  ModelConfig model = ModelConfig::desk();
  MCNNTrainConfig stage1;
  TemporalTrainConfig stage2;
  PatchOptions patches;  // used for training and, unless overridden, evaluation
  double test_fraction = 0.25;
  std::size_t static_interval = 3;
  std::uint64_t split_seed = 1;
  std::vector<double> noise_grid{0.0, 2.0, 5.0, 10.0};
  std::vector<std::string> granularity_grid{"global", "parts", "locals", "all"};
  std::vector<std::size_t> dimension_grid{16, 32, 64, 128};
  std::vector<std::string> sampling_grid{"US", "SS", "AS"};

  /// Settings sized for one CPU core: a few minutes for both stages.
  static ExperimentConfig desk();
  /// Derives every component seed from one value.
  void set_seed(std::uint64_t seed);
  void validate() const;
  KeyValues to_map() const;
  /// Keys absent from `kv` keep their desk() values; a `seed` key is applied
  /// through set_seed before explicit per-component seeds.
  static ExperimentConfig from_map(const KeyValues& kv);
};

/// desk() or the file at `path`, then LMDF_SEED from the environment if set.
ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& path);

struct ExperimentData {
  Corpus corpus;
  Corpus train;
  Corpus test;
  std::string data_hash;
};

/// Splits `corpus` by persona with the configured fraction and seed.
ExperimentData split_experiment_data(Corpus corpus, const ExperimentConfig& config);
/// The corpus at `dir`, or a synthetic one from `config.synth` when empty.
ExperimentData make_experiment_data(const ExperimentConfig& config, const std::optional<std::filesystem::path>& dir);

struct TrainedModel {
  LMDFModel model;
  TrainLog stage1;
  TrainLog stage2;
};

struct TrainHooks {
  std::function<void(const std::string& stage, std::size_t step, const LMDFModel& model)> checkpoint;
  std::function<void(const std::string& message)> progress;
};

/// Stage 1 on the static set of `data.train`, then (unless `temporal` is
/// false) stage 2 on its clips. Test rows use `data.test`.
TrainedModel train_lmdf(const ExperimentConfig& config, const ExperimentData& data, bool temporal = true,
                        const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------

struct ScenarioScore {
  std::size_t frames = 0;
  std::size_t correct = 0;
  double accuracy() const noexcept { return frames ? double(correct) / double(frames) : 0.0; }
};

struct EvalReport {
  ScenarioScore overall;
  std::map<std::string, ScenarioScore> per_scenario;
  std::array<std::array<std::size_t, 2>, 2> confusion{};  // [truth][predicted]
};

/// Throws ValidationError when the vectors disagree in length or hold labels
/// other than 0 and 1.
EvalReport evaluate_predictions(const FramePredictions& predictions);
/// JSON text with the overall and per-scenario scores and the confusion matrix.
std::string format_eval_report(const EvalReport& report, const KeyValues& manifest);

/// Frame-level report over the core frames of every clip of `corpus`.
EvalReport evaluate_model(const LMDFModel& model, const Corpus& corpus, const PatchOptions& options, bool temporal);

// ---------------------------------------------------------------------------

enum class SweepKind { noise, granularity, dimension, sampling };

SweepKind parse_sweep_kind(std::string_view text);
std::string_view to_string(SweepKind kind);

struct SweepRow {
  std::string condition;
  double accuracy = 0.0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

/// Static accuracy on the test split per condition. The noise sweep trains
/// once and perturbs test landmarks only; the others train one model each.
std::vector<SweepRow> run_sweep(SweepKind kind, const ExperimentConfig& config, const ExperimentData& data,
                                const std::function<void(const std::string&)>& progress = {});
/// CSV with columns condition,accuracy,steps,seed after a `# manifest: ...` line.
std::string format_sweep_csv(std::span<const SweepRow> rows, const std::string& manifest);

}  // namespace lmdf
