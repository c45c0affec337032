// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include "lmdf/detect.hpp"
#include "lmdf/experiment.hpp"

using namespace lmdf;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kCheckpoint = 4 };

void log(const std::string& message) { std::cerr << message << '\n'; }

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw DataError("cannot write " + path.string());
}

std::optional<fs::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

std::string manifest_text(const ExperimentConfig& config, const std::string& data_hash) {
  return format_key_values(run_manifest(config.to_map(), config.stage1.seed, data_hash));
}

struct PatchArgs {
  std::string alignment = "aligned";
  double noise = 0.0;
  std::uint64_t seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--alignment", alignment, "Patch alignment: aligned/AS, uniform/US or specific/SS");
    cmd->add_option("--landmark-noise", noise, "Gaussian landmark noise in pixels")->check(CLI::NonNegativeNumber);
    cmd->add_option("--noise-seed", seed, "Seed for landmark noise and uniform sampling");
  }
  PatchOptions options() const { return {parse_alignment(alignment), noise, seed}; }
};

int cmd_synth(const std::string& config_path, const std::string& out) {
  const ExperimentConfig config = load_experiment_config(optional_path(config_path));
  const Corpus corpus = Corpus::from_synthetic(synth_generate(config.synth));
  corpus.save(out);
  log("wrote " + std::to_string(corpus.entries.size()) + " personas and " + std::to_string(corpus.clips.size()) +
      " clips to " + out + " (data hash " + corpus.content_hash() + ")");
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out, bool static_only) {
  const ExperimentConfig config = load_experiment_config(optional_path(config_path));
  const ExperimentData d = make_experiment_data(config, optional_path(data));
  const fs::path dir(out);
  fs::create_directories(dir);
  const std::string manifest = manifest_text(config, d.data_hash);
  write_file(dir / "manifest.txt", manifest);
  std::string split = "# source split\n";
  for (const auto& s : d.train.sources()) split += s + " train\n";
  for (const auto& s : d.test.sources()) split += s + " test\n";
  write_file(dir / "split.txt", split);

  TrainHooks hooks;
  hooks.progress = log;
  hooks.checkpoint = [&](const std::string& stage, std::size_t step, const LMDFModel& model) {
    const fs::path path = dir / "checkpoints" / (stage + "_" + std::to_string(step) + ".lmdf");
    model.save(path);
    write_file(path.string() + ".manifest", manifest);
  };
  const TrainedModel trained = train_lmdf(config, d, !static_only, hooks);
  trained.model.save(dir / "model.lmdf");
  write_file(dir / "stage1_metrics.csv", format_metrics_csv(trained.stage1.metrics, "manifest.txt"));
  if (!static_only) write_file(dir / "stage2_metrics.csv", format_metrics_csv(trained.stage2.metrics, "manifest.txt"));

  const std::pair<const char*, const TrainLog*> stages[] = {{"stage 1", &trained.stage1}, {"stage 2", &trained.stage2}};
  for (const auto& [name, stage] : stages) {
    for (const char* split : {"train", "test"}) {
      const auto it = std::find_if(stage->metrics.rbegin(), stage->metrics.rend(),
                                   [&](const MetricRow& r) { return r.split == split; });
      if (it != stage->metrics.rend()) {
        log(std::string(name) + " final " + split + " accuracy " + format_double(it->accuracy));
      }
    }
  }
  log("model written to " + (dir / "model.lmdf").string());
  return kOk;
}

int cmd_detect(const std::vector<std::string>& models, const std::string& scenario, const std::string& frames_path,
               const std::string& landmarks_path, const std::string& out_path, bool reset_on_gap,
               const PatchArgs& patches) {
  const LMDFModel model = LMDFModel::load(select_checkpoint(models, scenario));
  DetectOptions options;
  options.patches = patches.options();
  options.reset_on_gap = reset_on_gap;
  auto frames = open_frame_source(frames_path);
  LandmarkTrackReader landmarks(landmarks_path);
  if (out_path.empty() || out_path == "-") {
    run_detect(model, *frames, landmarks, std::cout, options);
  } else {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + out_path);
    run_detect(model, *frames, landmarks, out, options);
  }
  return kOk;
}

int cmd_eval(const std::vector<std::string>& models, const std::string& scenario, const std::string& clips,
             const std::string& config_path, const std::string& split, bool static_only, const std::string& out,
             const PatchArgs& patches) {
  const fs::path model_path = select_checkpoint(models, scenario);
  const LMDFModel model = LMDFModel::load(model_path);
  const ExperimentConfig config = load_experiment_config(optional_path(config_path));
  ExperimentData d = split_experiment_data(Corpus::load(clips), config);
  const Corpus& corpus = split == "train" ? d.train : split == "test" ? d.test : d.corpus;
  const EvalReport report = evaluate_model(model, corpus, patches.options(), !static_only);
  KeyValues manifest{{"model", model_path.string()},
                     {"parameters", parameter_checksum(model.to_named())},
                     {"data_hash", d.data_hash},
                     {"split", split},
                     {"predictor", static_only ? "mcnn" : "mcnn+lstm"},
                     {"alignment", patches.alignment},
                     {"landmark_noise", format_double(patches.noise)}};
  const std::string text = format_eval_report(report, manifest);
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  log("accuracy " + format_double(report.overall.accuracy()) + " over " + std::to_string(report.overall.frames) +
      " frames");
  return kOk;
}

int cmd_sweep(const std::string& kind, const std::string& config_path, const std::string& data,
              const std::string& out) {
  const ExperimentConfig config = load_experiment_config(optional_path(config_path));
  const ExperimentData d = make_experiment_data(config, optional_path(data));
  const auto rows = run_sweep(parse_sweep_kind(kind), config, d, log);
  const fs::path manifest_path = fs::path(out).string() + ".manifest";
  write_file(manifest_path, manifest_text(config, d.data_hash));
  write_file(out, format_sweep_csv(rows, manifest_path.filename().string()));
  return kOk;
}

int cmd_profile(const std::vector<std::string>& models, const std::string& scenario, const std::string& frames_path,
                const std::string& landmarks_path, const std::string& csv, const PatchArgs& patches) {
  const fs::path model_path = select_checkpoint(models, scenario);
  const LMDFModel model = LMDFModel::load(model_path);
  auto frames = open_frame_source(frames_path);
  LandmarkTrackReader landmarks(landmarks_path);
  DetectOptions options;
  options.patches = patches.options();
  const ProfileReport report = profile_detect(model, *frames, landmarks, options);
  std::cout << format_profile_table(report);
  if (!csv.empty()) {
    write_file(csv, format_profile_csv(report, model_path.string() + " " + parameter_checksum(model.to_named())));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Driver drowsiness detection with multi-granularity CNN features and a stacked LSTM"};
  app.require_subcommand(1);

  std::string config, data, out, kind, scenario = "day", frames, landmarks, clips, split = "all";
  std::vector<std::string> models;
  bool static_only = false, reset_on_gap = false;
  PatchArgs patches;

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus directory");
  synth->add_option("--config", config, "key=value experiment config")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train both stages and write the model, metrics and manifest");
  train->add_option("--config", config, "key=value experiment config")->check(CLI::ExistingFile);
  train->add_option("--data", data, "Corpus directory (default: synthetic corpus from the config)")
      ->check(CLI::ExistingDirectory);
  train->add_option("--out", out, "Output directory")->required();
  train->add_flag("--static-only", static_only, "Stop after the MCNN stage");

  auto add_models = [&](CLI::App* cmd) {
    cmd->add_option("--model", models, "Checkpoint, or scenario=checkpoint (repeatable)")->required();
    cmd->add_option("--scenario", scenario, "Scenario used to pick among --model choices");
  };

  auto* detect = app.add_subcommand("detect", "Stream per-frame drowsiness predictions");
  add_models(detect);
  detect->add_option("--frames", frames, "Raw frame stream or directory of PNM images")->required()->check(
      CLI::ExistingPath);
  detect->add_option("--landmarks", landmarks, "Landmark track file")->required()->check(CLI::ExistingFile);
  detect->add_option("--out", out, "Output file (default: stdout)");
  detect->add_flag("--state-reset-on-gap", reset_on_gap, "Reset the LSTM state when frame indices skip");
  patches.add(detect);

  auto* eval = app.add_subcommand("eval", "Frame-level accuracy on labelled clips");
  add_models(eval);
  eval->add_option("--clips", clips, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--config", config, "Config whose persona split selects --split")->check(CLI::ExistingFile);
  eval->add_option("--split", split, "Personas to score")->check(CLI::IsMember({"all", "train", "test"}));
  eval->add_flag("--static", static_only, "Score the MCNN head alone");
  eval->add_option("--out", out, "Report file (default: stdout)");
  patches.add(eval);

  auto* sweep = app.add_subcommand("sweep", "Static-accuracy sweep over one experimental factor");
  sweep->add_option("--kind", kind, "noise, granularity, dimension or sampling")
      ->required()
      ->check(CLI::IsMember({"noise", "granularity", "dimension", "sampling"}));
  sweep->add_option("--config", config, "key=value experiment config")->check(CLI::ExistingFile);
  sweep->add_option("--data", data, "Corpus directory (default: synthetic corpus from the config)")
      ->check(CLI::ExistingDirectory);
  sweep->add_option("--out", out, "CSV output")->required();

  auto* profile = app.add_subcommand("profile", "Per-module timing of the detection loop");
  add_models(profile);
  profile->add_option("--frames", frames, "Raw frame stream or directory of PNM images")->required()->check(
      CLI::ExistingPath);
  profile->add_option("--landmarks", landmarks, "Landmark track file")->required()->check(CLI::ExistingFile);
  profile->add_option("--csv", out, "Also write the timings as CSV");
  patches.add(profile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(config, out);
    if (*train) return cmd_train(config, data, out, static_only);
    if (*detect) return cmd_detect(models, scenario, frames, landmarks, out, reset_on_gap, patches);
    if (*eval) return cmd_eval(models, scenario, clips, config, split, static_only, out, patches);
    if (*sweep) return cmd_sweep(kind, config, data, out);
    if (*profile) return cmd_profile(models, scenario, frames, landmarks, out, patches);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
