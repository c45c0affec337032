// SPDX-License-Identifier: Apache-2.0
#include "lmdf/experiment.hpp"

#include <cstdlib>
#include <json.hpp>
#include <sstream>

namespace lmdf {
namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string s;
  for (const auto& v : items) s += (s.empty() ? "" : ",") + fmt(v);
  return s;
}

template <typename T, typename F>
std::vector<T> parse_list(const KeyValues& kv, const std::string& key, F&& parse) {
  std::vector<T> out;
  for (const auto& item : split_list(kv.at(key))) {
    try {
      out.push_back(parse(item));
    } catch (const std::logic_error&) {
      throw ValidationError("bad entry '" + item + "' in " + key);
    }
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.stage1.lr = 1e-3;
  c.stage1.steps = 1000;
  c.stage1.batch = 16;
  c.stage2.lr = 3e-3;
  c.stage2.iterations = 100;
  c.stage2.batch_sequences = 16;
  c.stage2.eval_every = 25;
  c.stage2.max_memory_steps = c.model.lstm.max_memory_steps;
  c.set_seed(1);
  return c;
}

void ExperimentConfig::set_seed(std::uint64_t seed) {
  synth.seed = seed;
  model.mcnn.seed = seed;
  model.lstm.seed = seed;
  stage1.seed = seed;
  stage2.seed = seed;
  patches.seed = seed;
  split_seed = seed;
}

void ExperimentConfig::validate() const {
  synth.validate();
  model.validate();
  stage1.validate();
  stage2.validate();
  if (stage2.max_memory_steps != model.lstm.max_memory_steps) {
    throw ValidationError("the LSTM and stage-2 memory windows differ");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");
  if (static_interval == 0) throw ValidationError("static_interval must be positive");
  if (!(patches.landmark_noise >= 0.0)) throw ValidationError("landmark_noise must be non-negative");
  for (double s : noise_grid) {
    if (!(s >= 0.0)) throw ValidationError("noise_grid entries must be non-negative");
  }
  for (const auto& g : granularity_grid) PathMask::parse(g, model.mcnn.path_count);
  for (std::size_t d : dimension_grid) {
    if (d == 0) throw ValidationError("dimension_grid entries must be positive");
  }
  for (const auto& s : sampling_grid) parse_alignment(s);
}

KeyValues ExperimentConfig::to_map() const {
  KeyValues kv = synth.to_map();
  for (const auto& part : {model.to_map(), stage1.to_map(), stage2.to_map()}) {
    for (const auto& [k, v] : part) kv[k] = v;
  }
  kv["alignment"] = std::string(to_string(patches.alignment));
  kv["landmark_noise"] = format_double(patches.landmark_noise);
  kv["patch_seed"] = std::to_string(patches.seed);
  kv["test_fraction"] = format_double(test_fraction);
  kv["static_interval"] = std::to_string(static_interval);
  kv["split_seed"] = std::to_string(split_seed);
  kv["noise_grid"] = join(noise_grid, format_double);
  kv["granularity_grid"] = join(granularity_grid, [](const std::string& s) { return s; });
  kv["dimension_grid"] = join(dimension_grid, [](std::size_t d) { return std::to_string(d); });
  kv["sampling_grid"] = join(sampling_grid, [](const std::string& s) { return s; });
  return kv;
}

ExperimentConfig ExperimentConfig::from_map(const KeyValues& kv) {
  ExperimentConfig c = desk();
  if (kv.count("seed")) c.set_seed(get_u64(kv, "seed", 1));
  KeyValues merged = c.to_map();
  for (const auto& [k, v] : kv) {
    if (k == "seed") continue;
    if (!merged.count(k)) throw ValidationError("unknown config key '" + k + "'");
    merged[k] = v;
  }
  if (kv.count("representation_dim") && !kv.count("lstm_input_dim")) {
    merged["lstm_input_dim"] = merged["representation_dim"];
  }
  c.synth = SyntheticConfig::from_map(merged);
  c.model = ModelConfig::from_map(merged);
  c.stage1 = MCNNTrainConfig::from_map(merged);
  c.stage2 = TemporalTrainConfig::from_map(merged);
  c.patches.alignment = parse_alignment(merged.at("alignment"));
  c.patches.landmark_noise = get_double(merged, "landmark_noise", 0.0);
  c.patches.seed = get_u64(merged, "patch_seed", 0);
  c.test_fraction = get_double(merged, "test_fraction", c.test_fraction);
  c.static_interval = get_u64(merged, "static_interval", c.static_interval);
  c.split_seed = get_u64(merged, "split_seed", c.split_seed);
  c.noise_grid = parse_list<double>(merged, "noise_grid", [](const std::string& s) { return std::stod(s); });
  c.granularity_grid = split_list(merged.at("granularity_grid"));
  c.dimension_grid =
      parse_list<std::size_t>(merged, "dimension_grid", [](const std::string& s) { return std::stoul(s); });
  c.sampling_grid = split_list(merged.at("sampling_grid"));
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& path) {
  ExperimentConfig c = path ? ExperimentConfig::from_map(load_key_values(*path)) : ExperimentConfig::desk();
  if (const char* env = std::getenv("LMDF_SEED"); env && *env) {
    c.set_seed(get_u64({{"LMDF_SEED", env}}, "LMDF_SEED", 0));
  }
  return c;
}

ExperimentData split_experiment_data(Corpus corpus, const ExperimentConfig& config) {
  ExperimentData d;
  const PersonaSplit split = split_personas(corpus.sources(), config.test_fraction, config.split_seed);
  d.train = corpus.subset(split.train);
  d.test = corpus.subset(split.test);
  d.data_hash = corpus.content_hash();
  d.corpus = std::move(corpus);
  return d;
}

ExperimentData make_experiment_data(const ExperimentConfig& config, const std::optional<std::filesystem::path>& dir) {
  Corpus corpus = dir ? Corpus::load(*dir) : Corpus::from_synthetic(synth_generate(config.synth));
  return split_experiment_data(std::move(corpus), config);
}

TrainedModel train_lmdf(const ExperimentConfig& config, const ExperimentData& data, bool temporal,
                        const TrainHooks& hooks) {
  config.validate();
  TrainedModel out{LMDFModel(config.model), {}, {}};
  const MCNNConfig& mc = out.model.config.mcnn;
  const StaticSet train{corpus_patch_source(data.train, mc, config.patches),
                        static_frame_refs(data.train, config.static_interval)};
  const StaticSet test{corpus_patch_source(data.test, mc, config.patches),
                       static_frame_refs(data.test, config.static_interval)};
  if (hooks.progress) {
    hooks.progress("stage 1: " + std::to_string(train.refs.size()) + " training frames, " +
                   std::to_string(test.refs.size()) + " test frames");
  }
  out.stage1 = train_mcnn(out.model.mcnn, train, test, config.stage1, [&](std::size_t step) {
    if (hooks.checkpoint) hooks.checkpoint("mcnn", step, out.model);
  });
  if (temporal) {
    if (hooks.progress) hooks.progress("stage 2: " + std::to_string(data.train.clips.size()) + " training clips");
    out.stage2 = train_stage2(out.model, data.train, data.test, config.stage2, config.patches);
  }
  return out;
}

// ---------------------------------------------------------------------------

EvalReport evaluate_predictions(const FramePredictions& p) {
  const std::size_t n = p.truth.size();
  if (p.predicted.size() != n || p.scenario.size() != n || (!p.p_drowsy.empty() && p.p_drowsy.size() != n)) {
    throw ValidationError("predictions and labels differ in length");
  }
  EvalReport r;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = p.truth[i], y = p.predicted[i];
    if ((t != 0 && t != 1) || (y != 0 && y != 1)) {
      throw ValidationError("label outside {0, 1} at frame " + std::to_string(i));
    }
    ++r.confusion[t][y];
    ScenarioScore& s = r.per_scenario[p.scenario[i]];
    ++s.frames;
    ++r.overall.frames;
    if (t == y) {
      ++s.correct;
      ++r.overall.correct;
    }
  }
  return r;
}

std::string format_eval_report(const EvalReport& r, const KeyValues& manifest) {
  nlohmann::ordered_json j;
  j["manifest"] = manifest;
  j["frames"] = r.overall.frames;
  j["correct"] = r.overall.correct;
  j["accuracy"] = r.overall.accuracy();
  j["confusion"] = {{"truth_normal", {{"normal", r.confusion[0][0]}, {"drowsy", r.confusion[0][1]}}},
                    {"truth_drowsy", {{"normal", r.confusion[1][0]}, {"drowsy", r.confusion[1][1]}}}};
  auto& per = j["per_scenario"] = nlohmann::ordered_json::object();
  for (const auto& [name, s] : r.per_scenario) {
    per[name] = {{"frames", s.frames}, {"correct", s.correct}, {"accuracy", s.accuracy()}};
  }
  return j.dump(2) + '\n';
}

EvalReport evaluate_model(const LMDFModel& model, const Corpus& corpus, const PatchOptions& options, bool temporal) {
  const auto reps = extract_representations(model.mcnn, corpus, options);
  return evaluate_predictions(predict_clips(model, corpus, reps, temporal));
}

// ---------------------------------------------------------------------------

SweepKind parse_sweep_kind(std::string_view text) {
  if (text == "noise") return SweepKind::noise;
  if (text == "granularity") return SweepKind::granularity;
  if (text == "dimension") return SweepKind::dimension;
  if (text == "sampling") return SweepKind::sampling;
  throw ValidationError("unknown sweep kind '" + std::string(text) + "'");
}

std::string_view to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::noise:
      return "noise";
    case SweepKind::granularity:
      return "granularity";
    case SweepKind::dimension:
      return "dimension";
    case SweepKind::sampling:
      return "sampling";
  }
  return "?";
}

std::vector<SweepRow> run_sweep(SweepKind kind, const ExperimentConfig& config, const ExperimentData& data,
                                const std::function<void(const std::string&)>& progress) {
  config.validate();
  const auto test_refs = static_frame_refs(data.test, config.static_interval);
  auto static_accuracy = [&](const LMDFModel& model, const PatchOptions& options) {
    return evaluate_static(model.mcnn, corpus_patch_source(data.test, model.config.mcnn, options), test_refs).accuracy;
  };
  auto row = [&](std::string condition, double accuracy, const ExperimentConfig& c) {
    if (progress) progress(std::string(to_string(kind)) + " " + condition + ": " + format_double(accuracy));
    return SweepRow{std::move(condition), accuracy, c.stage1.steps, c.stage1.seed};
  };

  std::vector<SweepRow> rows;
  if (kind == SweepKind::noise) {
    const TrainedModel trained = train_lmdf(config, data, false);
    for (double sigma : config.noise_grid) {
      PatchOptions options = config.patches;
      options.landmark_noise = sigma;
      rows.push_back(row(format_double(sigma), static_accuracy(trained.model, options), config));
    }
    return rows;
  }

  auto conditions = kind == SweepKind::granularity ? config.granularity_grid
                    : kind == SweepKind::sampling  ? config.sampling_grid
                                                   : std::vector<std::string>{};
  if (kind == SweepKind::dimension) {
    for (std::size_t d : config.dimension_grid) conditions.push_back(std::to_string(d));
  }
  for (const auto& condition : conditions) {
    ExperimentConfig c = config;
    switch (kind) {
      case SweepKind::granularity:
        c.model.mcnn.mask = PathMask::parse(condition, c.model.mcnn.path_count);
        break;
      case SweepKind::dimension:
        c.model.mcnn.representation_dim = c.model.lstm.input_dim = std::stoul(condition);
        break;
      case SweepKind::sampling:
        c.patches.alignment = parse_alignment(condition);
        break;
      case SweepKind::noise:
        break;
    }
    const TrainedModel trained = train_lmdf(c, data, false);
    rows.push_back(row(condition, static_accuracy(trained.model, c.patches), c));
  }
  return rows;
}

std::string format_sweep_csv(std::span<const SweepRow> rows, const std::string& manifest) {
  std::string s = "# manifest: " + manifest + "\ncondition,accuracy,steps,seed\n";
  for (const auto& r : rows) {
    s += r.condition + ',' + format_double(r.accuracy) + ',' + std::to_string(r.steps) + ',' + std::to_string(r.seed) +
         '\n';
  }
  return s;
}

}  // namespace lmdf
