// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <random>

#include "lmdf/training.hpp"

using namespace lmdf;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lmdf_training_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Corpus small_corpus(std::size_t personas = 3, std::size_t frames = 300) {
  SyntheticConfig c;
  c.personas = personas;
  c.frames_per_persona = frames;
  c.seed = 11;
  return Corpus::from_synthetic(synth_generate(c));
}

std::vector<FrameRef> pick(const std::vector<FrameRef>& refs, int label, std::size_t n) {
  std::vector<FrameRef> out;
  for (const auto& r : refs) {
    if (r.label == label && out.size() < n) out.push_back(r);
  }
  return out;
}

MCNNTrainConfig quick_config(std::size_t steps) {
  MCNNTrainConfig c;
  c.lr = 1e-3;
  c.steps = steps;
  c.batch = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("stage one overfits twenty images") {
  const Corpus corpus = small_corpus();
  LMDFModel model(ModelConfig::desk());
  const auto all = static_frame_refs(corpus, 1);
  auto train = pick(all, 0, 10);
  for (const auto& r : pick(all, 1, 10)) train.push_back(r);
  REQUIRE(train.size() == 20);
  const StaticSet set{corpus_patch_source(corpus, model.config.mcnn, {}), train};
  const TrainLog log = train_mcnn(model.mcnn, set, {}, quick_config(300));
  CHECK(log.step_loss.size() == 300);
  CHECK(evaluate_static(model.mcnn, set.patches, set.refs).accuracy == 1.0);
}

TEST_CASE("stage one is seed-deterministic") {
  const Corpus corpus = small_corpus();
  const auto refs = static_frame_refs(corpus, 5);
  auto run = [&] {
    LMDFModel model(ModelConfig::desk());
    const StaticSet set{corpus_patch_source(corpus, model.config.mcnn, {}), refs};
    MCNNTrainConfig c = quick_config(12);
    c.eval_every = 4;
    const TrainLog log = train_mcnn(model.mcnn, set, set, c);
    return std::pair{log, parameter_checksum(model.to_named())};
  };
  const auto a = run(), b = run();
  CHECK(a.first.step_loss == b.first.step_loss);
  CHECK(a.first.metrics == b.first.metrics);
  CHECK(a.first.metrics.size() == 6);
  CHECK(a.second == b.second);
}

TEST_CASE("random labels stay at chance on held-out frames") {
  const Corpus corpus = small_corpus(4, 600);
  const Corpus train_c = corpus.subset({"persona00", "persona01", "persona02"});
  const Corpus test_c = corpus.subset({"persona03"});
  std::mt19937_64 rng(3);
  auto shuffle_labels = [&](std::vector<FrameRef> refs) {
    for (std::size_t i = 0; i < refs.size(); ++i) refs[i].label = static_cast<int>(i % 2);
    std::vector<int> labels;
    for (const auto& r : refs) labels.push_back(r.label);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < refs.size(); ++i) refs[i].label = labels[i];
    return refs;
  };
  LMDFModel model(ModelConfig::desk());
  const StaticSet train{corpus_patch_source(train_c, model.config.mcnn, {}),
                        shuffle_labels(static_frame_refs(train_c, 3))};
  const StaticSet test{corpus_patch_source(test_c, model.config.mcnn, {}), shuffle_labels(static_frame_refs(test_c, 1))};
  REQUIRE(test.refs.size() >= 500);
  MCNNTrainConfig c = quick_config(150);
  c.batch = 8;
  train_mcnn(model.mcnn, train, {}, c);
  const double acc = evaluate_static(model.mcnn, test.patches, test.refs).accuracy;
  CHECK(acc >= 0.45);
  CHECK(acc <= 0.55);
}

TEST_CASE("stage one rejects a missing class") {
  const Corpus corpus = small_corpus();
  LMDFModel model(ModelConfig::desk());
  const StaticSet set{corpus_patch_source(corpus, model.config.mcnn, {}), pick(static_frame_refs(corpus, 1), 0, 8)};
  CHECK_THROWS_AS(train_mcnn(model.mcnn, set, {}, quick_config(2)), ValidationError);
  CHECK_THROWS_AS(train_mcnn(model.mcnn, StaticSet{set.patches, {}}, {}, quick_config(2)), ValidationError);
  MCNNTrainConfig bad = quick_config(2);
  bad.lr = 0.0;
  CHECK_THROWS_AS(train_mcnn(model.mcnn, set, {}, bad), ValidationError);
}

TEST_CASE("representations: one row per frame, cached equals fresh") {
  const Corpus corpus = small_corpus(2, 90);
  const LMDFModel model(ModelConfig::desk());
  const auto reps = extract_representations(model.mcnn, corpus, {});
  REQUIRE(reps.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(reps[i].shape() == Shape{corpus.entries[i].length(), 64});
  }

  const auto path = scratch_dir("reps") / "reps.lmdf";
  save_representations(path, corpus, reps);
  const auto loaded = load_representations(path, corpus, 64);
  for (std::size_t i = 0; i < 2; ++i) CHECK(loaded[i] == reps[i]);
  CHECK(extract_representations(model.mcnn, corpus, {})[1] == reps[1]);
  CHECK_THROWS_AS(load_representations(path, corpus, 32), CheckpointError);

  const auto seqs = clip_sequences(corpus, reps, false);
  REQUIRE(seqs.size() == corpus.clips.size());
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    const auto& clip = corpus.clips[k];
    CHECK(seqs[k].length() == clip.end - clip.start);
    for (std::size_t i = 0; i < clip.frames.size(); ++i) {
      CHECK(seqs[k].labels[i] == (clip.frames[i] == ClipFrame::padding ? kUnlabeled : clip.label(i)));
    }
  }
}

TEST_CASE("identical frames give identical representations") {
  SyntheticConfig c;
  Corpus corpus = Corpus::from_synthetic({synth_scripted(c, 0, {}, 6)});
  const LMDFModel model(ModelConfig::desk());
  const Tensor reps = extract_representations(model.mcnn, corpus, {})[0];
  for (std::size_t t = 1; t < 6; ++t) {
    for (std::size_t j = 0; j < 64; ++j) CHECK(reps[t * 64 + j] == reps[j]);
  }
}

TEST_CASE("frozen stage two leaves the MCNN untouched") {
  const Corpus corpus = small_corpus(2, 150);
  LMDFModel model(ModelConfig::desk());
  const auto before = model.to_named();
  TemporalTrainConfig c;
  c.lr = 3e-3;
  c.iterations = 3;
  c.batch_sequences = 4;
  const TrainLog log = train_stage2(model, corpus, corpus.subset({"persona01"}), c, {});
  const auto after = model.to_named();
  CHECK(parameter_checksum(before, "mcnn/") == parameter_checksum(after, "mcnn/"));
  CHECK(parameter_checksum(before, "lstm/") != parameter_checksum(after, "lstm/"));
  REQUIRE(log.metrics.size() == 2);
  CHECK(log.metrics[1].split == "test");

  SUBCASE("joint fine-tuning moves the paths but not the static head") {
    c.joint = true;
    c.iterations = 1;
    c.max_memory_steps = 20;
    LMDFModel joint(ModelConfig::desk());
    const auto start = joint.to_named();
    train_stage2(joint, corpus, {}, c, {});
    const auto end = joint.to_named();
    CHECK(parameter_checksum(start, "mcnn/path00/") != parameter_checksum(end, "mcnn/path00/"));
    CHECK(parameter_checksum(start, "mcnn/head/") == parameter_checksum(end, "mcnn/head/"));
    CHECK(parameter_checksum(start, "lstm/") != parameter_checksum(end, "lstm/"));
  }
}

TEST_CASE("model checkpoints round-trip exactly") {
  const Corpus corpus = small_corpus(1, 120);
  ModelConfig cfg = ModelConfig::desk();
  cfg.mcnn.seed = 9;
  cfg.lstm.seed = 4;
  LMDFModel model(cfg);
  const auto dir = scratch_dir("ckpt");
  model.save(dir / "model.lmdf");
  const LMDFModel loaded = LMDFModel::load(dir / "model.lmdf");
  CHECK(loaded.config.to_map() == cfg.to_map());
  CHECK(parameter_checksum(loaded.to_named()) == parameter_checksum(model.to_named()));

  const auto reps = extract_representations(model.mcnn, corpus, {});
  CHECK(extract_representations(loaded.mcnn, corpus, {})[0] == reps[0]);
  for (bool temporal : {false, true}) {
    const auto a = predict_clips(model, corpus, reps, temporal);
    const auto b = predict_clips(loaded, corpus, reps, temporal);
    CHECK(a.p_drowsy == b.p_drowsy);
    CHECK(a.predicted == b.predicted);
  }

  std::filesystem::remove(config_path_for(dir / "model.lmdf"));
  CHECK_THROWS_AS(LMDFModel::load(dir / "model.lmdf"), CheckpointError);
  CHECK_THROWS_AS(LMDFModel::load(dir / "absent.lmdf"), CheckpointError);
}

TEST_CASE("clip predictions cover the core frames") {
  const Corpus corpus = small_corpus(2, 200);
  const LMDFModel model(ModelConfig::desk());
  const auto reps = extract_representations(model.mcnn, corpus, {});
  std::size_t core = 0;
  for (const auto& c : corpus.clips) core += c.end - c.start - c.pad_head() - c.pad_tail();
  const auto stat = predict_clips(model, corpus, reps, false);
  const auto temp = predict_clips(model, corpus, reps, true);
  CHECK(stat.truth.size() == core);
  CHECK(temp.truth == stat.truth);
  CHECK(temp.scenario.size() == core);

  // The static head on a cached row agrees with a full forward pass.
  const auto refs = static_frame_refs(corpus, 1);
  const auto ev = evaluate_static(model.mcnn, corpus_patch_source(corpus, model.config.mcnn, {}), refs);
  std::size_t k = 0;
  for (const auto& c : corpus.clips) {
    for (std::size_t i = c.pad_head(); i + c.pad_tail() < c.frames.size(); ++i, ++k) {
      if (k < ev.predicted.size()) CHECK(ev.predicted[k] == stat.predicted[k]);
    }
  }
  CHECK(ev.predicted.size() == core);
  CHECK_THROWS_AS(predict_clips(model, corpus, std::span(reps).first(1), true), ValidationError);
}

TEST_CASE("metrics and configs") {
  const std::vector<MetricRow> rows{{10, "train", 0.5, 0.75}, {10, "test", 0.25, 1.0}};
  const std::string csv = format_metrics_csv(rows, "run.manifest");
  CHECK(csv == "# manifest: run.manifest\nstep,split,loss,accuracy\n10,train,0.5,0.75\n10,test,0.25,1\n");

  MCNNTrainConfig m;
  m.lr = 2.5e-4;
  m.balanced = true;
  m.seed = 77;
  const auto m2 = MCNNTrainConfig::from_map(m.to_map());
  CHECK(m2.to_map() == m.to_map());
  CHECK(m2.balanced);

  TemporalTrainConfig t;
  t.joint = true;
  t.max_memory_steps = 5;
  CHECK(TemporalTrainConfig::from_map(t.to_map()).to_map() == t.to_map());
  t.iterations = 0;
  CHECK_THROWS_AS(t.validate(), ValidationError);

  const auto manifest = run_manifest(m.to_map(), 3, "abc");
  CHECK(manifest.at("seed") == "3");
  CHECK(manifest.at("data_hash") == "abc");
  CHECK(manifest.at("adam_beta1") == format_double(0.9));
}
