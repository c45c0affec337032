// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <json.hpp>

#include "lmdf/experiment.hpp"

using namespace lmdf;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c = ExperimentConfig::desk();
  c.synth.personas = 3;
  c.synth.frames_per_persona = 200;
  c.stage1.steps = 12;
  c.stage1.batch = 4;
  c.stage2.iterations = 2;
  c.stage2.batch_sequences = 4;
  c.static_interval = 4;
  c.test_fraction = 0.34;
  return c;
}

FramePredictions labelled(std::vector<int> truth, std::vector<int> predicted, std::vector<std::string> scenario) {
  FramePredictions p;
  p.truth = std::move(truth);
  p.predicted = std::move(predicted);
  p.scenario = std::move(scenario);
  return p;
}

}  // namespace

TEST_CASE("experiment configs round-trip and take one seed") {
  const ExperimentConfig d = ExperimentConfig::desk();
  CHECK(ExperimentConfig::from_map(d.to_map()).to_map() == d.to_map());
  CHECK(d.model.lstm.input_dim == d.model.mcnn.representation_dim);

  const ExperimentConfig s = ExperimentConfig::from_map({{"seed", "9"}, {"mcnn_train_seed", "4"}});
  CHECK(s.synth.seed == 9);
  CHECK(s.model.mcnn.seed == 9);
  CHECK(s.stage2.seed == 9);
  CHECK(s.stage1.seed == 4);

  const ExperimentConfig r = ExperimentConfig::from_map({{"representation_dim", "32"}, {"noise_grid", "0, 1.5"}});
  CHECK(r.model.lstm.input_dim == 32);
  CHECK(r.noise_grid == std::vector<double>{0.0, 1.5});

  CHECK_THROWS_AS(ExperimentConfig::from_map({{"mcnn_lrr", "1"}}), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"test_fraction", "1"}}), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"sampling_grid", "US,XX"}}), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"dimension_grid", "8,x"}}), ValidationError);

  ::setenv("LMDF_SEED", "33", 1);
  const ExperimentConfig e = load_experiment_config(std::nullopt);
  ::unsetenv("LMDF_SEED");
  CHECK(e.stage1.seed == 33);
  CHECK(e.split_seed == 33);
  CHECK(load_experiment_config(std::nullopt).stage1.seed == 1);
}

TEST_CASE("frame-level reports") {
  SUBCASE("perfect predictor") {
    const auto r = evaluate_predictions(labelled({0, 1, 1, 0}, {0, 1, 1, 0}, {"day", "day", "night", "night"}));
    CHECK(r.overall.accuracy() == 1.0);
    CHECK(r.per_scenario.at("night").frames == 2);
  }
  SUBCASE("constant normal predictor scores the normal fraction") {
    const auto r = evaluate_predictions(labelled({0, 1, 1, 0, 0}, {0, 0, 0, 0, 0}, std::vector<std::string>(5, "day")));
    CHECK(r.overall.accuracy() == doctest::Approx(0.6));
    CHECK(r.confusion[0][0] == 3);
    CHECK(r.confusion[1][0] == 2);
    CHECK(r.confusion[0][1] + r.confusion[1][1] == 0);
  }
  SUBCASE("mismatches are rejected") {
    CHECK_THROWS_AS(evaluate_predictions(labelled({0, 1}, {0}, {"a", "a"})), ValidationError);
    CHECK_THROWS_AS(evaluate_predictions(labelled({0, 2}, {0, 1}, {"a", "a"})), ValidationError);
  }
  SUBCASE("json form") {
    const auto r = evaluate_predictions(labelled({0, 1, 1}, {0, 1, 0}, {"day", "night", "night"}));
    const std::string text = format_eval_report(r, {{"seed", "1"}});
    CHECK(text == format_eval_report(r, {{"seed", "1"}}));
    const auto j = nlohmann::json::parse(text);
    CHECK(j["frames"] == 3);
    CHECK(j["per_scenario"]["night"]["correct"] == 1);
    CHECK(j["confusion"]["truth_drowsy"]["normal"] == 1);
    CHECK(j["manifest"]["seed"] == "1");
  }
}

TEST_CASE("persona split and end-to-end training") {
  const ExperimentConfig c = tiny_config();
  const ExperimentData data = make_experiment_data(c, std::nullopt);
  CHECK(data.train.entries.size() == 2);
  CHECK(data.test.entries.size() == 1);
  CHECK(data.data_hash.size() == 40);
  for (const auto& e : data.test.entries) {
    for (const auto& t : data.train.entries) CHECK(e.source != t.source);
  }
  std::size_t checkpoints = 0;
  ExperimentConfig ck = c;
  ck.stage1.checkpoint_every = 4;
  TrainHooks hooks;
  hooks.checkpoint = [&](const std::string& stage, std::size_t, const LMDFModel&) { checkpoints += stage == "mcnn"; };
  const TrainedModel a = train_lmdf(ck, data, true, hooks);
  CHECK(checkpoints == 3);
  CHECK(a.stage1.step_loss.size() == 12);
  CHECK(a.stage2.step_loss.size() > 0);

  const TrainedModel b = train_lmdf(c, data, true);
  CHECK(parameter_checksum(a.model.to_named()) == parameter_checksum(b.model.to_named()));
  const auto ra = evaluate_model(a.model, data.test, c.patches, true);
  const auto rb = evaluate_model(b.model, data.test, c.patches, true);
  CHECK(format_eval_report(ra, {}) == format_eval_report(rb, {}));
}

TEST_CASE("sweeps") {
  CHECK(parse_sweep_kind("noise") == SweepKind::noise);
  CHECK_THROWS_AS(parse_sweep_kind("colour"), ValidationError);

  const ExperimentConfig c = tiny_config();
  const ExperimentData data = make_experiment_data(c, std::nullopt);

  SUBCASE("noise: one row per sigma, sigma 0 equals plain evaluation") {
    const auto rows = run_sweep(SweepKind::noise, c, data);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].condition == "0");
    CHECK(rows[3].condition == "10");
    CHECK(rows[0].steps == 12);
    const TrainedModel m = train_lmdf(c, data, false);
    const auto refs = static_frame_refs(data.test, c.static_interval);
    CHECK(rows[0].accuracy ==
          evaluate_static(m.model.mcnn, corpus_patch_source(data.test, m.model.config.mcnn, c.patches), refs).accuracy);
    CHECK(run_sweep(SweepKind::noise, c, data) == rows);
  }
  SUBCASE("granularity, dimension and sampling conditions") {
    ExperimentConfig small = c;
    small.stage1.steps = 2;
    small.dimension_grid = {8, 16};
    std::vector<std::string> names;
    for (const auto& r : run_sweep(SweepKind::granularity, small, data)) names.push_back(r.condition);
    CHECK(names == std::vector<std::string>{"global", "parts", "locals", "all"});
    CHECK(run_sweep(SweepKind::dimension, small, data).size() == 2);
    const auto sampling = run_sweep(SweepKind::sampling, small, data);
    REQUIRE(sampling.size() == 3);
    CHECK(sampling[2].condition == "AS");
  }
  const std::vector<SweepRow> rows{{"0", 0.75, 12, 1}, {"2", 0.5, 12, 1}};
  CHECK(format_sweep_csv(rows, "x") == "# manifest: x\ncondition,accuracy,steps,seed\n0,0.75,12,1\n2,0.5,12,1\n");
}
