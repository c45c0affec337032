// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "lmdf/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "lmdf_cli";

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + LMDF_CLI + " " + args + " >" + (kWork / "stdout.txt").string() + " 2>" +
                          (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_records(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty() && line[0] != '#';
  return n;
}

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    std::ofstream(kWork / "tiny.cfg") << "synth_personas=3\nsynth_frames=150\nmcnn_steps=8\nmcnn_batch=4\n"
                                         "lstm_iterations=2\nlstm_batch=4\nstatic_interval=4\ntest_fraction=0.34\n";
  }
  std::string path(const std::string& name) const { return (kWork / name).string(); }
};

}  // namespace

TEST_CASE("command line round trip and exit codes") {
  const Workspace w;
  const std::string cfg = " --config " + w.path("tiny.cfg");
  REQUIRE(run("synth" + cfg + " --out " + w.path("corpus")) == 0);
  REQUIRE(run("train" + cfg + " --data " + w.path("corpus") + " --out " + w.path("run")) == 0);
  for (const char* f : {"model.lmdf", "model.lmdf.cfg", "manifest.txt", "stage1_metrics.csv", "stage2_metrics.csv"}) {
    CHECK(fs::exists(kWork / "run" / f));
  }
  const auto manifest = lmdf::load_key_values(kWork / "run" / "manifest.txt");
  CHECK(manifest.at("seed") == "1");
  CHECK(manifest.at("data_hash").size() == 40);
  CHECK(slurp(kWork / "run" / "stage1_metrics.csv").starts_with("# manifest: manifest.txt\nstep,split,loss,accuracy\n"));

  const std::string model = " --model " + w.path("run/model.lmdf");
  const std::string streams =
      " --frames " + w.path("corpus/persona00.raw") + " --landmarks " + w.path("corpus/persona00.landmarks");
  CHECK(run("detect" + model + streams + " --out " + w.path("det.txt")) == 0);
  CHECK(count_records(kWork / "det.txt") == 150);
  CHECK(run("detect --model night=" + w.path("run/model.lmdf") + " --scenario night" + streams) == 0);
  CHECK(count_records(kWork / "stdout.txt") == 150);

  CHECK(run("eval" + model + " --clips " + w.path("corpus") + cfg + " --split test --out " + w.path("a.json")) == 0);
  CHECK(run("eval" + model + " --clips " + w.path("corpus") + cfg + " --split test --out " + w.path("b.json")) == 0);
  CHECK(slurp(kWork / "a.json") == slurp(kWork / "b.json"));
  CHECK(slurp(kWork / "a.json").find("\"per_scenario\"") != std::string::npos);

  CHECK(run("profile" + model + streams + " --csv " + w.path("prof.csv")) == 0);
  CHECK(slurp(kWork / "stdout.txt").find("Total") != std::string::npos);
  CHECK(count_records(kWork / "prof.csv") == 2);

  SUBCASE("LMDF_SEED overrides the configured seed") {
    REQUIRE(run("train" + cfg + " --data " + w.path("corpus") + " --static-only --out " + w.path("seeded"),
                "LMDF_SEED=5") == 0);
    CHECK(lmdf::load_key_values(kWork / "seeded" / "manifest.txt").at("seed") == "5");
    CHECK(slurp(kWork / "seeded" / "model.lmdf") != slurp(kWork / "run" / "model.lmdf"));
  }
  SUBCASE("exit codes") {
    CHECK(run("") == 2);
    CHECK(run("sweep --kind colour --out " + w.path("x.csv")) == 2);
    CHECK(run("detect --model night=" + w.path("run/model.lmdf") + " --scenario day" + streams) == 2);
    CHECK(run("eval" + model + " --clips " + kWork.string()) == 3);
    std::ofstream(kWork / "short.landmarks") << slurp(kWork / "corpus" / "persona00.landmarks").substr(0, 2000);
    CHECK(run("detect" + model + " --frames " + w.path("corpus/persona00.raw") + " --landmarks " +
              w.path("short.landmarks")) == 3);
    CHECK(run("detect --model " + w.path("corpus/clips.txt") + streams) == 4);
    std::ofstream(kWork / "bad.cfg") << "mcnn_stepz=3\n";
    CHECK(run("train --config " + w.path("bad.cfg") + " --out " + w.path("bad")) == 2);
  }
}
