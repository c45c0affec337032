// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <chrono>
#include <random>

#include "lmdf/gradcheck.hpp"
#include "lmdf/mcnn.hpp"
#include "lmdf/patches.hpp"
#include "test_util.hpp"

using namespace lmdf;
using lmdf::testing::random_tensor;

namespace {

MCNNConfig tiny_config(std::size_t paths = 2) {
  MCNNConfig c;
  c.path_count = paths;
  c.patch_size = 8;
  c.kernel = 3;
  c.channels1 = 2;
  c.channels2 = 3;
  c.channels3 = 2;
  c.representation_dim = 5;
  c.mask = PathMask::all(paths);
  c.seed = 11;
  return c;
}

template <typename T>
std::vector<BasicTensor<T>> random_patches(const MCNNConfig& c, std::mt19937_64& rng) {
  std::vector<BasicTensor<T>> out;
  for (std::size_t i = 0; i < c.path_count; ++i) {
    out.push_back(random_tensor<T>({c.patch_size, c.patch_size, 3}, rng, -0.5, 0.5));
  }
  return out;
}

std::size_t counted_parameters(MCNN<float>& m) {
  std::size_t n = 0;
  for (auto* p : m.parameters()) n += p->size();
  return n;
}

}  // namespace

TEST_CASE("full-size shape chain") {
  MCNNConfig cfg;
  MCNN<float> model(cfg);
  CHECK(cfg.path_dim() == 1024);
  CHECK(cfg.fusion_input_dim() == 15360);
  CHECK(model.fusion_w.shape() == Shape{256, 15360});

  std::mt19937_64 rng(1);
  auto patches = random_patches<float>(cfg, rng);
  PathCache<float> cache;
  BasicTensor<float> out = model.path_forward(0, patches[0], &cache);
  CHECK(out.shape() == Shape{1024});
  CHECK(cache.pre3.shape() == Shape{32, 32, 4});
  CHECK(cache.pooled1.shape() == Shape{32, 32, 32});
  CHECK(cache.pre2.shape() == Shape{32, 32, 64});

  MCNNCache<float> full;
  MCNNOutput<float> result = model.forward(patches, &full);
  CHECK(full.concat.shape() == Shape{15360});
  CHECK(result.representation.shape() == Shape{256});
  CHECK(result.probs.shape() == Shape{2});
  CHECK(result.probs[0] + result.probs[1] == doctest::Approx(1.0));
}

TEST_CASE("parameter count closed form") {
  MCNNConfig cfg;
  // 15 paths x (2400+32 + 51200+64 + 6400+4) + 256*15360 + 256 + 2*256 + 2
  CHECK(cfg.parameter_count() == 4834430);
  MCNN<float> full(cfg);
  CHECK(counted_parameters(full) == cfg.parameter_count());

  for (const char* mask : {"parts", "global", "locals"}) {
    MCNNConfig c = tiny_config(15);
    c.mask = PathMask::parse(mask, 15);
    for (bool share : {false, true}) {
      c.share_within_granularity = share;
      MCNN<float> m(c);
      CHECK(counted_parameters(m) == c.parameter_count());
    }
  }
  for (std::size_t n : {64u, 128u, 512u}) {
    MCNNConfig c = tiny_config(4);
    c.representation_dim = n;
    MCNN<float> m(c);
    CHECK(counted_parameters(m) == c.parameter_count());
  }
}

TEST_CASE("path forward trivial cases") {
  MCNNConfig cfg = tiny_config(3);
  MCNN<double> model(cfg);
  BasicTensor<double> zero({8, 8, 3});
  const auto out = model.path_forward(1, zero);
  for (double v : out.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(model.path_forward(0, BasicTensor<double>({8, 8, 1})), ShapeError);
  CHECK_THROWS_AS(model.path_forward(3, zero), ShapeError);

  std::mt19937_64 rng(2);
  auto patches = random_patches<double>(cfg, rng);
  MCNN<double> twin(cfg);
  CHECK(model.forward(patches).representation == twin.forward(patches).representation);
}

TEST_CASE("fusion and head") {
  MCNNConfig cfg = tiny_config(3);
  MCNN<double> model(cfg);
  SUBCASE("zero inputs and zero bias give a zero representation") {
    BasicTensor<double> cat({cfg.fusion_input_dim()});
    const auto rep = model.fuse(cat);
    for (double v : rep.data()) CHECK(v == 0.0);
  }
  SUBCASE("representation is non-negative") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
      BasicTensor<double> cat = random_tensor<double>({cfg.fusion_input_dim()}, rng, -3, 3);
      const auto rep = model.fuse(cat);
      for (double v : rep.data()) CHECK(v >= 0.0);
    }
  }
  SUBCASE("wrong path count is rejected") {
    std::vector<BasicTensor<double>> two(2, BasicTensor<double>({cfg.path_dim()}));
    CHECK_THROWS_AS(model.concat(two), ShapeError);
    CHECK_THROWS_AS(model.forward(two), ShapeError);
  }
  SUBCASE("zero head gives an even split and class 0") {
    model.head_w.value.fill(0.0);
    std::mt19937_64 rng(4);
    MCNNOutput<double> out = model.forward(random_patches<double>(cfg, rng));
    CHECK(out.probs[0] == 0.5);
    CHECK(out.probs[1] == 0.5);
    CHECK(out.predicted == 0);
  }
}

TEST_CASE("granularity mask") {
  MCNNConfig cfg;
  cfg.mask = PathMask::parse("parts", 15);
  CHECK(cfg.mask.to_string() == "000000000011110");
  CHECK(cfg.fusion_input_dim() == 4096);
  CHECK(PathMask::parse("global", 15).active_count() == 1);
  CHECK(PathMask::parse("locals", 15).active_count() == 10);
  CHECK(PathMask::parse("101", 3).to_string() == "101");
  CHECK_THROWS_AS(PathMask::parse("parts", 4), ValidationError);
  CHECK_THROWS_AS(PathMask::parse("10x", 3), ValidationError);

  MCNNConfig none = tiny_config(3);
  none.mask = PathMask::parse("000", 3);
  CHECK_THROWS_AS(MCNN<float>{none}, ValidationError);
}

TEST_CASE("config map round trip") {
  MCNNConfig c = tiny_config(15);
  c.mask = PathMask::parse("locals", 15);
  c.share_within_granularity = true;
  c.seed = 99;
  MCNNConfig back = MCNNConfig::from_map(c.to_map());
  CHECK(back.to_map() == c.to_map());
  auto bad = c.to_map();
  bad["channels1"] = "three";
  CHECK_THROWS_AS(MCNNConfig::from_map(bad), ValidationError);
}

TEST_CASE("MCNN backward matches finite differences (tiny config)") {
  MCNNConfig cfg = tiny_config(2);
  MCNN<double> model(cfg);
  std::mt19937_64 rng(5);
  // Non-zero biases so every block is exercised.
  for (auto* p : model.parameters()) {
    if (p->value.rank() == 1) p->value = random_tensor<double>(p->shape(), rng, -0.1, 0.1);
  }
  auto patches = random_patches<double>(cfg, rng);
  for (std::size_t target : {0u, 1u}) {
    model.zero_grad();
    MCNNCache<double> cache;
    model.forward(patches, &cache);
    model.backward(cache, target);

    std::vector<GradBlock> blocks;
    for (auto* p : model.parameters()) blocks.push_back({p->name, p->value.data(), p->grad.data()});
    auto loss = [&] {
      MCNNCache<double> c;
      model.forward(patches, &c);
      return softmax_xent(c.logits, one_hot<double>(target, 2)).loss;
    };
    GradCheckReport report = finite_diff_check(loss, blocks);
    INFO(report.summary());
    CHECK(report.passed());
  }
}

TEST_CASE("representation backward matches finite differences") {
  MCNNConfig cfg = tiny_config(2);
  MCNN<double> model(cfg);
  std::mt19937_64 rng(8);
  for (auto* p : model.parameters()) {
    if (p->value.rank() == 1) p->value = random_tensor<double>(p->shape(), rng, -0.1, 0.1);
  }
  auto patches = random_patches<double>(cfg, rng);
  const auto r = random_tensor<double>({cfg.representation_dim}, rng, -1.0, 1.0);
  MCNNCache<double> cache;
  model.forward(patches, &cache);
  model.zero_grad();
  model.backward_representation(cache, r);
  for (double g : model.head_w.grad.data()) CHECK(g == 0.0);

  std::vector<GradBlock> blocks;
  for (auto* p : model.parameters()) {
    if (p != &model.head_w && p != &model.head_b) blocks.push_back({p->name, p->value.data(), p->grad.data()});
  }
  auto loss = [&] {
    const auto rep = model.forward(patches).representation;
    double v = 0.0;
    for (std::size_t i = 0; i < rep.size(); ++i) v += rep.data()[i] * r.data()[i];
    return v;
  };
  GradCheckReport report = finite_diff_check(loss, blocks);
  INFO(report.summary());
  CHECK(report.passed());
  CHECK_THROWS_AS(model.backward_representation(cache, BasicTensor<double>({3})), ShapeError);
}

TEST_CASE("masked paths receive exactly zero gradient") {
  MCNNConfig cfg = tiny_config(3);
  cfg.mask = PathMask::parse("101", 3);
  MCNN<double> model(cfg);
  std::mt19937_64 rng(6);
  auto patches = random_patches<double>(cfg, rng);
  MCNNCache<double> cache;
  model.forward(patches, &cache);
  model.backward(cache, 1);
  auto& unused = model.path_params(1);
  for (auto* p : {&unused.kernel1, &unused.bias1, &unused.kernel2, &unused.bias2, &unused.kernel3,
                  &unused.bias3}) {
    for (double g : p->grad.data()) CHECK(g == 0.0);
  }
  double used = 0.0;
  for (double g : model.path_params(0).kernel1.grad.data()) used += std::abs(g);
  CHECK(used > 0.0);

  const auto before = model.path_params(1).kernel2.value;
  model.adam_step(1e-2);
  CHECK(model.path_params(1).kernel2.value == before);
  CHECK(model.path_params(1).kernel2.step_count == 0);
}

TEST_CASE("head gradients vanish when probs equal the target") {
  MCNNConfig cfg = tiny_config(2);
  MCNN<double> model(cfg);
  model.head_w.value.fill(0.0);
  model.head_b.value[0] = 1000.0;
  model.head_b.value[1] = -1000.0;
  std::mt19937_64 rng(7);
  MCNNCache<double> cache;
  model.forward(random_patches<double>(cfg, rng), &cache);
  CHECK(model.backward(cache, 0) == 0.0);
  for (auto* p : model.parameters())
    for (double g : p->grad.data()) CHECK(g == 0.0);
}

TEST_CASE("path independence (property)") {
  MCNNConfig cfg = tiny_config(4);
  std::mt19937_64 rng(8);
  auto patches = random_patches<double>(cfg, rng);
  for (std::size_t k = 0; k < cfg.path_count; ++k) {
    MCNN<double> model(cfg);
    MCNNCache<double> a;
    model.forward(patches, &a);
    for (auto& v : model.path_params(k).kernel2.value.data()) v += 0.05;
    MCNNCache<double> b;
    model.forward(patches, &b);
    const std::size_t d = cfg.path_dim();
    bool slice_changed = false;
    for (std::size_t i = 0; i < a.concat.size(); ++i) {
      if (i / d == k) slice_changed |= a.concat[i] != b.concat[i];
      else CHECK(a.concat[i] == b.concat[i]);
    }
    CHECK(slice_changed);
  }
}

TEST_CASE("canonical patch order matters") {
  MCNNConfig cfg = tiny_config(2);
  MCNN<double> model(cfg);
  std::mt19937_64 rng(9);
  auto patches = random_patches<double>(cfg, rng);
  auto swapped = patches;
  std::swap(swapped[0], swapped[1]);
  CHECK(model.forward(patches).representation != model.forward(swapped).representation);
}

TEST_CASE("weight sharing ties paths of one granularity") {
  MCNNConfig cfg = tiny_config(15);
  cfg.share_within_granularity = true;
  MCNN<double> model(cfg);
  CHECK(model.slot_count() == 3);
  CHECK(model.slot_of(0) == model.slot_of(9));
  CHECK(model.slot_of(10) == model.slot_of(13));
  CHECK(model.slot_of(14) != model.slot_of(0));
  std::mt19937_64 rng(10);
  auto patches = random_patches<double>(cfg, rng);
  patches[3] = patches[5];
  CHECK(model.path_forward(3, patches[3]) == model.path_forward(5, patches[5]));
  MCNNConfig bad = tiny_config(4);
  bad.share_within_granularity = true;
  CHECK_THROWS_AS(MCNN<double>{bad}, ValidationError);
}

TEST_CASE("named tensors round trip into a fresh model") {
  MCNNConfig cfg = tiny_config(3);
  MCNN<float> trained(cfg);
  cfg.seed = 12345;
  MCNN<float> fresh(cfg);
  std::mt19937_64 rng(11);
  auto patches = random_patches<float>(cfg, rng);
  CHECK(trained.forward(patches).probs != fresh.forward(patches).probs);
  fresh.load_named(trained.to_named());
  CHECK(trained.forward(patches).probs == fresh.forward(patches).probs);
  auto named = trained.to_named();
  named.pop_back();
  CHECK_THROWS_AS(fresh.load_named(named), CheckpointError);
}
