// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "lmdf/patches.hpp"

using namespace lmdf;

namespace {

Frame random_frame(std::uint32_t w, std::uint32_t h, std::uint8_t c, std::mt19937_64& rng) {
  Frame f(w, h, c);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
  return f;
}

// A plausible face: every landmark on the 1/256 pixel grid inside [lo, hi).
FacialShape random_shape(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_int_distribution<int> d(int(lo * 256), int(hi * 256) - 1);
  FacialShape s;
  for (auto& p : s.points) p = {d(rng) / 256.0, d(rng) / 256.0};
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("standard patch layout") {
  const auto& layout = PatchLayout::standard();
  CHECK(layout.size() == kPatchCount);
  CHECK(layout.unified_size == 64);
  CHECK(layout.indices_of(Granularity::local).size() == 10);
  CHECK(layout.indices_of(Granularity::part).size() == 4);
  CHECK(layout.indices_of(Granularity::global) == std::vector<std::size_t>{14});
  CHECK(layout.specs[14].landmark_indices.size() == kLandmarkCount);
  for (const auto& spec : layout.specs) CHECK(spec.crop_size == crop_size_for(spec.granularity));

  SUBCASE("shipped config file is the compiled-in layout") {
    CHECK(read_file(LMDF_SOURCE_DIR "/config/patch_layout.cfg") == PatchLayout::standard_text());
  }
  SUBCASE("layouts breaking the structure are rejected") {
    std::string text(PatchLayout::standard_text());
    auto drop_last = text.substr(0, text.rfind("face"));
    CHECK_THROWS_AS(PatchLayout::parse(drop_last), ValidationError);
    std::string wrong_crop = text;
    wrong_crop.replace(wrong_crop.find("local        32"), 15, "local        48");
    CHECK_THROWS_AS(PatchLayout::parse(wrong_crop), ValidationError);
    std::string bad_index = text;
    bad_index.replace(bad_index.find(" 19\n"), 4, " 51\n");
    CHECK_THROWS_AS(PatchLayout::parse(bad_index), DataError);
    std::string bad_unified = text;
    bad_unified.replace(bad_unified.find("unified_size 64"), 15, "unified_size 32");
    CHECK_THROWS_AS(PatchLayout::parse(bad_unified), ValidationError);
  }
}

TEST_CASE("anchor_points") {
  SUBCASE("identical points give identical anchors") {
    FacialShape s;
    for (auto& p : s.points) p = {100, 100};
    for (const auto& a : anchor_points(s)) CHECK(a == Point{100, 100});
  }
  SUBCASE("sentinel shape anchors at the origin") {
    for (const auto& a : anchor_points(FacialShape::sentinel(3))) CHECK(a == Point{0, 0});
  }
  SUBCASE("centroids of the configured subsets") {
    FacialShape s;
    for (std::size_t i = 0; i < kLandmarkCount; ++i) s.points[i] = {double(i), 2.0 * double(i)};
    const auto a = anchor_points(s);
    CHECK(a[0] == Point{19, 38});            // left eye outer corner
    CHECK(a[9] == Point{40, 80});            // lower lip centre
    CHECK(a[10] == Point{21.5, 43});         // left eye: mean of 19..24
    CHECK(a[12] == Point{14, 28});           // nose: mean of 10..18
    CHECK(a[13] == Point{40.5, 81});         // mouth: mean of 31..50
    CHECK(a[14] == Point{25, 50});           // face: mean of 0..50
  }
}

TEST_CASE("crop_resize") {
  std::mt19937_64 rng(21);
  SUBCASE("uniform frame gives a uniform patch") {
    Frame f(100, 80, 3, 137);
    Tensor p = crop_resize(f, {50.3, 40.7}, 32, 64);
    CHECK(p.shape() == Shape{64, 64, 3});
    for (float v : p.data()) CHECK(v == doctest::Approx(137.0f));
  }
  SUBCASE("centre far outside the frame gives zeros") {
    Tensor p = crop_resize(Frame(50, 50, 1, 255), {-500, 700}, 64, 64);
    for (float v : p.data()) CHECK(v == 0.0f);
  }
  SUBCASE("crop equal to unified size at an integer centre copies pixels") {
    Frame f = random_frame(40, 30, 3, rng);
    Tensor p = crop_resize(f, {20, 15}, 16, 16);
    for (std::uint32_t y = 0; y < 16; ++y)
      for (std::uint32_t x = 0; x < 16; ++x)
        for (std::uint32_t c = 0; c < 3; ++c) CHECK(p.at(y, x, c) == float(f.at(y + 7, x + 12, c)));
  }
  SUBCASE("downscale samples between pixels") {
    Frame f(2, 2, 1);
    f.pixels = {10, 20, 30, 40};
    Tensor p = crop_resize(f, {1, 1}, 2, 1);
    CHECK(p.at(0, 0, 0) == doctest::Approx(25.0));
    CHECK(p.at(0, 0, 2) == p.at(0, 0, 0));
  }
  SUBCASE("partially outside crops are zero filled") {
    Frame f(8, 8, 1, 200);
    Tensor p = crop_resize(f, {0, 4}, 8, 8);
    CHECK(p.at(4, 0, 0) == 0.0f);   // column -4
    CHECK(p.at(4, 7, 0) == 200.0f); // column 3
  }
  SUBCASE("invalid sizes") {
    CHECK_THROWS_AS(crop_resize(Frame(4, 4, 1), {2, 2}, 0, 8), ValidationError);
    CHECK_THROWS_AS(crop_resize(Frame(4, 4, 1), {2, 2}, 8, 0), ValidationError);
  }
}

TEST_CASE("build_patch_set") {
  std::mt19937_64 rng(22);
  FacialShape shape = random_shape(rng, 60, 100);
  SUBCASE("white frame normalises to +0.5") {
    PatchSet set = build_patch_set(Frame(160, 160, 3, 255), shape);
    REQUIRE(set.patches.size() == kPatchCount);
    for (std::size_t k = 0; k < kPatchCount; ++k) {
      // The 160 px global crop around an off-centre face leaves the frame.
      if (k == 14) continue;
      for (float v : set.patches[k].data()) CHECK(v == 0.5f);
    }
  }
  SUBCASE("black frame normalises to -0.5") {
    PatchSet set = build_patch_set(Frame(160, 160, 1, 0), shape);
    for (const auto& p : set.patches) {
      CHECK(p.shape() == Shape{64, 64, 3});
      for (float v : p.data()) CHECK(v == -0.5f);
    }
  }
  SUBCASE("sentinel shape gives the empty-frame patch set") {
    PatchSet set = build_patch_set(random_frame(160, 160, 3, rng), FacialShape::sentinel(0));
    REQUIRE(set.patches.size() == kPatchCount);
    for (const auto& p : set.patches)
      for (float v : p.data()) CHECK(v == -0.5f);
  }
  SUBCASE("unified size override") {
    PatchSet set = build_patch_set(Frame(160, 160, 1, 9), shape, PatchLayout::standard(), 16);
    CHECK(set.patches[0].shape() == Shape{16, 16, 3});
  }
  SUBCASE("malformed frames are rejected") {
    Frame two_channel(10, 10, 2);
    CHECK_THROWS_AS(build_patch_set(two_channel, shape), ValidationError);
    Frame short_buffer(10, 10, 3);
    short_buffer.pixels.pop_back();
    CHECK_THROWS_AS(build_patch_set(short_buffer, shape), ValidationError);
    CHECK_THROWS_AS(build_patch_set(Frame(), shape), ValidationError);
  }
}

TEST_CASE("patch values stay in [-0.5, 0.5] (property)") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const std::uint8_t c = trial % 2 ? 3 : 1;
    Frame f = random_frame(120 + trial, 110, c, rng);
    FacialShape s = random_shape(rng, -20, 140);
    PatchSet set = build_patch_set(f, s, PatchLayout::standard(), 24);
    CHECK(set.patches.size() == kPatchCount);
    for (const auto& p : set.patches)
      for (float v : p.data()) {
        CHECK(v >= -0.5f);
        CHECK(v <= 0.5f);
      }
  }
}

TEST_CASE("integer translation of frame and landmarks is bit-identical (property)") {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 8; ++trial) {
    Frame f = random_frame(400, 400, trial % 2 ? 3 : 1, rng);
    // Keep every crop (up to 160 px) inside both frames.
    FacialShape s = random_shape(rng, 170, 230);
    const int dx = std::uniform_int_distribution<int>(-40, 40)(rng);
    const int dy = std::uniform_int_distribution<int>(-40, 40)(rng);
    Frame shifted(400, 400, f.channels);
    for (std::uint32_t y = 0; y < 400; ++y)
      for (std::uint32_t x = 0; x < 400; ++x) {
        const int sy = int(y) - dy, sx = int(x) - dx;
        if (sy < 0 || sx < 0 || sy >= 400 || sx >= 400) continue;
        for (std::uint32_t c = 0; c < f.channels; ++c) shifted.at(y, x, c) = f.at(sy, sx, c);
      }
    FacialShape t = s;
    for (auto& p : t.points) p = {p.x + dx, p.y + dy};
    PatchSet a = build_patch_set(f, s), b = build_patch_set(shifted, t);
    for (std::size_t k = 0; k < kPatchCount; ++k) CHECK(a.patches[k] == b.patches[k]);
  }
}

TEST_CASE("perturb_landmarks") {
  std::mt19937_64 rng(25);
  FacialShape s = random_shape(rng, 50, 110);
  CHECK(perturb_landmarks(s, 0.0, 7) == s);
  CHECK(perturb_landmarks(s, 5.0, 7) == perturb_landmarks(s, 5.0, 7));
  CHECK(perturb_landmarks(s, 5.0, 7) != perturb_landmarks(s, 5.0, 8));
  CHECK(perturb_landmarks(FacialShape::sentinel(2), 5.0, 7).is_sentinel());
  CHECK_THROWS_AS(perturb_landmarks(s, -1.0, 7), ValidationError);

  SUBCASE("empirical standard deviation over 1e5 draws") {
    const double sigma = 5.0;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; n < 100000; ++seed) {
      FacialShape p = perturb_landmarks(s, sigma, seed);
      for (std::size_t i = 0; i < kLandmarkCount; ++i) {
        for (double d : {p.points[i].x - s.points[i].x, p.points[i].y - s.points[i].y}) {
          sum += d;
          sum_sq += d * d;
          ++n;
        }
      }
    }
    const double mean = sum / double(n);
    const double sd = std::sqrt(sum_sq / double(n) - mean * mean);
    CHECK(sd >= 0.98 * sigma);
    CHECK(sd <= 1.02 * sigma);
  }
}

TEST_CASE("unaligned sampling") {
  std::mt19937_64 rng(26);
  Frame f = random_frame(160, 160, 1, rng);
  FaceBox box{30, 20, 100, 120};
  SUBCASE("uniform sampling replays under a fixed seed") {
    CHECK(unaligned_centers(box, SamplingMethod::uniform, 5) ==
          unaligned_centers(box, SamplingMethod::uniform, 5));
    CHECK(unaligned_centers(box, SamplingMethod::uniform, 5) !=
          unaligned_centers(box, SamplingMethod::uniform, 6));
    PatchSet a = sample_unaligned(f, box, SamplingMethod::uniform, 5);
    PatchSet b = sample_unaligned(f, box, SamplingMethod::uniform, 5);
    CHECK(a.patches == b.patches);
  }
  SUBCASE("specific sampling uses the same relative centres for identical boxes") {
    auto a = unaligned_centers(box, SamplingMethod::specific, 1);
    auto b = unaligned_centers(box, SamplingMethod::specific, 99);
    CHECK(a == b);
    CHECK(a[14].x == doctest::Approx(80.0));
    CHECK(a[14].y == doctest::Approx(80.0));
  }
  SUBCASE("centres lie inside random boxes (property)") {
    for (int trial = 0; trial < 200; ++trial) {
      std::uniform_real_distribution<double> pos(-50, 200), ext(1, 150);
      FaceBox b{pos(rng), pos(rng), ext(rng), ext(rng)};
      for (auto method : {SamplingMethod::uniform, SamplingMethod::specific}) {
        for (const auto& c : unaligned_centers(b, method, std::uint64_t(trial))) {
          CHECK(c.x >= b.x);
          CHECK(c.x <= b.x + b.width);
          CHECK(c.y >= b.y);
          CHECK(c.y <= b.y + b.height);
        }
      }
    }
  }
  SUBCASE("degenerate boxes are rejected") {
    CHECK_THROWS_AS(sample_unaligned(f, FaceBox{0, 0, 0, 10}, SamplingMethod::uniform, 1),
                    ValidationError);
    CHECK_THROWS_AS(unaligned_centers(FaceBox{0, 0, 10, -1}, SamplingMethod::specific, 1),
                    ValidationError);
  }
  SUBCASE("patch sizes match the aligned set") {
    PatchSet set = sample_unaligned(f, box, SamplingMethod::specific, 0);
    CHECK(set.patches.size() == kPatchCount);
    CHECK(set.patches[3].shape() == Shape{64, 64, 3});
  }
}

TEST_CASE("landmark track text format") {
  std::mt19937_64 rng(27);
  FacialShape s;
  std::uniform_real_distribution<double> d(-5, 300);
  for (auto& p : s.points) p = {d(rng), d(rng)};
  s.frame_index = 42;
  CHECK(parse_landmark_line(format_landmark_line(s)) == s);
  CHECK(parse_landmark_line(format_landmark_line(FacialShape::sentinel(9))).is_sentinel());
  CHECK_THROWS_AS(parse_landmark_line("3 1 2 3"), DataError);
  CHECK_THROWS_AS(parse_landmark_line("x"), DataError);
  CHECK_THROWS_AS(parse_landmark_line(format_landmark_line(s) + " 7"), DataError);
}
