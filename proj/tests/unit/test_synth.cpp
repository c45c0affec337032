// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "lmdf/patches.hpp"
#include "lmdf/synth.hpp"

using namespace lmdf;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.personas = 3;
  c.frames_per_persona = 300;
  c.seed = 11;
  return c;
}

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::uint8_t rendered_skin(const Persona& p) {
  return p.night ? static_cast<std::uint8_t>(std::lround(0.55 * p.skin + 5.0)) : p.skin;
}

// Centroid of non-skin pixels inside a box around `c`.
Point blob_centroid(const Frame& f, std::uint8_t skin, Point c, double half_w, double half_h) {
  double sx = 0, sy = 0, n = 0;
  for (int y = int(std::floor(c.y - half_h)); y <= int(std::ceil(c.y + half_h)); ++y) {
    for (int x = int(std::floor(c.x - half_w)); x <= int(std::ceil(c.x + half_w)); ++x) {
      if (x < 0 || y < 0 || x >= int(f.width) || y >= int(f.height)) continue;
      if (f.at(y, x, 0) == skin) continue;
      sx += x;
      sy += y;
      n += 1;
    }
  }
  REQUIRE(n > 0);
  return {sx / n, sy / n};
}

}  // namespace

TEST_CASE("zero event mix gives all-normal labels") {
  SyntheticConfig c = small_config();
  for (auto& e : c.events) e.weight = 0.0;
  for (const auto& seq : synth_generate(c)) {
    CHECK(seq.script.empty());
    CHECK(seq.track == AnnotationTrack::normal(300));
  }
}

TEST_CASE("scripted closure is labelled by the delay rule") {
  const SyntheticConfig c = small_config();
  const auto seq = synth_scripted(c, 0, {{EventKind::close, 50, 30, 1}}, 120);
  for (std::size_t t = 0; t < 120; ++t) {
    const bool closed = t >= 50 && t < 80;
    CHECK(seq.track.eyes[t] == (closed ? 1 : 0));
    CHECK(seq.track.drowsiness[t] == (t >= 59 && t < 80 ? 1 : 0));
    CHECK(seq.states[t].eye_aperture == (closed ? (t == 50 || t == 79 ? 0.4 : 0.0) : 1.0));
  }
  CHECK(relabel_drowsiness(seq.track) == seq.track.drowsiness);
}

TEST_CASE("blinks and early closure frames render identically") {
  const SyntheticConfig c = small_config();
  const auto seq = synth_scripted(c, 1, {{EventKind::blink, 10, 6, 1}, {EventKind::close, 40, 30, 1}}, 100);
  CHECK(seq.render(11) == seq.render(41));
  CHECK(seq.render(10) == seq.render(40));
  CHECK(seq.track.drowsiness[11] == 0);
  CHECK(seq.track.drowsiness[60] == 1);
  CHECK(seq.render(11) == seq.render(60));

  const auto talk = synth_scripted(c, 1, {{EventKind::talk, 10, 20, 1}, {EventKind::yawn, 40, 30, 1}}, 100);
  CHECK(talk.render(10) == talk.render(60));
  CHECK(talk.track.drowsiness[10] == 0);
  CHECK(talk.track.drowsiness[60] == 1);
  CHECK(talk.states[13].mouth_aperture == 0.0);
}

TEST_CASE("generation is deterministic per seed") {
  const SyntheticConfig c = small_config();
  const auto a = synth_generate(c);
  const auto b = synth_generate(c);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].track == b[i].track);
    CHECK(a[i].landmarks == b[i].landmarks);
    for (std::size_t t : {0, 77, 299}) CHECK(a[i].render(t) == b[i].render(t));
  }
  SyntheticConfig other = c;
  other.seed = 12;
  CHECK(synth_generate(other)[0].track != a[0].track);

  SyntheticConfig noisy = c;
  noisy.pixel_noise = 8.0;
  const auto n1 = synth_generate(noisy), n2 = synth_generate(noisy);
  CHECK(n1[0].render(5) == n2[0].render(5));
  CHECK(n1[0].render(5) != a[0].render(5));
  CHECK(n1[0].render(5) != n1[0].render(6));
}

TEST_CASE("generated labels follow the event rules") {
  SyntheticConfig c = small_config();
  c.frames_per_persona = 3000;
  std::size_t drowsy = 0, frames = 0;
  for (const auto& seq : synth_generate(c)) {
    CHECK(relabel_drowsiness(seq.track) == seq.track.drowsiness);
    CHECK_NOTHROW(seq.track.validate());
    for (const auto& ev : seq.script) {
      const EventSpec& spec = c.spec(ev.kind);
      CHECK(ev.length <= spec.max_frames);
      if (ev.start + ev.length < c.frames_per_persona) CHECK(ev.length >= spec.min_frames);
      for (std::size_t i = 0; i < ev.length; ++i) {
        const bool want = (ev.kind == EventKind::close || ev.kind == EventKind::yawn ||
                           ev.kind == EventKind::nod) &&
                          i >= c.drowsy_delay;
        CHECK(seq.track.drowsiness[ev.start + i] == (want ? 1 : 0));
      }
    }
    drowsy += std::count(seq.track.drowsiness.begin(), seq.track.drowsiness.end(), 1);
    frames += seq.length();
  }
  CHECK(drowsy > frames / 10);
  CHECK(drowsy < frames / 2);
}

TEST_CASE("landmark anchors match the rendered parts") {
  const SyntheticConfig c = small_config();
  const std::vector<ScriptedEvent> script = {{EventKind::close, 5, 20, 1},
                                             {EventKind::yawn, 30, 20, 1},
                                             {EventKind::nod, 55, 20, 1},
                                             {EventKind::look_aside, 80, 20, -1},
                                             {EventKind::look_aside, 105, 20, 1},
                                             {EventKind::talk, 130, 20, 1}};
  const auto& layout = PatchLayout::standard();
  const auto left_eye = layout.indices_of(Granularity::part)[0];
  const auto mouth = layout.indices_of(Granularity::part)[3];
  REQUIRE(layout.specs[left_eye].name == "left_eye");
  REQUIRE(layout.specs[mouth].name == "mouth");

  for (std::size_t persona = 0; persona < 2; ++persona) {
    const auto seq = synth_scripted(c, persona, script, 160);
    const Persona& p = seq.persona;
    for (std::size_t t : {0, 6, 15, 35, 60, 90, 110, 131, 134, 140}) {
      const auto anchors = anchor_points(seq.landmarks[t]);
      const auto truth = seq.true_anchors(t);
      REQUIRE(anchors.size() == truth.size());
      for (std::size_t i = 0; i < anchors.size(); ++i) CHECK(distance(anchors[i], truth[i]) <= 0.5);

      const Frame f = seq.render(t);
      const double s = p.scale;
      const Point eye = blob_centroid(f, rendered_skin(p), anchors[left_eye], (p.eye_width + 2) * s, 6.5 * s);
      const Point mth = blob_centroid(f, rendered_skin(p), anchors[mouth], (p.mouth_width + 2) * s, 14.0 * s);
      CHECK(distance(eye, anchors[left_eye]) <= 1.0);
      CHECK(distance(mth, anchors[mouth]) <= 1.0);
    }
  }
}

TEST_CASE("synthetic config validation and round trip") {
  const SyntheticConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  const SyntheticConfig back = SyntheticConfig::from_map(c.to_map());
  CHECK(back.to_map() == c.to_map());

  auto broken = [&](auto mutate) {
    SyntheticConfig b = c;
    mutate(b);
    CHECK_THROWS_AS(b.validate(), ValidationError);
  };
  broken([](SyntheticConfig& b) { b.spec(EventKind::blink).max_frames = 9; });
  broken([](SyntheticConfig& b) { b.spec(EventKind::close).min_frames = 12; });
  broken([](SyntheticConfig& b) { b.spec(EventKind::yawn).min_frames = 5; });
  broken([](SyntheticConfig& b) { b.spec(EventKind::talk).weight = -1.0; });
  broken([](SyntheticConfig& b) { b.spec(EventKind::nod).min_frames = 70; });
  broken([](SyntheticConfig& b) { b.talk_period = 9; });
  broken([](SyntheticConfig& b) { b.width = 120; });
  broken([](SyntheticConfig& b) { b.personas = 0; });
  broken([](SyntheticConfig& b) { b.pixel_noise = -1.0; });
  broken([](SyntheticConfig& b) { b.idle_min = 0; });

  CHECK_THROWS_AS(synth_scripted(c, 0, {{EventKind::blink, 10, 5, 1}, {EventKind::blink, 12, 5, 1}}, 50),
                  ValidationError);
  CHECK_THROWS_AS(synth_scripted(c, 0, {{EventKind::close, 40, 20, 1}}, 50), ValidationError);
}
