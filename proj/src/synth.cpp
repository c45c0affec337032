// SPDX-License-Identifier: Apache-2.0
#include "lmdf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lmdf/patches.hpp"

namespace lmdf {
namespace {

// Canonical face geometry, in pixels at scale 1, relative to the face centre.
constexpr double kFaceRx = 48.0, kFaceRy = 60.0, kFaceCy = 4.0;
constexpr double kEyeY = -18.0, kEyeH = 5.0;
constexpr double kBrowGap = 10.0, kBrowHalf = 1.25;
constexpr double kNoseY = 6.0, kNoseD = 4.0;
constexpr double kMouthY = 32.0, kMouthH = 8.0, kLipRest = 4.0;
constexpr double kClosedHalf = 0.9;
constexpr double kNodSquash = 0.18, kNodShift = 10.0;
constexpr double kAsideSquash = 0.22, kAsideShift = 10.0;

constexpr std::array<const char*, kEventKinds> kEventNames = {"blink", "close", "yawn",
                                                              "talk", "nod", "look_aside"};

struct PoseTransform {
  double sx = 1.0, sy = 1.0, dx = 0.0, dy = 0.0;
};

PoseTransform pose_of(const FaceState& s) {
  PoseTransform p;
  const double a = s.pose_amount;
  switch (s.pose) {
    case HeadPose::neutral:
      break;
    case HeadPose::nod:
      p.sy = 1.0 - kNodSquash * a;
      p.dy = kNodShift * a;
      break;
    case HeadPose::aside_left:
    case HeadPose::aside_right:
      p.sx = 1.0 - kAsideSquash * a;
      p.dx = (s.pose == HeadPose::aside_left ? -kAsideShift : kAsideShift) * a;
      break;
  }
  return p;
}

Point to_image(const Persona& f, const PoseTransform& p, double qx, double qy) {
  return {f.center_x + f.scale * (p.sx * qx + p.dx), f.center_y + f.scale * (p.sy * qy + p.dy)};
}

double sq(double v) { return v * v; }

std::array<Point, kLandmarkCount> canonical_landmarks(const Persona& f, const FaceState& s) {
  std::array<Point, kLandmarkCount> q{};
  const double w = f.eye_width, exl = -f.eye_spacing, exr = f.eye_spacing;
  const double brow_y = kEyeY - kBrowGap;
  for (int i = 0; i < 5; ++i) {
    q[i] = {exl - w + w * 0.5 * i, brow_y};
    q[5 + i] = {exr - w + w * 0.5 * i, brow_y};
  }
  for (int i = 0; i < 4; ++i) q[10 + i] = {0.0, kNoseY - (3 - i) * kNoseD};
  for (int i = 0; i < 5; ++i) q[14 + i] = {(i - 2) * kNoseD, kNoseY + 1.2 * kNoseD};

  const double lid = kEyeH * s.eye_aperture;
  q[19] = {exl - w, kEyeY};
  q[20] = {exl - w / 3, kEyeY - lid};
  q[21] = {exl + w / 3, kEyeY - lid};
  q[22] = {exl + w, kEyeY};
  q[23] = {exl + w / 3, kEyeY + lid};
  q[24] = {exl - w / 3, kEyeY + lid};
  q[25] = {exr - w, kEyeY};
  q[26] = {exr - w / 3, kEyeY - lid};
  q[27] = {exr + w / 3, kEyeY - lid};
  q[28] = {exr + w, kEyeY};
  q[29] = {exr + w / 3, kEyeY + lid};
  q[30] = {exr - w / 3, kEyeY + lid};

  const double mw = f.mouth_width, outer = kLipRest + s.mouth_aperture * kMouthH;
  const double pi = std::acos(-1.0);
  for (int k = 0; k < 12; ++k) {
    const double th = pi - k * pi / 6.0;
    q[31 + k] = {mw * std::cos(th), kMouthY - outer * std::sin(th)};
  }
  const double inner = s.mouth_aperture * kMouthH;
  for (int k = 0; k < 8; ++k) {
    const double th = pi - k * pi / 4.0;
    q[43 + k] = {0.7 * mw * std::cos(th), kMouthY - inner * std::sin(th)};
  }
  // Snap the trigonometric zeros so symmetric points stay exactly symmetric.
  for (auto& p : q) {
    if (std::abs(p.x) < 1e-12) p.x = 0.0;
  }
  return q;
}

std::uint8_t shade(const Persona& f, double qx, double qy, const FaceState& s) {
  if (sq(qx / kFaceRx) + sq((qy - kFaceCy) / kFaceRy) > 1.0) return f.background;
  const double w = f.eye_width;
  const int nose_tone = std::max(0, int(f.skin) - 35);
  for (double ex : {-f.eye_spacing, f.eye_spacing}) {
    const double dx = qx - ex, dy = qy - kEyeY;
    if (std::abs(dx) <= w && std::abs(qy - (kEyeY - kBrowGap)) <= kBrowHalf) return f.dark;
    if (s.eye_aperture <= 0.05) {
      if (std::abs(dx) <= w && std::abs(dy) <= kClosedHalf) return f.dark;
    } else if (sq(dx / w) + sq(dy / (kEyeH * s.eye_aperture)) <= 1.0) {
      return sq(dx) + sq(dy) <= sq(0.5 * kEyeH) ? f.dark : f.sclera;
    }
  }
  if (std::abs(qx) <= 0.9 && qy >= kNoseY - 3 * kNoseD && qy <= kNoseY) return std::uint8_t(nose_tone);
  for (double nx : {-1.5 * kNoseD, 1.5 * kNoseD}) {
    if (sq(qx - nx) + sq(qy - (kNoseY + 1.2 * kNoseD)) <= 4.0) return f.dark;
  }
  const double mw = f.mouth_width, dy = qy - kMouthY;
  if (sq(qx / mw) + sq(dy / (kLipRest + s.mouth_aperture * kMouthH)) <= 1.0) {
    if (s.mouth_aperture > 0.05 && sq(qx / (0.7 * mw)) + sq(dy / (s.mouth_aperture * kMouthH)) <= 1.0) {
      return 15;
    }
    return f.lips;
  }
  return f.skin;
}

Persona draw_persona(const SyntheticConfig& c, std::size_t index) {
  std::seed_seq seq{c.seed, std::uint64_t(index), std::uint64_t(1)};
  std::mt19937_64 rng(seq);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto tone = [&](int lo, int hi) { return std::uint8_t(std::uniform_int_distribution<int>(lo, hi)(rng)); };
  Persona f;
  f.center_x = c.width / 2.0 + u(-6.0, 6.0);
  f.center_y = c.height / 2.0 + 4.0 + u(-6.0, 6.0);
  f.scale = u(0.9, 1.1);
  f.eye_spacing = 24.0 * u(0.9, 1.1);
  f.eye_width = 10.0 * u(0.9, 1.1);
  f.mouth_width = 16.0 * u(0.9, 1.1);
  f.background = tone(30, 80);
  f.skin = tone(150, 210);
  f.lips = std::uint8_t(f.skin - tone(50, 70));
  f.dark = tone(20, 50);
  f.sclera = std::uint8_t(std::min(255, f.skin + 35));
  f.night = index % 2 == 1;
  return f;
}

std::vector<ScriptedEvent> draw_script(const SyntheticConfig& c, std::size_t index) {
  std::seed_seq seq{c.seed, std::uint64_t(index), std::uint64_t(2)};
  std::mt19937_64 rng(seq);
  std::vector<double> weights;
  for (const auto& e : c.events) weights.push_back(e.weight);
  const bool any = std::any_of(weights.begin(), weights.end(), [](double w) { return w > 0.0; });
  std::vector<ScriptedEvent> script;
  if (!any) return script;
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::size_t t = 0;
  while (true) {
    t += std::uniform_int_distribution<std::size_t>(c.idle_min, c.idle_max)(rng);
    if (t >= c.frames_per_persona) break;
    ScriptedEvent ev;
    ev.kind = static_cast<EventKind>(pick(rng));
    const EventSpec& spec = c.spec(ev.kind);
    ev.start = t;
    ev.length = std::min(std::uniform_int_distribution<std::size_t>(spec.min_frames, spec.max_frames)(rng),
                         c.frames_per_persona - t);
    ev.direction = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
    script.push_back(ev);
    t += ev.length;
  }
  return script;
}

}  // namespace

std::string_view to_string(EventKind k) { return kEventNames[static_cast<std::size_t>(k)]; }

void SyntheticConfig::validate() const {
  if (personas == 0 || frames_per_persona == 0) throw ValidationError("synthetic corpus must not be empty");
  if (width < 160 || height < 160) throw ValidationError("synthetic frames must be at least 160x160");
  for (std::size_t k = 0; k < kEventKinds; ++k) {
    const EventSpec& e = events[k];
    if (!std::isfinite(e.weight) || e.weight < 0.0) {
      throw ValidationError(std::string("bad weight for event ") + kEventNames[k]);
    }
    if (e.min_frames == 0 || e.min_frames > e.max_frames) {
      throw ValidationError(std::string("bad duration range for event ") + kEventNames[k]);
    }
  }
  if (idle_min == 0 || idle_min > idle_max) throw ValidationError("bad idle range");
  if (drowsy_delay == 0 || drowsy_delay > 15) {
    throw ValidationError("drowsy delay must lie in [1, 15] frames");
  }
  if (spec(EventKind::blink).max_frames >= drowsy_delay ||
      spec(EventKind::blink).max_frames >= spec(EventKind::close).min_frames) {
    throw ValidationError("blinks must be shorter than the drowsy delay and than any closure");
  }
  for (EventKind k : {EventKind::close, EventKind::yawn, EventKind::nod}) {
    if (spec(k).min_frames <= drowsy_delay) {
      throw ValidationError(std::string(to_string(k)) + " events must outlast the drowsy delay");
    }
  }
  if (spec(EventKind::close).min_frames < 15) {
    throw ValidationError("closures must last at least 15 frames to count as drowsiness evidence");
  }
  if (talk_period == 0 || talk_period >= drowsy_delay) {
    throw ValidationError("talk period must be shorter than the drowsy delay");
  }
  if (!std::isfinite(pixel_noise) || pixel_noise < 0.0) throw ValidationError("pixel noise must be >= 0");
}

KeyValues SyntheticConfig::to_map() const {
  KeyValues kv;
  kv["synth_personas"] = std::to_string(personas);
  kv["synth_frames"] = std::to_string(frames_per_persona);
  kv["synth_width"] = std::to_string(width);
  kv["synth_height"] = std::to_string(height);
  for (std::size_t k = 0; k < kEventKinds; ++k) {
    const std::string p = std::string("synth_") + kEventNames[k];
    kv[p + "_weight"] = format_double(events[k].weight);
    kv[p + "_min"] = std::to_string(events[k].min_frames);
    kv[p + "_max"] = std::to_string(events[k].max_frames);
  }
  kv["synth_idle_min"] = std::to_string(idle_min);
  kv["synth_idle_max"] = std::to_string(idle_max);
  kv["synth_drowsy_delay"] = std::to_string(drowsy_delay);
  kv["synth_talk_period"] = std::to_string(talk_period);
  kv["synth_pixel_noise"] = format_double(pixel_noise);
  kv["synth_seed"] = std::to_string(seed);
  return kv;
}

SyntheticConfig SyntheticConfig::from_map(const KeyValues& kv) {
  SyntheticConfig c;
  c.personas = get_u64(kv, "synth_personas", c.personas);
  c.frames_per_persona = get_u64(kv, "synth_frames", c.frames_per_persona);
  c.width = static_cast<std::uint32_t>(get_u64(kv, "synth_width", c.width));
  c.height = static_cast<std::uint32_t>(get_u64(kv, "synth_height", c.height));
  for (std::size_t k = 0; k < kEventKinds; ++k) {
    const std::string p = std::string("synth_") + kEventNames[k];
    c.events[k].weight = get_double(kv, p + "_weight", c.events[k].weight);
    c.events[k].min_frames = get_u64(kv, p + "_min", c.events[k].min_frames);
    c.events[k].max_frames = get_u64(kv, p + "_max", c.events[k].max_frames);
  }
  c.idle_min = get_u64(kv, "synth_idle_min", c.idle_min);
  c.idle_max = get_u64(kv, "synth_idle_max", c.idle_max);
  c.drowsy_delay = get_u64(kv, "synth_drowsy_delay", c.drowsy_delay);
  c.talk_period = get_u64(kv, "synth_talk_period", c.talk_period);
  c.pixel_noise = get_double(kv, "synth_pixel_noise", c.pixel_noise);
  c.seed = get_u64(kv, "synth_seed", c.seed);
  return c;
}

Frame SyntheticSequence::render(std::size_t t) const {
  if (t >= states.size()) throw ValidationError("frame index past the end of " + source);
  const FaceState& s = states[t];
  const PoseTransform p = pose_of(s);
  const Persona& f = persona;
  Frame frame(width, height, 1);
  std::mt19937_64 rng;
  std::normal_distribution<double> noise(0.0, pixel_noise > 0.0 ? pixel_noise : 1.0);
  if (pixel_noise > 0.0) {
    std::seed_seq seq{noise_seed, std::uint64_t(t)};
    rng.seed(seq);
  }
  for (std::uint32_t y = 0; y < height; ++y) {
    const double qy = ((y - f.center_y) / f.scale - p.dy) / p.sy;
    for (std::uint32_t x = 0; x < width; ++x) {
      const double qx = ((x - f.center_x) / f.scale - p.dx) / p.sx;
      double v = shade(f, qx, qy, s);
      if (f.night) v = 0.55 * v + 5.0;
      if (pixel_noise > 0.0) v += noise(rng);
      frame.at(y, x, 0) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return frame;
}

std::vector<Point> SyntheticSequence::true_anchors(std::size_t t) const {
  const FaceState& s = states.at(t);
  const PoseTransform p = pose_of(s);
  const auto& pts = landmarks.at(t).points;
  std::vector<Point> out;
  for (const PatchSpec& spec : PatchLayout::standard().specs) {
    switch (spec.granularity) {
      case Granularity::local:
        out.push_back(pts[spec.landmark_indices.front()]);
        break;
      case Granularity::part: {
        const std::size_t first = spec.landmark_indices.front();
        double qx = 0.0, qy = 0.0;
        if (first == 19) {
          qx = -persona.eye_spacing, qy = kEyeY;
        } else if (first == 25) {
          qx = persona.eye_spacing, qy = kEyeY;
        } else if (first == 10) {
          qx = 0.0, qy = kNoseY;
        } else if (first == 31) {
          qx = 0.0, qy = kMouthY;
        } else {
          throw ValidationError("no rendered part for layout entry " + spec.name);
        }
        out.push_back(to_image(persona, p, qx, qy));
        break;
      }
      case Granularity::global: {
        Point c;
        for (const auto& q : pts) {
          c.x += q.x / kLandmarkCount;
          c.y += q.y / kLandmarkCount;
        }
        out.push_back(c);
        break;
      }
    }
  }
  return out;
}

SyntheticSequence synth_scripted(const SyntheticConfig& config, std::size_t persona_index,
                                 const std::vector<ScriptedEvent>& script, std::size_t length) {
  config.validate();
  SyntheticSequence seq;
  seq.source = "persona" + std::string(persona_index < 10 ? "0" : "") + std::to_string(persona_index);
  seq.persona = draw_persona(config, persona_index);
  seq.scenario = seq.persona.night ? "night" : "day";
  seq.width = config.width;
  seq.height = config.height;
  seq.pixel_noise = config.pixel_noise;
  seq.noise_seed = config.seed * 0x9E3779B97F4A7C15ULL + persona_index;
  seq.script = script;
  seq.states.assign(length, FaceState{});
  seq.track = AnnotationTrack::normal(length);

  std::size_t prev_end = 0;
  for (const ScriptedEvent& ev : script) {
    if (ev.length == 0 || ev.start < prev_end || ev.start + ev.length > length) {
      throw ValidationError("scripted events must be non-empty, ordered, disjoint and inside the sequence");
    }
    prev_end = ev.start + ev.length;
    const std::size_t L = ev.length;
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t t = ev.start + i;
      const bool edge = L >= 3 && (i == 0 || i == L - 1);
      FaceState& s = seq.states[t];
      switch (ev.kind) {
        case EventKind::blink:
        case EventKind::close:
          s.eye_aperture = edge ? 0.4 : 0.0;
          if (ev.kind == EventKind::close) seq.track.eyes[t] = 1;
          break;
        case EventKind::yawn:
          s.mouth_aperture = edge ? 0.5 : 1.0;
          seq.track.mouth[t] = 1;
          break;
        case EventKind::talk:
          s.mouth_aperture = (i / config.talk_period) % 2 == 0 ? 1.0 : 0.0;
          seq.track.mouth[t] = 2;
          break;
        case EventKind::nod:
          s.pose = HeadPose::nod;
          s.pose_amount = edge ? 0.5 : 1.0;
          seq.track.head[t] = 1;
          break;
        case EventKind::look_aside:
          s.pose = ev.direction < 0 ? HeadPose::aside_left : HeadPose::aside_right;
          s.pose_amount = edge ? 0.5 : 1.0;
          seq.track.head[t] = 2;
          break;
      }
      const bool drowsy_kind =
          ev.kind == EventKind::close || ev.kind == EventKind::yawn || ev.kind == EventKind::nod;
      if (drowsy_kind && i >= config.drowsy_delay) seq.track.drowsiness[t] = 1;
    }
  }

  seq.landmarks.resize(length);
  for (std::size_t t = 0; t < length; ++t) {
    const PoseTransform p = pose_of(seq.states[t]);
    const auto q = canonical_landmarks(seq.persona, seq.states[t]);
    FacialShape& shape = seq.landmarks[t];
    shape.frame_index = t;
    for (std::size_t i = 0; i < kLandmarkCount; ++i) shape.points[i] = to_image(seq.persona, p, q[i].x, q[i].y);
  }
  return seq;
}

std::vector<SyntheticSequence> synth_generate(const SyntheticConfig& config) {
  config.validate();
  std::vector<SyntheticSequence> out;
  out.reserve(config.personas);
  for (std::size_t i = 0; i < config.personas; ++i) {
    out.push_back(synth_scripted(config, i, draw_script(config, i), config.frames_per_persona));
  }
  return out;
}

}  // namespace lmdf
