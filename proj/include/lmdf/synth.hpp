// SPDX-License-Identifier: Apache-2.0
//
// Procedural face sequences with scripted drowsiness events.
//
// Each persona is a flat-shaded face (ellipse head, brows, nose, eyes, lips)
// whose eyelid aperture, mouth aperture and head pose follow an event script.
// Frames are rendered on demand by mapping every pixel back into canonical face
// coordinates, so the 51 landmarks are exactly the rendered geometry.
//
// Events and their labels:
//   blink       eyes close briefly                       normal
//   close       eyes stay closed (eyes=1)                drowsy after the delay
//   yawn        mouth wide open (mouth=1)                drowsy after the delay
//   talk        mouth opens and closes every few frames  normal (mouth=2)
//   nod         head lowered (head=1)                    drowsy after the delay
//   look_aside  head turned (head=2)                     normal
// Blink frames and the first frames of a closure look identical, and so do
// talking and yawning frames with the mouth open; only the duration tells them
// apart.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lmdf/annotations.hpp"
#include "lmdf/config.hpp"
#include "lmdf/frame.hpp"
#include "lmdf/landmarks.hpp"

namespace lmdf {

enum class EventKind : std::uint8_t { blink, close, yawn, talk, nod, look_aside };
inline constexpr std::size_t kEventKinds = 6;

std::string_view to_string(EventKind k);

struct EventSpec {
  double weight = 0.0;
  std::size_t min_frames = 1;
  std::size_t max_frames = 1;
};

struct SyntheticConfig {
  std::size_t personas = 12;
  std::size_t frames_per_persona = 1200;
  std::uint32_t width = 160;
  std::uint32_t height = 160;
  std::array<EventSpec, kEventKinds> events{{
      {4.0, 3, 8},    // blink
      {1.0, 20, 60},  // close
      {1.0, 20, 60},  // yawn
      {1.0, 20, 60},  // talk
      {1.0, 20, 60},  // nod
      {1.0, 20, 60},  // look_aside
  }};
  std::size_t idle_min = 5;
  std::size_t idle_max = 20;
  std::size_t drowsy_delay = 9;  // frames into close/yawn/nod before the label turns drowsy
  std::size_t talk_period = 3;   // frames per open or closed phase while talking
  double pixel_noise = 0.0;      // grey-level std of additive noise
  std::uint64_t seed = 1;

  EventSpec& spec(EventKind k) { return events[static_cast<std::size_t>(k)]; }
  const EventSpec& spec(EventKind k) const { return events[static_cast<std::size_t>(k)]; }
  /// Throws ValidationError for inconsistent settings, e.g. blinks that could
  /// last as long as the drowsy delay.
  void validate() const;
  KeyValues to_map() const;
  static SyntheticConfig from_map(const KeyValues& kv);
};

struct ScriptedEvent {
  EventKind kind = EventKind::blink;
  std::size_t start = 0;
  std::size_t length = 0;
  int direction = 1;  // look_aside only: +1 right, -1 left
};

enum class HeadPose : std::uint8_t { neutral, nod, aside_left, aside_right };

struct FaceState {
  double eye_aperture = 1.0;    // 0 closed .. 1 open
  double mouth_aperture = 0.0;  // 0 closed .. 1 wide
  HeadPose pose = HeadPose::neutral;
  double pose_amount = 0.0;     // 0 .. 1
};

struct Persona {
  double center_x = 80.0, center_y = 84.0;
  double scale = 1.0;
  double eye_spacing = 24.0, eye_width = 10.0, mouth_width = 16.0;
  std::uint8_t background = 50, skin = 180, lips = 120, dark = 35, sclera = 230;
  bool night = false;
};

/// One rendered persona with its script, labels and exact geometry.
struct SyntheticSequence {
  std::string source;
  std::string scenario;
  Persona persona;
  std::uint32_t width = 160, height = 160;
  double pixel_noise = 0.0;
  std::uint64_t noise_seed = 0;
  std::vector<ScriptedEvent> script;
  std::vector<FaceState> states;
  AnnotationTrack track;
  std::vector<FacialShape> landmarks;

  std::size_t length() const noexcept { return states.size(); }
  Frame render(std::size_t t) const;
  /// Rendered part centres in layout order: the landmark positions for local
  /// patches, eye/nose/mouth centres for parts, the landmark centroid for the face.
  std::vector<Point> true_anchors(std::size_t t) const;
};

/// Builds a persona from an explicit script (events must not overlap).
SyntheticSequence synth_scripted(const SyntheticConfig& config, std::size_t persona_index,
                                 const std::vector<ScriptedEvent>& script, std::size_t length);

/// Random scripts for `config.personas` personas, sources persona00, persona01, ...
std::vector<SyntheticSequence> synth_generate(const SyntheticConfig& config);

}  // namespace lmdf
