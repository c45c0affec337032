// SPDX-License-Identifier: Apache-2.0
//
// Per-frame state annotations, clip manifests and static-set sampling.
//
// Annotation files hold one ASCII digit per frame with no separators (a
// trailing newline is allowed), one file per track:
//   drowsiness 0 normal, 1 drowsy
//   eyes       0 normal, 1 sleepy
//   head       0 normal, 1 nodding, 2 looking aside
//   mouth      0 normal, 1 yawning, 2 talking or laughing
//
// Clip manifests are text, one record per line:
//   clip_id start end scenario labels
// where [start, end) includes padding and `labels` is a run-length list such as
// p:10,1:100,p:10. Symbols 0 and 1 are drowsiness labels; p marks padding
// frames, which are normal frames duplicated from the neighbouring clip. The
// clip id is <source>#<index>.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lmdf/errors.hpp"

namespace lmdf {

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t frame_index)
      : DataError(what), frame_index_(frame_index) {}
  std::size_t frame_index() const noexcept { return frame_index_; }

 private:
  std::size_t frame_index_;
};

struct AnnotationTrack {
  std::vector<std::uint8_t> drowsiness, eyes, head, mouth;

  std::size_t length() const noexcept { return drowsiness.size(); }
  /// Throws ValidationError on length mismatch or out-of-domain values.
  void validate() const;
  static AnnotationTrack normal(std::size_t frames);
  friend bool operator==(const AnnotationTrack&, const AnnotationTrack&) = default;
};

/// Parses one track; `max_value` is 1 or 2. Throws ParseError at the first
/// offending frame.
std::vector<std::uint8_t> parse_annotation_text(std::string_view text, std::uint8_t max_value,
                                                const std::string& track_name);

/// Digits plus a trailing newline, as written by save_annotations.
std::string format_annotation_text(const std::vector<std::uint8_t>& values);

/// Reads <dir>/<stem>_{drowsiness,eyes,head,mouth}.txt.
AnnotationTrack load_annotations(const std::filesystem::path& dir, const std::string& stem);
void save_annotations(const std::filesystem::path& dir, const std::string& stem,
                      const AnnotationTrack& track);

// ---------------------------------------------------------------------------

/// Which annotations count as drowsiness evidence, and the timing constants of
/// the instant relabelling protocol.
struct RelabelRules {
  std::size_t max_latency = 15;     // frames from evidence onset to label
  std::size_t lookback = 30;        // how far before a labelled onset to look for evidence
  std::size_t eye_sustain = 15;     // closed-eye runs at least this long count
  bool mouth_yawn = true;
  bool head_nod = true;
  std::size_t padding = 10;         // normal frames kept around drowsy clips
};

enum class ClipFrame : std::uint8_t { normal = 0, drowsy = 1, padding = 2 };

struct ClipManifest {
  std::string clip_id;
  std::size_t start = 0;  // absolute frame, padding included
  std::size_t end = 0;
  std::string scenario;
  std::vector<ClipFrame> frames;

  std::string source() const;
  bool drowsy() const;
  std::size_t pad_head() const;
  std::size_t pad_tail() const;
  /// Label of frame i of the clip (padding is normal).
  int label(std::size_t i) const { return frames[i] == ClipFrame::drowsy ? 1 : 0; }
  friend bool operator==(const ClipManifest&, const ClipManifest&) = default;
};

/// Per-frame evidence flags under `rules`.
std::vector<bool> drowsiness_evidence(const AnnotationTrack& track, const RelabelRules& rules = {});

/// Moves each drowsy onset to at most `max_latency` frames after the latest
/// evidence onset within `lookback` frames before it (never later than the
/// original onset); offsets are kept and overlapping runs merge. With the
/// defaults an onset moves by at most 15 frames.
std::vector<std::uint8_t> relabel_drowsiness(const AnnotationTrack& track, const RelabelRules& rules = {});

/// Relabels, then cuts the track into alternating normal/drowsy clips. Drowsy
/// clips borrow up to `padding` normal frames from each neighbour.
std::vector<ClipManifest> instant_relabel(const AnnotationTrack& track, const std::string& source,
                                          const std::string& scenario, const RelabelRules& rules = {});

/// Per-frame drowsiness reconstructed from the non-padding clip frames.
std::vector<std::uint8_t> flatten_clips(const std::vector<ClipManifest>& clips, std::size_t length);

std::string format_clip(const ClipManifest& clip);
ClipManifest parse_clip(std::string_view line);
/// Whole manifest file text, header comment included.
std::string format_clips(const std::vector<ClipManifest>& clips);
void save_clips(const std::filesystem::path& path, const std::vector<ClipManifest>& clips);
std::vector<ClipManifest> load_clips(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct StaticSample {
  std::string source;
  std::size_t frame = 0;  // absolute frame index within the source
  int label = 0;
  friend bool operator==(const StaticSample&, const StaticSample&) = default;
};

/// Every `interval`-th non-padding frame of each clip, counted from the clip's
/// first core frame.
std::vector<StaticSample> sample_static_set(const std::vector<ClipManifest>& clips, std::size_t interval);

struct PersonaSplit {
  std::vector<std::string> train, test;
};

/// Seeded split of the distinct sources; at least one persona lands on each
/// side when there are two or more.
PersonaSplit split_personas(std::vector<std::string> personas, double test_fraction, std::uint64_t seed);

}  // namespace lmdf
