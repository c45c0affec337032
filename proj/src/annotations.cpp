// SPDX-License-Identifier: Apache-2.0
#include "lmdf/annotations.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace lmdf {
namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path track_path(const std::filesystem::path& dir, const std::string& stem,
                                 const char* track) {
  return dir / (stem + "_" + track + ".txt");
}

struct Run {
  std::size_t begin, end;
};

std::vector<Run> runs_of(const std::vector<bool>& flags) {
  std::vector<Run> out;
  for (std::size_t t = 0; t < flags.size();) {
    if (!flags[t]) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < flags.size() && flags[e]) ++e;
    out.push_back({t, e});
    t = e;
  }
  return out;
}

std::size_t parse_size(std::string_view s, const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw DataError("clip record: bad " + what + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

void AnnotationTrack::validate() const {
  const std::size_t n = drowsiness.size();
  if (eyes.size() != n || head.size() != n || mouth.size() != n) {
    throw ValidationError("annotation tracks differ in length");
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (drowsiness[t] > 1 || eyes[t] > 1 || head[t] > 2 || mouth[t] > 2) {
      throw ValidationError("annotation value out of domain at frame " + std::to_string(t));
    }
  }
}

AnnotationTrack AnnotationTrack::normal(std::size_t frames) {
  AnnotationTrack t;
  t.drowsiness.assign(frames, 0);
  t.eyes.assign(frames, 0);
  t.head.assign(frames, 0);
  t.mouth.assign(frames, 0);
  return t;
}

std::vector<std::uint8_t> parse_annotation_text(std::string_view text, std::uint8_t max_value,
                                                const std::string& track_name) {
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) {
    text.remove_suffix(1);
  }
  std::vector<std::uint8_t> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c < '0' || c > char('0' + max_value)) {
      throw ParseError(track_name + " annotation: invalid symbol '" + std::string(1, c) +
                           "' at frame " + std::to_string(i),
                       i);
    }
    out.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return out;
}

AnnotationTrack load_annotations(const std::filesystem::path& dir, const std::string& stem) {
  AnnotationTrack t;
  t.drowsiness = parse_annotation_text(read_text(track_path(dir, stem, "drowsiness")), 1, "drowsiness");
  t.eyes = parse_annotation_text(read_text(track_path(dir, stem, "eyes")), 1, "eyes");
  t.head = parse_annotation_text(read_text(track_path(dir, stem, "head")), 2, "head");
  t.mouth = parse_annotation_text(read_text(track_path(dir, stem, "mouth")), 2, "mouth");
  const std::size_t n = t.drowsiness.size();
  for (const auto* track : {&t.eyes, &t.head, &t.mouth}) {
    if (track->size() != n) {
      throw ParseError("annotation tracks of " + stem + " differ in length (" + std::to_string(n) +
                           " vs " + std::to_string(track->size()) + ")",
                       std::min(n, track->size()));
    }
  }
  return t;
}

std::string format_annotation_text(const std::vector<std::uint8_t>& values) {
  std::string s(values.size(), '0');
  for (std::size_t i = 0; i < values.size(); ++i) s[i] = static_cast<char>('0' + values[i]);
  s += '\n';
  return s;
}

void save_annotations(const std::filesystem::path& dir, const std::string& stem,
                      const AnnotationTrack& track) {
  track.validate();
  auto write = [&](const char* name, const std::vector<std::uint8_t>& v) {
    std::ofstream out(track_path(dir, stem, name), std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write annotations to " + dir.string());
    out << format_annotation_text(v);
  };
  write("drowsiness", track.drowsiness);
  write("eyes", track.eyes);
  write("head", track.head);
  write("mouth", track.mouth);
}

// ---------------------------------------------------------------------------

std::vector<bool> drowsiness_evidence(const AnnotationTrack& track, const RelabelRules& rules) {
  track.validate();
  const std::size_t n = track.length();
  std::vector<bool> ev(n, false);
  std::vector<bool> closed(n);
  for (std::size_t t = 0; t < n; ++t) closed[t] = track.eyes[t] == 1;
  for (const Run& r : runs_of(closed)) {
    if (r.end - r.begin < rules.eye_sustain) continue;
    for (std::size_t t = r.begin; t < r.end; ++t) ev[t] = true;
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (rules.mouth_yawn && track.mouth[t] == 1) ev[t] = true;
    if (rules.head_nod && track.head[t] == 1) ev[t] = true;
  }
  return ev;
}

std::vector<std::uint8_t> relabel_drowsiness(const AnnotationTrack& track, const RelabelRules& rules) {
  const std::vector<Run> evidence = runs_of(drowsiness_evidence(track, rules));
  std::vector<bool> drowsy(track.length());
  for (std::size_t t = 0; t < drowsy.size(); ++t) drowsy[t] = track.drowsiness[t] == 1;

  std::vector<std::uint8_t> out(track.length(), 0);
  for (const Run& r : runs_of(drowsy)) {
    const std::size_t a = r.begin;
    const std::size_t lo = a >= rules.lookback ? a - rules.lookback : 0;
    std::size_t onset = a;
    bool found = false;
    for (const Run& e : evidence) {
      if (e.begin > a) break;
      if (e.begin >= lo) {
        onset = e.begin;
        found = true;
      }
    }
    const std::size_t start = found ? std::min(a, onset + rules.max_latency) : a;
    for (std::size_t t = start; t < r.end; ++t) out[t] = 1;
  }
  return out;
}

std::vector<ClipManifest> instant_relabel(const AnnotationTrack& track, const std::string& source,
                                          const std::string& scenario, const RelabelRules& rules) {
  if (source.empty() || source.find_first_of("# \t\n") != std::string::npos) {
    throw ValidationError("clip source must be non-empty without spaces or '#'");
  }
  if (scenario.empty() || scenario.find_first_of(" \t\n") != std::string::npos) {
    throw ValidationError("scenario must be a non-empty word");
  }
  const std::vector<std::uint8_t> labels = relabel_drowsiness(track, rules);
  struct Segment {
    std::size_t begin, end;
    std::uint8_t label;
  };
  std::vector<Segment> segs;
  for (std::size_t t = 0; t < labels.size();) {
    std::size_t e = t;
    while (e < labels.size() && labels[e] == labels[t]) ++e;
    segs.push_back({t, e, labels[t]});
    t = e;
  }

  std::vector<ClipManifest> clips;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const Segment& s = segs[i];
    std::size_t head = 0, tail = 0;
    if (s.label == 1) {
      if (i > 0) head = std::min(rules.padding, segs[i - 1].end - segs[i - 1].begin);
      if (i + 1 < segs.size()) tail = std::min(rules.padding, segs[i + 1].end - segs[i + 1].begin);
    }
    ClipManifest c;
    c.clip_id = source + "#" + std::to_string(i);
    c.start = s.begin - head;
    c.end = s.end + tail;
    c.scenario = scenario;
    c.frames.assign(head, ClipFrame::padding);
    c.frames.insert(c.frames.end(), s.end - s.begin, s.label ? ClipFrame::drowsy : ClipFrame::normal);
    c.frames.insert(c.frames.end(), tail, ClipFrame::padding);
    clips.push_back(std::move(c));
  }
  return clips;
}

std::vector<std::uint8_t> flatten_clips(const std::vector<ClipManifest>& clips, std::size_t length) {
  std::vector<std::uint8_t> out(length, 0);
  for (const auto& c : clips) {
    for (std::size_t i = 0; i < c.frames.size(); ++i) {
      if (c.frames[i] == ClipFrame::padding) continue;
      if (c.start + i >= length) throw ValidationError("clip " + c.clip_id + " exceeds the track");
      out[c.start + i] = c.frames[i] == ClipFrame::drowsy;
    }
  }
  return out;
}

std::string ClipManifest::source() const { return clip_id.substr(0, clip_id.find('#')); }

bool ClipManifest::drowsy() const {
  return std::find(frames.begin(), frames.end(), ClipFrame::drowsy) != frames.end();
}

std::size_t ClipManifest::pad_head() const {
  std::size_t n = 0;
  while (n < frames.size() && frames[n] == ClipFrame::padding) ++n;
  return n;
}

std::size_t ClipManifest::pad_tail() const {
  std::size_t n = 0;
  while (n < frames.size() && frames[frames.size() - 1 - n] == ClipFrame::padding) ++n;
  return n;
}

std::string format_clip(const ClipManifest& clip) {
  std::string rle;
  for (std::size_t i = 0; i < clip.frames.size();) {
    std::size_t j = i;
    while (j < clip.frames.size() && clip.frames[j] == clip.frames[i]) ++j;
    if (!rle.empty()) rle += ',';
    rle += clip.frames[i] == ClipFrame::padding ? 'p' : char('0' + static_cast<int>(clip.frames[i]));
    rle += ':' + std::to_string(j - i);
    i = j;
  }
  return clip.clip_id + ' ' + std::to_string(clip.start) + ' ' + std::to_string(clip.end) + ' ' +
         clip.scenario + ' ' + rle;
}

ClipManifest parse_clip(std::string_view line) {
  std::vector<std::string_view> fields;
  for (std::size_t i = 0; i < line.size();) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  if (fields.size() != 5) throw DataError("clip record needs 5 fields: '" + std::string(line) + "'");
  ClipManifest c;
  c.clip_id = std::string(fields[0]);
  c.start = parse_size(fields[1], "start");
  c.end = parse_size(fields[2], "end");
  c.scenario = std::string(fields[3]);
  std::string_view rle = fields[4];
  while (!rle.empty()) {
    const auto comma = rle.find(',');
    std::string_view item = rle.substr(0, comma);
    rle = comma == std::string_view::npos ? std::string_view{} : rle.substr(comma + 1);
    if (item.size() < 3 || item[1] != ':') throw DataError("clip record: bad run '" + std::string(item) + "'");
    ClipFrame f;
    if (item[0] == '0') f = ClipFrame::normal;
    else if (item[0] == '1') f = ClipFrame::drowsy;
    else if (item[0] == 'p') f = ClipFrame::padding;
    else throw DataError("clip record: bad label symbol in '" + std::string(item) + "'");
    c.frames.insert(c.frames.end(), parse_size(item.substr(2), "run length"), f);
  }
  if (c.end <= c.start || c.frames.size() != c.end - c.start) {
    throw DataError("clip " + c.clip_id + ": label runs cover " + std::to_string(c.frames.size()) +
                    " frames, range has " + std::to_string(c.end > c.start ? c.end - c.start : 0));
  }
  if (c.pad_head() + c.pad_tail() >= c.frames.size() ||
      std::count(c.frames.begin(), c.frames.end(), ClipFrame::padding) !=
          static_cast<std::ptrdiff_t>(c.pad_head() + c.pad_tail())) {
    throw DataError("clip " + c.clip_id + ": padding must surround a non-empty core");
  }
  return c;
}

std::string format_clips(const std::vector<ClipManifest>& clips) {
  std::string text = "# clip_id start end scenario labels\n";
  for (const auto& c : clips) text += format_clip(c) + '\n';
  return text;
}

void save_clips(const std::filesystem::path& path, const std::vector<ClipManifest>& clips) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_clips(clips);
}

std::vector<ClipManifest> load_clips(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<ClipManifest> clips;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      clips.push_back(parse_clip(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return clips;
}

// ---------------------------------------------------------------------------

std::vector<StaticSample> sample_static_set(const std::vector<ClipManifest>& clips, std::size_t interval) {
  if (interval == 0) throw ValidationError("sampling interval must be at least 1");
  std::vector<StaticSample> out;
  for (const auto& c : clips) {
    const std::size_t first = c.pad_head(), last = c.frames.size() - c.pad_tail();
    for (std::size_t i = first; i < last; i += interval) {
      out.push_back({c.source(), c.start + i, c.label(i)});
    }
  }
  return out;
}

PersonaSplit split_personas(std::vector<std::string> personas, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw ValidationError("test fraction must lie in [0, 1]");
  }
  std::sort(personas.begin(), personas.end());
  personas.erase(std::unique(personas.begin(), personas.end()), personas.end());
  std::mt19937_64 rng(seed);
  std::shuffle(personas.begin(), personas.end(), rng);
  std::size_t n_test = static_cast<std::size_t>(std::lround(test_fraction * double(personas.size())));
  if (personas.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, personas.size() - 1);
  PersonaSplit s;
  s.test.assign(personas.begin(), personas.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(personas.begin() + static_cast<std::ptrdiff_t>(n_test), personas.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

}  // namespace lmdf
