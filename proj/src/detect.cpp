// SPDX-License-Identifier: Apache-2.0
#include "lmdf/detect.hpp"

#include <chrono>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace lmdf {
namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

std::string format_detect_record(const DetectRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%llu %d %.6f %.3f", static_cast<unsigned long long>(r.frame_index), r.label,
                r.p_drowsy, r.latency_ms);
  return buf;
}

StreamingDetector::StreamingDetector(const LMDFModel& model, DetectOptions options)
    : model_(model), options_(options), state_(model.head.initial_state()) {}

void StreamingDetector::reset() { state_ = model_.head.initial_state(); }

DetectRecord StreamingDetector::process(const Frame& frame, const FacialShape& shape, ModuleTimes* times) {
  const auto t0 = Clock::now();
  if (options_.reset_on_gap && last_index_ && shape.frame_index != *last_index_ + 1) reset();
  last_index_ = shape.frame_index;
  const auto patches = frame_patches(frame, shape, model_.config.mcnn, options_.patches, shape.frame_index);
  const auto t1 = Clock::now();
  const Tensor rep = model_.mcnn.forward(patches).representation;
  const auto t2 = Clock::now();
  auto [next, h] = model_.head.stack_step(state_, rep);
  state_ = std::move(next);
  const auto pred = model_.head.predict(h);
  const auto t3 = Clock::now();
  if (times) {
    times->mg += ms_between(t0, t1);
    times->cnn += ms_between(t1, t2);
    times->lstm += ms_between(t2, t3);
  }
  return {shape.frame_index, static_cast<int>(pred.label), pred.probs.data()[1], ms_between(t0, t3)};
}

DetectSummary run_detect(const LMDFModel& model, FrameSource& frames, LandmarkTrackReader& landmarks,
                         std::ostream& out, const DetectOptions& options) {
  StreamingDetector detector(model, options);
  DetectSummary summary;
  std::optional<std::uint64_t> last;
  const auto start = Clock::now();
  out << kDetectHeader << '\n';
  for (;;) {
    const auto t0 = Clock::now();
    auto shape = landmarks.next();
    auto frame = frames.next();
    if (!shape && !frame) {
      summary.time_ms.other += ms_between(t0, Clock::now());
      break;
    }
    if (!shape || !frame) {
      throw DataError(std::string(shape ? "frame" : "landmark") + " stream ended early at record " +
                      std::to_string(summary.frames) + " (frame index " +
                      (shape ? std::to_string(shape->frame_index) : std::to_string(last ? *last + 1 : 0)) + ")");
    }
    if (last && shape->frame_index <= *last) {
      throw DataError("landmark frame index " + std::to_string(shape->frame_index) + " does not follow " +
                      std::to_string(*last) + " at record " + std::to_string(summary.frames));
    }
    last = shape->frame_index;
    if (summary.frames == 0) {
      summary.width = frame->width;
      summary.height = frame->height;
    }
    const auto t1 = Clock::now();
    const DetectRecord r = detector.process(*frame, *shape, &summary.time_ms);
    const auto t2 = Clock::now();
    out << format_detect_record(r) << '\n';
    out.flush();
    if (!out) throw DataError("cannot write detection output");
    summary.time_ms.other += ms_between(t0, t1) + ms_between(t2, Clock::now());
    ++summary.frames;
  }
  summary.wall_ms = ms_between(start, Clock::now());
  return summary;
}

std::filesystem::path select_checkpoint(std::span<const std::string> choices, const std::string& scenario) {
  std::optional<std::filesystem::path> fallback;
  for (const auto& c : choices) {
    const auto eq = c.find('=');
    if (eq == std::string::npos) {
      if (!fallback) fallback = c;
    } else if (c.substr(0, eq) == scenario) {
      return c.substr(eq + 1);
    }
  }
  if (fallback) return *fallback;
  throw ValidationError("no model given for scenario '" + scenario + "'");
}

ProfileReport profile_detect(const LMDFModel& model, FrameSource& frames, LandmarkTrackReader& landmarks,
                             const DetectOptions& options) {
  std::ostringstream sink;
  const DetectSummary s = run_detect(model, frames, landmarks, sink, options);
  ProfileReport r;
  r.frames = s.frames;
  r.width = s.width;
  r.height = s.height;
  if (s.frames == 0) return r;
  const double n = double(s.frames);
  r.mean_ms = {s.time_ms.mg / n, s.time_ms.cnn / n, s.time_ms.lstm / n, s.time_ms.other / n};
  r.total_ms = s.wall_ms / n;
  return r;
}

std::string format_profile_csv(const ProfileReport& r, const std::string& manifest) {
  std::ostringstream s;
  s << "# manifest: " << manifest << "\nframes,width,height,mg_ms,cnn_ms,lstm_ms,others_ms,total_ms,fps\n";
  s << r.frames << ',' << r.width << ',' << r.height << ',' << format_double(r.mean_ms.mg) << ','
    << format_double(r.mean_ms.cnn) << ',' << format_double(r.mean_ms.lstm) << ','
    << format_double(r.mean_ms.other) << ',' << format_double(r.total_ms) << ',' << format_double(r.fps()) << '\n';
  return s.str();
}

std::string format_profile_table(const ProfileReport& r) {
  char buf[128];
  std::string s;
  std::snprintf(buf, sizeof buf, "%zu frames at %ux%u\n%-8s %10s %7s\n", r.frames, r.width, r.height, "module",
                "ms/frame", "share");
  s += buf;
  const std::pair<const char*, double> rows[] = {{"Mg", r.mean_ms.mg},
                                                 {"CNN", r.mean_ms.cnn},
                                                 {"LSTMs", r.mean_ms.lstm},
                                                 {"Others", r.mean_ms.other},
                                                 {"Total", r.total_ms}};
  for (const auto& [name, ms] : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %10.3f %6.1f%%\n", name, ms, r.total_ms > 0 ? 100.0 * ms / r.total_ms : 0.0);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "fps %.1f\n", r.fps());
  s += buf;
  return s;
}

}  // namespace lmdf
