// SPDX-License-Identifier: Apache-2.0
//
// Online detection: one frame in, one prediction out, with the LSTM state
// carried between calls. Also the per-module timing used by the profiler.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>

#include "lmdf/frame.hpp"
#include "lmdf/landmarks.hpp"
#include "lmdf/model.hpp"

namespace lmdf {

struct DetectRecord {
  std::uint64_t frame_index = 0;
  int label = 0;
  double p_drowsy = 0.0;
  double latency_ms = 0.0;
};

/// `frame_index y p_drowsy latency_ms`, space separated.
std::string format_detect_record(const DetectRecord& r);
inline constexpr std::string_view kDetectHeader = "# frame_index y p_drowsy latency_ms";

/// Milliseconds spent per module: patch extraction (mg), MCNN, LSTM and the
/// rest (reading input, writing output).
struct ModuleTimes {
  double mg = 0.0;
  double cnn = 0.0;
  double lstm = 0.0;
  double other = 0.0;
  double sum() const noexcept { return mg + cnn + lstm + other; }
};

struct DetectOptions {
  PatchOptions patches;
  bool reset_on_gap = false;  // restart the LSTM state when frame indices skip
};

class StreamingDetector {
 public:
  explicit StreamingDetector(const LMDFModel& model, DetectOptions options = {});

  /// Classifies one frame given everything seen before it. Frames without a
  /// face (sentinel landmarks) go through the empty patch set.
  DetectRecord process(const Frame& frame, const FacialShape& shape, ModuleTimes* times = nullptr);
  void reset();
  std::uint64_t frames_since_reset() const noexcept { return state_.frames_since_reset; }

 private:
  const LMDFModel& model_;
  DetectOptions options_;
  LSTMState<float> state_;
  std::optional<std::uint64_t> last_index_;
};

struct DetectSummary {
  std::size_t frames = 0;
  std::uint32_t width = 0, height = 0;
  ModuleTimes time_ms;  // summed over frames
  double wall_ms = 0.0;
};

/// Reads frames and landmark records in lockstep and writes one record per
/// frame as soon as it is produced, after a header comment. Throws DataError
/// when one stream ends before the other or frame indices do not increase.
DetectSummary run_detect(const LMDFModel& model, FrameSource& frames, LandmarkTrackReader& landmarks,
                         std::ostream& out, const DetectOptions& options = {});

/// Picks a checkpoint from `scenario=path` choices; a bare path serves every
/// scenario. Throws ValidationError when nothing matches.
std::filesystem::path select_checkpoint(std::span<const std::string> choices, const std::string& scenario);

struct ProfileReport {
  std::size_t frames = 0;
  std::uint32_t width = 0, height = 0;
  ModuleTimes mean_ms;
  double total_ms = 0.0;  // wall clock per frame

  double fps() const noexcept { return total_ms > 0.0 ? 1000.0 / total_ms : 0.0; }
};

ProfileReport profile_detect(const LMDFModel& model, FrameSource& frames, LandmarkTrackReader& landmarks,
                             const DetectOptions& options = {});
/// One-row CSV after a `# manifest: ...` line.
std::string format_profile_csv(const ProfileReport& report, const std::string& manifest);
std::string format_profile_table(const ProfileReport& report);

}  // namespace lmdf
