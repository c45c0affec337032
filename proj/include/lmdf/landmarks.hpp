// SPDX-License-Identifier: Apache-2.0
//
// 51-point inner-face landmark scheme (the 68-point iBUG layout without the 17
// jaw-line points), indices 0-based, "left"/"right" meaning image left/right:
//
//    0- 4  left eyebrow, outer to inner      10-13  nose bridge, top to tip
//    5- 9  right eyebrow, inner to outer     14-18  nostril row, left to right
//   19-24  left eye: 19 outer corner, 20-21 upper lid, 22 inner corner,
//          23-24 lower lid
//   25-30  right eye: 25 inner corner, 26-27 upper lid, 28 outer corner,
//          29-30 lower lid
//   31-42  outer lip contour: 31 left corner, 34 upper-lip centre,
//          37 right corner, 40 lower-lip centre
//   43-50  inner lip contour: 43 left corner, 45 upper centre, 47 right corner,
//          49 lower centre
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "lmdf/errors.hpp"

namespace lmdf {

inline constexpr std::size_t kLandmarkCount = 51;

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Landmarks of one frame. All-zero coordinates mark a frame without a face.
struct FacialShape {
  std::array<Point, kLandmarkCount> points{};
  std::uint64_t frame_index = 0;

  bool is_sentinel() const noexcept;
  static FacialShape sentinel(std::uint64_t frame_index);
  friend bool operator==(const FacialShape&, const FacialShape&) = default;
};

/// Parses `frame_index x1 y1 ... x51 y51`. Throws DataError on malformed input.
FacialShape parse_landmark_line(std::string_view line);
/// Shortest round-trippable text form of a shape.
std::string format_landmark_line(const FacialShape& shape);

/// Sequential reader over a landmark track file. Blank lines and lines starting
/// with '#' are skipped.
class LandmarkTrackReader {
 public:
  explicit LandmarkTrackReader(const std::filesystem::path& path);
  std::optional<FacialShape> next();
  std::size_t line_number() const noexcept { return line_; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  std::size_t line_ = 0;
};

class LandmarkTrackWriter {
 public:
  explicit LandmarkTrackWriter(const std::filesystem::path& path);
  void write(const FacialShape& shape);

 private:
  std::ofstream out_;
};

}  // namespace lmdf
