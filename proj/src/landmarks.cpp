// SPDX-License-Identifier: Apache-2.0
#include "lmdf/landmarks.hpp"

#include <charconv>
#include <cmath>
#include <string>

namespace lmdf {
namespace {

std::string_view next_token(std::string_view& rest) {
  const auto begin = rest.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) {
    rest = {};
    return {};
  }
  rest.remove_prefix(begin);
  const auto end = rest.find_first_of(" \t\r");
  std::string_view tok = rest.substr(0, end);
  rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
  return tok;
}

void append_number(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

bool FacialShape::is_sentinel() const noexcept {
  for (const auto& p : points) {
    if (p.x != 0.0 || p.y != 0.0) return false;
  }
  return true;
}

FacialShape FacialShape::sentinel(std::uint64_t frame_index) {
  FacialShape s;
  s.frame_index = frame_index;
  return s;
}

FacialShape parse_landmark_line(std::string_view line) {
  std::string_view rest = line;
  FacialShape shape;
  auto idx_tok = next_token(rest);
  if (idx_tok.empty()) throw DataError("landmark record is empty");
  auto [p, ec] = std::from_chars(idx_tok.data(), idx_tok.data() + idx_tok.size(), shape.frame_index);
  if (ec != std::errc{} || p != idx_tok.data() + idx_tok.size()) {
    throw DataError("landmark record has a bad frame index '" + std::string(idx_tok) + "'");
  }
  for (std::size_t i = 0; i < 2 * kLandmarkCount; ++i) {
    auto tok = next_token(rest);
    if (tok.empty()) {
      throw DataError("landmark record for frame " + std::to_string(shape.frame_index) +
                      " has " + std::to_string(i) + " coordinates, expected " +
                      std::to_string(2 * kLandmarkCount));
    }
    double v = 0.0;
    auto [q, ec2] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec2 != std::errc{} || q != tok.data() + tok.size() || !std::isfinite(v)) {
      throw DataError("landmark record for frame " + std::to_string(shape.frame_index) +
                      " has a bad coordinate '" + std::string(tok) + "'");
    }
    (i % 2 == 0 ? shape.points[i / 2].x : shape.points[i / 2].y) = v;
  }
  if (!next_token(rest).empty()) {
    throw DataError("landmark record for frame " + std::to_string(shape.frame_index) +
                    " has trailing fields");
  }
  return shape;
}

std::string format_landmark_line(const FacialShape& shape) {
  std::string out = std::to_string(shape.frame_index);
  out.reserve(out.size() + kLandmarkCount * 16);
  for (const auto& pt : shape.points) {
    out.push_back(' ');
    append_number(out, pt.x);
    out.push_back(' ');
    append_number(out, pt.y);
  }
  return out;
}

LandmarkTrackReader::LandmarkTrackReader(const std::filesystem::path& path)
    : in_(path), path_(path) {
  if (!in_) throw DataError("cannot open landmark track " + path.string());
}

std::optional<FacialShape> LandmarkTrackReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      return parse_landmark_line(line);
    } catch (const DataError& e) {
      throw DataError(path_.string() + ":" + std::to_string(line_) + ": " + e.what());
    }
  }
  return std::nullopt;
}

LandmarkTrackWriter::LandmarkTrackWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw DataError("cannot write landmark track " + path.string());
}

void LandmarkTrackWriter::write(const FacialShape& shape) {
  out_ << format_landmark_line(shape) << '\n';
}

}  // namespace lmdf
