// SPDX-License-Identifier: Apache-2.0
//
// Decoded frame sources.
//
// Raw frame stream (little-endian):
//   width u32, height u32, channels u8 (1 or 3), then frames back to back,
//   each width*height*channels bytes in row-major H x W x C order.
//
// Image directory: binary PGM (P5, 1 channel) or PPM (P6, 3 channels) files
// with maxval 255, ordered by the first run of digits in each file name.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <vector>

#include "lmdf/errors.hpp"

namespace lmdf {

struct Frame {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint8_t channels = 0;
  std::vector<std::uint8_t> pixels;

  Frame() = default;
  Frame(std::uint32_t w, std::uint32_t h, std::uint8_t c, std::uint8_t fill = 0);

  std::uint8_t at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const noexcept {
    return pixels[(std::size_t(y) * width + x) * channels + c];
  }
  std::uint8_t& at(std::uint32_t y, std::uint32_t x, std::uint32_t c) noexcept {
    return pixels[(std::size_t(y) * width + x) * channels + c];
  }
  /// Throws ValidationError unless the frame is non-empty, 1 or 3 channel and
  /// its buffer matches the extents.
  void validate() const;
  friend bool operator==(const Frame&, const Frame&) = default;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<Frame> next() = 0;
};

class RawFrameReader : public FrameSource {
 public:
  explicit RawFrameReader(const std::filesystem::path& path);
  std::optional<Frame> next() override;
  std::uint32_t width() const noexcept { return width_; }
  std::uint32_t height() const noexcept { return height_; }
  std::uint8_t channels() const noexcept { return channels_; }
  /// Number of complete frames in the stream.
  std::size_t frame_count();
  /// Random access; does not disturb next().
  Frame read(std::size_t index);

 private:
  std::ifstream in_;
  std::uint32_t width_ = 0, height_ = 0;
  std::uint8_t channels_ = 0;
  std::size_t index_ = 0;
};

class RawFrameWriter {
 public:
  RawFrameWriter(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                 std::uint8_t channels);
  void write(const Frame& frame);

 private:
  std::ofstream out_;
  std::uint32_t width_, height_;
  std::uint8_t channels_;
};

class ImageDirectoryReader : public FrameSource {
 public:
  explicit ImageDirectoryReader(const std::filesystem::path& dir);
  std::optional<Frame> next() override;
  std::size_t size() const noexcept { return files_.size(); }

 private:
  std::vector<std::filesystem::path> files_;
  std::size_t pos_ = 0;
};

Frame read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Frame& frame);

/// Directory -> ImageDirectoryReader, anything else -> RawFrameReader.
std::unique_ptr<FrameSource> open_frame_source(const std::filesystem::path& path);

}  // namespace lmdf
