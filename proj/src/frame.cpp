// SPDX-License-Identifier: Apache-2.0
#include "lmdf/frame.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <string>

namespace lmdf {
namespace {

std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw DataError("truncated raw frame stream header");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF),
                     char((v >> 24) & 0xFF)};
  out.write(b, 4);
}

// Numeric key of the first digit run in a file name; files without digits sort last.
std::uint64_t file_number(const std::filesystem::path& p) {
  const std::string name = p.filename().string();
  auto it = std::find_if(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c); });
  if (it == name.end()) return UINT64_MAX;
  std::uint64_t v = 0;
  for (; it != name.end() && std::isdigit(static_cast<unsigned char>(*it)); ++it) {
    v = v * 10 + static_cast<std::uint64_t>(*it - '0');
  }
  return v;
}

std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

Frame::Frame(std::uint32_t w, std::uint32_t h, std::uint8_t c, std::uint8_t fill)
    : width(w), height(h), channels(c), pixels(std::size_t(w) * h * c, fill) {}

void Frame::validate() const {
  if (width == 0 || height == 0) throw ValidationError("frame has zero extent");
  if (channels != 1 && channels != 3) {
    throw ValidationError("frame must have 1 or 3 channels, got " + std::to_string(channels));
  }
  if (pixels.size() != std::size_t(width) * height * channels) {
    throw ValidationError("frame buffer size does not match its extents");
  }
}

constexpr std::size_t kRawHeaderBytes = 9;

RawFrameReader::RawFrameReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary) {
  if (!in_) throw DataError("cannot open frame stream " + path.string());
  width_ = read_u32(in_);
  height_ = read_u32(in_);
  const int c = in_.get();
  if (c == EOF) throw DataError("truncated raw frame stream header");
  channels_ = static_cast<std::uint8_t>(c);
  if (width_ == 0 || height_ == 0 || (channels_ != 1 && channels_ != 3)) {
    throw DataError("raw frame stream header is invalid");
  }
}

std::optional<Frame> RawFrameReader::next() {
  Frame f(width_, height_, channels_);
  in_.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
  const auto got = static_cast<std::size_t>(in_.gcount());
  if (got == 0) return std::nullopt;
  if (got != f.pixels.size()) {
    throw DataError("raw frame stream ends inside frame " + std::to_string(index_));
  }
  ++index_;
  return f;
}

std::size_t RawFrameReader::frame_count() {
  const auto pos = in_.tellg();
  in_.clear();
  in_.seekg(0, std::ios::end);
  const auto end = static_cast<std::size_t>(in_.tellg());
  in_.clear();
  in_.seekg(pos);
  const std::size_t bytes = std::size_t(width_) * height_ * channels_;
  return end > kRawHeaderBytes ? (end - kRawHeaderBytes) / bytes : 0;
}

Frame RawFrameReader::read(std::size_t index) {
  const auto pos = in_.tellg();
  Frame f(width_, height_, channels_);
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(kRawHeaderBytes + index * f.pixels.size()));
  in_.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
  const bool ok = static_cast<std::size_t>(in_.gcount()) == f.pixels.size();
  in_.clear();
  in_.seekg(pos);
  if (!ok) throw DataError("raw frame stream has no complete frame " + std::to_string(index));
  return f;
}

RawFrameWriter::RawFrameWriter(const std::filesystem::path& path, std::uint32_t width,
                               std::uint32_t height, std::uint8_t channels)
    : out_(path, std::ios::binary | std::ios::trunc), width_(width), height_(height),
      channels_(channels) {
  if (!out_) throw DataError("cannot write frame stream " + path.string());
  Frame(width, height, channels).validate();
  write_u32(out_, width);
  write_u32(out_, height);
  out_.put(static_cast<char>(channels));
}

void RawFrameWriter::write(const Frame& frame) {
  if (frame.width != width_ || frame.height != height_ || frame.channels != channels_) {
    throw ValidationError("frame extents differ from the stream header");
  }
  out_.write(reinterpret_cast<const char*>(frame.pixels.data()),
             static_cast<std::streamsize>(frame.pixels.size()));
  if (!out_) throw DataError("failed writing frame stream");
}

Frame read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const std::string magic = pnm_token(in);
  std::uint8_t channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw DataError(path.string() + ": only binary PGM/PPM images are supported");
  std::uint32_t w = 0, h = 0, maxval = 0;
  try {
    w = static_cast<std::uint32_t>(std::stoul(pnm_token(in)));
    h = static_cast<std::uint32_t>(std::stoul(pnm_token(in)));
    maxval = static_cast<std::uint32_t>(std::stoul(pnm_token(in)));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PNM header");
  }
  if (maxval != 255 || w == 0 || h == 0) {
    throw DataError(path.string() + ": expected 8-bit image with positive extents");
  }
  Frame f(w, h, channels);
  in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != f.pixels.size()) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  return f;
}

void write_pnm(const std::filesystem::path& path, const Frame& frame) {
  frame.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image " + path.string());
  out << (frame.channels == 1 ? "P5" : "P6") << '\n'
      << frame.width << ' ' << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
}

ImageDirectoryReader::ImageDirectoryReader(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) {
      files_.push_back(entry.path());
    }
  }
  std::sort(files_.begin(), files_.end(), [](const auto& a, const auto& b) {
    const auto na = file_number(a), nb = file_number(b);
    return na != nb ? na < nb : a.filename() < b.filename();
  });
}

std::optional<Frame> ImageDirectoryReader::next() {
  if (pos_ >= files_.size()) return std::nullopt;
  return read_pnm(files_[pos_++]);
}

std::unique_ptr<FrameSource> open_frame_source(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return std::make_unique<ImageDirectoryReader>(path);
  return std::make_unique<RawFrameReader>(path);
}

}  // namespace lmdf
