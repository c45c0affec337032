// SPDX-License-Identifier: Apache-2.0
#include "lmdf/corpus.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

namespace lmdf {
namespace {

class SyntheticFrames : public FrameAccess {
 public:
  explicit SyntheticFrames(std::shared_ptr<const SyntheticSequence> seq) : seq_(std::move(seq)) {}
  std::size_t size() const override { return seq_->length(); }
  Frame frame(std::size_t t) const override { return seq_->render(t); }

 private:
  std::shared_ptr<const SyntheticSequence> seq_;
};

class RawFrameFile : public FrameAccess {
 public:
  explicit RawFrameFile(const std::filesystem::path& path) : reader_(path), size_(reader_.frame_count()) {}
  std::size_t size() const override { return size_; }
  Frame frame(std::size_t t) const override {
    std::lock_guard lock(mutex_);
    return reader_.read(t);
  }

 private:
  mutable std::mutex mutex_;
  mutable RawFrameReader reader_;
  std::size_t size_;
};

class Sha1 {
 public:
  Sha1() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha1(), nullptr) != 1) throw std::runtime_error("SHA-1 unavailable");
  }
  ~Sha1() { EVP_MD_CTX_free(ctx_); }
  Sha1(const Sha1&) = delete;
  Sha1& operator=(const Sha1&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string raw_header(const Frame& first) {
  std::string h(9, '\0');
  for (int i = 0; i < 4; ++i) {
    h[i] = static_cast<char>((first.width >> (8 * i)) & 0xff);
    h[4 + i] = static_cast<char>((first.height >> (8 * i)) & 0xff);
  }
  h[8] = static_cast<char>(first.channels);
  return h;
}

std::string landmarks_text(const CorpusEntry& e) {
  std::string s;
  for (const auto& shape : e.landmarks) s += format_landmark_line(shape) + '\n';
  return s;
}

std::string corpus_text(const Corpus& c) {
  std::string s = "# source scenario\n";
  for (const auto& e : c.entries) s += e.source + ' ' + e.scenario + '\n';
  return s;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw DataError("cannot write " + p.string());
}

void check_entry(const CorpusEntry& e) {
  e.track.validate();
  if (e.track.length() != e.length() || !e.frames || e.frames->size() != e.length()) {
    throw DataError(e.source + ": frames (" + std::to_string(e.frames ? e.frames->size() : 0) + "), landmarks (" +
                    std::to_string(e.length()) + ") and annotations (" + std::to_string(e.track.length()) +
                    ") differ in length");
  }
  for (std::size_t t = 0; t < e.length(); ++t) {
    if (e.landmarks[t].frame_index != t) {
      throw DataError(e.source + ": landmark record " + std::to_string(t) + " carries frame index " +
                      std::to_string(e.landmarks[t].frame_index));
    }
  }
}

}  // namespace

std::string git_blob_sha1(std::string_view bytes) {
  Sha1 h;
  h.update("blob " + std::to_string(bytes.size()));
  h.update("\0", 1);
  h.update(bytes);
  return h.hex();
}

std::size_t Corpus::index_of(const std::string& source) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].source == source) return i;
  }
  throw ValidationError("unknown source '" + source + "'");
}

std::vector<std::string> Corpus::sources() const {
  std::vector<std::string> out;
  for (const auto& e : entries) out.push_back(e.source);
  return out;
}

Corpus Corpus::subset(const std::vector<std::string>& keep) const {
  Corpus out;
  for (const auto& e : entries) {
    if (std::find(keep.begin(), keep.end(), e.source) != keep.end()) out.entries.push_back(e);
  }
  for (const auto& c : clips) {
    if (std::find(keep.begin(), keep.end(), c.source()) != keep.end()) out.clips.push_back(c);
  }
  return out;
}

Corpus Corpus::from_synthetic(std::vector<SyntheticSequence> sequences, const RelabelRules& rules) {
  Corpus c;
  for (auto& s : sequences) {
    auto shared = std::make_shared<const SyntheticSequence>(std::move(s));
    CorpusEntry e;
    e.source = shared->source;
    e.scenario = shared->scenario;
    e.track = shared->track;
    e.landmarks = shared->landmarks;
    e.frames = std::make_shared<SyntheticFrames>(shared);
    const auto clips = instant_relabel(e.track, e.source, e.scenario, rules);
    c.clips.insert(c.clips.end(), clips.begin(), clips.end());
    c.entries.push_back(std::move(e));
  }
  return c;
}

Corpus Corpus::load(const std::filesystem::path& dir, const RelabelRules& rules) {
  std::ifstream listing(dir / "corpus.txt");
  if (!listing) throw DataError("no corpus.txt in " + dir.string());
  Corpus c;
  std::string line;
  while (std::getline(listing, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    CorpusEntry e;
    if (!(fields >> e.source >> e.scenario)) throw DataError("corpus.txt: bad line '" + line + "'");
    e.frames = std::make_shared<RawFrameFile>(dir / (e.source + ".raw"));
    LandmarkTrackReader reader(dir / (e.source + ".landmarks"));
    while (auto shape = reader.next()) e.landmarks.push_back(*shape);
    e.track = load_annotations(dir, e.source);
    check_entry(e);
    c.entries.push_back(std::move(e));
  }
  if (c.entries.empty()) throw DataError("corpus " + dir.string() + " lists no sources");
  if (std::filesystem::exists(dir / "clips.txt")) {
    c.clips = load_clips(dir / "clips.txt");
    for (const auto& clip : c.clips) {
      const auto& e = c.entries[c.index_of(clip.source())];
      if (clip.end > e.length()) throw DataError("clip " + clip.clip_id + " runs past its source");
    }
  } else {
    for (const auto& e : c.entries) {
      const auto clips = instant_relabel(e.track, e.source, e.scenario, rules);
      c.clips.insert(c.clips.end(), clips.begin(), clips.end());
    }
  }
  return c;
}

void Corpus::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_text(dir / "corpus.txt", corpus_text(*this));
  for (const auto& e : entries) {
    check_entry(e);
    if (e.length() == 0) throw ValidationError(e.source + " has no frames");
    const Frame first = e.frames->frame(0);
    RawFrameWriter w(dir / (e.source + ".raw"), first.width, first.height, first.channels);
    for (std::size_t t = 0; t < e.length(); ++t) w.write(t ? e.frames->frame(t) : first);
    write_text(dir / (e.source + ".landmarks"), landmarks_text(e));
    save_annotations(dir, e.source, e.track);
  }
  write_text(dir / "clips.txt", format_clips(clips));
}

std::string Corpus::content_hash() const {
  std::map<std::string, std::string> files;
  auto text_file = [&](const std::string& name, const std::string& text) { files[name] = git_blob_sha1(text); };
  text_file("corpus.txt", corpus_text(*this));
  text_file("clips.txt", format_clips(clips));
  for (const auto& e : entries) {
    check_entry(e);
    text_file(e.source + ".landmarks", landmarks_text(e));
    text_file(e.source + "_drowsiness.txt", format_annotation_text(e.track.drowsiness));
    text_file(e.source + "_eyes.txt", format_annotation_text(e.track.eyes));
    text_file(e.source + "_head.txt", format_annotation_text(e.track.head));
    text_file(e.source + "_mouth.txt", format_annotation_text(e.track.mouth));
    if (e.length() == 0) continue;
    const Frame first = e.frames->frame(0);
    const std::string header = raw_header(first);
    Sha1 h;
    h.update("blob " + std::to_string(header.size() + e.length() * first.pixels.size()));
    h.update("\0", 1);
    h.update(header);
    for (std::size_t t = 0; t < e.length(); ++t) {
      const Frame f = t ? e.frames->frame(t) : first;
      h.update(f.pixels.data(), f.pixels.size());
    }
    files[e.source + ".raw"] = h.hex();
  }
  std::string listing;
  for (const auto& [name, hash] : files) listing += hash + ' ' + name + '\n';
  return git_blob_sha1(listing);
}

}  // namespace lmdf
