// SPDX-License-Identifier: Apache-2.0
//
// A corpus is a set of sources (one per persona or video), each with frames,
// landmarks and annotations, plus the clip manifest derived from them.
//
// On disk a corpus is a directory:
//   corpus.txt                        one "source scenario" line per source
//   <source>.raw                      raw frame stream
//   <source>.landmarks                landmark track
//   <source>_{drowsiness,eyes,head,mouth}.txt
//   clips.txt                         clip manifest (recomputed when absent)
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "lmdf/annotations.hpp"
#include "lmdf/frame.hpp"
#include "lmdf/landmarks.hpp"
#include "lmdf/synth.hpp"

namespace lmdf {

class FrameAccess {
 public:
  virtual ~FrameAccess() = default;
  virtual std::size_t size() const = 0;
  virtual Frame frame(std::size_t t) const = 0;
};

struct CorpusEntry {
  std::string source;
  std::string scenario;
  AnnotationTrack track;
  std::vector<FacialShape> landmarks;
  std::shared_ptr<const FrameAccess> frames;

  std::size_t length() const noexcept { return landmarks.size(); }
};

struct Corpus {
  std::vector<CorpusEntry> entries;
  std::vector<ClipManifest> clips;

  /// Throws ValidationError for an unknown source.
  std::size_t index_of(const std::string& source) const;
  std::vector<std::string> sources() const;
  /// Entries and clips of the listed sources, in corpus order.
  Corpus subset(const std::vector<std::string>& sources) const;

  /// Sources render lazily; clips come from instant_relabel.
  static Corpus from_synthetic(std::vector<SyntheticSequence> sequences, const RelabelRules& rules = {});
  static Corpus load(const std::filesystem::path& dir, const RelabelRules& rules = {});
  void save(const std::filesystem::path& dir) const;

  /// Git blob SHA-1 over a listing of per-file blob hashes of the corpus files
  /// as save() writes them. Equal for a corpus and its saved copy.
  std::string content_hash() const;
};

/// Git's blob hash, SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(std::string_view bytes);

}  // namespace lmdf
