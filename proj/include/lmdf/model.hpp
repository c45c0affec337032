// SPDX-License-Identifier: Apache-2.0
//
// The full framework: patch extraction settings, MCNN and temporal head.
//
// A saved model is a checkpoint file plus a key=value config next to it with
// ".cfg" appended to the checkpoint's file name.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lmdf/checkpoint.hpp"
#include "lmdf/config.hpp"
#include "lmdf/frame.hpp"
#include "lmdf/landmarks.hpp"
#include "lmdf/lstm.hpp"
#include "lmdf/mcnn.hpp"

namespace lmdf {

struct ModelConfig {
  MCNNConfig mcnn;
  LSTMConfig lstm;

  /// Checks both parts and that the LSTM consumes the MCNN representation.
  void validate() const;
  KeyValues to_map() const;
  static ModelConfig from_map(const KeyValues& kv);
  /// Reduced sizes that train in minutes on one CPU core.
  static ModelConfig desk();
};

enum class Alignment { aligned, uniform, specific };

Alignment parse_alignment(std::string_view text);
std::string_view to_string(Alignment a);

struct PatchOptions {
  Alignment alignment = Alignment::aligned;
  double landmark_noise = 0.0;  // std of Gaussian noise added to landmarks, px
  std::uint64_t seed = 0;       // noise and uniform-sampling seed
};

/// Patches of one frame in layout order, resized to the MCNN patch size.
/// `frame_key` decorrelates the noise between frames.
std::vector<Tensor> frame_patches(const Frame& frame, const FacialShape& shape, const MCNNConfig& mcnn,
                                  const PatchOptions& options, std::uint64_t frame_key);

class LMDFModel {
 public:
  explicit LMDFModel(const ModelConfig& config);

  ModelConfig config;
  MCNN<float> mcnn;
  TemporalHead<float> head;

  std::vector<NamedTensor> to_named() const;
  /// Throws CheckpointError for missing or mis-shaped tensors.
  void load_named(std::span<const NamedTensor> tensors);

  void save(const std::filesystem::path& checkpoint) const;
  /// Throws CheckpointError when the checkpoint or its config is missing or
  /// inconsistent.
  static LMDFModel load(const std::filesystem::path& checkpoint);
};

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint);

/// Git blob hash of the serialized tensors whose names start with `prefix`.
std::string parameter_checksum(std::span<const NamedTensor> tensors, std::string_view prefix = "");

}  // namespace lmdf
