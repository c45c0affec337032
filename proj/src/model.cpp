// SPDX-License-Identifier: Apache-2.0
#include "lmdf/model.hpp"

#include <fstream>
#include <sstream>

#include "lmdf/corpus.hpp"
#include "lmdf/patches.hpp"

namespace lmdf {

void ModelConfig::validate() const {
  mcnn.validate();
  lstm.validate();
  if (mcnn.path_count != PatchLayout::standard().size()) {
    throw ValidationError("the MCNN needs one path per patch (" + std::to_string(PatchLayout::standard().size()) +
                          "), got " + std::to_string(mcnn.path_count));
  }
  if (lstm.input_dim != mcnn.representation_dim) {
    throw ValidationError("LSTM input width " + std::to_string(lstm.input_dim) +
                          " differs from the representation width " + std::to_string(mcnn.representation_dim));
  }
}

KeyValues ModelConfig::to_map() const {
  KeyValues kv = mcnn.to_map();
  for (const auto& [k, v] : lstm.to_map()) kv[k] = v;
  return kv;
}

ModelConfig ModelConfig::from_map(const KeyValues& kv) {
  ModelConfig c;
  c.mcnn = MCNNConfig::from_map(kv);
  KeyValues lstm_kv = kv;
  // The LSTM consumes the representation unless told otherwise.
  if (!kv.count("lstm_input_dim")) lstm_kv["lstm_input_dim"] = std::to_string(c.mcnn.representation_dim);
  c.lstm = LSTMConfig::from_map(lstm_kv);
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.mcnn.patch_size = 16;
  c.mcnn.channels1 = 8;
  c.mcnn.channels2 = 16;
  c.mcnn.channels3 = 4;
  c.mcnn.representation_dim = 64;
  c.lstm.input_dim = 64;
  c.lstm.hidden_dim = 32;
  return c;
}

Alignment parse_alignment(std::string_view text) {
  if (text == "aligned" || text == "AS") return Alignment::aligned;
  if (text == "uniform" || text == "US") return Alignment::uniform;
  if (text == "specific" || text == "SS") return Alignment::specific;
  throw ValidationError("unknown patch alignment '" + std::string(text) + "'");
}

std::string_view to_string(Alignment a) {
  switch (a) {
    case Alignment::aligned:
      return "aligned";
    case Alignment::uniform:
      return "uniform";
    case Alignment::specific:
      return "specific";
  }
  return "?";
}

std::vector<Tensor> frame_patches(const Frame& frame, const FacialShape& shape, const MCNNConfig& mcnn,
                                  const PatchOptions& options, std::uint64_t frame_key) {
  const auto& layout = PatchLayout::standard();
  const std::uint32_t size = static_cast<std::uint32_t>(mcnn.patch_size);
  const std::uint64_t key = options.seed * 0x9E3779B97F4A7C15ULL ^ (frame_key + 0x632BE59BD9B4E019ULL);
  const FacialShape noisy = perturb_landmarks(shape, options.landmark_noise, key);
  PatchSet set;
  if (options.alignment == Alignment::aligned || noisy.is_sentinel()) {
    set = build_patch_set(frame, noisy, layout, size);
  } else {
    const SamplingMethod m =
        options.alignment == Alignment::uniform ? SamplingMethod::uniform : SamplingMethod::specific;
    set = sample_unaligned(frame, landmark_box(noisy), m, key, layout, size);
  }
  return std::move(set.patches);
}

LMDFModel::LMDFModel(const ModelConfig& c) : config(c), mcnn((c.validate(), c.mcnn)), head(c.lstm) {}

std::vector<NamedTensor> LMDFModel::to_named() const {
  std::vector<NamedTensor> out = mcnn.to_named();
  for (auto& t : head.to_named()) out.push_back(std::move(t));
  return out;
}

void LMDFModel::load_named(std::span<const NamedTensor> tensors) {
  mcnn.load_named(tensors);
  head.load_named(tensors);
}

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".cfg";
}

void LMDFModel::save(const std::filesystem::path& checkpoint) const {
  if (checkpoint.has_parent_path()) std::filesystem::create_directories(checkpoint.parent_path());
  save_checkpoint(checkpoint, to_named());
  std::ofstream out(config_path_for(checkpoint), std::ios::trunc);
  if (!out || !(out << format_key_values(config.to_map()))) {
    throw CheckpointError("cannot write model config next to " + checkpoint.string());
  }
}

LMDFModel LMDFModel::load(const std::filesystem::path& checkpoint) {
  const auto cfg_path = config_path_for(checkpoint);
  if (!std::filesystem::exists(cfg_path)) throw CheckpointError("missing model config " + cfg_path.string());
  ModelConfig config;
  try {
    config = ModelConfig::from_map(load_key_values(cfg_path));
    config.validate();
  } catch (const std::exception& e) {
    throw CheckpointError("bad model config " + cfg_path.string() + ": " + e.what());
  }
  const auto tensors = load_checkpoint(checkpoint);
  LMDFModel model(config);
  model.load_named(tensors);
  return model;
}

std::string parameter_checksum(std::span<const NamedTensor> tensors, std::string_view prefix) {
  std::vector<NamedTensor> picked;
  for (const auto& t : tensors) {
    if (t.name.starts_with(prefix)) picked.push_back(t);
  }
  std::ostringstream out;
  write_checkpoint(out, picked);
  return git_blob_sha1(out.str());
}

}  // namespace lmdf
