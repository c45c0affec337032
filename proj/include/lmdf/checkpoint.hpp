// SPDX-License-Identifier: Apache-2.0
//
// Binary parameter container. Layout (all integers little-endian):
//
//   "LMDF"            4 bytes magic
//   version           u32 (currently 1)
//   tensor count      u32
//   per tensor:
//     name length     u32, followed by that many UTF-8 bytes
//     rank            u32
//     extents         rank x u64
//     payload         product(extents) x float32 (IEEE-754 bit pattern)
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmdf/tensor.hpp"

namespace lmdf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_checkpoint(std::ostream& out, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Looks up `name`; throws CheckpointError when absent or the shape differs.
const Tensor& find_tensor(std::span<const NamedTensor> tensors, const std::string& name,
                          const Shape& expected);

}  // namespace lmdf
