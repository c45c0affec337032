// SPDX-License-Identifier: Apache-2.0
#include "lmdf/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

namespace lmdf {
namespace {

constexpr std::array<char, 4> kMagic{'L', 'M', 'D', 'F'};
// Guards against absurd allocations when reading a corrupt file.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 16;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, std::span<const NamedTensor> tensors) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto e : nt.tensor.shape()) put_le<std::uint64_t>(out, e);
    for (float v : nt.tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw CheckpointError("not an LMDF checkpoint (bad magic)");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in, "tensor count");
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = get_le<std::uint32_t>(in, "name length");
    if (name_len > kMaxNameLength) throw CheckpointError("tensor name too long");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CheckpointError("truncated checkpoint while reading tensor name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    if (rank > kMaxRank) throw CheckpointError("tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    std::uint64_t elements = 1;
    for (auto& e : shape) {
      const auto extent = get_le<std::uint64_t>(in, "extent");
      if (extent == 0 || extent > kMaxElements) {
        throw CheckpointError("tensor '" + name + "' has invalid extent");
      }
      elements *= extent;
      if (elements > kMaxElements) throw CheckpointError("tensor '" + name + "' is too large");
      e = static_cast<std::size_t>(extent);
    }
    std::vector<float> data(elements);
    for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(in, "payload"));
    tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

const Tensor& find_tensor(std::span<const NamedTensor> tensors, const std::string& name,
                          const Shape& expected) {
  for (const auto& nt : tensors) {
    if (nt.name == name) {
      if (nt.tensor.shape() != expected) {
        throw CheckpointError("tensor '" + name + "' has shape " +
                              shape_to_string(nt.tensor.shape()) + ", expected " +
                              shape_to_string(expected));
      }
      return nt.tensor;
    }
  }
  throw CheckpointError("checkpoint is missing tensor '" + name + "'");
}

}  // namespace lmdf
