// SPDX-License-Identifier: Apache-2.0
//
// Multi-granularity patch extraction: landmark anchors, square crops with zero
// fill, bilinear resize to the unified size and normalisation to [-0.5, 0.5].
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lmdf/frame.hpp"
#include "lmdf/landmarks.hpp"
#include "lmdf/tensor.hpp"

namespace lmdf {

inline constexpr std::size_t kPatchCount = 15;
inline constexpr std::uint32_t kUnifiedSize = 64;

enum class Granularity { local, part, global };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view text);
std::uint32_t crop_size_for(Granularity g);

struct PatchSpec {
  std::string name;
  Granularity granularity = Granularity::local;
  std::vector<std::size_t> landmark_indices;
  std::uint32_t crop_size = 0;
  /// Position inside the face box used by specific (unaligned) sampling.
  Point box_position;
};

/// Ordered patch positions. The canonical layout ships as
/// config/patch_layout.cfg and is compiled in as `standard()`.
struct PatchLayout {
  std::vector<PatchSpec> specs;
  std::uint32_t unified_size = kUnifiedSize;

  std::size_t size() const noexcept { return specs.size(); }
  std::vector<std::size_t> indices_of(Granularity g) const;

  /// Throws DataError on syntax errors and ValidationError when the layout
  /// breaks the 10 local / 4 part / 1 global structure.
  static PatchLayout parse(std::string_view text);
  static PatchLayout load(const std::filesystem::path& path);
  static const PatchLayout& standard();
  static std::string_view standard_text();
};

struct PatchSet {
  /// unified x unified x 3 tensors in layout order.
  std::vector<Tensor> patches;
};

/// Fixed-point resolution of anchor centres (pixels are split into this many
/// steps), which makes patch extraction exactly translation-equivariant.
inline constexpr std::int64_t kAnchorSubpixels = 256;

std::vector<Point> anchor_points(const FacialShape& shape,
                                 const PatchLayout& layout = PatchLayout::standard());

/// Square crop of side `crop_size` centred on `center`, zero outside the
/// frame, bilinearly resized to unified x unified. Values keep the raw
/// 0..255 range; grey frames are replicated to three channels.
Tensor crop_resize(const Frame& frame, Point center, std::uint32_t crop_size,
                   std::uint32_t unified_size);

/// Extracts and normalises the patch set of one frame. `unified_size` 0 uses
/// the layout's value. A sentinel shape yields all -0.5 patches.
PatchSet build_patch_set(const Frame& frame, const FacialShape& shape,
                         const PatchLayout& layout = PatchLayout::standard(),
                         std::uint32_t unified_size = 0);

/// Patches at explicit centres (one per layout entry), normalised.
PatchSet build_patch_set_at(const Frame& frame, const std::vector<Point>& centers,
                            const PatchLayout& layout, std::uint32_t unified_size = 0);

/// Adds independent N(0, sigma^2) noise to every coordinate. Sentinel shapes
/// are returned unchanged.
FacialShape perturb_landmarks(const FacialShape& shape, double sigma, std::uint64_t seed);

struct FaceBox {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
};

enum class SamplingMethod { uniform, specific };

SamplingMethod parse_sampling_method(std::string_view text);

/// Bounding box of the landmarks grown by `margin` times its size on each side.
FaceBox landmark_box(const FacialShape& shape, double margin = 0.15);

std::vector<Point> unaligned_centers(const FaceBox& box, SamplingMethod method,
                                     std::uint64_t seed,
                                     const PatchLayout& layout = PatchLayout::standard());

/// Unaligned baselines: same patch sizes as the aligned set, centres drawn
/// uniformly in the box or taken from the layout's fixed box positions.
PatchSet sample_unaligned(const Frame& frame, const FaceBox& box, SamplingMethod method,
                          std::uint64_t seed,
                          const PatchLayout& layout = PatchLayout::standard(),
                          std::uint32_t unified_size = 0);

}  // namespace lmdf
