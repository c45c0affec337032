// SPDX-License-Identifier: Apache-2.0
#include "lmdf/patches.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace lmdf {
namespace detail {
extern const std::string_view kStandardLayoutText;
}

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Coordinates far outside any frame are clamped before fixed-point conversion.
constexpr double kCoordLimit = 1e9;

std::int64_t to_fixed(double v) {
  if (!std::isfinite(v)) throw ValidationError("non-finite patch centre");
  return std::llround(std::clamp(v, -kCoordLimit, kCoordLimit) * double(kAnchorSubpixels));
}

struct AxisSamples {
  std::vector<std::int64_t> index;
  std::vector<double> frac;
};

// Source pixel index and bilinear weight for every output position along one
// axis, computed exactly in units of 1 / (2 * kAnchorSubpixels * unified).
AxisSamples axis_samples(std::int64_t center_fixed, std::uint32_t crop, std::uint32_t unified) {
  const std::int64_t u = unified, s = crop, q = kAnchorSubpixels;
  const std::int64_t denom = 2 * q * u;
  AxisSamples a;
  a.index.resize(unified);
  a.frac.resize(unified);
  for (std::int64_t j = 0; j < u; ++j) {
    const std::int64_t num = center_fixed * 2 * u - s * q * u + (2 * j + 1) * s * q - q * u;
    const std::int64_t ix = floor_div(num, denom);
    a.index[j] = ix;
    a.frac[j] = double(num - ix * denom) / double(denom);
  }
  return a;
}

void check_sizes(std::uint32_t crop, std::uint32_t unified) {
  if (crop == 0 || unified == 0) throw ValidationError("patch sizes must be positive");
}

}  // namespace

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::local: return "local";
    case Granularity::part: return "part";
    case Granularity::global: return "global";
  }
  return "?";
}

Granularity parse_granularity(std::string_view text) {
  if (text == "local") return Granularity::local;
  if (text == "part") return Granularity::part;
  if (text == "global") return Granularity::global;
  throw ValidationError("unknown granularity '" + std::string(text) + "'");
}

std::uint32_t crop_size_for(Granularity g) {
  switch (g) {
    case Granularity::local: return 32;
    case Granularity::part: return 64;
    case Granularity::global: return 160;
  }
  return 0;
}

std::vector<std::size_t> PatchLayout::indices_of(Granularity g) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].granularity == g) out.push_back(i);
  }
  return out;
}

PatchLayout PatchLayout::parse(std::string_view text) {
  PatchLayout layout;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw DataError("patch layout line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string name;
    if (!(fields >> name)) continue;
    if (name == "unified_size") {
      if (!(fields >> layout.unified_size)) fail("bad unified_size");
      continue;
    }
    PatchSpec spec;
    spec.name = name;
    std::string gran;
    if (!(fields >> gran >> spec.crop_size >> spec.box_position.x >> spec.box_position.y)) {
      fail("expected: name granularity crop box_u box_v landmarks...");
    }
    spec.granularity = parse_granularity(gran);
    std::size_t idx;
    while (fields >> idx) {
      if (idx >= kLandmarkCount) fail("landmark index out of range");
      spec.landmark_indices.push_back(idx);
    }
    if (!fields.eof()) fail("bad landmark index");
    if (spec.landmark_indices.empty()) fail("patch '" + name + "' lists no landmarks");
    layout.specs.push_back(std::move(spec));
  }

  if (layout.specs.size() != kPatchCount) {
    throw ValidationError("patch layout must list " + std::to_string(kPatchCount) +
                          " patches, got " + std::to_string(layout.specs.size()));
  }
  if (layout.unified_size != kUnifiedSize) {
    throw ValidationError("patch layout unified_size must be 64");
  }
  // Canonical order: locals, then parts, then the global face.
  const std::size_t counts[] = {10, 4, 1};
  std::size_t pos = 0;
  for (Granularity g : {Granularity::local, Granularity::part, Granularity::global}) {
    for (std::size_t n = 0; n < counts[static_cast<int>(g)]; ++n, ++pos) {
      const auto& spec = layout.specs[pos];
      if (spec.granularity != g) {
        throw ValidationError("patch layout is not in local/part/global order at '" + spec.name + "'");
      }
      if (spec.crop_size != crop_size_for(g)) {
        throw ValidationError("patch '" + spec.name + "' must use crop size " +
                              std::to_string(crop_size_for(g)));
      }
    }
  }
  return layout;
}

PatchLayout PatchLayout::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open patch layout " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string_view PatchLayout::standard_text() { return detail::kStandardLayoutText; }

const PatchLayout& PatchLayout::standard() {
  static const PatchLayout layout = parse(detail::kStandardLayoutText);
  return layout;
}

std::vector<Point> anchor_points(const FacialShape& shape, const PatchLayout& layout) {
  std::vector<Point> anchors;
  anchors.reserve(layout.size());
  for (const auto& spec : layout.specs) {
    std::int64_t sx = 0, sy = 0;
    for (auto i : spec.landmark_indices) {
      sx += to_fixed(shape.points[i].x);
      sy += to_fixed(shape.points[i].y);
    }
    // Round-half-up integer mean keeps the centroid on the fixed-point grid.
    const auto n = static_cast<std::int64_t>(spec.landmark_indices.size());
    const std::int64_t cx = floor_div(2 * sx + n, 2 * n);
    const std::int64_t cy = floor_div(2 * sy + n, 2 * n);
    anchors.push_back({double(cx) / double(kAnchorSubpixels), double(cy) / double(kAnchorSubpixels)});
  }
  return anchors;
}

Tensor crop_resize(const Frame& frame, Point center, std::uint32_t crop_size,
                   std::uint32_t unified_size) {
  frame.validate();
  check_sizes(crop_size, unified_size);
  const AxisSamples xs = axis_samples(to_fixed(center.x), crop_size, unified_size);
  const AxisSamples ys = axis_samples(to_fixed(center.y), crop_size, unified_size);
  const std::int64_t w = frame.width, h = frame.height;
  const std::uint32_t c = frame.channels;
  Tensor out({unified_size, unified_size, 3});
  auto px = [&](std::int64_t y, std::int64_t x, std::uint32_t ch) -> double {
    if (y < 0 || x < 0 || y >= h || x >= w) return 0.0;
    return frame.pixels[(std::size_t(y) * frame.width + std::size_t(x)) * c + ch];
  };
  for (std::uint32_t i = 0; i < unified_size; ++i) {
    const std::int64_t y0 = ys.index[i];
    const double fy = ys.frac[i];
    for (std::uint32_t j = 0; j < unified_size; ++j) {
      const std::int64_t x0 = xs.index[j];
      const double fx = xs.frac[j];
      for (std::uint32_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - fx) * px(y0, x0, ch) + fx * px(y0, x0 + 1, ch);
        const double bottom = (1.0 - fx) * px(y0 + 1, x0, ch) + fx * px(y0 + 1, x0 + 1, ch);
        out.at(i, j, ch) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
      if (c == 1) {
        out.at(i, j, 1) = out.at(i, j, 0);
        out.at(i, j, 2) = out.at(i, j, 0);
      }
    }
  }
  return out;
}

PatchSet build_patch_set_at(const Frame& frame, const std::vector<Point>& centers,
                            const PatchLayout& layout, std::uint32_t unified_size) {
  frame.validate();
  if (centers.size() != layout.size()) {
    throw ValidationError("expected one centre per layout entry");
  }
  const std::uint32_t u = unified_size ? unified_size : layout.unified_size;
  PatchSet set;
  set.patches.reserve(layout.size());
  for (std::size_t k = 0; k < layout.size(); ++k) {
    Tensor p = crop_resize(frame, centers[k], layout.specs[k].crop_size, u);
    for (auto& v : p.data()) v = std::clamp(static_cast<float>(v / 255.0 - 0.5), -0.5f, 0.5f);
    set.patches.push_back(std::move(p));
  }
  return set;
}

PatchSet build_patch_set(const Frame& frame, const FacialShape& shape, const PatchLayout& layout,
                         std::uint32_t unified_size) {
  frame.validate();
  const std::uint32_t u = unified_size ? unified_size : layout.unified_size;
  if (shape.is_sentinel()) {
    PatchSet set;
    set.patches.assign(layout.size(), Tensor({u, u, 3}, -0.5f));
    return set;
  }
  return build_patch_set_at(frame, anchor_points(shape, layout), layout, u);
}

FacialShape perturb_landmarks(const FacialShape& shape, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ValidationError("landmark noise sigma must be non-negative");
  if (sigma == 0.0 || shape.is_sentinel()) return shape;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  FacialShape out = shape;
  for (auto& p : out.points) {
    p.x += noise(rng);
    p.y += noise(rng);
  }
  return out;
}

SamplingMethod parse_sampling_method(std::string_view text) {
  if (text == "uniform" || text == "US") return SamplingMethod::uniform;
  if (text == "specific" || text == "SS") return SamplingMethod::specific;
  throw ValidationError("unknown sampling method '" + std::string(text) + "'");
}

FaceBox landmark_box(const FacialShape& shape, double margin) {
  double x0 = shape.points[0].x, x1 = x0, y0 = shape.points[0].y, y1 = y0;
  for (const auto& p : shape.points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double w = x1 - x0, h = y1 - y0;
  return {x0 - margin * w, y0 - margin * h, w * (1 + 2 * margin), h * (1 + 2 * margin)};
}

std::vector<Point> unaligned_centers(const FaceBox& box, SamplingMethod method, std::uint64_t seed,
                                     const PatchLayout& layout) {
  if (!(box.width > 0.0) || !(box.height > 0.0) || !std::isfinite(box.x) || !std::isfinite(box.y)) {
    throw ValidationError("face box must have positive finite extent");
  }
  std::vector<Point> centers;
  centers.reserve(layout.size());
  if (method == SamplingMethod::specific) {
    for (const auto& spec : layout.specs) {
      centers.push_back({box.x + spec.box_position.x * box.width,
                         box.y + spec.box_position.y * box.height});
    }
    return centers;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(box.x, box.x + box.width);
  std::uniform_real_distribution<double> uy(box.y, box.y + box.height);
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const double x = ux(rng);
    centers.push_back({x, uy(rng)});
  }
  return centers;
}

PatchSet sample_unaligned(const Frame& frame, const FaceBox& box, SamplingMethod method,
                          std::uint64_t seed, const PatchLayout& layout,
                          std::uint32_t unified_size) {
  return build_patch_set_at(frame, unaligned_centers(box, method, seed, layout), layout,
                            unified_size);
}

}  // namespace lmdf
