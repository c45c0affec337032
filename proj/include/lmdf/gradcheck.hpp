// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lmdf {

/// A parameter block to probe: `values` is perturbed in place, `analytic`
/// holds the gradient computed by the backward pass at the unperturbed point.
struct GradBlock {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double denominator_floor = 1e-6;
  /// 0 probes every element; otherwise a seeded random subset per block.
  std::size_t max_probes_per_block = 0;
  std::uint64_t seed = 0;
};

struct BlockError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
};

struct GradCheckReport {
  double tolerance = 0.0;
  std::vector<BlockError> blocks;

  bool passed() const;
  double worst() const;
  std::string summary() const;
};

/// Central-difference verification of analytic gradients. `loss` must read the
/// current contents of every block's `values`.
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const GradBlock> blocks,
                                  const GradCheckOptions& options = {});

}  // namespace lmdf
