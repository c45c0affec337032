// SPDX-License-Identifier: Apache-2.0
#include "lmdf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace lmdf {

bool GradCheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(),
                     [this](const BlockError& b) { return b.max_rel_error <= tolerance; });
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& b : blocks) w = std::max(w, b.max_rel_error);
  return w;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& b : blocks) {
    os << b.name << ": max_rel=" << b.max_rel_error << " (probes=" << b.probes
       << ", worst@" << b.worst_index << ")\n";
  }
  return os.str();
}

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const GradBlock> blocks,
                                  const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);
  for (const auto& block : blocks) {
    BlockError err;
    err.name = block.name;
    std::vector<std::size_t> probes(block.values.size());
    std::iota(probes.begin(), probes.end(), std::size_t{0});
    if (options.max_probes_per_block && probes.size() > options.max_probes_per_block) {
      std::shuffle(probes.begin(), probes.end(), rng);
      probes.resize(options.max_probes_per_block);
      std::sort(probes.begin(), probes.end());
    }
    for (std::size_t i : probes) {
      const double saved = block.values[i];
      block.values[i] = saved + options.step;
      const double up = loss();
      block.values[i] = saved - options.step;
      const double down = loss();
      block.values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = block.analytic[i];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > err.max_rel_error || !std::isfinite(rel)) {
        err.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        err.worst_index = i;
      }
    }
    err.probes = probes.size();
    report.blocks.push_back(std::move(err));
  }
  return report;
}

}  // namespace lmdf
