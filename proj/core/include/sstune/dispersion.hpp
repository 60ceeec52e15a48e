// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "sstune/bundle.hpp"

namespace sstune {

/// Pairwise cosine distances (1 - cos) between the videos of one class. Each
/// video is pooled as the mean of its frames and renormalized first. A
/// statistic with no contributing pair is nullopt: every statistic of a class
/// with K = 1, the same-prompt mean when n = 1, the cross-prompt mean when
/// m = 1.
struct ClassDispersion {
  std::size_t class_index = 0;
  std::optional<double> mean_pairwise;
  std::optional<double> within_prompt;
  std::optional<double> across_prompt;
};

std::vector<ClassDispersion> dispersion_stats(const SupportSetBundle& bundle);

/// Mean of mean_pairwise over classes that have one.
std::optional<double> mean_intra_class_distance(const std::vector<ClassDispersion>& report);

}  // namespace sstune
