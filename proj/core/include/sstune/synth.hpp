// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sstune/bundle.hpp"

namespace sstune {

struct SyntheticConfig {
  std::size_t classes = 5;        // C
  std::size_t prompts = 2;        // m
  std::size_t repeats = 2;        // n
  std::size_t frames = 8;         // T
  std::size_t dim = 16;           // d
  std::size_t views = 8;          // V
  std::size_t test_instances = 1;
  double intra_prompt_noise = 0.05;
  double inter_prompt_spread = 0.3;
  double view_noise = 0.1;
  double outlier_fraction = 0.0;
  double outlier_distance = 0.8;
  std::uint64_t seed = 0;
};

void validate(const SyntheticConfig& config);

struct SyntheticSet {
  ClassCatalog catalog;
  ClassTextFeatures class_text;
  SupportSetBundle support;
  std::vector<TestInstanceBundle> tests;
};

/// Draws a clustered embedding world from one mt19937_64 stream seeded with
/// config.seed. The stream is consumed in this order:
///
///  1. class centers: C x d standard normals, each row normalized;
///  2. prompt sub-centers: for each class then prompt,
///     normalize(center + spread * N(0, I));
///  3. support frames: for each class, prompt, repeat, frame,
///     normalize(sub_center + noise * N(0, I));
///  4. outliers: for each class, floor(fraction * K) of its K videos are
///     picked without replacement; each gets a uniformly chosen other class
///     and every frame becomes normalize((1 - dist) * frame + dist * other).
///     Picked videos are flagged in provenance;
///  5. test instances: instance i has class i mod C; an instance center
///     normalize(center + spread * N(0, I)), frames
///     normalize(instance_center + noise * N(0, I)), then every view frame
///     normalize(frame + view_noise * N(0, I)).
///
/// Class text rows are the class centers themselves.
SyntheticSet synth_generate(const SyntheticConfig& config);

}  // namespace sstune
