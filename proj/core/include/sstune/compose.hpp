// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <tuple>

#include "sstune/bundle.hpp"

namespace sstune {

struct VideoKey {
  std::size_t class_index = 0;
  std::size_t prompt = 0;
  std::size_t repeat = 0;

  friend auto operator<=>(const VideoKey&, const VideoKey&) = default;
};

using VideoFeatureMap = std::map<VideoKey, DenseMatrix>;

/// Stacks per-video T x d features into a support set with K = m * n videos
/// per class, ordered class-major then prompt then repeat.
///
/// Throws FactorabilityViolation when a class does not carry exactly m * n
/// videos, MissingVideo when a (class, prompt, repeat) slot is empty and
/// DimMismatch when the videos disagree on T or d.
SupportSetBundle compose_support_set(const ClassCatalog& catalog, const PromptSet& prompts,
                                     const VideoFeatureMap& videos);

// File formats used by the `compose` command.
//
// catalog:  {"classes": ["name", ...]}  or a bare JSON list of names
// prompts:  {"m": 2, "n": 4, "prompts": {"name": ["description", ...], ...}}
// features: <dir>/index.json = {"T": 8, "d": 512, "videos": [
//              {"class": "name", "prompt": 0, "repeat": 0, "file": "a.bin"}, ...]}
//           each file raw f32le, T * d floats, row-major.
ClassCatalog read_catalog(const std::filesystem::path& file);
PromptSet read_prompt_set(const std::filesystem::path& file);
VideoFeatureMap read_video_features(const std::filesystem::path& dir, const ClassCatalog& catalog);

}  // namespace sstune
