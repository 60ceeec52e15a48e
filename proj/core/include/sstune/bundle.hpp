// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sstune/tensor.hpp"

namespace sstune {

inline constexpr int kSchemaVersion = 1;

struct ClassCatalog {
  std::vector<std::string> classes;

  std::size_t size() const noexcept { return classes.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;

  friend bool operator==(const ClassCatalog&, const ClassCatalog&) = default;
};

/// Descriptions per class name, plus how many of them were sampled (m) and
/// how many videos each sampled prompt produced (n).
struct PromptSet {
  std::map<std::string, std::vector<std::string>> descriptions;
  std::size_t sampled = 1;  // m
  std::size_t repeats = 1;  // n

  std::size_t per_class() const noexcept { return sampled * repeats; }
  /// Description count M; all classes carry the same number.
  std::size_t description_count() const;

  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

struct ClassTextFeatures {
  std::vector<std::string> classes;
  DenseMatrix weights;  // C x d, row i embeds class i
  bool normalized = true;

  std::size_t num_classes() const noexcept { return weights.rows(); }
  std::size_t dim() const noexcept { return weights.cols(); }

  friend bool operator==(const ClassTextFeatures&, const ClassTextFeatures&) = default;
};

struct VideoProvenance {
  std::size_t class_index = 0;
  std::size_t prompt = 0;
  std::size_t repeat = 0;
  bool outlier = false;

  friend bool operator==(const VideoProvenance&, const VideoProvenance&) = default;
};

/// Support videos grouped class-major, then prompt, then repeat:
/// row = class * K + prompt * n + repeat.
struct SupportSetBundle {
  std::vector<std::string> classes;
  Tensor3 features;     // CK x T x d
  DenseMatrix labels;   // CK x C one-hot
  std::vector<VideoProvenance> provenance;
  std::size_t descriptions = 1;  // M
  std::size_t sampled = 1;       // m
  std::size_t repeats = 1;       // n
  bool normalized = true;

  std::size_t num_classes() const noexcept { return labels.cols(); }
  std::size_t num_videos() const noexcept { return features.outer(); }
  std::size_t per_class() const noexcept { return sampled * repeats; }
  std::size_t frames() const noexcept { return features.frames(); }
  std::size_t dim() const noexcept { return features.channels(); }
  std::size_t label_of(std::size_t video) const noexcept { return provenance[video].class_index; }

  friend bool operator==(const SupportSetBundle&, const SupportSetBundle&) = default;
};

struct TestInstanceBundle {
  std::vector<std::string> classes;  // optional, may be empty
  Tensor3 views;                     // V x T x d
  DenseMatrix original;              // T x d
  std::optional<std::size_t> ground_truth;
  bool normalized = true;

  std::size_t num_views() const noexcept { return views.outer(); }
  std::size_t frames() const noexcept { return original.rows(); }
  std::size_t dim() const noexcept { return original.cols(); }

  friend bool operator==(const TestInstanceBundle&, const TestInstanceBundle&) = default;
};

using AnyBundle = std::variant<ClassTextFeatures, SupportSetBundle, TestInstanceBundle>;

void validate(const ClassCatalog& catalog);
void validate(const PromptSet& prompts);
void validate(const ClassTextFeatures& bundle);
void validate(const SupportSetBundle& bundle);
void validate(const TestInstanceBundle& bundle);

/// Throws BundleInconsistency unless the three bundles can be evaluated
/// together (same C, T, d, class names where present).
void check_consistent(const ClassTextFeatures& text, const SupportSetBundle& support,
                      const TestInstanceBundle& test);

/// Writes manifest.json and one raw f32le blob per array into `dir`
/// (created if missing) and returns the SHA-256 hex digest of the manifest
/// bytes. The manifest records a SHA-256 of each blob, so the digest covers
/// the array contents too.
std::string save_bundle(const ClassTextFeatures& bundle, const std::filesystem::path& dir);
std::string save_bundle(const SupportSetBundle& bundle, const std::filesystem::path& dir);
std::string save_bundle(const TestInstanceBundle& bundle, const std::filesystem::path& dir);
std::string save_bundle(const AnyBundle& bundle, const std::filesystem::path& dir);

AnyBundle load_bundle(const std::filesystem::path& dir);
ClassTextFeatures load_class_text(const std::filesystem::path& dir);
SupportSetBundle load_support_set(const std::filesystem::path& dir);
TestInstanceBundle load_test_instance(const std::filesystem::path& dir);

/// Support set restricted to the videos of prompt 0 in every class, i.e. the
/// single-prompt baseline when multi-prompt dilation is switched off.
SupportSetBundle single_prompt_subset(const SupportSetBundle& bundle);

std::string sha256_hex(const void* data, std::size_t size);

}  // namespace sstune
