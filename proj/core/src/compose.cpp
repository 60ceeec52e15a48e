// SPDX-License-Identifier: Apache-2.0
#include "sstune/compose.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "json.hpp"
#include "sstune/error.hpp"

namespace sstune {

namespace fs = std::filesystem;
using nlohmann::json;

SupportSetBundle compose_support_set(const ClassCatalog& catalog, const PromptSet& prompts,
                                     const VideoFeatureMap& videos) {
  validate(catalog);
  validate(prompts);
  const std::size_t classes = catalog.size();
  const std::size_t m = prompts.sampled;
  const std::size_t n = prompts.repeats;
  const std::size_t k = m * n;

  std::vector<std::size_t> per_class(classes, 0);
  for (const auto& [key, _] : videos) {
    require(key.class_index < classes, ErrorCode::kInvalidArgument,
            "video refers to class index " + std::to_string(key.class_index));
    ++per_class[key.class_index];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    require(per_class[c] == k, ErrorCode::kFactorabilityViolation,
            "class '" + catalog.classes[c] + "' has " + std::to_string(per_class[c]) +
                " videos, expected m*n=" + std::to_string(k));
  }

  require(!videos.empty(), ErrorCode::kMissingVideo, "no videos supplied");
  const std::size_t frames = videos.begin()->second.rows();
  const std::size_t dim = videos.begin()->second.cols();

  SupportSetBundle out;
  out.classes = catalog.classes;
  out.descriptions = prompts.description_count();
  out.sampled = m;
  out.repeats = n;
  out.features = Tensor3(classes * k, frames, dim);
  out.labels = DenseMatrix(classes * k, classes);
  out.provenance.reserve(classes * k);

  bool unit = true;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t r = 0; r < n; ++r) {
        const auto it = videos.find(VideoKey{c, p, r});
        require(it != videos.end(), ErrorCode::kMissingVideo,
                "missing video (" + catalog.classes[c] + ", prompt " + std::to_string(p) +
                    ", repeat " + std::to_string(r) + ")");
        const DenseMatrix& slab = it->second;
        require(slab.rows() == frames && slab.cols() == dim, ErrorCode::kDimMismatch,
                "video (" + catalog.classes[c] + ", " + std::to_string(p) + ", " +
                    std::to_string(r) + ") is " + std::to_string(slab.rows()) + "x" +
                    std::to_string(slab.cols()));
        const std::size_t row = c * k + p * n + r;
        out.features.set_item(row, slab);
        out.labels(row, c) = 1.0f;
        out.provenance.push_back(VideoProvenance{c, p, r, false});
        for (std::size_t t = 0; t < frames && unit; ++t) {
          double sq = 0.0;
          for (float x : slab.row(t)) sq += static_cast<double>(x) * x;
          unit = std::abs(std::sqrt(sq) - 1.0) <= 1e-5;
        }
      }
    }
  }
  out.normalized = unit;
  validate(out);
  return out;
}

namespace {

json read_json(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorCode::kIoFailure, "cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaMismatch, file.string() + ": " + e.what());
  }
}

}  // namespace

ClassCatalog read_catalog(const fs::path& file) {
  const json j = read_json(file);
  ClassCatalog catalog;
  try {
    catalog.classes = j.is_array() ? j.get<std::vector<std::string>>()
                                   : j.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaMismatch, "catalog: " + std::string(e.what()));
  }
  validate(catalog);
  return catalog;
}

PromptSet read_prompt_set(const fs::path& file) {
  const json j = read_json(file);
  PromptSet prompts;
  try {
    prompts.sampled = j.at("m").get<std::size_t>();
    prompts.repeats = j.at("n").get<std::size_t>();
    prompts.descriptions =
        j.at("prompts").get<std::map<std::string, std::vector<std::string>>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaMismatch, "prompt set: " + std::string(e.what()));
  }
  validate(prompts);
  return prompts;
}

VideoFeatureMap read_video_features(const fs::path& dir, const ClassCatalog& catalog) {
  const json index = read_json(dir / "index.json");
  VideoFeatureMap out;
  try {
    const auto frames = index.at("T").get<std::size_t>();
    const auto dim = index.at("d").get<std::size_t>();
    for (const auto& v : index.at("videos")) {
      const auto name = v.at("class").get<std::string>();
      const auto cls = catalog.index_of(name);
      require(cls.has_value(), ErrorCode::kInvalidArgument, "unknown class '" + name + "'");
      const VideoKey key{*cls, v.at("prompt").get<std::size_t>(), v.at("repeat").get<std::size_t>()};
      const fs::path blob = dir / v.at("file").get<std::string>();
      std::ifstream in(blob, std::ios::binary);
      require(static_cast<bool>(in), ErrorCode::kIoFailure, "cannot open " + blob.string());
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      require(bytes.size() % (sizeof(float) * dim) == 0, ErrorCode::kCorruptBlob,
              blob.string() + " is not a whole number of d-wide rows");
      const std::size_t rows = bytes.size() / (sizeof(float) * dim);
      require(rows == frames, ErrorCode::kDimMismatch,
              blob.string() + " has " + std::to_string(rows) + " frames, index says " +
                  std::to_string(frames));
      std::vector<float> data(rows * dim);
      std::copy(bytes.begin(), bytes.end(), reinterpret_cast<char*>(data.data()));
      require(out.emplace(key, DenseMatrix(rows, dim, std::move(data))).second,
              ErrorCode::kInvalidArgument, "duplicate video entry in " + blob.string());
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaMismatch, "feature index: " + std::string(e.what()));
  }
  return out;
}

}  // namespace sstune
