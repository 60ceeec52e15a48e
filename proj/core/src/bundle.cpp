// SPDX-License-Identifier: Apache-2.0
#include "sstune/bundle.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "sstune/error.hpp"

namespace sstune {

static_assert(std::endian::native == std::endian::little,
              "blob I/O writes host floats directly as f32le");

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<std::size_t> ClassCatalog::index_of(const std::string& name) const {
  const auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) return std::nullopt;
  return static_cast<std::size_t>(it - classes.begin());
}

std::size_t PromptSet::description_count() const {
  return descriptions.empty() ? 0 : descriptions.begin()->second.size();
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) == 1, ErrorCode::kIoFailure,
          "sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

void validate(const ClassCatalog& catalog) {
  require(!catalog.classes.empty(), ErrorCode::kInvariantViolation, "catalog is empty");
  std::set<std::string> seen;
  for (const auto& name : catalog.classes) {
    require(!name.empty(), ErrorCode::kInvariantViolation, "empty class name");
    require(seen.insert(name).second, ErrorCode::kInvariantViolation,
            "duplicate class name '" + name + "'");
  }
}

void validate(const PromptSet& prompts) {
  require(prompts.sampled >= 1 && prompts.repeats >= 1, ErrorCode::kInvariantViolation,
          "m and n must be at least 1");
  const std::size_t total = prompts.description_count();
  for (const auto& [name, list] : prompts.descriptions) {
    require(list.size() == total, ErrorCode::kInvariantViolation,
            "class '" + name + "' has a different description count");
    for (const auto& d : list) {
      require(!d.empty(), ErrorCode::kInvariantViolation, "empty description for '" + name + "'");
    }
  }
  require(prompts.sampled <= total, ErrorCode::kInvariantViolation,
          "m=" + std::to_string(prompts.sampled) + " exceeds M=" + std::to_string(total));
}

namespace {

void require_unit_rows(const DenseMatrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double sq = 0.0;
    for (float x : m.row(r)) sq += static_cast<double>(x) * x;
    require(std::abs(std::sqrt(sq) - 1.0) <= 1e-5, ErrorCode::kInvariantViolation,
            std::string(what) + " row " + std::to_string(r) + " is not unit norm");
  }
}

}  // namespace

void validate(const ClassTextFeatures& bundle) {
  require(bundle.weights.rows() >= 1 && bundle.weights.cols() >= 1,
          ErrorCode::kInvariantViolation, "class text matrix is empty");
  require(bundle.weights.all_finite(), ErrorCode::kInvariantViolation,
          "class text features contain non-finite values");
  if (!bundle.classes.empty()) {
    validate(ClassCatalog{bundle.classes});
    require(bundle.classes.size() == bundle.weights.rows(), ErrorCode::kInvariantViolation,
            "class count does not match text feature rows");
  }
  if (bundle.normalized) require_unit_rows(bundle.weights, "class text");
}

void validate(const SupportSetBundle& b) {
  const std::size_t videos = b.features.outer();
  const std::size_t classes = b.labels.cols();
  const std::size_t k = b.sampled * b.repeats;
  require(videos >= 1 && classes >= 1 && b.features.frames() >= 1 && b.features.channels() >= 1,
          ErrorCode::kInvariantViolation, "support set is empty");
  require(b.sampled >= 1 && b.repeats >= 1 && b.sampled <= b.descriptions,
          ErrorCode::kInvariantViolation, "prompt counts must satisfy 1 <= m <= M, n >= 1");
  require(b.labels.rows() == videos && b.provenance.size() == videos,
          ErrorCode::kInvariantViolation, "labels/provenance do not cover every video");
  require(videos == classes * k, ErrorCode::kFactorabilityViolation,
          "CK=" + std::to_string(videos) + " but C*m*n=" + std::to_string(classes * k));
  if (!b.classes.empty()) {
    validate(ClassCatalog{b.classes});
    require(b.classes.size() == classes, ErrorCode::kInvariantViolation,
            "class names do not match label width");
  }
  require(b.features.all_finite(), ErrorCode::kInvariantViolation,
          "support features contain non-finite values");

  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  for (std::size_t j = 0; j < videos; ++j) {
    std::size_t ones = 0;
    std::size_t hot = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const float v = b.labels(j, c);
      if (v == 1.0f) {
        ++ones;
        hot = c;
      } else {
        require(v == 0.0f, ErrorCode::kInvariantViolation,
                "label row " + std::to_string(j) + " is not one-hot");
      }
    }
    require(ones == 1, ErrorCode::kInvariantViolation,
            "label row " + std::to_string(j) + " is not one-hot");
    const auto& p = b.provenance[j];
    require(p.class_index == hot, ErrorCode::kInvariantViolation,
            "provenance class disagrees with label for video " + std::to_string(j));
    require(p.prompt < b.sampled && p.repeat < b.repeats, ErrorCode::kInvariantViolation,
            "provenance index out of range for video " + std::to_string(j));
    require(j == p.class_index * k + p.prompt * b.repeats + p.repeat,
            ErrorCode::kInvariantViolation,
            "video " + std::to_string(j) + " is not in class/prompt/repeat order");
    require(seen.emplace(p.class_index, p.prompt, p.repeat).second,
            ErrorCode::kInvariantViolation, "duplicate provenance triple");
  }
}

void validate(const TestInstanceBundle& b) {
  require(b.views.outer() >= 1, ErrorCode::kInvariantViolation, "test bundle has no views");
  require(b.original.rows() >= 1 && b.original.cols() >= 1, ErrorCode::kInvariantViolation,
          "test bundle original feature is empty");
  require(b.views.frames() == b.original.rows() && b.views.channels() == b.original.cols(),
          ErrorCode::kInvariantViolation, "view and original shapes disagree");
  require(b.views.all_finite() && b.original.all_finite(), ErrorCode::kInvariantViolation,
          "test features contain non-finite values");
  if (!b.classes.empty()) validate(ClassCatalog{b.classes});
  if (b.ground_truth && !b.classes.empty()) {
    require(*b.ground_truth < b.classes.size(), ErrorCode::kInvariantViolation,
            "ground truth outside class range");
  }
}

void check_consistent(const ClassTextFeatures& text, const SupportSetBundle& support,
                      const TestInstanceBundle& test) {
  require(text.num_classes() == support.num_classes(), ErrorCode::kBundleInconsistency,
          "class text and support set disagree on C");
  require(text.dim() == support.dim() && test.dim() == support.dim(),
          ErrorCode::kBundleInconsistency, "feature dimension d disagrees across bundles");
  require(test.frames() == support.frames(), ErrorCode::kBundleInconsistency,
          "frame count T disagrees between support and test");
  if (!text.classes.empty() && !support.classes.empty()) {
    require(text.classes == support.classes, ErrorCode::kBundleInconsistency,
            "class names differ between class text and support set");
  }
  if (!test.classes.empty() && !support.classes.empty()) {
    require(test.classes == support.classes, ErrorCode::kBundleInconsistency,
            "class names differ between test instance and support set");
  }
  if (test.ground_truth) {
    require(*test.ground_truth < support.num_classes(), ErrorCode::kBundleInconsistency,
            "ground truth outside class range");
  }
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

struct Blob {
  std::string name;
  std::vector<std::size_t> shape;
  const std::vector<float>* data;
};

std::string write_bundle(const fs::path& dir, json manifest, const std::vector<Blob>& blobs) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIoFailure, "cannot create " + dir.string() + ": " + ec.message());

  json shapes = json::object();
  json sums = json::object();
  for (const auto& blob : blobs) {
    shapes[blob.name] = blob.shape;
    const auto bytes = blob.data->size() * sizeof(float);
    sums[blob.name] = sha256_hex(blob.data->data(), bytes);
    std::ofstream out(dir / (blob.name + ".bin"), std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIoFailure, "cannot open blob " + blob.name);
    out.write(reinterpret_cast<const char*>(blob.data->data()), static_cast<std::streamsize>(bytes));
    require(static_cast<bool>(out), ErrorCode::kIoFailure, "short write on blob " + blob.name);
  }
  manifest["schema_version"] = kSchemaVersion;
  manifest["dtype"] = "f32le";
  manifest["shapes"] = shapes;
  manifest["blob_sha256"] = sums;

  const std::string text = manifest.dump(2) + "\n";
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIoFailure, "cannot write manifest in " + dir.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIoFailure, "short write on manifest");
  return sha256_hex(text.data(), text.size());
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIoFailure,
          "missing manifest.json in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaMismatch, std::string("manifest is not valid JSON: ") + e.what());
  }
  require(manifest.is_object() && manifest.contains("schema_version") &&
              manifest["schema_version"].is_number_integer() &&
              manifest["schema_version"].get<int>() == kSchemaVersion,
          ErrorCode::kSchemaMismatch, "unsupported or missing schema_version");
  require(manifest.value("dtype", std::string{}) == "f32le", ErrorCode::kSchemaMismatch,
          "dtype must be f32le");
  require(manifest.contains("kind") && manifest["kind"].is_string(), ErrorCode::kSchemaMismatch,
          "manifest has no kind");
  require(manifest.contains("shapes") && manifest["shapes"].is_object(),
          ErrorCode::kSchemaMismatch, "manifest has no shapes");
  return manifest;
}

std::vector<std::size_t> declared_shape(const json& manifest, const std::string& name,
                                        std::size_t rank) {
  const auto& shapes = manifest["shapes"];
  require(shapes.contains(name) && shapes[name].is_array(), ErrorCode::kSchemaMismatch,
          "manifest declares no shape for '" + name + "'");
  std::vector<std::size_t> shape;
  try {
    shape = shapes[name].get<std::vector<std::size_t>>();
  } catch (const json::exception&) {
    fail(ErrorCode::kSchemaMismatch, "shape of '" + name + "' is not a list of counts");
  }
  require(shape.size() == rank, ErrorCode::kShapeMismatch,
          "'" + name + "' must have rank " + std::to_string(rank));
  return shape;
}

std::vector<float> read_blob(const fs::path& dir, const json& manifest, const std::string& name,
                             const std::vector<std::size_t>& shape) {
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  std::ifstream in(dir / (name + ".bin"), std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIoFailure, "missing blob " + name + ".bin");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::optional<std::string> recorded;
  if (manifest.contains("blob_sha256") && manifest["blob_sha256"].contains(name)) {
    recorded = manifest["blob_sha256"][name].get<std::string>();
  }
  if (bytes.size() != count * sizeof(float)) {
    // An intact blob (checksum still matches) under a wrong declared shape is
    // a manifest problem; anything else means the blob itself is damaged.
    if (recorded && *recorded == sha256_hex(bytes.data(), bytes.size())) {
      fail(ErrorCode::kShapeMismatch, "blob " + name + " holds " +
                                          std::to_string(bytes.size()) +
                                          " bytes, manifest shape needs " +
                                          std::to_string(count * sizeof(float)));
    }
    fail(ErrorCode::kCorruptBlob, "blob " + name + " has " + std::to_string(bytes.size()) +
                                      " bytes, expected " + std::to_string(count * sizeof(float)));
  }
  if (recorded) {
    require(*recorded == sha256_hex(bytes.data(), bytes.size()), ErrorCode::kCorruptBlob,
            "blob " + name + " checksum mismatch");
  }
  std::vector<float> out(count);
  std::copy(bytes.begin(), bytes.end(), reinterpret_cast<char*>(out.data()));
  return out;
}

std::vector<std::string> read_classes(const json& manifest) {
  if (!manifest.contains("classes") || manifest["classes"].is_null()) return {};
  try {
    return manifest["classes"].get<std::vector<std::string>>();
  } catch (const json::exception&) {
    fail(ErrorCode::kSchemaMismatch, "classes must be a list of strings");
  }
}

void require_kind(const json& manifest, const char* kind) {
  require(manifest["kind"].get<std::string>() == kind, ErrorCode::kSchemaMismatch,
          "expected bundle kind " + std::string(kind) + ", found " +
              manifest["kind"].get<std::string>());
}

ClassTextFeatures parse_class_text(const fs::path& dir, const json& manifest) {
  ClassTextFeatures b;
  const auto shape = declared_shape(manifest, "W", 2);
  b.classes = read_classes(manifest);
  b.normalized = manifest.value("normalized", false);
  b.weights = DenseMatrix(shape[0], shape[1], read_blob(dir, manifest, "W", shape));
  require(b.classes.empty() || b.classes.size() == shape[0], ErrorCode::kShapeMismatch,
          "W rows do not match class list");
  validate(b);
  return b;
}

SupportSetBundle parse_support_set(const fs::path& dir, const json& manifest) {
  SupportSetBundle b;
  const auto fshape = declared_shape(manifest, "F", 3);
  const auto lshape = declared_shape(manifest, "L", 2);
  require(lshape[0] == fshape[0], ErrorCode::kShapeMismatch, "L rows do not match F videos");
  b.classes = read_classes(manifest);
  require(b.classes.empty() || b.classes.size() == lshape[1], ErrorCode::kShapeMismatch,
          "L columns do not match class list");
  b.normalized = manifest.value("normalized", false);
  require(manifest.contains("prompt_counts") && manifest["prompt_counts"].is_object(),
          ErrorCode::kSchemaMismatch, "support manifest lacks prompt_counts");
  try {
    const auto& pc = manifest["prompt_counts"];
    b.descriptions = pc.at("M").get<std::size_t>();
    b.sampled = pc.at("m").get<std::size_t>();
    b.repeats = pc.at("n").get<std::size_t>();
    for (const auto& row : manifest.at("provenance")) {
      require(row.is_array() && row.size() == 4, ErrorCode::kSchemaMismatch,
              "provenance rows are [class, prompt, repeat, outlier]");
      b.provenance.push_back(VideoProvenance{row[0].get<std::size_t>(), row[1].get<std::size_t>(),
                                             row[2].get<std::size_t>(), row[3].get<bool>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaMismatch, std::string("malformed support manifest: ") + e.what());
  }
  require(b.provenance.size() == fshape[0], ErrorCode::kShapeMismatch,
          "provenance length does not match F videos");
  b.features = Tensor3(fshape[0], fshape[1], fshape[2], read_blob(dir, manifest, "F", fshape));
  b.labels = DenseMatrix(lshape[0], lshape[1], read_blob(dir, manifest, "L", lshape));
  validate(b);
  return b;
}

TestInstanceBundle parse_test_instance(const fs::path& dir, const json& manifest) {
  TestInstanceBundle b;
  const auto vshape = declared_shape(manifest, "views", 3);
  const auto oshape = declared_shape(manifest, "original", 2);
  require(vshape[1] == oshape[0] && vshape[2] == oshape[1], ErrorCode::kShapeMismatch,
          "views and original disagree on T or d");
  b.classes = read_classes(manifest);
  b.normalized = manifest.value("normalized", false);
  if (manifest.contains("ground_truth") && !manifest["ground_truth"].is_null()) {
    require(manifest["ground_truth"].is_number_unsigned(), ErrorCode::kSchemaMismatch,
            "ground_truth must be a nonnegative integer or null");
    b.ground_truth = manifest["ground_truth"].get<std::size_t>();
  }
  b.views = Tensor3(vshape[0], vshape[1], vshape[2], read_blob(dir, manifest, "views", vshape));
  b.original = DenseMatrix(oshape[0], oshape[1], read_blob(dir, manifest, "original", oshape));
  validate(b);
  return b;
}

json classes_json(const std::vector<std::string>& classes) { return json(classes); }

}  // namespace

std::string save_bundle(const ClassTextFeatures& bundle, const fs::path& dir) {
  validate(bundle);
  json m;
  m["kind"] = "class_text";
  m["normalized"] = bundle.normalized;
  m["classes"] = classes_json(bundle.classes);
  return write_bundle(dir, std::move(m),
                      {{"W", {bundle.weights.rows(), bundle.weights.cols()}, &bundle.weights.data()}});
}

std::string save_bundle(const SupportSetBundle& bundle, const fs::path& dir) {
  validate(bundle);
  json m;
  m["kind"] = "support_set";
  m["normalized"] = bundle.normalized;
  m["classes"] = classes_json(bundle.classes);
  m["prompt_counts"] = {{"M", bundle.descriptions}, {"m", bundle.sampled}, {"n", bundle.repeats}};
  json prov = json::array();
  for (const auto& p : bundle.provenance) {
    prov.push_back(json::array({p.class_index, p.prompt, p.repeat, p.outlier}));
  }
  m["provenance"] = std::move(prov);
  const auto& f = bundle.features;
  return write_bundle(dir, std::move(m),
                      {{"F", {f.outer(), f.frames(), f.channels()}, &f.data()},
                       {"L", {bundle.labels.rows(), bundle.labels.cols()}, &bundle.labels.data()}});
}

std::string save_bundle(const TestInstanceBundle& bundle, const fs::path& dir) {
  validate(bundle);
  json m;
  m["kind"] = "test_instance";
  m["normalized"] = bundle.normalized;
  m["classes"] = classes_json(bundle.classes);
  m["ground_truth"] = bundle.ground_truth ? json(*bundle.ground_truth) : json(nullptr);
  const auto& v = bundle.views;
  return write_bundle(
      dir, std::move(m),
      {{"views", {v.outer(), v.frames(), v.channels()}, &v.data()},
       {"original", {bundle.original.rows(), bundle.original.cols()}, &bundle.original.data()}});
}

std::string save_bundle(const AnyBundle& bundle, const fs::path& dir) {
  return std::visit([&](const auto& b) { return save_bundle(b, dir); }, bundle);
}

AnyBundle load_bundle(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  const auto kind = manifest["kind"].get<std::string>();
  if (kind == "class_text") return parse_class_text(dir, manifest);
  if (kind == "support_set") return parse_support_set(dir, manifest);
  if (kind == "test_instance") return parse_test_instance(dir, manifest);
  fail(ErrorCode::kSchemaMismatch, "unknown bundle kind '" + kind + "'");
}

ClassTextFeatures load_class_text(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  require_kind(manifest, "class_text");
  return parse_class_text(dir, manifest);
}

SupportSetBundle load_support_set(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  require_kind(manifest, "support_set");
  return parse_support_set(dir, manifest);
}

TestInstanceBundle load_test_instance(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  require_kind(manifest, "test_instance");
  return parse_test_instance(dir, manifest);
}

SupportSetBundle single_prompt_subset(const SupportSetBundle& bundle) {
  SupportSetBundle out;
  out.classes = bundle.classes;
  out.descriptions = bundle.descriptions;
  out.sampled = 1;
  out.repeats = bundle.repeats;
  out.normalized = bundle.normalized;
  const std::size_t keep = bundle.num_classes() * bundle.repeats;
  out.features = Tensor3(keep, bundle.frames(), bundle.dim());
  out.labels = DenseMatrix(keep, bundle.num_classes());
  std::size_t row = 0;
  for (std::size_t j = 0; j < bundle.num_videos(); ++j) {
    const auto& p = bundle.provenance[j];
    if (p.prompt != 0) continue;
    out.features.set_item(row, bundle.features.item(j));
    out.labels(row, p.class_index) = 1.0f;
    out.provenance.push_back(p);
    ++row;
  }
  validate(out);
  return out;
}

}  // namespace sstune
