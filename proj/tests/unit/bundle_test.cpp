#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "sstune/bundle.hpp"
#include "sstune/error.hpp"
#include "sstune/synth.hpp"

using namespace sstune;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sstune_bundle_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ErrorCode load_error(const fs::path& dir) {
  try {
    load_bundle(dir);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("load succeeded");
  return ErrorCode::kInvalidArgument;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

SyntheticSet small_set() {
  SyntheticConfig cfg;
  cfg.outlier_fraction = 0.25;
  cfg.test_instances = 2;
  cfg.seed = 9;
  return synth_generate(cfg);
}

}  // namespace

TEST_CASE("round trip is bit-exact for every bundle kind") {
  TempDir tmp("roundtrip");
  const auto set = small_set();

  save_bundle(set.class_text, tmp.path / "text");
  save_bundle(set.support, tmp.path / "support");
  save_bundle(set.tests[0], tmp.path / "test");

  CHECK(load_class_text(tmp.path / "text") == set.class_text);
  CHECK(load_support_set(tmp.path / "support") == set.support);
  CHECK(load_test_instance(tmp.path / "test") == set.tests[0]);
  CHECK(std::holds_alternative<SupportSetBundle>(load_bundle(tmp.path / "support")));

  TestInstanceBundle unlabeled = set.tests[1];
  unlabeled.ground_truth.reset();
  unlabeled.classes.clear();
  save_bundle(unlabeled, tmp.path / "unlabeled");
  CHECK(load_test_instance(tmp.path / "unlabeled") == unlabeled);
}

TEST_CASE("saving twice gives the same digest and bytes") {
  TempDir tmp("digest");
  const auto set = small_set();
  const auto d1 = save_bundle(set.support, tmp.path / "a");
  const auto d2 = save_bundle(set.support, tmp.path / "b");
  CHECK(d1 == d2);
  CHECK(d1.size() == 64);
  CHECK(slurp(tmp.path / "a" / "manifest.json") == slurp(tmp.path / "b" / "manifest.json"));
  CHECK(slurp(tmp.path / "a" / "F.bin") == slurp(tmp.path / "b" / "F.bin"));

  // A one-bit change in the features changes the digest.
  SupportSetBundle changed = set.support;
  changed.features.data()[5] = std::nextafter(changed.features.data()[5], 2.0f);
  CHECK(save_bundle(changed, tmp.path / "c") != d1);
}

TEST_CASE("sha256 known answer") {
  CHECK(sha256_hex("abc", 3) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("non-one-hot labels are refused on save") {
  TempDir tmp("onehot");
  auto set = small_set();
  set.support.labels(0, 1) = 1.0f;
  try {
    save_bundle(set.support, tmp.path / "bad");
    FAIL("save accepted a two-hot row");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvariantViolation);
  }
}

TEST_CASE("corruption is detected on load") {
  TempDir tmp("corrupt");
  const auto set = small_set();
  const fs::path dir = tmp.path / "support";
  save_bundle(set.support, dir);
  const std::string blob = slurp(dir / "F.bin");
  const std::string manifest = slurp(dir / "manifest.json");

  SUBCASE("truncated blob") {
    spit(dir / "F.bin", blob.substr(0, blob.size() - 7));
    CHECK(load_error(dir) == ErrorCode::kCorruptBlob);
  }
  SUBCASE("flipped byte") {
    std::string bad = blob;
    bad[bad.size() / 2] ^= 0x20;
    spit(dir / "F.bin", bad);
    CHECK(load_error(dir) == ErrorCode::kCorruptBlob);
  }
  SUBCASE("missing blob") {
    fs::remove(dir / "F.bin");
    CHECK(load_error(dir) == ErrorCode::kIoFailure);
  }
  SUBCASE("missing manifest") {
    fs::remove(dir / "manifest.json");
    CHECK(load_error(dir) == ErrorCode::kIoFailure);
  }
  SUBCASE("garbage manifest") {
    spit(dir / "manifest.json", "{ not json");
    CHECK(load_error(dir) == ErrorCode::kSchemaMismatch);
  }
  SUBCASE("unknown schema version") {
    auto j = nlohmann::json::parse(manifest);
    j["schema_version"] = 99;
    spit(dir / "manifest.json", j.dump());
    CHECK(load_error(dir) == ErrorCode::kSchemaMismatch);
  }
  SUBCASE("wrong dtype") {
    auto j = nlohmann::json::parse(manifest);
    j["dtype"] = "f64le";
    spit(dir / "manifest.json", j.dump());
    CHECK(load_error(dir) == ErrorCode::kSchemaMismatch);
  }
}

TEST_CASE("manifest dimension disagreeing with the blob is a shape mismatch") {
  TempDir tmp("shape");
  // Class text with d=8 on disk; the manifest claims d=16.
  SyntheticConfig cfg;
  cfg.dim = 8;
  const auto set = synth_generate(cfg);
  const fs::path dir = tmp.path / "text";
  save_bundle(set.class_text, dir);
  auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
  j["shapes"]["W"][1] = 16;
  spit(dir / "manifest.json", j.dump());
  CHECK(load_error(dir) == ErrorCode::kShapeMismatch);
}

TEST_CASE("validation of support bundles") {
  const auto set = small_set();
  CHECK_NOTHROW(validate(set.support));

  SUBCASE("row order must be class, prompt, repeat") {
    SupportSetBundle b = set.support;
    std::swap(b.provenance[0], b.provenance[1]);
    CHECK_THROWS_AS(validate(b), Error);
  }
  SUBCASE("video count must factor") {
    SupportSetBundle b = set.support;
    b.repeats = 3;
    try {
      validate(b);
      FAIL("accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kFactorabilityViolation);
    }
  }
  SUBCASE("non-finite features") {
    SupportSetBundle b = set.support;
    b.features.data()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(validate(b), Error);
  }
}

TEST_CASE("consistency across bundles") {
  const auto set = small_set();
  CHECK_NOTHROW(check_consistent(set.class_text, set.support, set.tests[0]));

  SyntheticConfig other;
  other.dim = 12;
  const auto wide = synth_generate(other);
  try {
    check_consistent(wide.class_text, set.support, set.tests[0]);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBundleInconsistency);
  }

  TestInstanceBundle renamed = set.tests[0];
  renamed.classes[0] = "something_else";
  CHECK_THROWS_AS(check_consistent(set.class_text, set.support, renamed), Error);
}

TEST_CASE("single_prompt_subset keeps prompt zero") {
  SyntheticConfig cfg;
  cfg.prompts = 3;
  cfg.repeats = 2;
  const auto set = synth_generate(cfg);
  const auto sub = single_prompt_subset(set.support);
  CHECK(sub.num_videos() == cfg.classes * cfg.repeats);
  CHECK(sub.sampled == 1);
  CHECK_NOTHROW(validate(sub));
  for (const auto& p : sub.provenance) CHECK(p.prompt == 0);
  // First video of class 1 in the subset is video (1, 0, 0) of the original.
  CHECK(sub.features.item(cfg.repeats) == set.support.features.item(cfg.prompts * cfg.repeats));
}
