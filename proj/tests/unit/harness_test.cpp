#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "sstune/error.hpp"
#include "sstune/harness.hpp"
#include "sstune/synth.hpp"

using namespace sstune;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sstune_harness_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> ids_for(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("inst" + std::to_string(i));
  return ids;
}

SyntheticSet outlier_benchmark(std::size_t instances) {
  SyntheticConfig sc;
  sc.seed = 42;
  sc.outlier_fraction = 0.25;
  sc.outlier_distance = 0.8;
  sc.test_instances = instances;
  return synth_generate(sc);
}

ExperimentSettings unit_tau() {
  ExperimentSettings s;
  s.predictor.temperature = 1.0;
  return s;
}

}  // namespace

TEST_CASE("experiment config round trip") {
  TempDir tmp("config");
  ExperimentConfig cfg;
  cfg.class_text = tmp.path / "text";
  cfg.support = tmp.path / "support";
  cfg.tests = {tmp.path / "tests" / "a", tmp.path / "tests" / "b"};
  cfg.output_dir = tmp.path / "out";
  cfg.settings.seed = 17;
  cfg.settings.parallelism = 3;
  cfg.settings.predictor.temperature = 0.5;
  cfg.settings.predictor.blend = {1.0, 0.25, 0.5};
  cfg.settings.predictor.psi = PsiMode::kExponential;
  cfg.settings.tuning.schedule.stages = {{6, 2}, {3, 1}};
  cfg.settings.tuning.schedule.strategy = FrameStrategy::kRandom;
  cfg.settings.tuning.filter.rho = 0.25;
  cfg.settings.tuning.optimizer.lr = 0.01;
  cfg.settings.ablation.tse = false;
  cfg.settings.ablation.frame_weights = false;
  write_experiment_config(cfg, tmp.path / "experiment.json");

  const auto text = slurp(tmp.path / "experiment.json");
  CHECK(text.find(tmp.path.string()) == std::string::npos);  // paths stored relative

  const auto back = read_experiment_config(tmp.path / "experiment.json");
  CHECK(back.class_text == cfg.class_text);
  CHECK(back.tests == cfg.tests);
  CHECK(back.output_dir == cfg.output_dir);
  CHECK(back.settings.seed == 17);
  CHECK(back.settings.parallelism == 3);
  CHECK(back.settings.predictor.temperature == 0.5);
  CHECK(back.settings.predictor.blend.tip_adapter == 0.25);
  CHECK(back.settings.predictor.psi == PsiMode::kExponential);
  CHECK(back.settings.tuning.schedule.stages == cfg.settings.tuning.schedule.stages);
  CHECK(back.settings.tuning.schedule.strategy == FrameStrategy::kRandom);
  CHECK(back.settings.tuning.filter.rho == 0.25);
  CHECK(back.settings.tuning.optimizer.lr == 0.01);
  CHECK_FALSE(back.settings.ablation.tse);
  CHECK(back.settings.ablation.video_weights);
  CHECK_FALSE(back.settings.ablation.frame_weights);
}

TEST_CASE("experiment config defaults and test_dir") {
  TempDir tmp("defaults");
  fs::create_directories(tmp.path / "t" / "0001");
  fs::create_directories(tmp.path / "t" / "0000");
  fs::create_directories(tmp.path / "t" / "notes");
  std::ofstream(tmp.path / "t" / "0001" / "manifest.json") << "{}";
  std::ofstream(tmp.path / "t" / "0000" / "manifest.json") << "{}";
  std::ofstream(tmp.path / "e.json") << R"({"class_text": "w", "support": "s", "test_dir": "t"})";
  const auto cfg = read_experiment_config(tmp.path / "e.json");
  CHECK(cfg.tests == std::vector<fs::path>{tmp.path / "t" / "0000", tmp.path / "t" / "0001"});
  CHECK(cfg.settings.predictor.temperature == 0.01);
  CHECK(cfg.settings.predictor.beta == 5.5);
  CHECK(cfg.settings.tuning.schedule.total_steps() == 10);
  CHECK(cfg.settings.tuning.filter.rho == 0.1);
  CHECK(cfg.settings.tuning.optimizer.lr == 0.001);
  CHECK(cfg.settings.ablation.multiprompt);

  std::ofstream(tmp.path / "bad.json") << R"({"support": "s"})";
  try {
    read_experiment_config(tmp.path / "bad.json");
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSchemaMismatch);
  }
}

TEST_CASE("noise-free set is classified perfectly") {
  SyntheticConfig sc;
  sc.intra_prompt_noise = 0.0;
  sc.inter_prompt_spread = 0.0;
  sc.view_noise = 0.0;
  sc.test_instances = 10;
  const auto set = synth_generate(sc);
  const auto report = eval_dataset(set.class_text, set.support, set.tests, ids_for(10), unit_tau());
  CHECK(report.summary.top1 == 1.0);
  CHECK(report.summary.correct == 10);
}

TEST_CASE("without tuning, zero-shot blend gives zero-shot accuracy") {
  const auto set = outlier_benchmark(30);
  ExperimentSettings s;
  s.ablation.tse = false;
  s.predictor.blend = {1, 0, 0};
  const auto report = eval_dataset(set.class_text, set.support, set.tests, ids_for(30), s);
  std::size_t correct = 0;
  for (const auto& t : set.tests) {
    const auto z = zero_shot_logits(pool_query(t.original, all_frames(8)), set.class_text);
    correct += argmax(z) == *t.ground_truth;
  }
  CHECK(report.summary.correct == correct);
  for (const auto& r : report.instances) CHECK(r.initial_loss == r.final_loss);
}

TEST_CASE("seed-42 outlier benchmark: tuning does not hurt accuracy") {
  const auto set = outlier_benchmark(50);
  for (double tau : {0.01, 1.0}) {
    ExperimentSettings on;
    on.predictor.temperature = tau;
    ExperimentSettings off = on;
    off.ablation.tse = false;
    const auto a = eval_dataset(set.class_text, set.support, set.tests, ids_for(50), on);
    const auto b = eval_dataset(set.class_text, set.support, set.tests, ids_for(50), off);
    CAPTURE(tau);
    CHECK(a.summary.failed == 0);
    CHECK(*a.summary.top1 >= *b.summary.top1);
  }
}

TEST_CASE("parallel and serial evaluation agree") {
  TempDir tmp("parallel");
  const auto set = outlier_benchmark(12);
  ExperimentSettings s = unit_tau();
  s.keep_traces = true;
  s.tuning.schedule.strategy = FrameStrategy::kRandom;
  const auto serial = eval_dataset(set.class_text, set.support, set.tests, ids_for(12), s);
  s.parallelism = 5;
  const auto parallel = eval_dataset(set.class_text, set.support, set.tests, ids_for(12), s);
  emit_report(serial, tmp.path / "a");
  emit_report(parallel, tmp.path / "b");
  for (const char* f : {"summary.json", "per_instance.jsonl", "summary.csv", "traces.jsonl"}) {
    CAPTURE(f);
    CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
  }
}

TEST_CASE("schedule is irrelevant when tuning is off") {
  const auto set = outlier_benchmark(8);
  ExperimentSettings a = unit_tau();
  a.ablation.tse = false;
  ExperimentSettings b = a;
  b.tuning.schedule.stages = {{3, 7}};
  b.tuning.schedule.strategy = FrameStrategy::kRandom;
  b.tuning.optimizer.lr = 0.5;
  const auto ra = eval_dataset(set.class_text, set.support, set.tests, ids_for(8), a);
  const auto rb = eval_dataset(set.class_text, set.support, set.tests, ids_for(8), b);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(ra.instances[i].predicted == rb.instances[i].predicted);
    CHECK(ra.instances[i].final_loss == rb.instances[i].final_loss);
  }
}

TEST_CASE("failed instances are reported, not counted") {
  const auto set = outlier_benchmark(4);
  ExperimentSettings s = unit_tau();
  s.tuning.optimizer.lr = 1e300;
  s.predictor.blend = {1, 1, 1};
  const auto report = eval_dataset(set.class_text, set.support, set.tests, ids_for(4), s);
  CHECK(report.summary.failed == 4);
  CHECK(report.summary.evaluated == 0);
  CHECK_FALSE(report.summary.top1.has_value());
  for (const auto& r : report.instances) {
    CHECK(r.failed);
    CHECK_FALSE(r.predicted.has_value());
    CHECK_FALSE(r.error.empty());
  }
}

TEST_CASE("inconsistent bundles stop the batch up front") {
  const auto set = outlier_benchmark(2);
  SyntheticConfig other;
  other.classes = 4;
  const auto wrong = synth_generate(other);
  try {
    eval_dataset(wrong.class_text, set.support, set.tests, ids_for(2), {});
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBundleInconsistency);
  }
}

TEST_CASE("single-prompt ablation") {
  SyntheticConfig sc;
  sc.prompts = 3;
  sc.test_instances = 4;
  const auto set = synth_generate(sc);
  ExperimentSettings s = unit_tau();
  s.ablation.multiprompt = false;
  s.keep_traces = true;
  const auto report = eval_dataset(set.class_text, set.support, set.tests, ids_for(4), s);
  CHECK(report.summary.failed == 0);
  CHECK(report.instances[0].trace.size() == 10);
}

TEST_CASE("report files") {
  TempDir tmp("report");
  SUBCASE("empty report") {
    emit_report(EvalReport{}, tmp.path / "empty");
    const auto j = nlohmann::json::parse(slurp(tmp.path / "empty" / "summary.json"));
    CHECK(j["instances"] == 0);
    CHECK(j["top1_accuracy"].is_null());
    CHECK(slurp(tmp.path / "empty" / "per_instance.jsonl").empty());
  }
  SUBCASE("fifty instances, emitted twice") {
    const auto set = outlier_benchmark(50);
    ExperimentSettings s = unit_tau();
    s.ablation.tse = false;
    const auto report = eval_dataset(set.class_text, set.support, set.tests, ids_for(50), s);
    emit_report(report, tmp.path / "a");
    emit_report(report, tmp.path / "b");
    const auto lines = slurp(tmp.path / "a" / "per_instance.jsonl");
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 50);
    for (const char* f : {"summary.json", "per_instance.jsonl", "summary.csv"}) {
      CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
    }
    const auto first = nlohmann::ordered_json::parse(lines.substr(0, lines.find('\n')));
    std::vector<std::string> keys;
    for (const auto& [k, v] : first.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"id", "predicted", "ground_truth", "correct",
                                           "initial_loss", "final_loss", "failed", "error"});
    const auto summary = nlohmann::json::parse(slurp(tmp.path / "a" / "summary.json"));
    CHECK(summary["top1_accuracy"].get<double>() ==
          doctest::Approx(double(report.summary.correct) / 50.0));
    CHECK(fs::exists(tmp.path / "a" / "timing.json"));
  }
}

TEST_CASE("gradcheck") {
  SUBCASE("fifty trials at both temperatures") {
    for (double tau : {0.01, 1.0}) {
      GradcheckConfig cfg;
      cfg.predictor.temperature = tau;
      const auto r = run_gradcheck(cfg);
      CAPTURE(tau);
      CAPTURE(r.worst_error);
      CAPTURE(r.worst_parameter);
      CHECK(r.passed);
      CHECK(r.trials == 50);
    }
  }
  SUBCASE("zero-shot only has nothing to differentiate") {
    GradcheckConfig cfg;
    cfg.trials = 1;
    cfg.predictor.blend = {1, 0, 0};
    const auto r = run_gradcheck(cfg);
    CHECK(r.passed);
    CHECK(r.worst_error <= 1e-8);
  }
  SUBCASE("a perturbed gradient fails") {
    GradcheckConfig cfg;
    cfg.trials = 3;
    cfg.predictor.temperature = 1.0;
    cfg.perturbation = 1e-2;
    CHECK_FALSE(run_gradcheck(cfg).passed);
  }
  SUBCASE("no trials") {
    GradcheckConfig cfg;
    cfg.trials = 0;
    CHECK_THROWS_AS(run_gradcheck(cfg), Error);
  }
  CHECK(gradient_error(1.0, 1.0005, 1e-3, 1e-6) == doctest::Approx(0.0005 / 1.0005));
  CHECK(gradient_error(1e-9, 0.0, 1e-3, 1e-6) == doctest::Approx(1e-6));
}
