// SPDX-License-Identifier: Apache-2.0
#include "sstune/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sstune/error.hpp"
#include "sstune/rng.hpp"

namespace sstune {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Experiment config

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string psi_name(PsiMode mode) {
  return mode == PsiMode::kAffineRescale ? "affine" : "exponential";
}

PsiMode parse_psi(const std::string& s) {
  if (s == "affine") return PsiMode::kAffineRescale;
  if (s == "exponential") return PsiMode::kExponential;
  fail(ErrorCode::kInvalidArgument, "psi must be 'affine' or 'exponential', got '" + s + "'");
}

}  // namespace

ExperimentConfig read_experiment_config(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorCode::kIoFailure, "cannot open " + file.string());
  const fs::path base = file.parent_path();
  ExperimentConfig cfg;
  auto& s = cfg.settings;
  try {
    const json j = json::parse(in);
    cfg.class_text = resolve(base, j.at("class_text").get<std::string>());
    cfg.support = resolve(base, j.at("support").get<std::string>());
    if (j.contains("tests")) {
      for (const auto& t : j["tests"]) cfg.tests.push_back(resolve(base, t.get<std::string>()));
    }
    if (j.contains("test_dir")) {
      const fs::path dir = resolve(base, j["test_dir"].get<std::string>());
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) {
          found.push_back(entry.path());
        }
      }
      std::sort(found.begin(), found.end());
      cfg.tests.insert(cfg.tests.end(), found.begin(), found.end());
    }
    if (j.contains("output_dir")) cfg.output_dir = resolve(base, j["output_dir"].get<std::string>());
    s.seed = j.value("seed", std::uint64_t{0});
    s.parallelism = j.value("parallel", std::size_t{1});
    s.keep_traces = j.value("keep_traces", false);

    if (j.contains("predictor")) {
      const auto& p = j["predictor"];
      s.predictor.beta = p.value("beta", s.predictor.beta);
      s.predictor.temperature = p.value("tau", s.predictor.temperature);
      if (p.contains("blend")) {
        const auto w = p["blend"].get<std::vector<double>>();
        require(w.size() == 3, ErrorCode::kInvalidArgument, "blend needs three weights");
        s.predictor.blend = BlendWeights{w[0], w[1], w[2]};
      }
      if (p.contains("psi")) s.predictor.psi = parse_psi(p["psi"].get<std::string>());
      s.predictor.psi_scale = p.value("psi_scale", s.predictor.psi_scale);
    }
    if (j.contains("tuning")) {
      const auto& t = j["tuning"];
      auto& sched = s.tuning.schedule;
      if (t.contains("schedule")) sched.stages = parse_stages(t["schedule"].get<std::string>());
      if (t.contains("strategy")) sched.strategy = parse_strategy(t["strategy"].get<std::string>());
      sched.repeats = t.value("repeats", sched.repeats);
      s.tuning.filter.rho = t.value("rho", s.tuning.filter.rho);
      auto& o = s.tuning.optimizer;
      o.lr = t.value("lr", o.lr);
      o.beta1 = t.value("beta1", o.beta1);
      o.beta2 = t.value("beta2", o.beta2);
      o.eps = t.value("eps", o.eps);
      o.weight_decay = t.value("weight_decay", o.weight_decay);
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      s.ablation.multiprompt = a.value("msd", true);
      s.ablation.tse = a.value("tse", true);
      s.ablation.video_weights = a.value("r_vid", true);
      s.ablation.frame_weights = a.value("r_fr", true);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaMismatch, file.string() + ": " + e.what());
  }
  require(s.parallelism >= 1, ErrorCode::kInvalidArgument, "parallel must be >= 1");
  return cfg;
}

void write_experiment_config(const ExperimentConfig& cfg, const fs::path& file) {
  const auto& s = cfg.settings;
  const fs::path base = file.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base).generic_string(); };
  ordered_json j;
  j["class_text"] = rel(cfg.class_text);
  j["support"] = rel(cfg.support);
  j["tests"] = json::array();
  for (const auto& t : cfg.tests) j["tests"].push_back(rel(t));
  if (!cfg.output_dir.empty()) j["output_dir"] = rel(cfg.output_dir);
  j["seed"] = s.seed;
  j["parallel"] = s.parallelism;
  j["keep_traces"] = s.keep_traces;
  j["predictor"] = {{"beta", s.predictor.beta},
                    {"tau", s.predictor.temperature},
                    {"blend", {s.predictor.blend.zero_shot, s.predictor.blend.tip_adapter,
                               s.predictor.blend.tip_x}},
                    {"psi", psi_name(s.predictor.psi)},
                    {"psi_scale", s.predictor.psi_scale}};
  const auto& o = s.tuning.optimizer;
  j["tuning"] = {{"schedule", format_stages(s.tuning.schedule.stages)},
                 {"strategy", to_string(s.tuning.schedule.strategy)},
                 {"repeats", s.tuning.schedule.repeats},
                 {"rho", s.tuning.filter.rho},
                 {"lr", o.lr},
                 {"beta1", o.beta1},
                 {"beta2", o.beta2},
                 {"eps", o.eps},
                 {"weight_decay", o.weight_decay}};
  j["ablation"] = {{"msd", s.ablation.multiprompt},
                   {"tse", s.ablation.tse},
                   {"r_vid", s.ablation.video_weights},
                   {"r_fr", s.ablation.frame_weights}};
  std::ofstream out(file);
  require(static_cast<bool>(out), ErrorCode::kIoFailure, "cannot write " + file.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

InstanceRecord run_instance(const ClassTextFeatures& text, const SupportSetBundle& support,
                            const TestInstanceBundle& test, const std::string& id,
                            std::size_t index, const ExperimentSettings& settings) {
  InstanceRecord rec;
  rec.id = id;
  rec.ground_truth = test.ground_truth;
  try {
    const TuningProblem problem{support.features, support.labels, test.views, text,
                                settings.predictor, settings.tuning.filter};
    const auto frames = all_frames(support.frames());
    FactorizedWeights weights = FactorizedWeights::ones(support.num_videos(), support.frames());
    rec.initial_loss = evaluate_loss(problem, weights, frames).loss;
    if (settings.ablation.tse) {
      TuneOptions options = settings.tuning;
      options.schedule.rng_seed = derive_seed(settings.seed, index);
      options.train_video = settings.ablation.video_weights;
      options.train_frame = settings.ablation.frame_weights;
      TuneResult tuned = tune(support, test, text, settings.predictor, options);
      weights = std::move(tuned.weights);
      if (settings.keep_traces) rec.trace = std::move(tuned.trace);
      rec.final_loss = evaluate_loss(problem, weights, frames).loss;
    } else {
      rec.final_loss = rec.initial_loss;
    }
    const Prediction pred = final_predict(support, test, weights, text, settings.predictor);
    rec.predicted = pred.predicted;
    if (rec.ground_truth) rec.correct = *rec.ground_truth == pred.predicted;
  } catch (const TuningAborted& e) {
    rec.failed = true;
    rec.error = e.what();
    if (settings.keep_traces) rec.trace = e.trace();
  } catch (const Error& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  if (rec.failed) {
    rec.predicted.reset();
    rec.correct.reset();
  }
  return rec;
}

EvalSummary summarize(const std::vector<InstanceRecord>& records,
                      const std::vector<std::string>& classes) {
  EvalSummary s;
  s.instances = records.size();
  s.per_class.resize(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) s.per_class[c].name = classes[c];
  double drop = 0.0;
  std::size_t drops = 0;
  for (const auto& r : records) {
    if (r.failed) {
      ++s.failed;
      continue;
    }
    ++s.evaluated;
    if (r.initial_loss && r.final_loss) {
      drop += *r.initial_loss - *r.final_loss;
      ++drops;
    }
    if (!r.correct) continue;
    ++s.labeled;
    if (*r.correct) ++s.correct;
    if (r.ground_truth && *r.ground_truth < s.per_class.size()) {
      auto& pc = s.per_class[*r.ground_truth];
      ++pc.instances;
      if (*r.correct) ++pc.correct;
    }
  }
  if (s.labeled > 0) s.top1 = static_cast<double>(s.correct) / static_cast<double>(s.labeled);
  for (auto& pc : s.per_class) {
    if (pc.instances > 0) {
      pc.accuracy = static_cast<double>(pc.correct) / static_cast<double>(pc.instances);
    }
  }
  if (drops > 0) s.mean_loss_drop = drop / static_cast<double>(drops);
  return s;
}

}  // namespace

EvalReport eval_dataset(const ClassTextFeatures& text, const SupportSetBundle& support_in,
                        std::span<const TestInstanceBundle> tests,
                        std::span<const std::string> ids, const ExperimentSettings& settings) {
  require(ids.size() == tests.size(), ErrorCode::kInvalidArgument,
          "one id is needed per test instance");
  require(settings.parallelism >= 1, ErrorCode::kInvalidArgument, "parallelism must be >= 1");
  validate(settings.predictor);
  const auto started = std::chrono::steady_clock::now();

  const SupportSetBundle support =
      settings.ablation.multiprompt ? support_in : single_prompt_subset(support_in);
  for (const auto& test : tests) check_consistent(text, support, test);

  std::vector<InstanceRecord> records(tests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tests.size(); i = next++) {
      records[i] = run_instance(text, support, tests[i], ids[i], i, settings);
    }
  };
  const std::size_t workers = std::min(settings.parallelism, std::max<std::size_t>(tests.size(), 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  EvalReport report;
  report.instances = std::move(records);
  const auto& names = support.classes.empty() ? text.classes : support.classes;
  std::vector<std::string> classes = names;
  if (classes.empty()) {
    for (std::size_t c = 0; c < support.num_classes(); ++c) classes.push_back(std::to_string(c));
  }
  report.summary = summarize(report.instances, classes);
  report.summary.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

EvalReport eval_dataset(const ExperimentConfig& config) {
  const ClassTextFeatures text = load_class_text(config.class_text);
  const SupportSetBundle support = load_support_set(config.support);
  std::vector<TestInstanceBundle> tests;
  std::vector<std::string> ids;
  tests.reserve(config.tests.size());
  for (const auto& path : config.tests) {
    tests.push_back(load_test_instance(path));
    ids.push_back(path.filename().string());
  }
  return eval_dataset(text, support, tests, ids, config.settings);
}

// ---------------------------------------------------------------------------
// Reports

namespace {

template <typename T>
ordered_json opt(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIoFailure, "cannot write " + file.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIoFailure, "short write on " + file.string());
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

}  // namespace

void emit_report(const EvalReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIoFailure, "cannot create " + dir.string() + ": " + ec.message());
  const auto& s = report.summary;

  ordered_json summary;
  summary["instances"] = s.instances;
  summary["evaluated"] = s.evaluated;
  summary["failed"] = s.failed;
  summary["labeled"] = s.labeled;
  summary["correct"] = s.correct;
  summary["top1_accuracy"] = opt(s.top1);
  summary["mean_loss_drop"] = opt(s.mean_loss_drop);
  ordered_json per_class = ordered_json::array();
  for (const auto& pc : s.per_class) {
    per_class.push_back(ordered_json{{"class", pc.name},
                                     {"instances", pc.instances},
                                     {"correct", pc.correct},
                                     {"accuracy", opt(pc.accuracy)}});
  }
  summary["per_class"] = std::move(per_class);
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  std::string lines;
  std::string traces;
  for (const auto& r : report.instances) {
    ordered_json j;
    j["id"] = r.id;
    j["predicted"] = opt(r.predicted);
    j["ground_truth"] = opt(r.ground_truth);
    j["correct"] = opt(r.correct);
    j["initial_loss"] = opt(r.initial_loss);
    j["final_loss"] = opt(r.final_loss);
    j["failed"] = r.failed;
    j["error"] = r.failed ? ordered_json(r.error) : ordered_json(nullptr);
    lines += j.dump() + "\n";
    std::istringstream trace_lines(trace_to_jsonl(r.trace));
    for (std::string line; std::getline(trace_lines, line);) {
      if (line.size() < 2) continue;
      traces += "{\"id\":" + ordered_json(r.id).dump() + "," + line.substr(1) + "\n";
    }
  }
  write_text(dir / "per_instance.jsonl", lines);
  if (!traces.empty()) write_text(dir / "traces.jsonl", traces);

  std::string csv = "class,instances,correct,accuracy\n";
  for (const auto& pc : s.per_class) {
    csv += pc.name + "," + std::to_string(pc.instances) + "," + std::to_string(pc.correct) + "," +
           csv_number(pc.accuracy) + "\n";
  }
  csv += "__all__," + std::to_string(s.labeled) + "," + std::to_string(s.correct) + "," +
         csv_number(s.top1) + "\n";
  write_text(dir / "summary.csv", csv);

  ordered_json timing;
  timing["wall_clock_seconds"] = s.wall_clock_seconds;
  write_text(dir / "timing.json", timing.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Gradient check

double gradient_error(double analytic, double numeric, double tolerance, double absolute_floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), absolute_floor / tolerance});
  return std::abs(analytic - numeric) / scale;
}

GradcheckReport run_gradcheck(const GradcheckConfig& config) {
  require(config.trials >= 1, ErrorCode::kInvalidArgument, "gradcheck needs at least one trial");
  require(config.tolerance > 0.0 && config.absolute_floor > 0.0, ErrorCode::kInvalidArgument,
          "tolerance and floor must be positive");
  const auto started = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.trials = config.trials;

  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    const std::uint64_t trial_seed = derive_seed(config.seed, trial);
    SyntheticConfig sc = config.instance;
    sc.seed = trial_seed;
    sc.test_instances = 1;
    const SyntheticSet set = synth_generate(sc);
    const TuningProblem problem{set.support.features, set.support.labels, set.tests[0].views,
                                set.class_text, config.predictor, config.filter};

    // Evaluate away from the all-ones start so every code path is exercised.
    Rng rng(derive_seed(trial_seed, 0x6772616443ULL));
    const std::size_t frames = sc.frames;
    FactorizedWeights weights = FactorizedWeights::ones(set.support.num_videos(), frames);
    for (double& w : weights.video) w += 0.2 * (rng.uniform01() - 0.5);
    for (double& w : weights.frame) w += 0.2 * (rng.uniform01() - 0.5);
    const std::size_t scale = frames - rng.uniform_index(frames / 2 + 1);
    const auto indices = select_frames(weights.frame, std::max<std::size_t>(scale, 1),
                                       FrameStrategy::kTop, rng);

    LossEvaluation analytic = loss_gradients(problem, weights, indices);
    const Gradients numeric =
        finite_difference_gradients(problem, weights, indices, analytic.selections, config.h);

    auto compare = [&](const std::vector<double>& a, const std::vector<double>& n,
                       const char* name) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double value = a[i] + config.perturbation;
        const double err = gradient_error(value, n[i], config.tolerance, config.absolute_floor);
        if (err > report.worst_error || (trial == 0 && i == 0 && report.worst_parameter.empty())) {
          report.worst_error = std::max(report.worst_error, err);
          report.worst_trial = trial;
          report.worst_parameter = std::string(name) + "[" + std::to_string(i) + "]";
          report.worst_analytic = value;
          report.worst_numeric = n[i];
        }
      }
    };
    compare(analytic.gradients.video, numeric.video, "r_vid");
    compare(analytic.gradients.frame, numeric.frame, "r_fr");
  }
  report.passed = report.worst_error <= config.tolerance;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace sstune
