// SPDX-License-Identifier: Apache-2.0
// sstune: command-line front end for the support-set tuning library.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sstune/compose.hpp"
#include "sstune/dispersion.hpp"
#include "sstune/error.hpp"
#include "sstune/harness.hpp"
#include "sstune/synth.hpp"
#include "sstune/tuner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace sstune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;  // some instance failed, or gradcheck failed
constexpr int kExitError = 2;   // bad input, I/O, or library error

template <typename T>
ordered_json opt(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

void write_file(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIoFailure, "cannot write " + file.string());
  out << text;
}

BlendWeights parse_blend(const std::string& text) {
  std::vector<double> w;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    try {
      w.push_back(std::stod(text.substr(start, comma - start)));
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, "bad --blend '" + text + "'");
    }
    start = comma + 1;
  }
  require(w.size() == 3, ErrorCode::kInvalidArgument, "--blend needs w_zs,w_ta,w_tx");
  return {w[0], w[1], w[2]};
}

// Flags shared by predict and tune.
struct PredictorFlags {
  std::string blend;
  std::optional<double> beta;
  std::optional<double> tau;
  std::string psi;

  void add(CLI::App& app) {
    app.add_option("--blend", blend, "logit weights w_zs,w_ta,w_tx");
    app.add_option("--beta", beta, "TIP-Adapter sharpness");
    app.add_option("--tau", tau, "class-softmax temperature");
    app.add_option("--psi", psi, "affinity transform: affine|exponential");
  }

  PredictorConfig apply(PredictorConfig cfg) const {
    if (!blend.empty()) cfg.blend = parse_blend(blend);
    if (beta) cfg.beta = *beta;
    if (tau) cfg.temperature = *tau;
    if (psi == "affine") cfg.psi = PsiMode::kAffineRescale;
    else if (psi == "exponential") cfg.psi = PsiMode::kExponential;
    else if (!psi.empty()) fail(ErrorCode::kInvalidArgument, "--psi must be affine|exponential");
    validate(cfg);
    return cfg;
  }
};

struct TuningFlags {
  std::string schedule = "8x4,6x3,4x3";
  std::string strategy = "top";
  std::size_t repeats = 1;
  double rho = 0.1;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  bool freeze_video = false;
  bool freeze_frame = false;

  void add(CLI::App& app) {
    app.add_option("--schedule", schedule, "stages as scale x steps, comma separated");
    app.add_option("--strategy", strategy, "frame selection: top|random");
    app.add_option("--repeats", repeats, "passes over the schedule");
    app.add_option("--rho", rho, "fraction of confident views kept");
    app.add_option("--lr", lr, "AdamW learning rate");
    app.add_option("--weight-decay", weight_decay, "AdamW decoupled weight decay");
    app.add_option("--seed", seed, "seed for random frame selection");
    app.add_flag("--freeze-rvid", freeze_video, "keep r_vid at one");
    app.add_flag("--freeze-rfr", freeze_frame, "keep r_fr at one");
  }

  TuneOptions options() const {
    TuneOptions o;
    o.schedule.stages = parse_stages(schedule);
    o.schedule.strategy = parse_strategy(strategy);
    o.schedule.repeats = repeats;
    o.schedule.rng_seed = seed;
    o.filter.rho = rho;
    o.optimizer.lr = lr;
    o.optimizer.weight_decay = weight_decay;
    o.train_video = !freeze_video;
    o.train_frame = !freeze_frame;
    return o;
  }
};

ordered_json prediction_json(const Prediction& p, const std::vector<std::string>& classes) {
  ordered_json j;
  j["predicted"] = p.predicted;
  j["class"] = p.predicted < classes.size() ? ordered_json(classes[p.predicted])
                                            : ordered_json(nullptr);
  j["logits"] = p.logits;
  return j;
}

ordered_json weights_json(const FactorizedWeights& w) {
  ordered_json j;
  j["r_vid"] = w.video;
  j["r_fr"] = w.frame;
  return j;
}

SyntheticConfig read_synth_config(const std::string& file) {
  SyntheticConfig c;
  if (file.empty()) return c;
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorCode::kIoFailure, "cannot open " + file);
  try {
    const json j = json::parse(in);
    c.classes = j.value("classes", c.classes);
    c.prompts = j.value("prompts", c.prompts);
    c.repeats = j.value("repeats", c.repeats);
    c.frames = j.value("frames", c.frames);
    c.dim = j.value("dim", c.dim);
    c.views = j.value("views", c.views);
    c.test_instances = j.value("test_instances", c.test_instances);
    c.intra_prompt_noise = j.value("intra_prompt_noise", c.intra_prompt_noise);
    c.inter_prompt_spread = j.value("inter_prompt_spread", c.inter_prompt_spread);
    c.view_noise = j.value("view_noise", c.view_noise);
    c.outlier_fraction = j.value("outlier_fraction", c.outlier_fraction);
    c.outlier_distance = j.value("outlier_distance", c.outlier_distance);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaMismatch, file + ": " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_file, const fs::path& out, std::optional<std::uint64_t> seed) {
  SyntheticConfig cfg = read_synth_config(config_file);
  if (seed) cfg.seed = *seed;
  const SyntheticSet set = synth_generate(cfg);

  save_bundle(set.class_text, out / "class_text");
  save_bundle(set.support, out / "support_set");
  ExperimentConfig exp;
  exp.class_text = out / "class_text";
  exp.support = out / "support_set";
  for (std::size_t i = 0; i < set.tests.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%04zu", i);
    const fs::path dir = out / "test" / name;
    save_bundle(set.tests[i], dir);
    exp.tests.push_back(dir);
  }
  exp.output_dir = out / "report";
  exp.settings.seed = cfg.seed;
  // Generated features are far less peaked than real encoder features; a unit
  // temperature keeps the class softmax out of saturation.
  exp.settings.predictor.temperature = 1.0;
  write_experiment_config(exp, out / "experiment.json");

  ordered_json j;
  j["out"] = out.string();
  j["classes"] = cfg.classes;
  j["support_videos"] = set.support.num_videos();
  j["test_instances"] = set.tests.size();
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_compose(const fs::path& catalog_file, const fs::path& prompts_file,
                const fs::path& features_dir, const fs::path& out) {
  const ClassCatalog catalog = read_catalog(catalog_file);
  const PromptSet prompts = read_prompt_set(prompts_file);
  const VideoFeatureMap videos = read_video_features(features_dir, catalog);
  const SupportSetBundle bundle = compose_support_set(catalog, prompts, videos);
  const std::string digest = save_bundle(bundle, out);
  ordered_json j;
  j["out"] = out.string();
  j["support_videos"] = bundle.num_videos();
  j["manifest_sha256"] = digest;
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_stats(const fs::path& support_dir, const std::string& out) {
  const SupportSetBundle support = load_support_set(support_dir);
  const auto report = dispersion_stats(support);
  ordered_json j;
  ordered_json per_class = ordered_json::array();
  for (const auto& c : report) {
    per_class.push_back(ordered_json{
        {"class", c.class_index < support.classes.size() ? support.classes[c.class_index]
                                                          : std::to_string(c.class_index)},
        {"mean_pairwise", opt(c.mean_pairwise)},
        {"within_prompt", opt(c.within_prompt)},
        {"across_prompt", opt(c.across_prompt)}});
  }
  j["classes"] = std::move(per_class);
  j["mean_intra_class_distance"] = opt(mean_intra_class_distance(report));
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_file(out, j.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_predict(const fs::path& support_dir, const fs::path& text_dir, const fs::path& test_dir,
                bool no_tse, const PredictorFlags& pflags, const TuningFlags& tflags) {
  const ClassTextFeatures text = load_class_text(text_dir);
  const SupportSetBundle support = load_support_set(support_dir);
  const TestInstanceBundle test = load_test_instance(test_dir);
  check_consistent(text, support, test);
  const PredictorConfig predictor = pflags.apply({});

  FactorizedWeights weights = FactorizedWeights::ones(support.num_videos(), support.frames());
  if (!no_tse) weights = tune(support, test, text, predictor, tflags.options()).weights;
  const Prediction p = final_predict(support, test, weights, text, predictor);
  ordered_json j = prediction_json(p, text.classes);
  j["ground_truth"] = opt(test.ground_truth);
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_tune(const fs::path& support_dir, const fs::path& text_dir, const fs::path& test_dir,
             const std::string& trace_file, const std::string& weights_file,
             const PredictorFlags& pflags, const TuningFlags& tflags) {
  const ClassTextFeatures text = load_class_text(text_dir);
  const SupportSetBundle support = load_support_set(support_dir);
  const TestInstanceBundle test = load_test_instance(test_dir);
  check_consistent(text, support, test);
  const PredictorConfig predictor = pflags.apply({});

  TuneResult result;
  try {
    result = tune(support, test, text, predictor, tflags.options());
  } catch (const TuningAborted& e) {
    if (!trace_file.empty()) write_file(trace_file, trace_to_jsonl(e.trace()));
    throw;
  }
  if (!trace_file.empty()) write_file(trace_file, trace_to_jsonl(result.trace));
  if (!weights_file.empty()) write_file(weights_file, weights_json(result.weights).dump(2) + "\n");

  const Prediction p = final_predict(support, test, result.weights, text, predictor);
  ordered_json j = prediction_json(p, text.classes);
  j["steps"] = result.trace.size();
  j["initial_loss"] = result.trace.empty() ? ordered_json(nullptr)
                                           : ordered_json(result.trace.front().loss);
  j["last_step_loss"] = result.trace.empty() ? ordered_json(nullptr)
                                             : ordered_json(result.trace.back().loss);
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_eval(const fs::path& config_file, const std::string& out, std::optional<std::size_t> parallel,
             bool keep_traces) {
  ExperimentConfig cfg = read_experiment_config(config_file);
  if (!out.empty()) cfg.output_dir = out;
  if (parallel) cfg.settings.parallelism = *parallel;
  if (keep_traces) cfg.settings.keep_traces = true;
  require(!cfg.output_dir.empty(), ErrorCode::kInvalidArgument,
          "no output directory: pass --out or set output_dir");

  const EvalReport report = eval_dataset(cfg);
  emit_report(report, cfg.output_dir);
  const auto& s = report.summary;
  ordered_json j;
  j["instances"] = s.instances;
  j["failed"] = s.failed;
  j["top1_accuracy"] = opt(s.top1);
  j["mean_loss_drop"] = opt(s.mean_loss_drop);
  j["out"] = cfg.output_dir.string();
  std::cout << j.dump() << '\n';
  for (const auto& r : report.instances) {
    if (r.failed) std::cerr << "sstune: instance " << r.id << " failed: " << r.error << '\n';
  }
  return s.failed == 0 ? kExitOk : kExitFailed;
}

int cmd_gradcheck(GradcheckConfig cfg, const PredictorFlags& pflags) {
  cfg.predictor = pflags.apply(cfg.predictor);
  const GradcheckReport r = run_gradcheck(cfg);
  ordered_json j;
  j["passed"] = r.passed;
  j["trials"] = r.trials;
  j["worst_relative_error"] = r.worst_error;
  j["worst_trial"] = r.worst_trial;
  j["worst_parameter"] = r.worst_parameter;
  j["worst_analytic"] = r.worst_analytic;
  j["worst_numeric"] = r.worst_numeric;
  j["tolerance"] = cfg.tolerance;
  j["seconds"] = r.seconds;
  std::cout << j.dump() << '\n';
  return r.passed ? kExitOk : kExitFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sstune: support-set dilation and test-time erosion for zero-shot video classification"};
  app.require_subcommand(1);
  int status = kExitOk;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic support set and test instances");
  std::string synth_config;
  fs::path synth_out;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--config", synth_config, "generator settings (JSON)");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "overrides the config seed");
  synth->callback([&] { status = cmd_synth(synth_config, synth_out, synth_seed); });

  // compose
  auto* compose = app.add_subcommand("compose", "assemble a support-set bundle from per-video features");
  fs::path catalog, prompts, features, compose_out;
  compose->add_option("--catalog", catalog, "class list (JSON)")->required();
  compose->add_option("--prompts", prompts, "prompt set (JSON)")->required();
  compose->add_option("--features", features, "directory with index.json and feature blobs")->required();
  compose->add_option("--out", compose_out, "bundle directory")->required();
  compose->callback([&] { status = cmd_compose(catalog, prompts, features, compose_out); });

  // stats
  auto* stats = app.add_subcommand("stats", "per-class dispersion of a support set");
  fs::path stats_support;
  std::string stats_out;
  stats->add_option("--support", stats_support, "support-set bundle")->required();
  stats->add_option("--out", stats_out, "report file; stdout when omitted");
  stats->callback([&] { status = cmd_stats(stats_support, stats_out); });

  // predict
  auto* predict = app.add_subcommand("predict", "classify one test instance");
  fs::path p_support, p_text, p_test;
  bool p_no_tse = false;
  PredictorFlags p_flags;
  TuningFlags p_tuning;
  predict->add_option("--support", p_support, "support-set bundle")->required();
  predict->add_option("--classtext", p_text, "class-text bundle")->required();
  predict->add_option("--test", p_test, "test-instance bundle")->required();
  predict->add_flag("--no-tse", p_no_tse, "skip test-time tuning");
  p_flags.add(*predict);
  p_tuning.add(*predict);
  predict->callback([&] { status = cmd_predict(p_support, p_text, p_test, p_no_tse, p_flags, p_tuning); });

  // tune
  auto* tune_cmd = app.add_subcommand("tune", "tune factorized weights on one test instance");
  fs::path t_support, t_text, t_test;
  std::string t_trace, t_weights;
  PredictorFlags t_flags;
  TuningFlags t_tuning;
  tune_cmd->add_option("--support", t_support, "support-set bundle")->required();
  tune_cmd->add_option("--classtext", t_text, "class-text bundle")->required();
  tune_cmd->add_option("--test", t_test, "test-instance bundle")->required();
  tune_cmd->add_option("--trace", t_trace, "per-step trace (JSONL)");
  tune_cmd->add_option("--weights-out", t_weights, "final r_vid and r_fr (JSON)");
  t_flags.add(*tune_cmd);
  t_tuning.add(*tune_cmd);
  tune_cmd->callback([&] {
    status = cmd_tune(t_support, t_text, t_test, t_trace, t_weights, t_flags, t_tuning);
  });

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a dataset described by an experiment config");
  fs::path e_config;
  std::string e_out;
  std::optional<std::size_t> e_parallel;
  bool e_traces = false;
  eval->add_option("--config", e_config, "experiment.json")->required();
  eval->add_option("--out", e_out, "report directory (overrides output_dir)");
  eval->add_option("--parallel", e_parallel, "concurrent tuning sessions")->check(CLI::PositiveNumber);
  eval->add_flag("--keep-traces", e_traces, "also write traces.jsonl");
  eval->callback([&] { status = cmd_eval(e_config, e_out, e_parallel, e_traces); });

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gradcheck->set_help_flag("--help", "print this help message and exit");
  GradcheckConfig g_cfg;
  PredictorFlags g_flags;
  gradcheck->add_option("--trials", g_cfg.trials, "random instances")->check(CLI::PositiveNumber);
  gradcheck->add_option("--h", g_cfg.h, "central-difference step");
  gradcheck->add_option("--seed", g_cfg.seed, "base seed");
  gradcheck->add_option("--tolerance", g_cfg.tolerance, "max relative error");
  gradcheck->add_option("--perturb", g_cfg.perturbation, "added to analytic gradients (self-test)");
  g_flags.add(*gradcheck);
  gradcheck->callback([&] { status = cmd_gradcheck(g_cfg, g_flags); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "sstune: " << to_string(e.code()) << ": " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "sstune: " << e.what() << '\n';
    return kExitError;
  }
  return status;
}
