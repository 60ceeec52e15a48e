// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sstune/bundle.hpp"
#include "sstune/predictors.hpp"
#include "sstune/synth.hpp"
#include "sstune/tuner.hpp"

namespace sstune {

struct AblationSwitches {
  bool multiprompt = true;    // false: keep only prompt-0 support videos
  bool tse = true;            // false: no test-time tuning
  bool video_weights = true;  // false: r_vid frozen at one
  bool frame_weights = true;  // false: r_fr frozen at one
};

struct ExperimentSettings {
  PredictorConfig predictor;
  TuneOptions tuning;
  AblationSwitches ablation;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  bool keep_traces = false;
};

struct ExperimentConfig {
  std::filesystem::path class_text;
  std::filesystem::path support;
  std::vector<std::filesystem::path> tests;
  std::filesystem::path output_dir;
  ExperimentSettings settings;
};

/// Reads experiment.json. Relative paths resolve against the file's
/// directory; "test_dir" expands to its subdirectories in name order.
ExperimentConfig read_experiment_config(const std::filesystem::path& file);
void write_experiment_config(const ExperimentConfig& config, const std::filesystem::path& file);

struct InstanceRecord {
  std::string id;
  std::optional<std::size_t> predicted;
  std::optional<std::size_t> ground_truth;
  std::optional<bool> correct;
  std::optional<double> initial_loss;
  std::optional<double> final_loss;
  bool failed = false;
  std::string error;
  TuningTrace trace;  // only filled when keep_traces is set
};

struct ClassAccuracy {
  std::string name;
  std::size_t instances = 0;
  std::size_t correct = 0;
  std::optional<double> accuracy;
};

struct EvalSummary {
  std::size_t instances = 0;
  std::size_t evaluated = 0;
  std::size_t failed = 0;
  std::size_t labeled = 0;
  std::size_t correct = 0;
  std::optional<double> top1;
  std::vector<ClassAccuracy> per_class;
  std::optional<double> mean_loss_drop;
  double wall_clock_seconds = 0.0;
};

struct EvalReport {
  std::vector<InstanceRecord> instances;
  EvalSummary summary;
};

/// Runs tune (when enabled) and final_predict for each test instance, in
/// parallel up to settings.parallelism. Instance i tunes with random-frame
/// seed derive_seed(settings.seed, i), so results do not depend on
/// scheduling. Tuning failures mark the instance failed; inconsistent
/// bundles throw BundleInconsistency before any work starts.
EvalReport eval_dataset(const ClassTextFeatures& text, const SupportSetBundle& support,
                        std::span<const TestInstanceBundle> tests,
                        std::span<const std::string> ids, const ExperimentSettings& settings);
EvalReport eval_dataset(const ExperimentConfig& config);

/// Writes summary.json, per_instance.jsonl, summary.csv and timing.json
/// (plus traces.jsonl when traces were kept). Everything except timing.json
/// is a pure function of the report's contents.
void emit_report(const EvalReport& report, const std::filesystem::path& dir);

struct GradcheckConfig {
  std::size_t trials = 50;
  double h = 1e-3;
  SyntheticConfig instance{.classes = 5, .prompts = 2, .repeats = 2, .frames = 8, .dim = 16,
                           .views = 8, .outlier_fraction = 0.25};
  PredictorConfig predictor;
  ConfidenceFilter filter;
  std::uint64_t seed = 0;
  double tolerance = 1e-3;
  double absolute_floor = 1e-6;
  /// Added to every analytic gradient entry; a nonzero value must make the
  /// check fail.
  double perturbation = 0.0;
};

struct GradcheckReport {
  std::size_t trials = 0;
  bool passed = true;
  /// max |a - n| / max(|a|, |n|, absolute_floor / tolerance); an entry passes
  /// when this is at most `tolerance`.
  double worst_error = 0.0;
  std::size_t worst_trial = 0;
  std::string worst_parameter;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double seconds = 0.0;
};

double gradient_error(double analytic, double numeric, double tolerance, double absolute_floor);

GradcheckReport run_gradcheck(const GradcheckConfig& config);

}  // namespace sstune
