// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sstune/adamw.hpp"
#include "sstune/bundle.hpp"
#include "sstune/error.hpp"
#include "sstune/predictors.hpp"
#include "sstune/rng.hpp"

namespace sstune {

/// Per-video scale (length CK) and per-frame scale (length T, shared by all
/// support videos).
struct FactorizedWeights {
  std::vector<double> video;
  std::vector<double> frame;

  static FactorizedWeights ones(std::size_t videos, std::size_t frames);

  friend bool operator==(const FactorizedWeights&, const FactorizedWeights&) = default;
};

/// F'[j, t, :] = F[j, t, :] * video[j] * frame[t]
Tensor3 apply_weights(const Tensor3& features, const FactorizedWeights& weights);

enum class FrameStrategy { kTop, kRandom };

struct ScheduleStage {
  std::size_t scale = 8;  // frames pooled per step
  std::size_t steps = 1;

  friend bool operator==(const ScheduleStage&, const ScheduleStage&) = default;
};

struct TuningSchedule {
  std::vector<ScheduleStage> stages{{8, 4}, {6, 3}, {4, 3}};
  FrameStrategy strategy = FrameStrategy::kTop;
  std::uint64_t rng_seed = 0;
  /// Number of passes over `stages`.
  std::size_t repeats = 1;

  std::size_t total_steps() const noexcept;
};

void validate(const TuningSchedule& schedule, std::size_t frames);

/// Parses "8x4,6x3,4x3" (scale x steps, comma separated).
std::vector<ScheduleStage> parse_stages(const std::string& text);
std::string format_stages(std::span<const ScheduleStage> stages);

std::string to_string(FrameStrategy strategy);
FrameStrategy parse_strategy(const std::string& text);

/// top: topk_indices(frame_weights, k). random: k distinct indices from `rng`.
/// k == T returns every index without touching `rng`.
std::vector<std::size_t> select_frames(std::span<const double> frame_weights, std::size_t k,
                                       FrameStrategy strategy, Rng& rng);

struct ConfidenceFilter {
  double rho = 0.1;

  std::size_t selected_count(std::size_t views) const;
};

struct MarginalLoss {
  double value = 0.0;
  std::vector<std::size_t> selected_views;  // ascending
};

/// Keeps the max(1, floor(rho V)) lowest-entropy views (ties to the smaller
/// index), averages them and returns the entropy of the average.
MarginalLoss marginal_entropy_loss(std::span<const Distribution> views, const ConfidenceFilter& filter);

/// Entropy of the average of the given views.
double averaged_entropy(std::span<const Distribution> views, std::span<const std::size_t> selected);

/// The read-only inputs of one tuning session.
struct TuningProblem {
  const Tensor3& support;        // CK x T x d, unweighted
  const DenseMatrix& labels;     // CK x C
  const Tensor3& views;          // V x T x d
  const ClassTextFeatures& text; // C x d
  PredictorConfig predictor;
  ConfidenceFilter filter;
};

void check_problem(const TuningProblem& problem);

struct Gradients {
  std::vector<double> video;
  std::vector<double> frame;
};

/// Support videos that anchor the min-max rescale of one view's affinities.
/// Several entries mean an exact tie; the anchor value is their mean.
struct PsiAnchors {
  std::vector<std::size_t> low;
  std::vector<std::size_t> high;

  friend bool operator==(const PsiAnchors&, const PsiAnchors&) = default;
};

/// Every discrete choice made while evaluating the loss. Gradients treat
/// them as constants; freezing them reproduces the same piecewise-smooth
/// branch of the loss.
struct Selections {
  std::vector<std::size_t> views;   // confident views, ascending
  std::vector<PsiAnchors> anchors;  // one per view; empty unless affine psi is active

  friend bool operator==(const Selections&, const Selections&) = default;
};

struct LossEvaluation {
  double loss = 0.0;
  Selections selections;
  Gradients gradients;
};

/// View distributions for the given weights and frame selection.
std::vector<Distribution> predict_weighted(const TuningProblem& problem,
                                           const FactorizedWeights& weights,
                                           std::span<const std::size_t> frame_indices);

/// Loss value. With `frozen` the confident views and psi anchors are taken as
/// given instead of recomputed.
LossEvaluation evaluate_loss(const TuningProblem& problem, const FactorizedWeights& weights,
                             std::span<const std::size_t> frame_indices,
                             const Selections* frozen = nullptr);

/// Exact gradient of the loss with the frame, view and anchor selections
/// held fixed.
LossEvaluation loss_gradients(const TuningProblem& problem, const FactorizedWeights& weights,
                              std::span<const std::size_t> frame_indices);

/// Central differences (L(w + h e_i) - L(w - h e_i)) / 2h for every weight,
/// with the frame indices and `selections` frozen.
Gradients finite_difference_gradients(const TuningProblem& problem,
                                      const FactorizedWeights& weights,
                                      std::span<const std::size_t> frame_indices,
                                      const Selections& selections, double h);

/// Central differences of an arbitrary scalar function.
std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> point, double h);

struct StepRecord {
  std::size_t stage = 0;
  std::size_t scale = 0;
  std::vector<std::size_t> frame_indices;
  double loss = 0.0;
  double grad_norm_video = 0.0;
  double grad_norm_frame = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

using TuningTrace = std::vector<StepRecord>;

/// One JSON object per line: stage, scale, frame_indices, loss,
/// grad_norm_vid, grad_norm_fr.
std::string trace_to_jsonl(const TuningTrace& trace);

struct TuneOptions {
  TuningSchedule schedule;
  ConfidenceFilter filter;
  AdamWOptions optimizer;
  bool train_video = true;
  bool train_frame = true;
};

struct TuneResult {
  FactorizedWeights weights;
  TuningTrace trace;
};

/// Raised when a step produces a non-finite loss; carries the steps that
/// completed before it.
class TuningAborted : public Error {
 public:
  TuningAborted(const std::string& what, TuningTrace trace)
      : Error(ErrorCode::kNonFiniteLoss, what), trace_(std::move(trace)) {}

  const TuningTrace& trace() const noexcept { return trace_; }

 private:
  TuningTrace trace_;
};

/// Multi-scale test-time tuning of the factorized weights. Weights start at
/// one; every step selects frames at the stage's scale, evaluates the loss
/// with those frames applied to the support and the views alike, and takes
/// one joint AdamW step on (video, frame).
TuneResult tune(const SupportSetBundle& support, const TestInstanceBundle& test,
                const ClassTextFeatures& text, const PredictorConfig& predictor,
                const TuneOptions& options);

struct Prediction {
  Logits logits;
  std::size_t predicted = 0;
};

/// Blended logits of the un-augmented test feature (all frames, pooled and
/// normalized) against the support pooled over all frames under `weights`.
Prediction final_predict(const SupportSetBundle& support, const TestInstanceBundle& test,
                         const FactorizedWeights& weights, const ClassTextFeatures& text,
                         const PredictorConfig& predictor);

std::vector<std::size_t> all_frames(std::size_t frames);

}  // namespace sstune
