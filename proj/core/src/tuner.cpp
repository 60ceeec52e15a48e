// SPDX-License-Identifier: Apache-2.0
#include "sstune/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace sstune {

FactorizedWeights FactorizedWeights::ones(std::size_t videos, std::size_t frames) {
  return FactorizedWeights{std::vector<double>(videos, 1.0), std::vector<double>(frames, 1.0)};
}

Tensor3 apply_weights(const Tensor3& features, const FactorizedWeights& weights) {
  require(weights.video.size() == features.outer() && weights.frame.size() == features.frames(),
          ErrorCode::kDimMismatch, "factorized weights do not match the support block");
  Tensor3 out = features;
  for (std::size_t j = 0; j < features.outer(); ++j) {
    for (std::size_t t = 0; t < features.frames(); ++t) {
      const double scale = weights.video[j] * weights.frame[t];
      for (float& x : out.frame(j, t)) x = static_cast<float>(static_cast<double>(x) * scale);
    }
  }
  return out;
}

std::vector<std::size_t> all_frames(std::size_t frames) {
  std::vector<std::size_t> out(frames);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

// ---------------------------------------------------------------------------
// Schedule

std::size_t TuningSchedule::total_steps() const noexcept {
  std::size_t total = 0;
  for (const auto& s : stages) total += s.steps;
  return total * repeats;
}

void validate(const TuningSchedule& schedule, std::size_t frames) {
  require(!schedule.stages.empty(), ErrorCode::kInvalidArgument, "schedule has no stages");
  require(schedule.repeats >= 1, ErrorCode::kInvalidArgument, "schedule repeats must be >= 1");
  for (const auto& s : schedule.stages) {
    require(s.scale >= 1 && s.scale <= frames, ErrorCode::kKOutOfRange,
            "stage scale " + std::to_string(s.scale) + " outside [1, " + std::to_string(frames) +
                "]");
    require(s.steps >= 1, ErrorCode::kInvalidArgument, "stage steps must be >= 1");
  }
}

std::vector<ScheduleStage> parse_stages(const std::string& text) {
  std::vector<ScheduleStage> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    require(x != std::string::npos && x > 0 && x + 1 < item.size(), ErrorCode::kInvalidArgument,
            "schedule stage '" + item + "' is not SCALExSTEPS");
    try {
      std::size_t used = 0;
      const std::string scale = item.substr(0, x);
      const std::string steps = item.substr(x + 1);
      const auto a = std::stoul(scale, &used);
      require(used == scale.size(), ErrorCode::kInvalidArgument, "bad scale in '" + item + "'");
      const auto b = std::stoul(steps, &used);
      require(used == steps.size(), ErrorCode::kInvalidArgument, "bad steps in '" + item + "'");
      require(a >= 1 && b >= 1, ErrorCode::kInvalidArgument,
              "scale and steps must be positive in '" + item + "'");
      out.push_back(ScheduleStage{a, b});
    } catch (const std::logic_error&) {
      fail(ErrorCode::kInvalidArgument, "schedule stage '" + item + "' is not SCALExSTEPS");
    }
  }
  require(!out.empty(), ErrorCode::kInvalidArgument, "empty schedule");
  return out;
}

std::string format_stages(std::span<const ScheduleStage> stages) {
  std::string out;
  for (const auto& s : stages) {
    if (!out.empty()) out += ',';
    out += std::to_string(s.scale) + "x" + std::to_string(s.steps);
  }
  return out;
}

std::string to_string(FrameStrategy strategy) {
  return strategy == FrameStrategy::kTop ? "top" : "random";
}

FrameStrategy parse_strategy(const std::string& text) {
  if (text == "top") return FrameStrategy::kTop;
  if (text == "random") return FrameStrategy::kRandom;
  fail(ErrorCode::kInvalidArgument, "unknown frame strategy '" + text + "'");
}

std::vector<std::size_t> select_frames(std::span<const double> frame_weights, std::size_t k,
                                       FrameStrategy strategy, Rng& rng) {
  const std::size_t frames = frame_weights.size();
  require(k >= 1 && k <= frames, ErrorCode::kKOutOfRange,
          "k=" + std::to_string(k) + " outside [1, " + std::to_string(frames) + "]");
  if (k == frames) return all_frames(frames);
  if (strategy == FrameStrategy::kTop) return topk_indices(frame_weights, k);
  return rng.sample_without_replacement(frames, k);
}

// ---------------------------------------------------------------------------
// Loss

std::size_t ConfidenceFilter::selected_count(std::size_t views) const {
  require(rho > 0.0 && rho <= 1.0, ErrorCode::kInvalidArgument, "rho must lie in (0, 1]");
  const auto kept = static_cast<std::size_t>(std::floor(rho * static_cast<double>(views)));
  return std::max<std::size_t>(1, kept);
}

namespace {

std::vector<double> average(std::span<const Distribution> views,
                            std::span<const std::size_t> selected) {
  std::vector<double> mean(views[selected.front()].size(), 0.0);
  for (auto v : selected) {
    const auto p = views[v].probs();
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p[c];
  }
  const double inv = 1.0 / static_cast<double>(selected.size());
  for (double& x : mean) x *= inv;
  return mean;
}

std::vector<std::size_t> confident_views(std::span<const Distribution> views,
                                         const ConfidenceFilter& filter) {
  const std::size_t keep = filter.selected_count(views.size());
  std::vector<double> h(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) h[v] = entropy(views[v]);
  std::vector<std::size_t> order = all_frames(views.size());
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return h[a] < h[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

double averaged_entropy(std::span<const Distribution> views, std::span<const std::size_t> selected) {
  require(!selected.empty(), ErrorCode::kEmptySelection, "no views selected");
  for (auto v : selected) {
    require(v < views.size(), ErrorCode::kIndexOutOfRange, "view index out of range");
  }
  return entropy(average(views, selected));
}

MarginalLoss marginal_entropy_loss(std::span<const Distribution> views,
                                   const ConfidenceFilter& filter) {
  require(!views.empty(), ErrorCode::kEmptySelection, "no views to score");
  MarginalLoss out;
  out.selected_views = confident_views(views, filter);
  out.value = averaged_entropy(views, out.selected_views);
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

void check_problem(const TuningProblem& p) {
  validate(p.predictor);
  const std::size_t videos = p.support.outer();
  require(videos >= 1 && p.views.outer() >= 1, ErrorCode::kDimMismatch,
          "support and views must be non-empty");
  require(p.labels.rows() == videos, ErrorCode::kDimMismatch, "labels do not cover the support");
  require(p.labels.cols() == p.text.num_classes(), ErrorCode::kDimMismatch,
          "label width does not match class count");
  require(p.support.frames() == p.views.frames() && p.support.channels() == p.views.channels(),
          ErrorCode::kDimMismatch, "support and views disagree on T or d");
  require(p.support.channels() == p.text.dim(), ErrorCode::kDimMismatch,
          "class text dimension does not match features");
}

std::vector<Distribution> predict_weighted(const TuningProblem& problem,
                                           const FactorizedWeights& weights,
                                           std::span<const std::size_t> frame_indices) {
  check_problem(problem);
  const PooledSupport support = pool_support(problem.support, weights.video, weights.frame,
                                             frame_indices, problem.text, problem.predictor);
  return predict_views(support, problem.views, frame_indices, problem.text, problem.labels,
                       problem.predictor);
}

namespace {

std::vector<std::size_t> argextreme(std::span<const double> values, double target) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j] == target) out.push_back(j);
  }
  return out;
}

double mean_at(std::span<const double> values, std::span<const std::size_t> at) {
  double acc = 0.0;
  for (auto j : at) acc += values[j];
  return acc / static_cast<double>(at.size());
}

constexpr double kFlatRange = 1e-12;

struct ViewForward {
  std::vector<double> query;        // unit pooled view feature
  Distribution text_probs;          // p = softmax(f W^T / tau)
  std::vector<double> ta_affinity;  // exp(-beta (1 - <f, F_j>))
  std::vector<double> kl_affinity;  // -KL(p || q_j)
  std::vector<double> psi;
  double psi_low = 0.0;
  double psi_range = 0.0;
  Distribution probs;               // softmax(z / tau)
};

struct Forward {
  PooledSupport support;
  FeatureRows base_rows;  // support rows before the per-video scale
  std::vector<ViewForward> views;
  Selections selections;
  std::vector<double> mean;
  double loss = 0.0;
};

// Evaluates the loss, recording every discrete choice. With `frozen` the
// choices are replayed instead.
Forward run_forward(const TuningProblem& problem, const FactorizedWeights& weights,
                    std::span<const std::size_t> frame_indices, const Selections* frozen) {
  check_problem(problem);
  const auto& cfg = problem.predictor;
  const auto& w = cfg.blend;
  const std::size_t videos = problem.support.outer();
  const std::size_t classes = problem.text.num_classes();
  const std::size_t view_count = problem.views.outer();
  const bool affine_psi = w.tip_x > 0.0 && cfg.psi == PsiMode::kAffineRescale;
  require(weights.video.size() == videos && weights.frame.size() == problem.support.frames(),
          ErrorCode::kDimMismatch, "factorized weights do not match the support block");
  if (frozen) {
    require(!frozen->views.empty(), ErrorCode::kEmptySelection, "frozen view selection is empty");
    for (auto v : frozen->views) {
      require(v < view_count, ErrorCode::kIndexOutOfRange, "frozen view index out of range");
    }
    require(!affine_psi || frozen->anchors.size() == view_count, ErrorCode::kDimMismatch,
            "frozen psi anchors do not cover every view");
  }

  Forward fwd;
  const std::vector<double> unit(videos, 1.0);
  fwd.support = pool_support(problem.support, unit, weights.frame, frame_indices, problem.text,
                             PredictorConfig{cfg.beta, cfg.temperature, BlendWeights{1, 0, 0},
                                             cfg.psi, cfg.psi_scale});
  fwd.base_rows = fwd.support.rows;
  for (std::size_t j = 0; j < videos; ++j) {
    for (double& x : fwd.support.rows[j]) x *= weights.video[j];
  }
  if (w.tip_x > 0.0) {
    fwd.support.class_probs.reserve(videos);
    for (const auto& row : fwd.support.rows) {
      fwd.support.class_probs.push_back(
          softmax(zero_shot_logits(row, problem.text), cfg.temperature));
    }
  }

  fwd.views.resize(view_count);
  if (affine_psi) fwd.selections.anchors.resize(view_count);
  std::vector<Distribution> view_probs;
  view_probs.reserve(view_count);
  for (std::size_t v = 0; v < view_count; ++v) {
    auto& f = fwd.views[v];
    f.query = pool_query(problem.views, v, frame_indices);
    const Logits zs = zero_shot_logits(f.query, problem.text);
    Logits ta(classes, 0.0);
    Logits tx(classes, 0.0);
    if (w.tip_adapter > 0.0) {
      f.ta_affinity.resize(videos);
      for (std::size_t j = 0; j < videos; ++j) {
        f.ta_affinity[j] = std::exp(-cfg.beta * (1.0 - dot(f.query, fwd.support.rows[j])));
      }
      ta = aggregate_by_label(f.ta_affinity, problem.labels);
    }
    if (w.tip_x > 0.0) {
      f.text_probs = softmax(zs, cfg.temperature);
      f.kl_affinity.resize(videos);
      for (std::size_t j = 0; j < videos; ++j) {
        f.kl_affinity[j] = -kl_divergence(f.text_probs, fwd.support.class_probs[j]);
      }
      if (affine_psi) {
        auto& anchors = fwd.selections.anchors[v];
        if (frozen) {
          anchors = frozen->anchors[v];
        } else {
          const auto [lo, hi] = std::minmax_element(f.kl_affinity.begin(), f.kl_affinity.end());
          anchors.low = argextreme(f.kl_affinity, *lo);
          anchors.high = argextreme(f.kl_affinity, *hi);
        }
        f.psi_low = mean_at(f.kl_affinity, anchors.low);
        f.psi_range = mean_at(f.kl_affinity, anchors.high) - f.psi_low;
        f.psi.resize(videos);
        for (std::size_t j = 0; j < videos; ++j) {
          f.psi[j] = f.psi_range > kFlatRange ? (f.kl_affinity[j] - f.psi_low) / f.psi_range : 0.5;
        }
      } else {
        f.psi = psi_transform(f.kl_affinity, cfg);
      }
      tx = aggregate_by_label(f.psi, problem.labels);
    }
    f.probs = softmax(blend_logits(zs, ta, tx, cfg), cfg.temperature);
    view_probs.push_back(f.probs);
  }

  fwd.selections.views = frozen ? frozen->views : confident_views(view_probs, problem.filter);
  fwd.mean = average(view_probs, fwd.selections.views);
  fwd.loss = entropy(fwd.mean);
  return fwd;
}

}  // namespace

LossEvaluation evaluate_loss(const TuningProblem& problem, const FactorizedWeights& weights,
                             std::span<const std::size_t> frame_indices, const Selections* frozen) {
  Forward fwd = run_forward(problem, weights, frame_indices, frozen);
  LossEvaluation out;
  out.loss = fwd.loss;
  out.selections = std::move(fwd.selections);
  return out;
}

LossEvaluation loss_gradients(const TuningProblem& problem, const FactorizedWeights& weights,
                              std::span<const std::size_t> frame_indices) {
  const Forward fwd = run_forward(problem, weights, frame_indices, nullptr);
  const auto& cfg = problem.predictor;
  const auto& w = cfg.blend;
  const double tau = cfg.temperature;
  const std::size_t videos = problem.support.outer();
  const std::size_t classes = problem.text.num_classes();
  const std::size_t d = problem.support.channels();
  const std::size_t frames = problem.support.frames();
  const bool affine_psi = w.tip_x > 0.0 && cfg.psi == PsiMode::kAffineRescale;

  std::vector<std::size_t> label(videos);
  for (std::size_t j = 0; j < videos; ++j) {
    const auto row = problem.labels.row(j);
    label[j] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }

  // dL/d mean_c = -(ln mean_c + 1). A class with zero mean mass has zero
  // probability in every selected view, so its entry never contributes.
  const auto& selected = fwd.selections.views;
  const double inv_s = 1.0 / static_cast<double>(selected.size());
  std::vector<double> grad_probs(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    if (fwd.mean[c] > 0.0) grad_probs[c] = -(std::log(fwd.mean[c]) + 1.0) * inv_s;
  }

  // Gradient with respect to each scaled support row.
  FeatureRows grad_rows(videos, std::vector<double>(d, 0.0));
  for (auto v : selected) {
    const auto& f = fwd.views[v];
    const auto pi = f.probs.probs();
    double inner = 0.0;
    for (std::size_t c = 0; c < classes; ++c) inner += grad_probs[c] * pi[c];
    std::vector<double> grad_z(classes);
    for (std::size_t c = 0; c < classes; ++c) grad_z[c] = pi[c] * (grad_probs[c] - inner) / tau;

    if (w.tip_adapter > 0.0) {
      for (std::size_t j = 0; j < videos; ++j) {
        const double g = w.tip_adapter * grad_z[label[j]] * cfg.beta * f.ta_affinity[j];
        for (std::size_t i = 0; i < d; ++i) grad_rows[j][i] += g * f.query[i];
      }
    }
    if (w.tip_x <= 0.0) continue;

    std::vector<double> grad_aff(videos, 0.0);
    if (!affine_psi) {
      for (std::size_t j = 0; j < videos; ++j) {
        grad_aff[j] = w.tip_x * grad_z[label[j]] * cfg.psi_scale * f.psi[j];
      }
    } else if (f.psi_range > kFlatRange) {
      // psi_j = (A_j - A_low) / (A_high - A_low), anchors averaged over ties.
      const auto& anchors = fwd.selections.anchors[v];
      double toward_low = 0.0;
      double toward_high = 0.0;
      for (std::size_t j = 0; j < videos; ++j) {
        const double g = w.tip_x * grad_z[label[j]];
        grad_aff[j] = g / f.psi_range;
        toward_low += g * (f.psi[j] - 1.0) / f.psi_range;
        toward_high -= g * f.psi[j] / f.psi_range;
      }
      for (auto j : anchors.low) grad_aff[j] += toward_low / static_cast<double>(anchors.low.size());
      for (auto j : anchors.high) {
        grad_aff[j] += toward_high / static_cast<double>(anchors.high.size());
      }
    }

    // A_j = sum_c p_c ln max(q_jc, floor) + const, q_j = softmax(u_j),
    // u_j = row_j W^T / tau. Floored entries are constant.
    const auto p = f.text_probs.probs();
    for (std::size_t j = 0; j < videos; ++j) {
      if (grad_aff[j] == 0.0) continue;
      const auto q = fwd.support.class_probs[j].probs();
      double live_mass = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (p[c] > 0.0 && q[c] >= kKlFloor) live_mass += p[c];
      }
      for (std::size_t c = 0; c < classes; ++c) {
        const double own = (p[c] > 0.0 && q[c] >= kKlFloor) ? p[c] : 0.0;
        const double grad_u = grad_aff[j] * (own - q[c] * live_mass) / tau;
        if (grad_u == 0.0) continue;
        const auto text_row = problem.text.weights.row(c);
        for (std::size_t i = 0; i < d; ++i) grad_rows[j][i] += grad_u * text_row[i];
      }
    }
  }

  // row_j = video_j * base_j, base_j = mean_{t in S} frame_t F[j, t, :]
  const double inv_k = 1.0 / static_cast<double>(frame_indices.size());
  LossEvaluation out;
  out.loss = fwd.loss;
  out.selections = fwd.selections;
  out.gradients.video.assign(videos, 0.0);
  out.gradients.frame.assign(frames, 0.0);
  for (std::size_t j = 0; j < videos; ++j) {
    const auto& g = grad_rows[j];
    out.gradients.video[j] = dot(g, fwd.base_rows[j]);
    const double scale = weights.video[j] * inv_k;
    for (auto t : frame_indices) {
      out.gradients.frame[t] += scale * dot(g, problem.support.frame(j, t));
    }
  }
  return out;
}

Gradients finite_difference_gradients(const TuningProblem& problem,
                                      const FactorizedWeights& weights,
                                      std::span<const std::size_t> frame_indices,
                                      const Selections& selections, double h) {
  require(h > 0.0, ErrorCode::kInvalidArgument, "finite-difference step must be positive");
  FactorizedWeights probe = weights;
  auto loss_at = [&] { return evaluate_loss(problem, probe, frame_indices, &selections).loss; };
  Gradients out;
  auto sweep = [&](std::vector<double>& params, std::vector<double>& grads) {
    grads.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      const double up = loss_at();
      params[i] = saved - h;
      const double down = loss_at();
      params[i] = saved;
      grads[i] = (up - down) / (2.0 * h);
    }
  };
  sweep(probe.video, out.video);
  sweep(probe.frame, out.frame);
  return out;
}

std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> point, double h) {
  require(h > 0.0, ErrorCode::kInvalidArgument, "finite-difference step must be positive");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Session

std::string trace_to_jsonl(const TuningTrace& trace) {
  std::string out;
  for (const auto& r : trace) {
    nlohmann::ordered_json j;
    j["stage"] = r.stage;
    j["scale"] = r.scale;
    j["frame_indices"] = r.frame_indices;
    j["loss"] = r.loss;
    j["grad_norm_vid"] = r.grad_norm_video;
    j["grad_norm_fr"] = r.grad_norm_frame;
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

double norm(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

}  // namespace

TuneResult tune(const SupportSetBundle& support, const TestInstanceBundle& test,
                const ClassTextFeatures& text, const PredictorConfig& predictor,
                const TuneOptions& options) {
  check_consistent(text, support, test);
  validate(options.schedule, support.frames());
  validate(options.optimizer);
  const TuningProblem problem{support.features, support.labels, test.views, text, predictor,
                              options.filter};
  check_problem(problem);

  const std::size_t videos = support.num_videos();
  const std::size_t frames = support.frames();
  TuneResult result{FactorizedWeights::ones(videos, frames), {}};
  OptimizerState state = OptimizerState::zeros(videos + frames, options.optimizer);
  Rng rng(options.schedule.rng_seed);
  std::vector<double> params(videos + frames);
  std::vector<double> grads(videos + frames);

  std::size_t stage_index = 0;
  for (std::size_t pass = 0; pass < options.schedule.repeats; ++pass) {
    for (const auto& stage : options.schedule.stages) {
      for (std::size_t step = 0; step < stage.steps; ++step) {
        auto& wts = result.weights;
        const auto indices = select_frames(wts.frame, stage.scale, options.schedule.strategy, rng);
        LossEvaluation eval = loss_gradients(problem, wts, indices);
        const auto finite = [](double g) { return std::isfinite(g); };
        if (!std::isfinite(eval.loss) ||
            !std::all_of(eval.gradients.video.begin(), eval.gradients.video.end(), finite) ||
            !std::all_of(eval.gradients.frame.begin(), eval.gradients.frame.end(), finite)) {
          throw TuningAborted("non-finite loss or gradient at stage " +
                                  std::to_string(stage_index) + ", step " +
                                  std::to_string(result.trace.size()),
                              result.trace);
        }
        if (!options.train_video) std::fill(eval.gradients.video.begin(), eval.gradients.video.end(), 0.0);
        if (!options.train_frame) std::fill(eval.gradients.frame.begin(), eval.gradients.frame.end(), 0.0);

        result.trace.push_back(StepRecord{stage_index, stage.scale, indices, eval.loss,
                                          norm(eval.gradients.video), norm(eval.gradients.frame)});

        std::copy(wts.video.begin(), wts.video.end(), params.begin());
        std::copy(wts.frame.begin(), wts.frame.end(), params.begin() + static_cast<std::ptrdiff_t>(videos));
        std::copy(eval.gradients.video.begin(), eval.gradients.video.end(), grads.begin());
        std::copy(eval.gradients.frame.begin(), eval.gradients.frame.end(),
                  grads.begin() + static_cast<std::ptrdiff_t>(videos));
        adamw_step(state, params, grads);
        // Frozen groups stay exactly at one even under weight decay.
        if (options.train_video) {
          std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(videos), wts.video.begin());
        }
        if (options.train_frame) {
          std::copy(params.begin() + static_cast<std::ptrdiff_t>(videos), params.end(), wts.frame.begin());
        }
      }
      ++stage_index;
    }
  }
  return result;
}

Prediction final_predict(const SupportSetBundle& support, const TestInstanceBundle& test,
                         const FactorizedWeights& weights, const ClassTextFeatures& text,
                         const PredictorConfig& predictor) {
  check_consistent(text, support, test);
  validate(predictor);
  const auto indices = all_frames(support.frames());
  const PooledSupport pooled =
      pool_support(support.features, weights.video, weights.frame, indices, text, predictor);
  const auto query = pool_query(test.original, indices);
  Prediction out;
  out.logits = blended_logits(query, pooled, text, support.labels, predictor);
  out.predicted = argmax(out.logits);
  return out;
}

}  // namespace sstune
