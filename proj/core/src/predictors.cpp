// SPDX-License-Identifier: Apache-2.0
#include "sstune/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sstune/error.hpp"

namespace sstune {

void validate(const PredictorConfig& c) {
  require(c.beta > 0.0, ErrorCode::kInvalidArgument, "beta must be positive");
  require(c.temperature > 0.0, ErrorCode::kNonPositiveTemperature,
          "class softmax temperature must be positive");
  const auto& b = c.blend;
  require(b.zero_shot >= 0.0 && b.tip_adapter >= 0.0 && b.tip_x >= 0.0,
          ErrorCode::kInvalidArgument, "blend weights must be nonnegative");
  require(b.zero_shot > 0.0 || b.tip_adapter > 0.0 || b.tip_x > 0.0, ErrorCode::kInvalidArgument,
          "at least one blend weight must be positive");
  require(c.psi != PsiMode::kExponential || c.psi_scale > 0.0, ErrorCode::kInvalidArgument,
          "psi_scale must be positive");
}

namespace {

void check_indices(std::span<const std::size_t> indices, std::size_t frames) {
  require(!indices.empty(), ErrorCode::kEmptySelection, "no frames selected");
  for (auto t : indices) {
    require(t < frames, ErrorCode::kIndexOutOfRange,
            "frame index " + std::to_string(t) + " outside [0, " + std::to_string(frames) + ")");
  }
}

template <typename RowFn>
std::vector<double> mean_rows(std::size_t dim, std::span<const std::size_t> indices, RowFn row) {
  std::vector<double> out(dim, 0.0);
  for (auto t : indices) {
    const auto r = row(t);
    for (std::size_t i = 0; i < dim; ++i) out[i] += static_cast<double>(r[i]);
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& x : out) x *= inv;
  return out;
}

std::vector<double> class_scores(std::span<const double> feature, const ClassTextFeatures& text) {
  require(feature.size() == text.dim(), ErrorCode::kDimMismatch,
          "feature has d=" + std::to_string(feature.size()) + ", class text has d=" +
              std::to_string(text.dim()));
  std::vector<double> out(text.num_classes());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = dot(feature, text.weights.row(c));
  return out;
}

void check_labels(const DenseMatrix& labels, std::size_t videos) {
  require(labels.rows() == videos, ErrorCode::kDimMismatch,
          "label matrix has " + std::to_string(labels.rows()) + " rows for " +
              std::to_string(videos) + " support videos");
}

}  // namespace

std::vector<double> pool_frames(const DenseMatrix& frames, std::span<const std::size_t> indices) {
  check_indices(indices, frames.rows());
  return mean_rows(frames.cols(), indices, [&](std::size_t t) { return frames.row(t); });
}

std::vector<double> pool_frames(const Tensor3& block, std::size_t item,
                                std::span<const std::size_t> indices) {
  check_indices(indices, block.frames());
  return mean_rows(block.channels(), indices, [&](std::size_t t) { return block.frame(item, t); });
}

std::vector<double> pool_query(const DenseMatrix& frames, std::span<const std::size_t> indices) {
  return l2_normalize(pool_frames(frames, indices));
}

std::vector<double> pool_query(const Tensor3& block, std::size_t item,
                               std::span<const std::size_t> indices) {
  return l2_normalize(pool_frames(block, item, indices));
}

Logits zero_shot_logits(std::span<const double> query, const ClassTextFeatures& text) {
  return class_scores(query, text);
}

Logits aggregate_by_label(std::span<const double> per_video, const DenseMatrix& labels) {
  check_labels(labels, per_video.size());
  Logits out(labels.cols(), 0.0);
  for (std::size_t j = 0; j < per_video.size(); ++j) {
    const auto row = labels.row(j);
    for (std::size_t c = 0; c < out.size(); ++c) {
      if (row[c] != 0.0f) out[c] += per_video[j] * static_cast<double>(row[c]);
    }
  }
  return out;
}

Logits tip_adapter_logits(std::span<const double> query, const FeatureRows& support,
                          const DenseMatrix& labels, double beta) {
  std::vector<double> affinity(support.size());
  for (std::size_t j = 0; j < support.size(); ++j) {
    affinity[j] = std::exp(-beta * (1.0 - dot(query, support[j])));
  }
  return aggregate_by_label(affinity, labels);
}

std::vector<double> kl_affinity_vector(std::span<const double> query, const FeatureRows& support,
                                       const ClassTextFeatures& text, double temperature) {
  const Distribution p = softmax(class_scores(query, text), temperature);
  std::vector<double> out(support.size());
  for (std::size_t j = 0; j < support.size(); ++j) {
    out[j] = -kl_divergence(p, softmax(class_scores(support[j], text), temperature));
  }
  return out;
}

std::vector<double> psi_transform(std::span<const double> affinities,
                                  const PredictorConfig& config) {
  std::vector<double> out(affinities.begin(), affinities.end());
  if (out.empty()) return out;
  if (config.psi == PsiMode::kExponential) {
    for (double& x : out) x = std::exp(config.psi_scale * x);
    return out;
  }
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double low = *lo;
  const double range = *hi - low;
  if (!(range > 1e-12)) {
    std::fill(out.begin(), out.end(), 0.5);
    return out;
  }
  for (double& x : out) x = (x - low) / range;
  return out;
}

Logits tip_x_logits(std::span<const double> affinities, const DenseMatrix& labels,
                    const PredictorConfig& config) {
  return aggregate_by_label(psi_transform(affinities, config), labels);
}

Logits blend_logits(std::span<const double> zero_shot, std::span<const double> tip_adapter,
                    std::span<const double> tip_x, const PredictorConfig& config) {
  require(zero_shot.size() == tip_adapter.size() && zero_shot.size() == tip_x.size(),
          ErrorCode::kDimMismatch, "logit vectors differ in length");
  const auto& w = config.blend;
  Logits out(zero_shot.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = w.zero_shot * zero_shot[c] + w.tip_adapter * tip_adapter[c] + w.tip_x * tip_x[c];
  }
  return out;
}

namespace {

void fill_class_probs(PooledSupport& s, const ClassTextFeatures& text,
                      const PredictorConfig& config) {
  if (config.blend.tip_x <= 0.0) return;
  s.class_probs.reserve(s.rows.size());
  for (const auto& row : s.rows) {
    s.class_probs.push_back(softmax(class_scores(row, text), config.temperature));
  }
}

}  // namespace

PooledSupport pool_support(const Tensor3& features, std::span<const std::size_t> indices,
                           const ClassTextFeatures& text, const PredictorConfig& config) {
  PooledSupport s;
  s.rows.reserve(features.outer());
  for (std::size_t j = 0; j < features.outer(); ++j) s.rows.push_back(pool_frames(features, j, indices));
  fill_class_probs(s, text, config);
  return s;
}

PooledSupport pool_support(const Tensor3& features, std::span<const double> video_weights,
                           std::span<const double> frame_weights,
                           std::span<const std::size_t> indices, const ClassTextFeatures& text,
                           const PredictorConfig& config) {
  require(video_weights.size() == features.outer() && frame_weights.size() == features.frames(),
          ErrorCode::kDimMismatch, "factorized weights do not match the support block");
  check_indices(indices, features.frames());
  const std::size_t d = features.channels();
  const double inv = 1.0 / static_cast<double>(indices.size());
  PooledSupport s;
  s.rows.assign(features.outer(), std::vector<double>(d, 0.0));
  for (std::size_t j = 0; j < features.outer(); ++j) {
    auto& row = s.rows[j];
    for (auto t : indices) {
      const auto frame = features.frame(j, t);
      const double w = frame_weights[t];
      for (std::size_t i = 0; i < d; ++i) row[i] += w * static_cast<double>(frame[i]);
    }
    const double scale = video_weights[j] * inv;
    for (double& x : row) x *= scale;
  }
  fill_class_probs(s, text, config);
  return s;
}

Logits blended_logits(std::span<const double> query, const PooledSupport& support,
                      const ClassTextFeatures& text, const DenseMatrix& labels,
                      const PredictorConfig& config) {
  check_labels(labels, support.rows.size());
  require(labels.cols() == text.num_classes(), ErrorCode::kDimMismatch,
          "label width does not match class count");
  const std::size_t classes = text.num_classes();
  const auto& w = config.blend;
  const Logits zs = zero_shot_logits(query, text);
  const Logits ta = w.tip_adapter > 0.0 ? tip_adapter_logits(query, support.rows, labels, config.beta)
                                        : Logits(classes, 0.0);
  Logits tx(classes, 0.0);
  if (w.tip_x > 0.0) {
    const Distribution p = softmax(zs, config.temperature);
    std::vector<double> affinity(support.rows.size());
    for (std::size_t j = 0; j < affinity.size(); ++j) {
      affinity[j] = -kl_divergence(p, support.class_probs[j]);
    }
    tx = tip_x_logits(affinity, labels, config);
  }
  return blend_logits(zs, ta, tx, config);
}

std::vector<Distribution> predict_views(const PooledSupport& support, const Tensor3& views,
                                        std::span<const std::size_t> frame_indices,
                                        const ClassTextFeatures& text, const DenseMatrix& labels,
                                        const PredictorConfig& config) {
  validate(config);
  std::vector<Distribution> out;
  out.reserve(views.outer());
  for (std::size_t v = 0; v < views.outer(); ++v) {
    const auto query = pool_query(views, v, frame_indices);
    out.push_back(softmax(blended_logits(query, support, text, labels, config), config.temperature));
  }
  return out;
}

std::vector<Distribution> predict_views(const Tensor3& weighted_support, const Tensor3& views,
                                        std::span<const std::size_t> frame_indices,
                                        const ClassTextFeatures& text, const DenseMatrix& labels,
                                        const PredictorConfig& config) {
  validate(config);
  require(weighted_support.frames() == views.frames() &&
              weighted_support.channels() == views.channels(),
          ErrorCode::kDimMismatch, "support and view blocks disagree on T or d");
  check_indices(frame_indices, views.frames());
  const PooledSupport support = pool_support(weighted_support, frame_indices, text, config);
  return predict_views(support, views, frame_indices, text, labels, config);
}

}  // namespace sstune
