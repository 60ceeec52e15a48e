// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sstune/bundle.hpp"
#include "sstune/numerics.hpp"
#include "sstune/tensor.hpp"

namespace sstune {

using Logits = std::vector<double>;

/// Rows of double-precision feature vectors (pooled support videos).
using FeatureRows = std::vector<std::vector<double>>;

enum class PsiMode {
  kAffineRescale,  // min-max onto [0, 1], constant input -> 0.5
  kExponential,    // exp(psi_scale * affinity)
};

struct BlendWeights {
  double zero_shot = 1.0;
  double tip_adapter = 0.0;
  double tip_x = 1.0;
};

struct PredictorConfig {
  double beta = 5.5;
  /// Softmax temperature for the class distributions that enter the KL
  /// affinities and the tuning loss.
  double temperature = 0.01;
  BlendWeights blend;
  PsiMode psi = PsiMode::kAffineRescale;
  double psi_scale = 1.0;
};

void validate(const PredictorConfig& config);

/// Mean of the selected frame rows. No renormalization.
std::vector<double> pool_frames(const DenseMatrix& frames, std::span<const std::size_t> indices);
std::vector<double> pool_frames(const Tensor3& block, std::size_t item,
                                std::span<const std::size_t> indices);

/// Pooled test-side feature: mean over the selected frames, then unit norm.
std::vector<double> pool_query(const DenseMatrix& frames, std::span<const std::size_t> indices);
std::vector<double> pool_query(const Tensor3& block, std::size_t item,
                               std::span<const std::size_t> indices);

/// Cosine logits of a unit query against unit class-text rows.
Logits zero_shot_logits(std::span<const double> query, const ClassTextFeatures& text);

/// exp(-beta (1 - <f, F_j>)) aggregated through the label matrix.
Logits tip_adapter_logits(std::span<const double> query, const FeatureRows& support,
                          const DenseMatrix& labels, double beta);

/// -KL(softmax(f W^T / tau) || softmax(F_j W^T / tau)) for every support row.
std::vector<double> kl_affinity_vector(std::span<const double> query, const FeatureRows& support,
                                       const ClassTextFeatures& text, double temperature);

/// The psi map applied to an affinity vector, before label aggregation.
std::vector<double> psi_transform(std::span<const double> affinities, const PredictorConfig& config);

Logits tip_x_logits(std::span<const double> affinities, const DenseMatrix& labels,
                    const PredictorConfig& config);

Logits blend_logits(std::span<const double> zero_shot, std::span<const double> tip_adapter,
                    std::span<const double> tip_x, const PredictorConfig& config);

/// L(i, :) * values summed over rows: values^T L.
Logits aggregate_by_label(std::span<const double> per_video, const DenseMatrix& labels);

/// Everything a view-level prediction needs from the support side, computed
/// once per frame selection and shared across views.
struct PooledSupport {
  FeatureRows rows;
  /// softmax(rows[j] W^T / tau); only filled when the tip-x path is active.
  std::vector<Distribution> class_probs;
};

PooledSupport pool_support(const Tensor3& features, std::span<const std::size_t> indices,
                           const ClassTextFeatures& text, const PredictorConfig& config);

/// Support pooled under factorized weights without materializing the
/// reweighted block: row j = r_vid[j] * mean_{t in S} r_fr[t] F[j, t, :].
PooledSupport pool_support(const Tensor3& features, std::span<const double> video_weights,
                           std::span<const double> frame_weights,
                           std::span<const std::size_t> indices, const ClassTextFeatures& text,
                           const PredictorConfig& config);

Logits blended_logits(std::span<const double> query, const PooledSupport& support,
                      const ClassTextFeatures& text, const DenseMatrix& labels,
                      const PredictorConfig& config);

/// One class distribution per view. The same frame indices select frames in
/// both the support block and every view.
std::vector<Distribution> predict_views(const Tensor3& weighted_support, const Tensor3& views,
                                        std::span<const std::size_t> frame_indices,
                                        const ClassTextFeatures& text, const DenseMatrix& labels,
                                        const PredictorConfig& config);

std::vector<Distribution> predict_views(const PooledSupport& support, const Tensor3& views,
                                        std::span<const std::size_t> frame_indices,
                                        const ClassTextFeatures& text, const DenseMatrix& labels,
                                        const PredictorConfig& config);

}  // namespace sstune
