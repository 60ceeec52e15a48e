// Scalar-loop reference implementations used as test oracles.
//
// Written independently of the library: plain nested loops over the raw
// float storage, no shared helpers. Slow, but each line maps to one term of
// the formula it checks.
#pragma once

#include <cstddef>
#include <vector>

#include "sstune/bundle.hpp"
#include "sstune/predictors.hpp"
#include "sstune/tuner.hpp"

namespace oracle {

using Vec = std::vector<double>;

Vec softmax(const Vec& logits, double tau);
double kl(const Vec& p, const Vec& q);
double entropy(const Vec& p);

/// r_vid[j] * (1/|S|) sum_{t in S} r_fr[t] F[j,t,:] for every j.
std::vector<Vec> pooled_support(const sstune::Tensor3& F, const Vec& r_vid, const Vec& r_fr,
                                const std::vector<std::size_t>& frames);
/// Mean of the selected frames of item i, scaled to unit length.
Vec pooled_query(const sstune::Tensor3& block, std::size_t item,
                 const std::vector<std::size_t>& frames);

Vec zero_shot(const Vec& f, const sstune::DenseMatrix& W);
Vec tip_adapter(const Vec& f, const std::vector<Vec>& rows, const sstune::DenseMatrix& L,
                double beta);
Vec tip_x(const Vec& f, const std::vector<Vec>& rows, const sstune::DenseMatrix& W,
          const sstune::DenseMatrix& L, const sstune::PredictorConfig& cfg);
Vec blended(const Vec& f, const std::vector<Vec>& rows, const sstune::DenseMatrix& W,
            const sstune::DenseMatrix& L, const sstune::PredictorConfig& cfg);

/// Class distribution of every view under the given weights and frames.
std::vector<Vec> predict(const sstune::Tensor3& support, const Vec& r_vid, const Vec& r_fr,
                         const sstune::Tensor3& views, const std::vector<std::size_t>& frames,
                         const sstune::DenseMatrix& W, const sstune::DenseMatrix& L,
                         const sstune::PredictorConfig& cfg);

/// Entropy of the mean over the max(1, floor(rho V)) lowest-entropy views.
double marginal_loss(const std::vector<Vec>& views, double rho);

}  // namespace oracle
