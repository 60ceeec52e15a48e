// SPDX-License-Identifier: Apache-2.0
#include "sstune/synth.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "sstune/error.hpp"
#include "sstune/numerics.hpp"
#include "sstune/rng.hpp"

namespace sstune {

void validate(const SyntheticConfig& c) {
  require(c.classes >= 1 && c.prompts >= 1 && c.repeats >= 1 && c.frames >= 1 && c.dim >= 1 &&
              c.views >= 1,
          ErrorCode::kInvalidArgument, "synthetic counts must be at least 1");
  for (double v : {c.intra_prompt_noise, c.inter_prompt_spread, c.view_noise, c.outlier_distance}) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidArgument,
            "synthetic noise levels must be finite and nonnegative");
  }
  require(c.outlier_fraction >= 0.0 && c.outlier_fraction <= 1.0, ErrorCode::kInvalidArgument,
          "outlier_fraction must lie in [0, 1]");
  require(c.outlier_distance <= 1.0, ErrorCode::kInvalidArgument,
          "outlier_distance is an interpolation weight in [0, 1]");
}

namespace {

using Vec = std::vector<double>;

Vec gaussian(Rng& rng, std::size_t d) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

// normalize(base + scale * N(0, I)); the draw happens even when scale is 0
// so the stream layout does not depend on the noise levels.
Vec perturb(Rng& rng, std::span<const double> base, double scale) {
  Vec v(base.begin(), base.end());
  const Vec g = gaussian(rng, base.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += scale * g[i];
  return l2_normalize(v);
}

void store(std::span<float> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(src[i]);
}

std::string class_name(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "class_%03zu", c);
  return buf;
}

}  // namespace

SyntheticSet synth_generate(const SyntheticConfig& config) {
  validate(config);
  const std::size_t C = config.classes;
  const std::size_t m = config.prompts;
  const std::size_t n = config.repeats;
  const std::size_t K = m * n;
  const std::size_t T = config.frames;
  const std::size_t d = config.dim;

  Rng rng(config.seed);
  SyntheticSet out;
  for (std::size_t c = 0; c < C; ++c) out.catalog.classes.push_back(class_name(c));

  std::vector<Vec> centers(C);
  for (auto& center : centers) center = l2_normalize(gaussian(rng, d));

  std::vector<Vec> sub_centers(C * m);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < m; ++p) {
      sub_centers[c * m + p] = perturb(rng, centers[c], config.inter_prompt_spread);
    }
  }

  SupportSetBundle& support = out.support;
  support.classes = out.catalog.classes;
  support.descriptions = m;
  support.sampled = m;
  support.repeats = n;
  support.features = Tensor3(C * K, T, d);
  support.labels = DenseMatrix(C * K, C);
  std::vector<std::vector<Vec>> frames(C * K, std::vector<Vec>(T));
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t j = c * K + p * n + r;
        for (std::size_t t = 0; t < T; ++t) {
          frames[j][t] = perturb(rng, sub_centers[c * m + p], config.intra_prompt_noise);
        }
        support.labels(j, c) = 1.0f;
        support.provenance.push_back(VideoProvenance{c, p, r, false});
      }
    }
  }

  const auto outliers_per_class =
      static_cast<std::size_t>(std::floor(config.outlier_fraction * static_cast<double>(K)));
  if (C > 1 && outliers_per_class > 0) {
    const double w = config.outlier_distance;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t local : rng.sample_without_replacement(K, outliers_per_class)) {
        std::size_t other = rng.uniform_index(C - 1);
        if (other >= c) ++other;
        const std::size_t j = c * K + local;
        for (auto& frame : frames[j]) {
          Vec mixed(d);
          for (std::size_t i = 0; i < d; ++i) mixed[i] = (1.0 - w) * frame[i] + w * centers[other][i];
          frame = l2_normalize(mixed);
        }
        support.provenance[j].outlier = true;
      }
    }
  }
  for (std::size_t j = 0; j < C * K; ++j) {
    for (std::size_t t = 0; t < T; ++t) store(support.features.frame(j, t), frames[j][t]);
  }

  out.class_text.classes = out.catalog.classes;
  out.class_text.weights = DenseMatrix(C, d);
  for (std::size_t c = 0; c < C; ++c) store(out.class_text.weights.row(c), centers[c]);

  out.tests.reserve(config.test_instances);
  for (std::size_t i = 0; i < config.test_instances; ++i) {
    const std::size_t label = i % C;
    TestInstanceBundle test;
    test.classes = out.catalog.classes;
    test.ground_truth = label;
    test.original = DenseMatrix(T, d);
    test.views = Tensor3(config.views, T, d);
    const Vec instance_center = perturb(rng, centers[label], config.inter_prompt_spread);
    std::vector<Vec> original(T);
    for (std::size_t t = 0; t < T; ++t) {
      original[t] = perturb(rng, instance_center, config.intra_prompt_noise);
      store(test.original.row(t), original[t]);
    }
    for (std::size_t v = 0; v < config.views; ++v) {
      for (std::size_t t = 0; t < T; ++t) {
        store(test.views.frame(v, t), perturb(rng, original[t], config.view_noise));
      }
    }
    out.tests.push_back(std::move(test));
  }
  return out;
}

}  // namespace sstune
