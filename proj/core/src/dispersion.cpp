// SPDX-License-Identifier: Apache-2.0
#include "sstune/dispersion.hpp"

#include <algorithm>

#include "sstune/numerics.hpp"

namespace sstune {

namespace {

std::vector<double> pooled_unit(const Tensor3& f, std::size_t j) {
  std::vector<double> mean(f.channels(), 0.0);
  for (std::size_t t = 0; t < f.frames(); ++t) {
    const auto row = f.frame(j, t);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += row[i];
  }
  for (double& x : mean) x /= static_cast<double>(f.frames());
  return l2_normalize(mean);
}

struct Mean {
  double sum = 0.0;
  std::size_t count = 0;
  void add(double x) {
    sum += x;
    ++count;
  }
  std::optional<double> get() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
};

}  // namespace

std::vector<ClassDispersion> dispersion_stats(const SupportSetBundle& bundle) {
  validate(bundle);
  const std::size_t K = bundle.per_class();
  std::vector<ClassDispersion> report;
  for (std::size_t c = 0; c < bundle.num_classes(); ++c) {
    std::vector<std::vector<double>> pooled;
    for (std::size_t i = 0; i < K; ++i) pooled.push_back(pooled_unit(bundle.features, c * K + i));
    Mean all;
    Mean same;
    Mean cross;
    for (std::size_t a = 0; a < K; ++a) {
      for (std::size_t b = a + 1; b < K; ++b) {
        const double dist = std::clamp(1.0 - dot(pooled[a], pooled[b]), 0.0, 2.0);
        all.add(dist);
        if (bundle.provenance[c * K + a].prompt == bundle.provenance[c * K + b].prompt) {
          same.add(dist);
        } else {
          cross.add(dist);
        }
      }
    }
    report.push_back(ClassDispersion{c, all.get(), same.get(), cross.get()});
  }
  return report;
}

std::optional<double> mean_intra_class_distance(const std::vector<ClassDispersion>& report) {
  Mean m;
  for (const auto& r : report) {
    if (r.mean_pairwise) m.add(*r.mean_pairwise);
  }
  return m.get();
}

}  // namespace sstune
