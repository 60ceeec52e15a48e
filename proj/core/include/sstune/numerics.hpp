// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sstune {

/// Floor applied to the second argument of kl_divergence before taking logs.
inline constexpr double kKlFloor = 1e-12;

/// Norms at or below this are rejected by l2_normalize.
inline constexpr double kZeroNormThreshold = 1e-12;

/// Probability vector. Entries are nonnegative and sum to one within 1e-6;
/// the checked constructor enforces that.
class Distribution {
 public:
  Distribution() = default;
  explicit Distribution(std::vector<double> probs);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const noexcept { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

  std::size_t argmax() const noexcept;

  friend bool operator==(const Distribution&, const Distribution&) = default;

 private:
  friend Distribution softmax(std::span<const double>, double);
  struct Unchecked {};
  Distribution(std::vector<double> probs, Unchecked) : probs_(std::move(probs)) {}

  std::vector<double> probs_;
};

std::vector<double> l2_normalize(std::span<const double> v);
std::vector<double> l2_normalize(std::span<const float> v);

double dot(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const float> b);

/// Temperature-scaled softmax with max subtraction.
Distribution softmax(std::span<const double> logits, double temperature);

/// KL(p || q) in nats. Terms with p_i == 0 are skipped and q_i is floored
/// at kKlFloor.
double kl_divergence(std::span<const double> p, std::span<const double> q);
inline double kl_divergence(const Distribution& p, const Distribution& q) {
  return kl_divergence(p.probs(), q.probs());
}

/// Shannon entropy in nats with 0 ln 0 = 0.
double entropy(std::span<const double> p);
inline double entropy(const Distribution& p) { return entropy(p.probs()); }

/// Indices of the k largest values, ascending. Ties go to the smaller index.
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);

/// First index of the maximum value.
std::size_t argmax(std::span<const double> values);

}  // namespace sstune
