// SPDX-License-Identifier: Apache-2.0
#include "sstune/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sstune/error.hpp"

namespace sstune {

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  require(!probs_.empty(), ErrorCode::kInvariantViolation, "empty distribution");
  double total = 0.0;
  for (double p : probs_) {
    require(std::isfinite(p) && p >= 0.0, ErrorCode::kInvariantViolation,
            "distribution entry must be finite and nonnegative");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-6, ErrorCode::kInvariantViolation,
          "distribution sums to " + std::to_string(total));
}

std::size_t Distribution::argmax() const noexcept { return sstune::argmax(probs_); }

namespace {

template <typename T>
std::vector<double> normalize_impl(std::span<const T> v) {
  require(!v.empty(), ErrorCode::kZeroVector, "cannot normalize an empty vector");
  double sq = 0.0;
  for (T x : v) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  require(norm > kZeroNormThreshold, ErrorCode::kZeroVector, "vector norm is zero");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) / norm;
  return out;
}

}  // namespace

std::vector<double> l2_normalize(std::span<const double> v) { return normalize_impl(v); }
std::vector<double> l2_normalize(std::span<const float> v) { return normalize_impl(v); }

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::kDimMismatch, "dot length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double dot(std::span<const double> a, std::span<const float> b) {
  require(a.size() == b.size(), ErrorCode::kDimMismatch, "dot length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * static_cast<double>(b[i]);
  return acc;
}

Distribution softmax(std::span<const double> logits, double temperature) {
  require(temperature > 0.0, ErrorCode::kNonPositiveTemperature,
          "temperature must be positive");
  require(!logits.empty(), ErrorCode::kLengthMismatch, "softmax of empty logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - top) / temperature);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return Distribution(std::move(out), Distribution::Unchecked{});
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), ErrorCode::kLengthMismatch,
          "kl_divergence: " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlFloor)));
  }
  return acc;
}

double entropy(std::span<const double> p) {
  double acc = 0.0;
  for (double x : p) {
    if (x != 0.0) acc -= x * std::log(x);  // NaN propagates
  }
  return acc;
}

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  require(k >= 1 && k <= values.size(), ErrorCode::kKOutOfRange,
          "k=" + std::to_string(k) + " outside [1, " + std::to_string(values.size()) + "]");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace sstune
