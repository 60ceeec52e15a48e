#include "fixtures.hpp"

#include <cmath>
#include <string>

namespace fixtures {

using namespace sstune;

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0.0;
  do {
    n = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n += x * x;
    }
  } while (n < 1e-12);
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> uniform_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform01();
  return v;
}

std::vector<double> random_distribution(Rng& rng, std::size_t n, bool sparse) {
  std::vector<double> p(n);
  double total = 0.0;
  for (double& x : p) {
    x = sparse && rng.uniform01() < 0.3 ? 0.0 : rng.uniform01();
    total += x;
  }
  if (total == 0.0) {
    p[rng.uniform_index(n)] = 1.0;
    return p;
  }
  for (double& x : p) x /= total;
  return p;
}

namespace {

void fill_unit(Rng& rng, std::span<float> out) {
  const auto v = random_unit(rng, out.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(v[i]);
}

}  // namespace

Instance random_instance(Rng& rng, std::size_t C, std::size_t m, std::size_t n, std::size_t T,
                         std::size_t d, std::size_t V) {
  Instance inst;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < C; ++c) names.push_back("c" + std::to_string(c));

  inst.text.classes = names;
  inst.text.weights = DenseMatrix(C, d);
  for (std::size_t c = 0; c < C; ++c) fill_unit(rng, inst.text.weights.row(c));

  auto& s = inst.support;
  const std::size_t K = m * n;
  s.classes = names;
  s.features = Tensor3(C * K, T, d);
  s.labels = DenseMatrix(C * K, C);
  s.descriptions = m;
  s.sampled = m;
  s.repeats = n;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t j = c * K + p * n + r;
        s.labels(j, c) = 1.0f;
        s.provenance.push_back({c, p, r, false});
        for (std::size_t t = 0; t < T; ++t) fill_unit(rng, s.features.frame(j, t));
      }
    }
  }

  inst.test.classes = names;
  inst.test.views = Tensor3(V, T, d);
  inst.test.original = DenseMatrix(T, d);
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t t = 0; t < T; ++t) fill_unit(rng, inst.test.views.frame(v, t));
  }
  for (std::size_t t = 0; t < T; ++t) fill_unit(rng, inst.test.original.row(t));
  inst.test.ground_truth = rng.uniform_index(C);
  return inst;
}

Instance random_small_instance(Rng& rng, std::size_t max_classes, std::size_t max_k,
                               std::size_t max_frames, std::size_t max_dim, std::size_t max_views) {
  const std::size_t C = 2 + rng.uniform_index(max_classes - 1);
  const std::size_t K = 1 + rng.uniform_index(max_k);
  // Factor K = m * n with a random divisor as m.
  std::vector<std::size_t> divisors;
  for (std::size_t q = 1; q <= K; ++q) {
    if (K % q == 0) divisors.push_back(q);
  }
  const std::size_t m = divisors[rng.uniform_index(divisors.size())];
  const std::size_t T = 1 + rng.uniform_index(max_frames);
  const std::size_t d = 2 + rng.uniform_index(max_dim - 1);
  const std::size_t V = 1 + rng.uniform_index(max_views);
  return random_instance(rng, C, m, K / m, T, d, V);
}

}  // namespace fixtures
