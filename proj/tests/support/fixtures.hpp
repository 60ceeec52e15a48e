// Random instances for property and oracle tests.
#pragma once

#include <cstddef>
#include <vector>

#include "sstune/bundle.hpp"
#include "sstune/rng.hpp"
#include "sstune/tensor.hpp"

namespace fixtures {

struct Instance {
  sstune::ClassTextFeatures text;
  sstune::SupportSetBundle support;
  sstune::TestInstanceBundle test;
};

/// Unit-norm Gaussian features everywhere; labels in class-major order.
Instance random_instance(sstune::Rng& rng, std::size_t classes, std::size_t prompts,
                         std::size_t repeats, std::size_t frames, std::size_t dim,
                         std::size_t views);

/// Random shape within the given bounds, then random_instance.
Instance random_small_instance(sstune::Rng& rng, std::size_t max_classes, std::size_t max_k,
                               std::size_t max_frames, std::size_t max_dim, std::size_t max_views);

std::vector<double> random_unit(sstune::Rng& rng, std::size_t dim);
std::vector<double> uniform_vector(sstune::Rng& rng, std::size_t n, double lo, double hi);
/// Random distribution; with `sparse`, some entries are exactly zero.
std::vector<double> random_distribution(sstune::Rng& rng, std::size_t n, bool sparse);

}  // namespace fixtures
