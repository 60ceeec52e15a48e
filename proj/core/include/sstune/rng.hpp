// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace sstune {

/// Seeded stream used everywhere randomness is needed.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The distributions on top of it are implemented here rather than
/// taken from <random>, because the standard leaves those implementation
/// defined:
///   - uniform01: top 53 bits of one engine draw, scaled by 2^-53.
///   - normal: Marsaglia polar method. Each accepted pair yields two
///     variates; the second is cached and returned by the next call.
///   - uniform_index(n): rejection sampling on the engine output so every
///     index in [0, n) is equally likely.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform01();
  double normal();
  std::size_t uniform_index(std::size_t n);

  /// k distinct indices from [0, n) via partial Fisher-Yates, sorted ascending.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer applied to (seed, id); used to derive independent
/// per-instance streams from one global seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id) noexcept;

}  // namespace sstune
