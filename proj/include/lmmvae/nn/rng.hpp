#pragma once

#include "lmmvae/nn/matrix.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace lmmvae {

/// Seeded pseudo-random source. Same seed gives a bit-identical stream for a
/// given standard library build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::mt19937_64& engine() noexcept { return engine_; }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<long>(mean)(engine_);
  }
  long binomial(long trials, double prob) {
    if (trials <= 0 || prob <= 0.0) return 0;
    if (prob >= 1.0) return trials;
    return std::binomial_distribution<long>(trials, prob)(engine_);
  }
  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    // Fill in row-major order so the stream maps to entries the same way
    // regardless of Eigen's storage order.
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  /// Multinomial counts over `probs` via sequential conditional binomials.
  std::vector<long> multinomial(long trials, const std::vector<double>& probs) {
    std::vector<long> counts(probs.size(), 0);
    double remaining_mass = std::accumulate(probs.begin(), probs.end(), 0.0);
    long remaining = trials;
    for (std::size_t k = 0; k + 1 < probs.size() && remaining > 0; ++k) {
      const double p = remaining_mass > 0.0 ? std::clamp(probs[k] / remaining_mass, 0.0, 1.0) : 0.0;
      counts[k] = binomial(remaining, p);
      remaining -= counts[k];
      remaining_mass -= probs[k];
    }
    if (!probs.empty()) counts.back() += remaining;
    return counts;
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), engine_);
    return p;
  }

  /// `k` distinct indices from [0, n), uniformly, in ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
    auto p = permutation(n);
    p.resize(k);
    std::sort(p.begin(), p.end());
    return p;
  }

  /// Independent child stream; used to give replicates their own generators.
  Rng split() { return Rng(engine_()); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace lmmvae
