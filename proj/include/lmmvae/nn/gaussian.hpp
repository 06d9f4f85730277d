#pragma once

#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/nn/rng.hpp"

#include <algorithm>
#include <cmath>

namespace lmmvae::nn {

/// Log-variances are clamped to this range before exponentiation.
inline constexpr double kLogVarianceClamp = 15.0;

/// Batch of diagonal Gaussians: row i is N(mu_i, diag(exp(gamma_i))).
struct GaussianHead {
  Matrix mu;
  Matrix gamma;

  Index rows() const { return mu.rows(); }
  Index dim() const { return mu.cols(); }

  void validate() const {
    require_same_shape(mu, gamma, "GaussianHead");
    if (!gamma.allFinite()) throw std::invalid_argument("GaussianHead: non-finite log-variance");
  }
};

inline Matrix clamp_log_variance(const Matrix& gamma) {
  return gamma.cwiseMax(-kLogVarianceClamp).cwiseMin(kLogVarianceClamp);
}

/// 1 where the clamp is inactive, 0 where it saturates; multiplies the
/// upstream gradient of a clamped log-variance.
inline Matrix clamp_pass_mask(const Matrix& gamma) {
  return ((gamma.array() > -kLogVarianceClamp) && (gamma.array() < kLogVarianceClamp)).cast<double>().matrix();
}

/// mu + exp(gamma / 2) * eps with caller-supplied noise.
inline Matrix reparameterize(const GaussianHead& head, const Matrix& eps) {
  require_same_shape(head.mu, eps, "reparameterize noise");
  const Matrix sd = (0.5 * clamp_log_variance(head.gamma).array()).exp().matrix();
  return head.mu + sd.cwiseProduct(eps);
}

inline Matrix reparameterize(const GaussianHead& head, Rng& rng) {
  head.validate();
  return reparameterize(head, rng.normal_matrix(head.rows(), head.dim()));
}

/// Per-row KL[N(mu, e^gamma) || N(0, I)] = 1/2 sum(e^gamma + mu^2 - 1 - gamma).
inline Vector kl_standard_normal(const GaussianHead& head) {
  const Matrix g = clamp_log_variance(head.gamma);
  return (0.5 * (g.array().exp() + head.mu.array().square() - 1.0 - g.array())).rowwise().sum().matrix();
}

/// Per-row KL[N(mu, e^gamma) || N(0, e^delta I)]
///   = 1/2 sum(delta - gamma - 1 + e^(gamma - delta) + mu^2 e^(-delta)).
inline Vector kl_scaled_normal(const GaussianHead& head, double delta) {
  const Matrix g = clamp_log_variance(head.gamma);
  const auto a = g.array();
  return (0.5 * (delta - a - 1.0 + (a - delta).exp() + head.mu.array().square() * std::exp(-delta)))
      .rowwise()
      .sum()
      .matrix();
}

/// Gradients of sum_rows(kl_scaled_normal) with respect to mu and raw gamma.
/// delta = 0 gives the standard-normal case.
inline GaussianHead kl_scaled_normal_grad(const GaussianHead& head, double delta) {
  const Matrix g = clamp_log_variance(head.gamma);
  GaussianHead out;
  out.mu = head.mu * std::exp(-delta);
  out.gamma = (0.5 * ((g.array() - delta).exp() - 1.0)).matrix().cwiseProduct(clamp_pass_mask(head.gamma));
  return out;
}

}  // namespace lmmvae::nn
