#pragma once

#include "lmmvae/nn/gaussian.hpp"
#include "lmmvae/nn/matrix.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace lmmvae {

/// Components of the per-observation LMMVAE objective, each averaged over
/// the rows of the batch. `total = reconstruction + beta * (kl_fixed + kl_random)`.
struct LossBreakdown {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl_fixed = 0.0;
  double kl_random = 0.0;
};

/// Squared reconstruction error plus beta-weighted KL terms: one against
/// N(0, I) for the latent head and one against N(0, e^delta_k I) for each
/// random-effect head. Summed over the batch, divided by its row count.
inline LossBreakdown lmmvae_loss(const Matrix& x, const Matrix& x_hat, const nn::GaussianHead& u_head,
                                 std::span<const nn::GaussianHead> b_heads, double beta,
                                 std::span<const double> delta_b) {
  require_same_shape(x, x_hat, "lmmvae_loss x_hat");
  u_head.validate();
  if (u_head.rows() != x.rows()) throw ShapeError("lmmvae_loss: latent head rows differ from batch");
  if (delta_b.size() != b_heads.size()) throw ShapeError("lmmvae_loss: one delta_b per random-effect term required");
  if (!x.allFinite() || !x_hat.allFinite() || !u_head.mu.allFinite())
    throw std::invalid_argument("lmmvae_loss: non-finite input");

  const double m = static_cast<double>(x.rows());
  LossBreakdown out;
  out.reconstruction = (x - x_hat).squaredNorm() / m;
  out.kl_fixed = nn::kl_standard_normal(u_head).sum() / m;
  for (std::size_t k = 0; k < b_heads.size(); ++k) {
    b_heads[k].validate();
    if (b_heads[k].rows() != x.rows()) throw ShapeError("lmmvae_loss: random-effect head rows differ from batch");
    if (!b_heads[k].mu.allFinite()) throw std::invalid_argument("lmmvae_loss: non-finite input");
    out.kl_random += nn::kl_scaled_normal(b_heads[k], delta_b[k]).sum() / m;
  }
  out.total = out.reconstruction + beta * (out.kl_fixed + out.kl_random);
  return out;
}

inline LossBreakdown lmmvae_loss(const Matrix& x, const Matrix& x_hat, const nn::GaussianHead& u_head,
                                 const std::vector<nn::GaussianHead>& b_heads, double beta,
                                 const std::vector<double>& delta_b) {
  return lmmvae_loss(x, x_hat, u_head, std::span<const nn::GaussianHead>(b_heads), beta,
                     std::span<const double>(delta_b));
}

}  // namespace lmmvae
