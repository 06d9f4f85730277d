#pragma once

#include "lmmvae/baselines/categorical_input.hpp"
#include "lmmvae/model/loss.hpp"
#include "lmmvae/nn/adam.hpp"
#include "lmmvae/nn/gaussian.hpp"
#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/nn/mlp.hpp"
#include "lmmvae/nn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace lmmvae::baselines {

enum class CategoricalHandling { Ignore, OneHot, Embed };

inline std::string to_string(CategoricalHandling h) {
  switch (h) {
    case CategoricalHandling::Ignore: return "ignore";
    case CategoricalHandling::OneHot: return "ohe";
    case CategoricalHandling::Embed: return "embed";
  }
  return "unknown";
}

struct VaeConfig {
  int latent_dim = 1;
  std::vector<int> hidden = {1000, 500};
  double beta = 0.01;
  int epochs = 200;
  int batch_size = 1000;
  CategoricalHandling handling = CategoricalHandling::Ignore;
  nn::AdamConfig optimizer;
};

/// ceil(q^0.25), capped at 50.
inline int embedding_dim(int cardinality) {
  return std::min(50, std::max(1, static_cast<int>(std::ceil(std::pow(static_cast<double>(cardinality), 0.25)))));
}

struct VaeModel {
  VaeConfig config;
  Index feature_dim = 0;
  std::vector<int> cardinalities;  // of the categorical inputs used (OneHot/Embed)
  nn::MlpParams encoder;           // (p + aux) -> 2d
  nn::MlpParams decoder;           // d -> p
  std::vector<Matrix> embeddings;  // q_k x e_k, Embed only
  std::vector<double> loss_history;

  Index aux_dim() const {
    Index a = 0;
    if (config.handling == CategoricalHandling::OneHot)
      for (int c : cardinalities) a += c;
    if (config.handling == CategoricalHandling::Embed)
      for (const auto& e : embeddings) a += e.cols();
    return a;
  }

  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out = encoder.tensors();
    for (auto* t : decoder.tensors()) out.push_back(t);
    for (auto& e : embeddings) out.push_back(&e);
    return out;
  }
};

namespace detail {

inline Matrix encoder_input(const VaeModel& m, const Matrix& x, const CategoricalInput& aux) {
  if (x.cols() != m.feature_dim) throw ShapeError("vae: feature count differs from model");
  if (m.config.handling == CategoricalHandling::Ignore) return x;
  if (aux.cardinalities != m.cardinalities) throw ShapeError("vae: categorical inputs differ from training");
  Matrix in(x.rows(), x.cols() + m.aux_dim());
  in.leftCols(x.cols()) = x;
  if (m.config.handling == CategoricalHandling::OneHot) {
    in.rightCols(m.aux_dim()) = one_hot(aux, x.rows());
    return in;
  }
  Index off = x.cols();
  for (std::size_t k = 0; k < m.embeddings.size(); ++k) {
    const Matrix& table = m.embeddings[k];
    for (Index i = 0; i < x.rows(); ++i) {
      const int id = aux.ids[k][static_cast<std::size_t>(i)];
      if (id == re::kUnseenLevel)
        in.block(i, off, 1, table.cols()).setZero();
      else
        in.block(i, off, 1, table.cols()) = table.row(id);
    }
    off += table.cols();
  }
  return in;
}

inline nn::GaussianHead split_head(const Matrix& out, Index d) { return {out.leftCols(d), out.middleCols(d, d)}; }

}  // namespace detail

inline VaeModel init_vae(const VaeConfig& config, Index feature_dim, const CategoricalInput& aux, Rng& rng) {
  if (config.latent_dim < 1) throw std::invalid_argument("vae: latent_dim must be >= 1");
  VaeModel m;
  m.config = config;
  m.feature_dim = feature_dim;
  if (config.handling != CategoricalHandling::Ignore) {
    if (aux.empty()) throw std::invalid_argument("vae: OneHot/Embed handling needs categorical inputs");
    m.cardinalities = aux.cardinalities;
  }
  if (config.handling == CategoricalHandling::OneHot && aux.total_levels() > kMaxOneHotColumns)
    throw std::invalid_argument("vae: too many one-hot columns (" + std::to_string(aux.total_levels()) + ")");
  if (config.handling == CategoricalHandling::Embed) {
    for (int q : m.cardinalities) m.embeddings.push_back(0.05 * rng.normal_matrix(q, embedding_dim(q)));
  }
  std::vector<int> reversed(config.hidden.rbegin(), config.hidden.rend());
  m.encoder = nn::make_mlp(feature_dim + m.aux_dim(), config.hidden, 2 * config.latent_dim, rng);
  m.decoder = nn::make_mlp(config.latent_dim, reversed, feature_dim, rng);
  return m;
}

/// Batch loss (reconstruction + beta KL) and gradients for a fixed noise draw.
struct VaeGrads {
  nn::MlpGrads encoder;
  nn::MlpGrads decoder;
  std::vector<Matrix> embeddings;

  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out = encoder.tensors();
    for (auto* t : decoder.tensors()) out.push_back(t);
    for (const auto& e : embeddings) out.push_back(&e);
    return out;
  }
};

inline std::pair<LossBreakdown, VaeGrads> vae_loss_and_grad(const VaeModel& m, const Matrix& x, const CategoricalInput& aux,
                                                            const Matrix& eps) {
  const Index d = m.config.latent_dim;
  const Matrix in = detail::encoder_input(m, x, aux);
  nn::MlpCache enc_cache, dec_cache;
  const auto head = detail::split_head(nn::mlp_forward(m.encoder, in, &enc_cache), d);
  const Matrix u = nn::reparameterize(head, eps);
  const Matrix x_hat = nn::mlp_forward(m.decoder, u, &dec_cache);
  const LossBreakdown loss = lmmvae_loss(x, x_hat, head, std::vector<nn::GaussianHead>{}, m.config.beta, std::vector<double>{});

  const double inv_m = 1.0 / static_cast<double>(x.rows());
  VaeGrads g;
  g.decoder = nn::mlp_backward(m.decoder, dec_cache, 2.0 * inv_m * (x_hat - x));
  const auto kl = nn::kl_scaled_normal_grad(head, 0.0);
  const Matrix sd = (0.5 * nn::clamp_log_variance(head.gamma).array()).exp().matrix();
  const Matrix& du = g.decoder.input;
  Matrix enc_grad(x.rows(), 2 * d);
  enc_grad.leftCols(d) = du + m.config.beta * inv_m * kl.mu;
  enc_grad.middleCols(d, d) = (0.5 * du.cwiseProduct(eps).cwiseProduct(sd)).cwiseProduct(nn::clamp_pass_mask(head.gamma)) +
                              m.config.beta * inv_m * kl.gamma;
  g.encoder = nn::mlp_backward(m.encoder, enc_cache, enc_grad);
  if (m.config.handling == CategoricalHandling::Embed) {
    Index off = x.cols();
    for (std::size_t k = 0; k < m.embeddings.size(); ++k) {
      Matrix ge = Matrix::Zero(m.embeddings[k].rows(), m.embeddings[k].cols());
      for (Index i = 0; i < x.rows(); ++i) {
        const int id = aux.ids[k][static_cast<std::size_t>(i)];
        if (id != re::kUnseenLevel) ge.row(id) += g.encoder.input.block(i, off, 1, ge.cols());
      }
      off += ge.cols();
      g.embeddings.push_back(std::move(ge));
    }
  }
  return {loss, std::move(g)};
}

/// Plain VAE minimizing squared reconstruction + beta * KL[q(u|x) || N(0, I)].
/// Categorical ids are dropped (Ignore), one-hot appended to the encoder
/// input (OneHot) or looked up in learned tables (Embed). The decoder always
/// reconstructs the p features only.
inline VaeModel vae_train(const Matrix& x, const CategoricalInput& aux, const VaeConfig& config, Rng& rng) {
  if (config.epochs < 0 || config.batch_size < 1) throw std::invalid_argument("vae: bad epochs/batch_size");
  if (!x.allFinite()) throw std::invalid_argument("vae: non-finite data");
  VaeModel m = init_vae(config, x.cols(), aux, rng);
  m.decoder.layers.back().bias = x.colwise().mean();
  nn::AdamState adam(config.optimizer);
  const auto n = static_cast<std::size_t>(x.rows());
  const auto batch = static_cast<std::size_t>(std::min<Index>(config.batch_size, x.rows()));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> idx(perm.data() + start, std::min(batch, n - start));
      const Matrix xb = gather_rows(x, idx);
      const CategoricalInput ab = config.handling == CategoricalHandling::Ignore ? CategoricalInput{} : aux.subset(idx);
      const Matrix eps = rng.normal_matrix(xb.rows(), config.latent_dim);
      LossBreakdown loss;
      VaeGrads grads;
      try {
        std::tie(loss, grads) = vae_loss_and_grad(m, xb, ab, eps);
      } catch (const ShapeError&) {
        throw;
      } catch (const std::invalid_argument& e) {
        throw TrainingError(std::string("vae: ") + e.what(), epoch);
      }
      if (!std::isfinite(loss.total)) throw TrainingError("vae: loss is not finite", epoch);
      auto params = m.tensors();
      auto gt = grads.tensors();
      nn::adam_step(adam, params, gt);
      loss_sum += loss.total;
      ++batches;
    }
    m.loss_history.push_back(batches > 0 ? loss_sum / batches : 0.0);
  }
  return m;
}

struct VaeOutput {
  Matrix latent;
  Matrix x_hat;
};

inline VaeOutput vae_reconstruct(const VaeModel& m, const Matrix& x, const CategoricalInput& aux) {
  VaeOutput out;
  out.latent = detail::split_head(nn::mlp_forward(m.encoder, detail::encoder_input(m, x, aux)), m.config.latent_dim).mu;
  out.x_hat = nn::mlp_forward(m.decoder, out.latent);
  return out;
}

/// Per-observation objective with deterministic heads (no random-effect terms).
inline LossBreakdown vae_nll(const VaeModel& m, const Matrix& x, const CategoricalInput& aux) {
  const auto head = detail::split_head(nn::mlp_forward(m.encoder, detail::encoder_input(m, x, aux)), m.config.latent_dim);
  const Matrix x_hat = nn::mlp_forward(m.decoder, head.mu);
  return lmmvae_loss(x, x_hat, head, std::vector<nn::GaussianHead>{}, m.config.beta, std::vector<double>{});
}

}  // namespace lmmvae::baselines
