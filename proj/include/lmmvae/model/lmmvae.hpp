#pragma once

#include "lmmvae/model/loss.hpp"
#include "lmmvae/nn/adam.hpp"
#include "lmmvae/nn/gaussian.hpp"
#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/nn/mlp.hpp"
#include "lmmvae/nn/rng.hpp"
#include "lmmvae/re/design.hpp"
#include "lmmvae/re/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace lmmvae {

enum class EncoderLayout {
  TwoEncoders,    // separate FE and RE encoders
  SingleEncoder,  // one encoder with both outputs ("LMMVAE-I")
};

struct LmmvaeConfig {
  int latent_dim = 1;
  std::vector<int> hidden = {1000, 500};
  double beta = 0.01;
  // Log prior variance per random-effect term; empty means 0 (sigma^2_b = 1).
  std::vector<double> delta_b;
  int epochs = 200;
  int batch_size = 1000;
  std::uint64_t seed = 0;
  EncoderLayout layout = EncoderLayout::TwoEncoders;
  nn::AdamConfig optimizer;

  // Spatial posterior factor: training kernel length scale, noise variance,
  // and the number of rows it is computed on.
  double spatial_length_scale_sq = 1.0;
  double spatial_noise_var = 1.0;
  std::size_t n_samp = 10000;

  double delta_for(std::size_t term) const { return term < delta_b.size() ? delta_b[term] : 0.0; }

  void validate() const {
    if (latent_dim < 1) throw std::invalid_argument("LmmvaeConfig: latent_dim must be >= 1");
    if (beta < 0.0) throw std::invalid_argument("LmmvaeConfig: beta must be >= 0");
    if (epochs < 0) throw std::invalid_argument("LmmvaeConfig: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("LmmvaeConfig: batch_size must be >= 1");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("LmmvaeConfig: hidden sizes must be >= 1");
  }
};

struct TermInfo {
  int num_levels = 0;
  bool spatial = false;
};

/// Encoder/decoder parameters plus the extracted random-effect matrix.
struct LmmvaeModel {
  LmmvaeConfig config;
  Index feature_dim = 0;
  std::vector<TermInfo> terms;
  nn::MlpParams fe_encoder;  // p -> 2d, or p -> 2d + 2pK with a single encoder
  nn::MlpParams re_encoder;  // p -> 2pK; empty with a single encoder
  nn::MlpParams fe_decoder;  // d -> p
  Matrix spatial_factor;     // lower-triangular posterior factor, spatial term only
  Matrix b_hat;              // Q x p, term blocks stacked
  std::vector<double> loss_history;

  Index total_levels() const {
    Index q = 0;
    for (const auto& t : terms) q += t.num_levels;
    return q;
  }
  std::size_t num_terms() const { return terms.size(); }
  std::vector<double> deltas() const {
    std::vector<double> d;
    for (std::size_t k = 0; k < terms.size(); ++k) d.push_back(config.delta_for(k));
    return d;
  }

  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out = fe_encoder.tensors();
    for (auto* t : re_encoder.tensors()) out.push_back(t);
    for (auto* t : fe_decoder.tensors()) out.push_back(t);
    return out;
  }
};

struct EncoderHeads {
  nn::GaussianHead u;
  std::vector<nn::GaussianHead> b;
};

struct ReparamNoise {
  Matrix u;
  std::vector<Matrix> b;
};

struct LmmvaeGrads {
  nn::MlpGrads fe_encoder;
  nn::MlpGrads re_encoder;
  nn::MlpGrads fe_decoder;

  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out = fe_encoder.tensors();
    for (auto* t : re_encoder.tensors()) out.push_back(t);
    for (auto* t : fe_decoder.tensors()) out.push_back(t);
    return out;
  }
};

/// Result of one training-mode forward pass.
struct BatchOutput {
  Matrix x_hat;
  EncoderHeads heads;
  Matrix b_agg;  // Q x p, per-term level means of the sampled b, stacked
};

inline LmmvaeModel init_model(const LmmvaeConfig& config, Index feature_dim, const re::REDesign& design, Rng& rng) {
  config.validate();
  if (feature_dim < 1) throw std::invalid_argument("init_model: feature_dim must be >= 1");
  LmmvaeModel m;
  m.config = config;
  m.feature_dim = feature_dim;
  for (const auto& t : design.terms) m.terms.push_back({t.num_levels, t.spatial});
  const Index d = config.latent_dim;
  const Index re_out = 2 * feature_dim * static_cast<Index>(m.terms.size());
  std::vector<int> reversed(config.hidden.rbegin(), config.hidden.rend());
  if (config.layout == EncoderLayout::SingleEncoder) {
    m.fe_encoder = nn::make_mlp(feature_dim, config.hidden, 2 * d + re_out, rng);
  } else {
    m.fe_encoder = nn::make_mlp(feature_dim, config.hidden, 2 * d, rng);
    if (re_out > 0) m.re_encoder = nn::make_mlp(feature_dim, config.hidden, re_out, rng);
  }
  m.fe_decoder = nn::make_mlp(d, reversed, feature_dim, rng);
  m.b_hat = Matrix::Zero(m.total_levels(), feature_dim);
  return m;
}

namespace detail {

struct EncoderCaches {
  nn::MlpCache fe;
  nn::MlpCache re;
};

inline EncoderHeads split_heads(const LmmvaeModel& m, const Matrix& fe_out, const Matrix* re_out) {
  const Index d = m.config.latent_dim;
  const Index p = m.feature_dim;
  EncoderHeads h;
  h.u.mu = fe_out.leftCols(d);
  h.u.gamma = fe_out.middleCols(d, d);
  const Matrix& src = m.config.layout == EncoderLayout::SingleEncoder ? fe_out : *re_out;
  const Index base = m.config.layout == EncoderLayout::SingleEncoder ? 2 * d : 0;
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    const Index off = base + 2 * p * static_cast<Index>(k);
    h.b.push_back({src.middleCols(off, p), src.middleCols(off + p, p)});
  }
  return h;
}

inline EncoderHeads encode(const LmmvaeModel& m, const Matrix& x, EncoderCaches* caches) {
  if (x.cols() != m.feature_dim) throw ShapeError("encode: feature count differs from model");
  Matrix fe_out = nn::mlp_forward(m.fe_encoder, x, caches ? &caches->fe : nullptr);
  if (m.config.layout == EncoderLayout::TwoEncoders && !m.terms.empty()) {
    Matrix re_out = nn::mlp_forward(m.re_encoder, x, caches ? &caches->re : nullptr);
    return split_heads(m, fe_out, &re_out);
  }
  return split_heads(m, fe_out, nullptr);
}

/// Inverse of split_heads for gradients.
inline void join_head_grads(const LmmvaeModel& m, const EncoderHeads& g, Matrix& fe_grad, Matrix& re_grad) {
  const Index d = m.config.latent_dim;
  const Index p = m.feature_dim;
  const Index rows = g.u.mu.rows();
  fe_grad = Matrix::Zero(rows, m.fe_encoder.output_dim());
  fe_grad.leftCols(d) = g.u.mu;
  fe_grad.middleCols(d, d) = g.u.gamma;
  const bool single = m.config.layout == EncoderLayout::SingleEncoder;
  if (!single) re_grad = Matrix::Zero(rows, m.re_encoder.output_dim());
  Matrix& dst = single ? fe_grad : re_grad;
  const Index base = single ? 2 * d : 0;
  for (std::size_t k = 0; k < g.b.size(); ++k) {
    const Index off = base + 2 * p * static_cast<Index>(k);
    dst.middleCols(off, p) = g.b[k].mu;
    dst.middleCols(off + p, p) = g.b[k].gamma;
  }
}

/// Rows of `levels` grouped by level, skipping unseen rows.
struct LevelGroups {
  std::vector<int> present;           // distinct levels, ascending
  std::vector<int> counts;            // per level (size q)
  std::vector<Index> slot;            // per row: index into `present`, -1 if unseen
};

inline LevelGroups group_levels(std::span<const int> levels, int q) {
  LevelGroups g;
  g.counts.assign(static_cast<std::size_t>(q), 0);
  for (int lv : levels) {
    if (lv == re::kUnseenLevel) continue;
    if (lv < 0 || lv >= q) throw std::out_of_range("level id " + std::to_string(lv) + " outside [0, " + std::to_string(q) + ")");
    ++g.counts[static_cast<std::size_t>(lv)];
  }
  std::vector<Index> slot_of(static_cast<std::size_t>(q), -1);
  for (int j = 0; j < q; ++j) {
    if (g.counts[static_cast<std::size_t>(j)] > 0) {
      slot_of[static_cast<std::size_t>(j)] = static_cast<Index>(g.present.size());
      g.present.push_back(j);
    }
  }
  g.slot.reserve(levels.size());
  for (int lv : levels) g.slot.push_back(lv == re::kUnseenLevel ? -1 : slot_of[static_cast<std::size_t>(lv)]);
  return g;
}

/// Per-term state kept for the backward pass.
struct TermTrace {
  LevelGroups groups;
  Matrix means;   // present.size() x p
  Matrix factor;  // m x present.size(), spatial only: L[level_i, present_j] * w_i
};

}  // namespace detail

/// Level means of the rows of `b_samples`: row j of the result is the mean
/// of the rows with level j, zero for levels absent from the batch. Rows
/// with the unseen marker are ignored.
inline Matrix aggregate_re(const Matrix& b_samples, std::span<const int> level_ids, int num_levels) {
  if (static_cast<Index>(level_ids.size()) != b_samples.rows()) throw ShapeError("aggregate_re: one level id per row required");
  const auto g = detail::group_levels(level_ids, num_levels);
  Matrix out = Matrix::Zero(num_levels, b_samples.cols());
  for (std::size_t i = 0; i < level_ids.size(); ++i)
    if (level_ids[i] != re::kUnseenLevel) out.row(level_ids[i]) += b_samples.row(static_cast<Index>(i));
  for (int j = 0; j < num_levels; ++j)
    if (g.counts[static_cast<std::size_t>(j)] > 0) out.row(j) /= static_cast<double>(g.counts[static_cast<std::size_t>(j)]);
  return out;
}

inline ReparamNoise draw_noise(const LmmvaeModel& m, Index rows, Rng& rng) {
  ReparamNoise n;
  n.u = rng.normal_matrix(rows, m.config.latent_dim);
  for (std::size_t k = 0; k < m.terms.size(); ++k) n.b.push_back(rng.normal_matrix(rows, m.feature_dim));
  return n;
}

namespace detail {

inline void check_design(const LmmvaeModel& m, const re::REDesign& z, Index rows) {
  if (z.num_terms() != m.terms.size()) throw ShapeError("design has " + std::to_string(z.num_terms()) + " terms, model expects " + std::to_string(m.terms.size()));
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    if (z.terms[k].num_levels != m.terms[k].num_levels || z.terms[k].spatial != m.terms[k].spatial)
      throw ShapeError("design term " + std::to_string(k) + " does not match the model");
    if (static_cast<Index>(z.terms[k].level.size()) != rows) throw ShapeError("design rows differ from data rows");
  }
}

inline bool has_spatial(const LmmvaeModel& m) {
  return std::any_of(m.terms.begin(), m.terms.end(), [](const TermInfo& t) { return t.spatial; });
}

struct ForwardTrace {
  EncoderCaches enc;
  nn::MlpCache dec;
  EncoderHeads heads;
  Matrix u_sample;
  std::vector<Matrix> b_samples;
  std::vector<TermTrace> terms;
  Matrix x_hat;
};

/// Training-mode forward pass with fixed noise.
inline ForwardTrace forward_trace(const LmmvaeModel& m, const Matrix& x, const re::REDesign& z, const ReparamNoise& noise) {
  check_design(m, z, x.rows());
  if (has_spatial(m) && m.spatial_factor.size() == 0) throw std::logic_error("forward: spatial term requires a posterior factor");
  ForwardTrace t;
  t.heads = encode(m, x, &t.enc);
  t.u_sample = nn::reparameterize(t.heads.u, noise.u);
  t.x_hat = nn::mlp_forward(m.fe_decoder, t.u_sample, &t.dec);
  const Index rows = x.rows();
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    const auto& term = z.terms[k];
    t.b_samples.push_back(nn::reparameterize(t.heads.b[k], noise.b[k]));
    const Matrix& b = t.b_samples.back();
    TermTrace tr;
    tr.groups = group_levels(term.level, term.num_levels);
    tr.means = Matrix::Zero(static_cast<Index>(tr.groups.present.size()), m.feature_dim);
    for (Index i = 0; i < rows; ++i) {
      const Index s = tr.groups.slot[static_cast<std::size_t>(i)];
      if (s >= 0) tr.means.row(s) += b.row(i);
    }
    for (std::size_t s = 0; s < tr.groups.present.size(); ++s)
      tr.means.row(static_cast<Index>(s)) /= static_cast<double>(tr.groups.counts[static_cast<std::size_t>(tr.groups.present[s])]);

    if (term.spatial) {
      // Z (L B): only columns of L at levels present in the batch matter.
      const auto np = static_cast<Index>(tr.groups.present.size());
      tr.factor = Matrix::Zero(rows, np);
      for (Index i = 0; i < rows; ++i) {
        const int lv = term.level[static_cast<std::size_t>(i)];
        if (lv == re::kUnseenLevel) continue;
        const double w = term.weight[static_cast<std::size_t>(i)];
        for (Index s = 0; s < np; ++s) tr.factor(i, s) = w * m.spatial_factor(lv, tr.groups.present[static_cast<std::size_t>(s)]);
      }
      t.x_hat.noalias() += tr.factor * tr.means;
    } else {
      for (Index i = 0; i < rows; ++i) {
        const Index s = tr.groups.slot[static_cast<std::size_t>(i)];
        if (s >= 0) t.x_hat.row(i) += term.weight[static_cast<std::size_t>(i)] * tr.means.row(s);
      }
    }
    t.terms.push_back(std::move(tr));
  }
  return t;
}

}  // namespace detail

/// Training-mode forward pass: sample u and b, decode u, add Z B_agg.
inline BatchOutput forward(const LmmvaeModel& m, const Matrix& x, const re::REDesign& z, const ReparamNoise& noise) {
  auto t = detail::forward_trace(m, x, z, noise);
  BatchOutput out;
  out.x_hat = std::move(t.x_hat);
  out.heads = std::move(t.heads);
  out.b_agg = Matrix::Zero(m.total_levels(), m.feature_dim);
  Index off = 0;
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    const auto& g = t.terms[k].groups;
    for (std::size_t s = 0; s < g.present.size(); ++s)
      out.b_agg.row(off + g.present[s]) = t.terms[k].means.row(static_cast<Index>(s));
    off += m.terms[k].num_levels;
  }
  return out;
}

inline BatchOutput forward(const LmmvaeModel& m, const Matrix& x, const re::REDesign& z, Rng& rng) {
  return forward(m, x, z, draw_noise(m, x.rows(), rng));
}

/// Loss for a batch and its gradient with respect to every parameter.
inline std::pair<LossBreakdown, LmmvaeGrads> loss_and_grad(const LmmvaeModel& m, const Matrix& x, const re::REDesign& z,
                                                            const ReparamNoise& noise) {
  auto t = detail::forward_trace(m, x, z, noise);
  const auto deltas = m.deltas();
  const LossBreakdown loss = lmmvae_loss(x, t.x_hat, t.heads.u, t.heads.b, m.config.beta, deltas);

  const Index rows = x.rows();
  const double inv_m = 1.0 / static_cast<double>(rows);
  const double beta = m.config.beta;
  const Matrix g_out = 2.0 * inv_m * (t.x_hat - x);

  LmmvaeGrads grads;
  grads.fe_decoder = nn::mlp_backward(m.fe_decoder, t.dec, g_out);

  EncoderHeads hg;
  {
    const auto kl = nn::kl_scaled_normal_grad(t.heads.u, 0.0);
    const Matrix sd_half = (0.5 * nn::clamp_log_variance(t.heads.u.gamma).array()).exp().matrix();
    const Matrix& du = grads.fe_decoder.input;
    hg.u.mu = du + beta * inv_m * kl.mu;
    hg.u.gamma = (0.5 * du.cwiseProduct(noise.u).cwiseProduct(sd_half)).cwiseProduct(nn::clamp_pass_mask(t.heads.u.gamma)) +
                 beta * inv_m * kl.gamma;
  }
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    const auto& term = z.terms[k];
    const auto& tr = t.terms[k];
    const auto np = static_cast<Index>(tr.groups.present.size());
    Matrix d_means;
    if (term.spatial) {
      d_means = tr.factor.transpose() * g_out;
    } else {
      d_means = Matrix::Zero(np, m.feature_dim);
      for (Index i = 0; i < rows; ++i) {
        const Index s = tr.groups.slot[static_cast<std::size_t>(i)];
        if (s >= 0) d_means.row(s) += term.weight[static_cast<std::size_t>(i)] * g_out.row(i);
      }
    }
    Matrix db = Matrix::Zero(rows, m.feature_dim);
    for (Index i = 0; i < rows; ++i) {
      const Index s = tr.groups.slot[static_cast<std::size_t>(i)];
      if (s >= 0)
        db.row(i) = d_means.row(s) / static_cast<double>(tr.groups.counts[static_cast<std::size_t>(tr.groups.present[static_cast<std::size_t>(s)])]);
    }
    const auto& head = t.heads.b[k];
    const auto kl = nn::kl_scaled_normal_grad(head, deltas[k]);
    const Matrix sd_half = (0.5 * nn::clamp_log_variance(head.gamma).array()).exp().matrix();
    nn::GaussianHead g;
    g.mu = db + beta * inv_m * kl.mu;
    g.gamma = (0.5 * db.cwiseProduct(noise.b[k]).cwiseProduct(sd_half)).cwiseProduct(nn::clamp_pass_mask(head.gamma)) +
              beta * inv_m * kl.gamma;
    hg.b.push_back(std::move(g));
  }

  Matrix fe_grad, re_grad;
  detail::join_head_grads(m, hg, fe_grad, re_grad);
  grads.fe_encoder = nn::mlp_backward(m.fe_encoder, t.enc.fe, fe_grad);
  if (m.config.layout == EncoderLayout::TwoEncoders && !m.terms.empty())
    grads.re_encoder = nn::mlp_backward(m.re_encoder, t.enc.re, re_grad);
  return {loss, std::move(grads)};
}

/// Posterior Cholesky factor for the spatial term, on up to `n_samp`
/// uniformly sampled training rows with the training kernel length scale.
inline Matrix compute_spatial_factor(const LmmvaeConfig& config, const re::REDesign& design, Rng& rng) {
  for (const auto& term : design.terms) {
    if (!term.spatial) continue;
    if (term.locations.rows() != term.num_levels || term.locations.cols() != 2)
      throw ShapeError("spatial term needs a num_levels x 2 location table");
    re::REDesign single;
    single.terms.push_back(term);
    const Matrix kernel = re::rbf_kernel(term.locations, config.spatial_length_scale_sq);
    return re::spatial_posterior_chol(kernel, single.to_sparse(), config.spatial_noise_var, config.n_samp, rng);
  }
  return {};
}

/// Means of the fixed-effect encoder.
inline Matrix encode_latent(const LmmvaeModel& m, const Matrix& x) {
  return detail::encode(m, x, nullptr).u.mu;
}

/// Q x p estimate of B from the RE encoder means over all training rows,
/// averaged per level. Levels absent from training get zero rows; the
/// spatial block is then left-multiplied by the posterior factor.
inline Matrix extract_B_hat(const LmmvaeModel& m, const Matrix& x_train, const re::REDesign& z_train) {
  detail::check_design(m, z_train, x_train.rows());
  Matrix b_hat = Matrix::Zero(m.total_levels(), m.feature_dim);
  if (m.terms.empty()) return b_hat;
  const Index chunk = 4096;
  std::vector<Matrix> sums;
  std::vector<std::vector<long>> counts;
  for (const auto& t : m.terms) {
    sums.push_back(Matrix::Zero(t.num_levels, m.feature_dim));
    counts.emplace_back(static_cast<std::size_t>(t.num_levels), 0);
  }
  for (Index start = 0; start < x_train.rows(); start += chunk) {
    const Index len = std::min(chunk, x_train.rows() - start);
    const auto heads = detail::encode(m, x_train.middleRows(start, len), nullptr);
    for (std::size_t k = 0; k < m.terms.size(); ++k) {
      for (Index i = 0; i < len; ++i) {
        const int lv = z_train.terms[k].level[static_cast<std::size_t>(start + i)];
        if (lv == re::kUnseenLevel) continue;
        sums[k].row(lv) += heads.b[k].mu.row(i);
        ++counts[k][static_cast<std::size_t>(lv)];
      }
    }
  }
  Index off = 0;
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    for (int j = 0; j < m.terms[k].num_levels; ++j)
      if (counts[k][static_cast<std::size_t>(j)] > 0) sums[k].row(j) /= static_cast<double>(counts[k][static_cast<std::size_t>(j)]);
    if (m.terms[k].spatial) sums[k] = m.spatial_factor * sums[k];
    b_hat.middleRows(off, m.terms[k].num_levels) = sums[k];
    off += m.terms[k].num_levels;
  }
  return b_hat;
}

/// Z * B_hat for a design; unseen levels contribute nothing.
inline Matrix random_effect_term(const LmmvaeModel& m, const re::REDesign& z, Index rows) {
  detail::check_design(m, z, rows);
  Matrix out = Matrix::Zero(rows, m.feature_dim);
  Index off = 0;
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    const auto& term = z.terms[k];
    for (Index i = 0; i < rows; ++i) {
      const int lv = term.level[static_cast<std::size_t>(i)];
      if (lv != re::kUnseenLevel) out.row(i) += term.weight[static_cast<std::size_t>(i)] * m.b_hat.row(off + lv);
    }
    off += m.terms[k].num_levels;
  }
  return out;
}

struct Reconstruction {
  Matrix latent;  // n x d encoder means
  Matrix x_hat;   // decoder(latent) + Z B_hat
};

/// Deterministic reconstruction: latent means through the decoder plus the
/// random-effect contribution of the extracted B_hat.
inline Reconstruction reconstruct(const LmmvaeModel& m, const Matrix& x, const re::REDesign& z) {
  Reconstruction r;
  r.latent = encode_latent(m, x);
  r.x_hat = nn::mlp_forward(m.fe_decoder, r.latent) + random_effect_term(m, z, x.rows());
  return r;
}

/// Objective value per observation on held-out data with deterministic
/// heads and the reconstruction path of `reconstruct`.
inline LossBreakdown evaluate_nll(const LmmvaeModel& m, const Matrix& x, const re::REDesign& z) {
  const auto heads = detail::encode(m, x, nullptr);
  const auto rec = reconstruct(m, x, z);
  return lmmvae_loss(x, rec.x_hat, heads.u, heads.b, m.config.beta, m.deltas());
}

struct TrainOptions {
  // Called after each epoch with (epoch, mean batch loss).
  std::function<void(int, double)> on_epoch;
};

/// Fits the model with shuffled mini-batches and the adaptive-moment
/// optimizer, then extracts B_hat from the training data.
inline LmmvaeModel train(const Matrix& x, const re::REDesign& z, const LmmvaeConfig& config, Rng& rng,
                         const TrainOptions& options = {}) {
  config.validate();
  if (!x.allFinite()) throw std::invalid_argument("train: non-finite data");
  if (z.num_terms() > 0 && z.rows() != static_cast<std::size_t>(x.rows())) throw ShapeError("train: design rows differ from data rows");
  for (const auto& t : z.terms)
    for (int lv : t.level)
      if (lv == re::kUnseenLevel) throw std::invalid_argument("train: training rows must have known levels");

  LmmvaeModel m = init_model(config, x.cols(), z, rng);
  // Decoder output starts at the feature means.
  m.fe_decoder.layers.back().bias = x.colwise().mean();
  m.spatial_factor = compute_spatial_factor(config, z, rng);

  nn::AdamState adam(config.optimizer);
  const auto n = static_cast<std::size_t>(x.rows());
  const auto batch = static_cast<std::size_t>(std::min<Index>(config.batch_size, x.rows()));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const std::span<const std::size_t> idx(perm.data() + start, len);
      const Matrix xb = gather_rows(x, idx);
      const re::REDesign zb = z.subset(idx);
      const auto noise = draw_noise(m, xb.rows(), rng);
      LossBreakdown loss;
      LmmvaeGrads grads;
      try {
        std::tie(loss, grads) = loss_and_grad(m, xb, zb, noise);
      } catch (const ShapeError&) {
        throw;
      } catch (const std::invalid_argument& e) {
        throw TrainingError(std::string("train: ") + e.what(), epoch);
      }
      if (!std::isfinite(loss.total)) throw TrainingError("train: loss is not finite", epoch);
      auto params = m.tensors();
      auto g = grads.tensors();
      nn::adam_step(adam, params, g);
      loss_sum += loss.total;
      ++batches;
    }
    const double mean_loss = batches > 0 ? loss_sum / batches : 0.0;
    m.loss_history.push_back(mean_loss);
    if (options.on_epoch) options.on_epoch(epoch, mean_loss);
  }
  m.b_hat = extract_B_hat(m, x, z);
  return m;
}

}  // namespace lmmvae
