#pragma once

#include "lmmvae/baselines/categorical_input.hpp"
#include "lmmvae/baselines/pca.hpp"
#include "lmmvae/baselines/vae.hpp"
#include "lmmvae/model/lmmvae.hpp"
#include "lmmvae/nn/rng.hpp"
#include "lmmvae/re/design.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmmvae {

enum class Method { PcaIgnore, PcaOhe, VaeIgnore, VaeOhe, VaeEmbed, Lmmvae, LmmvaeSingle };

inline constexpr std::array<Method, 7> kAllMethods = {Method::PcaIgnore, Method::PcaOhe,   Method::VaeIgnore,
                                                      Method::VaeOhe,    Method::VaeEmbed, Method::Lmmvae,
                                                      Method::LmmvaeSingle};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::PcaIgnore: return "pca-ignore";
    case Method::PcaOhe: return "pca-ohe";
    case Method::VaeIgnore: return "vae-ignore";
    case Method::VaeOhe: return "vae-ohe";
    case Method::VaeEmbed: return "vae-embed";
    case Method::Lmmvae: return "lmmvae";
    case Method::LmmvaeSingle: return "lmmvae-i";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (auto m : kAllMethods)
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

/// Settings shared by every neural method; PCA uses only latent_dim.
struct FitSettings {
  int latent_dim = 1;
  std::vector<int> hidden = {1000, 500};
  int epochs = 200;
  int batch_size = 1000;
  double beta = 0.01;
  std::vector<double> delta_b;
  nn::AdamConfig optimizer;
  double spatial_length_scale_sq = 1.0;
  double spatial_noise_var = 1.0;
  std::size_t n_samp = 10000;

  LmmvaeConfig lmmvae_config(EncoderLayout layout) const {
    LmmvaeConfig c;
    c.latent_dim = latent_dim;
    c.hidden = hidden;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.beta = beta;
    c.delta_b = delta_b;
    c.optimizer = optimizer;
    c.layout = layout;
    c.spatial_length_scale_sq = spatial_length_scale_sq;
    c.spatial_noise_var = spatial_noise_var;
    c.n_samp = n_samp;
    return c;
  }

  baselines::VaeConfig vae_config(baselines::CategoricalHandling h) const {
    baselines::VaeConfig c;
    c.latent_dim = latent_dim;
    c.hidden = hidden;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.beta = beta;
    c.optimizer = optimizer;
    c.handling = h;
    return c;
  }
};

/// A fitted model of any method.
struct FittedModel {
  Method method = Method::PcaIgnore;
  std::optional<baselines::PcaModel> pca;
  std::vector<int> pca_cardinalities;  // pca-ohe only
  std::optional<baselines::VaeModel> vae;
  std::optional<LmmvaeModel> lmmvae;
};

struct MethodOutput {
  Matrix latent;
  Matrix x_hat;
  double nll = 0.0;  // per observation
};

inline FittedModel fit_method(Method method, const Matrix& x, const re::REScenario& sc, const FitSettings& s, Rng& rng) {
  FittedModel f;
  f.method = method;
  switch (method) {
    case Method::PcaIgnore:
      f.pca = baselines::pca_fit(x, s.latent_dim);
      break;
    case Method::PcaOhe: {
      const auto aux = baselines::CategoricalInput::from_scenario(sc);
      const Matrix oh = baselines::one_hot(aux, x.rows());
      Matrix joined(x.rows(), x.cols() + oh.cols());
      joined << x, oh;
      f.pca = baselines::pca_fit(joined, s.latent_dim);
      f.pca_cardinalities = aux.cardinalities;
      break;
    }
    case Method::VaeIgnore:
      f.vae = baselines::vae_train(x, {}, s.vae_config(baselines::CategoricalHandling::Ignore), rng);
      break;
    case Method::VaeOhe:
      f.vae = baselines::vae_train(x, baselines::CategoricalInput::from_scenario(sc),
                                   s.vae_config(baselines::CategoricalHandling::OneHot), rng);
      break;
    case Method::VaeEmbed:
      f.vae = baselines::vae_train(x, baselines::CategoricalInput::from_scenario(sc),
                                   s.vae_config(baselines::CategoricalHandling::Embed), rng);
      break;
    case Method::Lmmvae:
    case Method::LmmvaeSingle: {
      const auto layout = method == Method::Lmmvae ? EncoderLayout::TwoEncoders : EncoderLayout::SingleEncoder;
      f.lmmvae = train(x, re::make_design(sc), s.lmmvae_config(layout), rng);
      break;
    }
  }
  return f;
}

/// Latent means, reconstruction of the p features and per-observation NLL.
/// PCA's NLL is its per-observation squared reconstruction error.
inline MethodOutput apply_method(const FittedModel& f, const Matrix& x, const re::REScenario& sc) {
  MethodOutput out;
  switch (f.method) {
    case Method::PcaIgnore:
    case Method::PcaOhe: {
      Matrix input = x;
      if (f.method == Method::PcaOhe) {
        auto aux = baselines::CategoricalInput::from_scenario(sc);
        if (aux.cardinalities != f.pca_cardinalities) throw ShapeError("pca-ohe: categorical inputs differ from training");
        const Matrix oh = baselines::one_hot(aux, x.rows());
        input.resize(x.rows(), x.cols() + oh.cols());
        input << x, oh;
      }
      auto r = baselines::pca_transform_reconstruct(*f.pca, input);
      out.latent = std::move(r.latent);
      out.x_hat = r.x_hat.leftCols(x.cols());
      out.nll = (x - out.x_hat).squaredNorm() / static_cast<double>(x.rows());
      break;
    }
    case Method::VaeIgnore:
    case Method::VaeOhe:
    case Method::VaeEmbed: {
      const auto aux = f.method == Method::VaeIgnore ? baselines::CategoricalInput{} : baselines::CategoricalInput::from_scenario(sc);
      auto r = baselines::vae_reconstruct(*f.vae, x, aux);
      out.latent = std::move(r.latent);
      out.x_hat = std::move(r.x_hat);
      out.nll = baselines::vae_nll(*f.vae, x, aux).total;
      break;
    }
    case Method::Lmmvae:
    case Method::LmmvaeSingle: {
      const auto z = re::make_design(sc);
      auto r = reconstruct(*f.lmmvae, x, z);
      out.latent = std::move(r.latent);
      out.x_hat = std::move(r.x_hat);
      out.nll = evaluate_nll(*f.lmmvae, x, z).total;
      break;
    }
  }
  return out;
}

}  // namespace lmmvae
