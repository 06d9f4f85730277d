#pragma once

// Checkpoint file: one JSON object
//   {"format": "lmmvae-checkpoint", "version": 1, "method": "...",
//    "config": {...}, "model": {...networks, b_hat...},
//    "data": {"declaration", "vocabulary", "standardization", "feature_names"}}

#include "lmmvae/io/csv.hpp"
#include "lmmvae/methods.hpp"
#include "lmmvae/nn/serialize.hpp"

#include <cstdint>
#include <fstream>
#include <string>

namespace lmmvae::io {

using nn::json;
using nn::matrix_from_json;
using nn::matrix_to_json;
using nn::mlp_from_json;
using nn::mlp_to_json;

inline json settings_to_json(const FitSettings& s) {
  return json{{"latent_dim", s.latent_dim},
              {"hidden", s.hidden},
              {"epochs", s.epochs},
              {"batch_size", s.batch_size},
              {"beta", s.beta},
              {"delta_b", s.delta_b},
              {"learning_rate", s.optimizer.learning_rate},
              {"adam_beta1", s.optimizer.beta1},
              {"adam_beta2", s.optimizer.beta2},
              {"adam_epsilon", s.optimizer.epsilon},
              {"spatial_length_scale_sq", s.spatial_length_scale_sq},
              {"spatial_noise_var", s.spatial_noise_var},
              {"n_samp", s.n_samp}};
}

/// Missing keys keep their defaults.
inline FitSettings settings_from_json(const json& j, FitSettings s = {}) {
  s.latent_dim = j.value("latent_dim", s.latent_dim);
  s.hidden = j.value("hidden", s.hidden);
  s.epochs = j.value("epochs", s.epochs);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.beta = j.value("beta", s.beta);
  s.delta_b = j.value("delta_b", s.delta_b);
  s.optimizer.learning_rate = j.value("learning_rate", s.optimizer.learning_rate);
  s.optimizer.beta1 = j.value("adam_beta1", s.optimizer.beta1);
  s.optimizer.beta2 = j.value("adam_beta2", s.optimizer.beta2);
  s.optimizer.epsilon = j.value("adam_epsilon", s.optimizer.epsilon);
  s.spatial_length_scale_sq = j.value("spatial_length_scale_sq", s.spatial_length_scale_sq);
  s.spatial_noise_var = j.value("spatial_noise_var", s.spatial_noise_var);
  s.n_samp = j.value("n_samp", s.n_samp);
  return s;
}

namespace detail {

inline json lmmvae_to_json(const LmmvaeModel& m) {
  json terms = json::array();
  for (const auto& t : m.terms) terms.push_back({{"num_levels", t.num_levels}, {"spatial", t.spatial}});
  const auto& c = m.config;
  return json{{"latent_dim", c.latent_dim},
              {"hidden", c.hidden},
              {"beta", c.beta},
              {"delta_b", c.delta_b},
              {"layout", c.layout == EncoderLayout::TwoEncoders ? "two-encoders" : "single-encoder"},
              {"feature_dim", m.feature_dim},
              {"terms", terms},
              {"fe_encoder", mlp_to_json(m.fe_encoder)},
              {"re_encoder", mlp_to_json(m.re_encoder)},
              {"fe_decoder", mlp_to_json(m.fe_decoder)},
              {"spatial_factor", matrix_to_json(m.spatial_factor)},
              {"b_hat", matrix_to_json(m.b_hat)},
              {"loss_history", m.loss_history}};
}

inline LmmvaeModel lmmvae_from_json(const json& j) {
  LmmvaeModel m;
  m.config.latent_dim = j.at("latent_dim").get<int>();
  m.config.hidden = j.at("hidden").get<std::vector<int>>();
  m.config.beta = j.at("beta").get<double>();
  m.config.delta_b = j.at("delta_b").get<std::vector<double>>();
  m.config.layout = j.at("layout").get<std::string>() == "single-encoder" ? EncoderLayout::SingleEncoder : EncoderLayout::TwoEncoders;
  m.feature_dim = j.at("feature_dim").get<Index>();
  for (const auto& t : j.at("terms")) m.terms.push_back({t.at("num_levels").get<int>(), t.at("spatial").get<bool>()});
  m.fe_encoder = mlp_from_json(j.at("fe_encoder"));
  m.re_encoder = mlp_from_json(j.at("re_encoder"));
  m.fe_decoder = mlp_from_json(j.at("fe_decoder"));
  m.spatial_factor = matrix_from_json(j.at("spatial_factor"));
  m.b_hat = matrix_from_json(j.at("b_hat"));
  m.loss_history = j.value("loss_history", std::vector<double>{});
  require_shape(m.b_hat, m.total_levels(), m.feature_dim, "checkpoint b_hat");
  return m;
}

inline json vae_to_json(const baselines::VaeModel& m) {
  json emb = json::array();
  for (const auto& e : m.embeddings) emb.push_back(matrix_to_json(e));
  return json{{"latent_dim", m.config.latent_dim},
              {"hidden", m.config.hidden},
              {"beta", m.config.beta},
              {"handling", baselines::to_string(m.config.handling)},
              {"feature_dim", m.feature_dim},
              {"cardinalities", m.cardinalities},
              {"encoder", mlp_to_json(m.encoder)},
              {"decoder", mlp_to_json(m.decoder)},
              {"embeddings", emb},
              {"loss_history", m.loss_history}};
}

inline baselines::VaeModel vae_from_json(const json& j) {
  baselines::VaeModel m;
  m.config.latent_dim = j.at("latent_dim").get<int>();
  m.config.hidden = j.at("hidden").get<std::vector<int>>();
  m.config.beta = j.at("beta").get<double>();
  const auto h = j.at("handling").get<std::string>();
  m.config.handling = h == "ohe" ? baselines::CategoricalHandling::OneHot
                      : h == "embed" ? baselines::CategoricalHandling::Embed
                                     : baselines::CategoricalHandling::Ignore;
  m.feature_dim = j.at("feature_dim").get<Index>();
  m.cardinalities = j.at("cardinalities").get<std::vector<int>>();
  m.encoder = mlp_from_json(j.at("encoder"));
  m.decoder = mlp_from_json(j.at("decoder"));
  for (const auto& e : j.at("embeddings")) m.embeddings.push_back(matrix_from_json(e));
  m.loss_history = j.value("loss_history", std::vector<double>{});
  return m;
}

inline json vocabulary_to_json(const Vocabulary& v) {
  return json{{"categorical", v.categorical}, {"subjects", v.subjects}, {"locations", matrix_to_json(v.locations)}};
}

inline Vocabulary vocabulary_from_json(const json& j) {
  Vocabulary v;
  v.categorical = j.at("categorical").get<std::vector<std::vector<double>>>();
  v.subjects = j.at("subjects").get<std::vector<double>>();
  v.locations = matrix_from_json(j.at("locations"));
  return v;
}

}  // namespace detail

/// Everything needed to apply a fitted model to a new CSV.
struct Checkpoint {
  FittedModel model;
  FitSettings settings;
  ScenarioDeclaration declaration;
  Vocabulary vocabulary;
  Standardization standardization;
  std::vector<std::string> feature_names;
  std::uint64_t seed = 0;
};

inline json checkpoint_to_json(const Checkpoint& c) {
  json model;
  const auto& f = c.model;
  if (f.pca) {
    model = json{{"mean", matrix_to_json(f.pca->mean)},
                 {"loadings", matrix_to_json(f.pca->loadings)},
                 {"eigenvalues", std::vector<double>(f.pca->eigenvalues.data(), f.pca->eigenvalues.data() + f.pca->eigenvalues.size())},
                 {"cardinalities", f.pca_cardinalities}};
  } else if (f.vae) {
    model = detail::vae_to_json(*f.vae);
  } else if (f.lmmvae) {
    model = detail::lmmvae_to_json(*f.lmmvae);
  }
  json data{{"scenario", re::to_string(c.declaration.kind)},
            {"num_categorical", c.declaration.num_categorical},
            {"poly_terms", c.declaration.poly_terms},
            {"vocabulary", detail::vocabulary_to_json(c.vocabulary)},
            {"feature_names", c.feature_names}};
  if (!c.standardization.empty())
    data["standardization"] = {{"mean", matrix_to_json(c.standardization.mean)}, {"scale", matrix_to_json(c.standardization.scale)}};
  return json{{"format", "lmmvae-checkpoint"},
              {"version", 1},
              {"method", to_string(f.method)},
              {"seed", c.seed},
              {"config", settings_to_json(c.settings)},
              {"model", model},
              {"data", data}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "lmmvae-checkpoint") throw std::invalid_argument("not a checkpoint file");
  Checkpoint c;
  c.model.method = method_from_string(j.at("method").get<std::string>());
  c.settings = settings_from_json(j.at("config"));
  c.seed = j.value("seed", std::uint64_t{0});
  const auto& mj = j.at("model");
  switch (c.model.method) {
    case Method::PcaIgnore:
    case Method::PcaOhe: {
      baselines::PcaModel p;
      p.mean = matrix_from_json(mj.at("mean"));
      p.loadings = matrix_from_json(mj.at("loadings"));
      const auto ev = mj.at("eigenvalues").get<std::vector<double>>();
      p.eigenvalues = Eigen::Map<const Vector>(ev.data(), static_cast<Index>(ev.size()));
      c.model.pca = std::move(p);
      c.model.pca_cardinalities = mj.at("cardinalities").get<std::vector<int>>();
      break;
    }
    case Method::VaeIgnore:
    case Method::VaeOhe:
    case Method::VaeEmbed: c.model.vae = detail::vae_from_json(mj); break;
    case Method::Lmmvae:
    case Method::LmmvaeSingle: c.model.lmmvae = detail::lmmvae_from_json(mj); break;
  }
  const auto& dj = j.at("data");
  c.declaration.kind = re::scenario_from_string(dj.at("scenario").get<std::string>());
  c.declaration.num_categorical = dj.at("num_categorical").get<int>();
  c.declaration.poly_terms = dj.at("poly_terms").get<int>();
  c.vocabulary = detail::vocabulary_from_json(dj.at("vocabulary"));
  c.feature_names = dj.at("feature_names").get<std::vector<std::string>>();
  if (dj.contains("standardization")) {
    c.standardization.mean = matrix_from_json(dj["standardization"].at("mean"));
    c.standardization.scale = matrix_from_json(dj["standardization"].at("scale"));
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_json(c).dump();
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return checkpoint_from_json(json::parse(in));
}

}  // namespace lmmvae::io
