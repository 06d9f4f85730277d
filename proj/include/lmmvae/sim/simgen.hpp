#pragma once

#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/nn/rng.hpp"
#include "lmmvae/re/design.hpp"
#include "lmmvae/re/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmmvae::sim {

enum class SplitMode { Random, Future, Unknown };

inline std::string to_string(SplitMode m) {
  switch (m) {
    case SplitMode::Random: return "random";
    case SplitMode::Future: return "future";
    case SplitMode::Unknown: return "unknown";
  }
  return "?";
}

inline SplitMode split_mode_from_string(const std::string& s) {
  if (s == "random") return SplitMode::Random;
  if (s == "future") return SplitMode::Future;
  if (s == "unknown") return SplitMode::Unknown;
  throw std::invalid_argument("unknown split mode '" + s + "'");
}

struct SimConfig {
  re::ScenarioKind scenario = re::ScenarioKind::Categorical;
  Index n = 100000;
  Index p = 100;
  Index d = 1;

  // Categorical: cardinalities and variance-component means per feature.
  std::vector<int> cardinalities = {1000, 3000, 5000};
  std::vector<double> sigma2_b = {0.3, 0.3, 0.3};

  // Longitudinal: q subjects, K polynomial terms, diagonal of Phi and the
  // intercept-slope / intercept-quadratic covariance.
  int num_subjects = 1000;
  int poly_terms = 3;
  std::vector<double> phi_diagonal = {0.3, 0.3, 0.3};
  double phi_intercept_cov = 0.3;

  // Spatial: q locations, generating kernel length scale and variance mean.
  int num_locations = 10000;
  double length_scale_sq = 0.3;
  double sigma2_spatial = 0.3;

  double noise_var = 1.0;
  double mean_low = -10.0;
  double mean_high = 10.0;
  SplitMode split = SplitMode::Random;
  double test_fraction = 0.2;

  void validate() const {
    if (n < 1 || p < 1 || d < 1) throw std::invalid_argument("SimConfig: n, p, d must be >= 1");
    if (d > p) throw std::invalid_argument("SimConfig: d must be <= p");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("SimConfig: test fraction must be in (0, 1)");
    const bool cat = scenario == re::ScenarioKind::Categorical || scenario == re::ScenarioKind::SpatialCategorical;
    const bool spa = scenario == re::ScenarioKind::Spatial || scenario == re::ScenarioKind::SpatialCategorical;
    if (cat) {
      if (cardinalities.empty() || cardinalities.size() != sigma2_b.size())
        throw std::invalid_argument("SimConfig: need one sigma2_b per categorical feature");
      for (int q : cardinalities)
        if (q < 1 || q > n) throw std::invalid_argument("SimConfig: categorical cardinality must be in [1, n]");
    }
    if (scenario == re::ScenarioKind::Longitudinal) {
      if (num_subjects < 1 || num_subjects > n) throw std::invalid_argument("SimConfig: subjects must be in [1, n]");
      if (poly_terms < 1 || static_cast<int>(phi_diagonal.size()) != poly_terms)
        throw std::invalid_argument("SimConfig: need K >= 1 and K diagonal entries for Phi");
    }
    if (spa && (num_locations < 1 || num_locations > n)) throw std::invalid_argument("SimConfig: locations must be in [1, n]");
    if (split == SplitMode::Future && scenario != re::ScenarioKind::Longitudinal)
      throw std::invalid_argument("SimConfig: future split needs longitudinal data");
    if (split == SplitMode::Unknown && !spa) throw std::invalid_argument("SimConfig: unknown split needs spatial data");
  }
};

/// Simulated dataset with every generating piece kept:
///   X = F + 1 mean^T + random_effects + noise.
struct SimDataset {
  Matrix x;
  Matrix latent;        // U, n x d
  Matrix loadings;      // W, p x d
  Matrix fixed;         // F = f(U)
  RowVector means;      // 1 x p
  Matrix random_effects;  // Z B, n x p
  Matrix noise;         // E
  std::vector<Matrix> b_true;  // per RE term (same order as re::make_design)
  re::REScenario scenario;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

struct FixedPart {
  Matrix latent;
  Matrix loadings;
  Matrix fixed;
};

/// F row l = (u_l W^T) * cos(u_l W^T), elementwise.
inline Matrix nonlinear_map(const Matrix& latent, const Matrix& loadings) {
  const Matrix lin = latent * loadings.transpose();
  return lin.cwiseProduct(lin.array().cos().matrix());
}

inline FixedPart gen_fixed_part(Index n, Index p, Index d, Rng& rng) {
  if (d > p) throw std::invalid_argument("gen_fixed_part: d must be <= p");
  FixedPart f;
  f.latent = rng.normal_matrix(n, d);
  f.loadings = rng.normal_matrix(p, d);
  f.fixed = nonlinear_map(f.latent, f.loadings);
  return f;
}

/// Multinomial group sizes with uniform probabilities. Empty groups take a
/// row from the current largest group so every level appears.
inline std::vector<long> gen_group_sizes(long n, int q, Rng& rng) {
  if (q < 1) throw std::invalid_argument("gen_group_sizes: q must be >= 1");
  if (q > n) throw std::invalid_argument("gen_group_sizes: q > n");
  auto sizes = rng.multinomial(n, std::vector<double>(static_cast<std::size_t>(q), 1.0 / q));
  for (auto& s : sizes) {
    if (s > 0) continue;
    auto largest = std::max_element(sizes.begin(), sizes.end());
    --*largest;
    s = 1;
  }
  return sizes;
}

/// Per-feature variances (Poisson(sigma2) + 1) * min(sigma2, 1).
inline Vector gen_variance_components(double sigma2, Index p, Rng& rng) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("gen_variance_components: sigma2 must be > 0");
  const double c = std::min(sigma2, 1.0);
  Vector v(p);
  for (Index k = 0; k < p; ++k) v(k) = (static_cast<double>(rng.poisson(sigma2)) + 1.0) * c;
  return v;
}

/// Level id per row: group sizes expanded, then shuffled.
inline std::vector<int> gen_level_ids(long n, int q, Rng& rng) {
  const auto sizes = gen_group_sizes(n, q, rng);
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < q; ++j) ids.insert(ids.end(), static_cast<std::size_t>(sizes[static_cast<std::size_t>(j)]), j);
  std::shuffle(ids.begin(), ids.end(), rng.engine());
  return ids;
}

/// K x K polynomial covariance: given diagonal, `intercept_cov` between the
/// intercept and each of the slope and quadratic terms, projected to the
/// nearest PSD matrix when needed.
inline Matrix longitudinal_phi(const std::vector<double>& diagonal, double intercept_cov) {
  const auto k = static_cast<Index>(diagonal.size());
  Matrix phi = Matrix::Zero(k, k);
  for (Index i = 0; i < k; ++i) phi(i, i) = diagonal[static_cast<std::size_t>(i)];
  for (Index j = 1; j < std::min<Index>(k, 3); ++j) phi(0, j) = phi(j, 0) = intercept_cov;
  if (re::min_eigenvalue(phi) < 0.0) phi = re::project_psd(phi);
  return phi;
}

namespace detail {

inline void assemble(SimDataset& ds, const SimConfig& cfg, Rng& rng, FixedPart&& fp) {
  ds.latent = std::move(fp.latent);
  ds.loadings = std::move(fp.loadings);
  ds.fixed = std::move(fp.fixed);
  ds.means.resize(cfg.p);
  for (Index j = 0; j < cfg.p; ++j) ds.means(j) = rng.uniform(cfg.mean_low, cfg.mean_high);
  ds.noise = std::sqrt(cfg.noise_var) * rng.normal_matrix(cfg.n, cfg.p);
  ds.x = ds.fixed + ds.random_effects + ds.noise;
  ds.x.rowwise() += ds.means;
}

inline void random_split(SimDataset& ds, double frac, Rng& rng) {
  const auto n = static_cast<std::size_t>(ds.x.rows());
  auto perm = rng.permutation(n);
  const auto n_test = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  ds.test_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  ds.train_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(ds.test_rows.begin(), ds.test_rows.end());
  std::sort(ds.train_rows.begin(), ds.train_rows.end());
}

/// Test = latest rows by time.
inline void future_split(SimDataset& ds, double frac) {
  const auto n = ds.scenario.times.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ds.scenario.times[a] < ds.scenario.times[b]; });
  const auto n_test = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  ds.train_rows.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  ds.test_rows.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(ds.test_rows.begin(), ds.test_rows.end());
  std::sort(ds.train_rows.begin(), ds.train_rows.end());
}

/// Whole locations go to test, in random order, until the test rows reach
/// the target fraction.
inline void unknown_split(SimDataset& ds, double frac, Rng& rng) {
  const auto& loc = ds.scenario.location_ids;
  const auto q = static_cast<std::size_t>(ds.scenario.num_locations());
  std::vector<long> count(q, 0);
  for (int l : loc) ++count[static_cast<std::size_t>(l)];
  const auto target = static_cast<long>(std::llround(frac * static_cast<double>(loc.size())));
  std::vector<char> is_test(q, 0);
  long covered = 0;
  for (auto j : rng.permutation(q)) {
    if (covered >= target) break;
    is_test[j] = 1;
    covered += count[j];
  }
  ds.train_rows.clear();
  ds.test_rows.clear();
  for (std::size_t i = 0; i < loc.size(); ++i) (is_test[static_cast<std::size_t>(loc[i])] ? ds.test_rows : ds.train_rows).push_back(i);
}

inline void apply_split(SimDataset& ds, const SimConfig& cfg, Rng& rng) {
  switch (cfg.split) {
    case SplitMode::Random: random_split(ds, cfg.test_fraction, rng); break;
    case SplitMode::Future: future_split(ds, cfg.test_fraction); break;
    case SplitMode::Unknown: unknown_split(ds, cfg.test_fraction, rng); break;
  }
}

inline void add_categorical(SimDataset& ds, const SimConfig& cfg, Rng& rng) {
  for (std::size_t k = 0; k < cfg.cardinalities.size(); ++k) {
    const int q = cfg.cardinalities[k];
    auto ids = gen_level_ids(static_cast<long>(cfg.n), q, rng);
    const Vector var = gen_variance_components(cfg.sigma2_b[k], cfg.p, rng);
    Matrix b = re::sample_matrix_normal(rng, q, var);
    for (Index i = 0; i < cfg.n; ++i) ds.random_effects.row(i) += b.row(ids[static_cast<std::size_t>(i)]);
    ds.scenario.level_ids.push_back(std::move(ids));
    ds.scenario.cardinalities.push_back(q);
    ds.b_true.push_back(std::move(b));
  }
}

inline void add_spatial(SimDataset& ds, const SimConfig& cfg, Rng& rng) {
  const int q = cfg.num_locations;
  Matrix locs(q, 2);
  for (Index j = 0; j < q; ++j) {
    locs(j, 0) = rng.uniform(-1.0, 1.0);
    locs(j, 1) = rng.uniform(-1.0, 1.0);
  }
  auto ids = gen_level_ids(static_cast<long>(cfg.n), q, rng);
  const Vector var = gen_variance_components(cfg.sigma2_spatial, cfg.p, rng);
  const Matrix kernel = re::rbf_kernel(locs, cfg.length_scale_sq);
  Matrix factor;
  try {
    factor = re::jitter_cholesky(kernel);
  } catch (const SingularityError&) {
    factor = re::psd_factor(kernel);
  }
  Matrix b = re::sample_matrix_normal(rng, factor, var);
  for (Index i = 0; i < cfg.n; ++i) ds.random_effects.row(i) += b.row(ids[static_cast<std::size_t>(i)]);
  ds.scenario.location_ids = std::move(ids);
  ds.scenario.locations = std::move(locs);
  ds.b_true.insert(ds.b_true.begin(), std::move(b));
}

}  // namespace detail

/// K categorical features with B_k ~ MN(0, I, D_k).
inline SimDataset gen_categorical(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  SimDataset ds;
  ds.scenario.kind = re::ScenarioKind::Categorical;
  auto fp = gen_fixed_part(cfg.n, cfg.p, cfg.d, rng);
  ds.random_effects = Matrix::Zero(cfg.n, cfg.p);
  detail::add_categorical(ds, cfg, rng);
  detail::assemble(ds, cfg, rng, std::move(fp));
  detail::apply_split(ds, cfg, rng);
  return ds;
}

/// Random polynomial-in-time effects per subject with
/// B ~ MN(0, Phi (x) I_q, I_p); times U(0, 1) per measurement.
inline SimDataset gen_longitudinal(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  const Matrix phi = longitudinal_phi(cfg.phi_diagonal, cfg.phi_intercept_cov);
  SimDataset ds;
  ds.scenario.kind = re::ScenarioKind::Longitudinal;
  ds.scenario.poly_terms = cfg.poly_terms;
  ds.scenario.num_subjects = cfg.num_subjects;
  auto fp = gen_fixed_part(cfg.n, cfg.p, cfg.d, rng);
  ds.scenario.subject_ids = gen_level_ids(static_cast<long>(cfg.n), cfg.num_subjects, rng);
  ds.scenario.times.resize(static_cast<std::size_t>(cfg.n));
  for (auto& t : ds.scenario.times) t = rng.uniform(0.0, 1.0);

  // Rows (b_0j[f], ..., b_{K-1}j[f]) ~ N(0, Phi) for every subject j and feature f.
  const Matrix factor = re::psd_factor(phi);
  const int q = cfg.num_subjects;
  const int k_terms = cfg.poly_terms;
  for (int k = 0; k < k_terms; ++k) ds.b_true.push_back(Matrix::Zero(q, cfg.p));
  for (int j = 0; j < q; ++j) {
    for (Index f = 0; f < cfg.p; ++f) {
      Vector g(k_terms);
      for (int k = 0; k < k_terms; ++k) g(k) = rng.normal();
      const Vector b = factor * g;
      for (int k = 0; k < k_terms; ++k) ds.b_true[static_cast<std::size_t>(k)](j, f) = b(k);
    }
  }
  ds.random_effects = Matrix::Zero(cfg.n, cfg.p);
  for (Index i = 0; i < cfg.n; ++i) {
    const int j = ds.scenario.subject_ids[static_cast<std::size_t>(i)];
    double tk = 1.0;
    for (int k = 0; k < k_terms; ++k) {
      ds.random_effects.row(i) += tk * ds.b_true[static_cast<std::size_t>(k)].row(j);
      tk *= ds.scenario.times[static_cast<std::size_t>(i)];
    }
  }
  detail::assemble(ds, cfg, rng, std::move(fp));
  detail::apply_split(ds, cfg, rng);
  return ds;
}

/// q locations on U[-1, 1]^2 with B ~ MN(0, K_rbf, D).
inline SimDataset gen_spatial(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  SimDataset ds;
  ds.scenario.kind = re::ScenarioKind::Spatial;
  auto fp = gen_fixed_part(cfg.n, cfg.p, cfg.d, rng);
  ds.random_effects = Matrix::Zero(cfg.n, cfg.p);
  detail::add_spatial(ds, cfg, rng);
  detail::assemble(ds, cfg, rng, std::move(fp));
  detail::apply_split(ds, cfg, rng);
  return ds;
}

/// Spatial term plus independent categorical features.
inline SimDataset gen_spatial_categorical(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  SimDataset ds;
  ds.scenario.kind = re::ScenarioKind::SpatialCategorical;
  auto fp = gen_fixed_part(cfg.n, cfg.p, cfg.d, rng);
  ds.random_effects = Matrix::Zero(cfg.n, cfg.p);
  detail::add_spatial(ds, cfg, rng);
  detail::add_categorical(ds, cfg, rng);
  detail::assemble(ds, cfg, rng, std::move(fp));
  detail::apply_split(ds, cfg, rng);
  return ds;
}

inline SimDataset generate(const SimConfig& cfg, Rng& rng) {
  switch (cfg.scenario) {
    case re::ScenarioKind::Categorical: return gen_categorical(cfg, rng);
    case re::ScenarioKind::Longitudinal: return gen_longitudinal(cfg, rng);
    case re::ScenarioKind::Spatial: return gen_spatial(cfg, rng);
    case re::ScenarioKind::SpatialCategorical: return gen_spatial_categorical(cfg, rng);
  }
  throw std::invalid_argument("generate: unknown scenario");
}

/// Noise-free reconstruction F + means + Z B for the given rows.
inline Matrix oracle_reconstruction(const SimDataset& ds, const std::vector<std::size_t>& rows) {
  Matrix out = gather_rows(ds.fixed, rows) + gather_rows(ds.random_effects, rows);
  out.rowwise() += ds.means;
  return out;
}

}  // namespace lmmvae::sim
