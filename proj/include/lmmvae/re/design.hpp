#pragma once

#include "lmmvae/nn/matrix.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace lmmvae::re {

/// Level id marking an observation whose group was never seen in training.
/// It contributes no random effect.
inline constexpr int kUnseenLevel = -1;

enum class ScenarioKind { Categorical, Longitudinal, Spatial, SpatialCategorical };

inline std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Categorical: return "categorical";
    case ScenarioKind::Longitudinal: return "longitudinal";
    case ScenarioKind::Spatial: return "spatial";
    case ScenarioKind::SpatialCategorical: return "spatial-categorical";
  }
  return "unknown";
}

inline ScenarioKind scenario_from_string(const std::string& s) {
  if (s == "categorical") return ScenarioKind::Categorical;
  if (s == "longitudinal") return ScenarioKind::Longitudinal;
  if (s == "spatial") return ScenarioKind::Spatial;
  if (s == "spatial-categorical") return ScenarioKind::SpatialCategorical;
  throw std::invalid_argument("unknown scenario '" + s + "'");
}

/// Per-row grouping metadata for one dataset.
///
/// Categorical: one id vector per categorical feature plus its cardinality.
/// Longitudinal: subject ids, measurement times and the polynomial order K.
/// Spatial: location ids into the q x 2 `locations` table.
/// SpatialCategorical: the spatial fields plus the categorical ones.
struct REScenario {
  ScenarioKind kind = ScenarioKind::Categorical;

  std::vector<std::vector<int>> level_ids;
  std::vector<int> cardinalities;

  int poly_terms = 0;
  int num_subjects = 0;
  std::vector<int> subject_ids;
  std::vector<double> times;

  std::vector<int> location_ids;
  Matrix locations;  // q x 2

  bool has_categorical() const {
    return kind == ScenarioKind::Categorical || kind == ScenarioKind::SpatialCategorical;
  }
  bool has_spatial() const { return kind == ScenarioKind::Spatial || kind == ScenarioKind::SpatialCategorical; }
  int num_locations() const { return static_cast<int>(locations.rows()); }

  std::size_t rows() const {
    if (has_spatial()) return location_ids.size();
    if (kind == ScenarioKind::Longitudinal) return subject_ids.size();
    return level_ids.empty() ? 0 : level_ids.front().size();
  }

  void validate() const {
    const std::size_t n = rows();
    auto check_ids = [&](const std::vector<int>& ids, int q, const std::string& what) {
      if (q < 1) throw std::invalid_argument(what + ": cardinality must be >= 1");
      if (ids.size() != n) throw ShapeError(what + ": length " + std::to_string(ids.size()) + " != " + std::to_string(n));
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] != kUnseenLevel && (ids[i] < 0 || ids[i] >= q)) {
          throw std::out_of_range(what + ": id " + std::to_string(ids[i]) + " at row " + std::to_string(i) +
                                  " outside [0, " + std::to_string(q) + ")");
        }
      }
    };
    if (has_categorical()) {
      if (level_ids.size() != cardinalities.size() || level_ids.empty())
        throw std::invalid_argument("REScenario: categorical ids and cardinalities disagree");
      for (std::size_t k = 0; k < level_ids.size(); ++k)
        check_ids(level_ids[k], cardinalities[k], "categorical feature " + std::to_string(k));
    }
    if (kind == ScenarioKind::Longitudinal) {
      if (poly_terms < 1) throw std::invalid_argument("REScenario: longitudinal K must be >= 1");
      check_ids(subject_ids, num_subjects, "subject ids");
      if (times.size() != n) throw ShapeError("REScenario: times length mismatch");
      for (double t : times)
        if (!std::isfinite(t)) throw std::invalid_argument("REScenario: non-finite time");
    }
    if (has_spatial()) {
      if (locations.cols() != 2) throw ShapeError("REScenario: locations must be q x 2");
      check_ids(location_ids, num_locations(), "location ids");
    }
  }

  /// Metadata restricted to `rows`, in that order. Level tables are kept.
  template <typename IndexRange>
  REScenario subset(const IndexRange& idx) const {
    REScenario out;
    out.kind = kind;
    out.cardinalities = cardinalities;
    out.poly_terms = poly_terms;
    out.num_subjects = num_subjects;
    out.locations = locations;
    auto pick = [&](const auto& v) {
      std::remove_cvref_t<decltype(v)> r;
      if (v.empty()) return r;
      r.reserve(std::size(idx));
      for (auto i : idx) r.push_back(v[static_cast<std::size_t>(i)]);
      return r;
    };
    for (const auto& ids : level_ids) out.level_ids.push_back(pick(ids));
    out.subject_ids = pick(subject_ids);
    out.times = pick(times);
    out.location_ids = pick(location_ids);
    return out;
  }
};

/// Sparse n x Q design matrix stored by rows.
struct SparseIndicator {
  Index n = 0;
  Index num_cols = 0;
  std::vector<std::vector<std::pair<int, double>>> entries;

  Matrix to_dense() const {
    Matrix z = Matrix::Zero(n, num_cols);
    for (Index i = 0; i < n; ++i)
      for (const auto& [c, v] : entries[static_cast<std::size_t>(i)]) z(i, c) += v;
    return z;
  }

  /// Z * v for a length-Q vector.
  Vector multiply(const Vector& v) const {
    if (v.size() != num_cols) throw ShapeError("SparseIndicator::multiply: vector length mismatch");
    Vector out = Vector::Zero(n);
    for (Index i = 0; i < n; ++i)
      for (const auto& [c, val] : entries[static_cast<std::size_t>(i)]) out(i) += val * v(c);
    return out;
  }

  /// Z * M for a Q x p matrix.
  Matrix multiply(const Matrix& m) const {
    if (m.rows() != num_cols) throw ShapeError("SparseIndicator::multiply: matrix rows mismatch");
    Matrix out = Matrix::Zero(n, m.cols());
    for (Index i = 0; i < n; ++i)
      for (const auto& [c, val] : entries[static_cast<std::size_t>(i)]) out.row(i) += val * m.row(c);
    return out;
  }
};

/// Horizontal stack of one-hot blocks, one per categorical feature.
inline SparseIndicator build_categorical_Z(const std::vector<std::vector<int>>& level_ids,
                                           const std::vector<int>& cardinalities) {
  if (level_ids.size() != cardinalities.size() || level_ids.empty())
    throw std::invalid_argument("build_categorical_Z: need one cardinality per feature");
  SparseIndicator z;
  z.n = static_cast<Index>(level_ids.front().size());
  z.entries.resize(static_cast<std::size_t>(z.n));
  int offset = 0;
  for (std::size_t k = 0; k < level_ids.size(); ++k) {
    if (cardinalities[k] < 1) throw std::invalid_argument("build_categorical_Z: cardinality must be >= 1");
    if (static_cast<Index>(level_ids[k].size()) != z.n) throw ShapeError("build_categorical_Z: ragged id vectors");
    for (Index i = 0; i < z.n; ++i) {
      const int id = level_ids[k][static_cast<std::size_t>(i)];
      if (id < 0 || id >= cardinalities[k]) {
        throw std::out_of_range("build_categorical_Z: feature " + std::to_string(k) + " row " +
                                std::to_string(i) + " id " + std::to_string(id) + " out of range");
      }
      z.entries[static_cast<std::size_t>(i)].emplace_back(offset + id, 1.0);
    }
    offset += cardinalities[k];
  }
  z.num_cols = offset;
  return z;
}

/// [Z_0 | Z_1 | ... | Z_{K-1}] with Z_k = diag(t^k) Z_0. Zero-valued
/// entries (t = 0, k >= 1) are not stored.
inline SparseIndicator build_longitudinal_Z(const std::vector<int>& subject_ids, const std::vector<double>& times,
                                            int num_poly_terms, int num_subjects) {
  if (num_poly_terms < 1) throw std::invalid_argument("build_longitudinal_Z: K must be >= 1");
  if (num_subjects < 1) throw std::invalid_argument("build_longitudinal_Z: need at least one subject");
  if (subject_ids.size() != times.size()) throw ShapeError("build_longitudinal_Z: ids/times length mismatch");
  SparseIndicator z;
  z.n = static_cast<Index>(subject_ids.size());
  z.num_cols = static_cast<Index>(num_poly_terms) * num_subjects;
  z.entries.resize(subject_ids.size());
  for (std::size_t i = 0; i < subject_ids.size(); ++i) {
    const int j = subject_ids[i];
    if (j < 0 || j >= num_subjects)
      throw std::out_of_range("build_longitudinal_Z: subject id " + std::to_string(j) + " at row " +
                              std::to_string(i) + " out of range");
    double tk = 1.0;
    for (int k = 0; k < num_poly_terms; ++k) {
      if (tk != 0.0) z.entries[i].emplace_back(k * num_subjects + j, tk);
      tk *= times[i];
    }
  }
  return z;
}

/// One random-effect term: Z_k has a single entry `weight[i]` at column
/// `level[i]` of row i (none when the level is unseen).
struct RETerm {
  std::vector<int> level;
  std::vector<double> weight;
  int num_levels = 0;
  bool spatial = false;
  Matrix locations;  // num_levels x 2, spatial terms only
};

/// Model-facing view of Z as a list of single-entry-per-row terms whose
/// column blocks are stacked horizontally.
struct REDesign {
  std::vector<RETerm> terms;

  std::size_t num_terms() const { return terms.size(); }
  std::size_t rows() const { return terms.empty() ? 0 : terms.front().level.size(); }

  Index total_columns() const {
    Index q = 0;
    for (const auto& t : terms) q += t.num_levels;
    return q;
  }

  std::vector<Index> offsets() const {
    std::vector<Index> off;
    Index q = 0;
    for (const auto& t : terms) {
      off.push_back(q);
      q += t.num_levels;
    }
    return off;
  }

  SparseIndicator to_sparse() const {
    SparseIndicator z;
    z.n = static_cast<Index>(rows());
    z.num_cols = total_columns();
    z.entries.resize(rows());
    const auto off = offsets();
    for (std::size_t k = 0; k < terms.size(); ++k) {
      for (std::size_t i = 0; i < rows(); ++i) {
        const int lv = terms[k].level[i];
        const double w = terms[k].weight[i];
        if (lv != kUnseenLevel && w != 0.0) z.entries[i].emplace_back(static_cast<int>(off[k]) + lv, w);
      }
    }
    return z;
  }

  template <typename IndexRange>
  REDesign subset(const IndexRange& idx) const {
    REDesign out;
    for (const auto& t : terms) {
      RETerm s;
      s.num_levels = t.num_levels;
      s.spatial = t.spatial;
      s.locations = t.locations;
      for (auto i : idx) {
        s.level.push_back(t.level[static_cast<std::size_t>(i)]);
        s.weight.push_back(t.weight[static_cast<std::size_t>(i)]);
      }
      out.terms.push_back(std::move(s));
    }
    return out;
  }
};

/// Term list for a scenario. Spatial term first, then categorical features;
/// longitudinal gives K polynomial terms sharing the subject id.
inline REDesign make_design(const REScenario& sc) {
  sc.validate();
  REDesign d;
  const std::size_t n = sc.rows();
  if (sc.has_spatial()) {
    RETerm t;
    t.level = sc.location_ids;
    t.weight.assign(n, 1.0);
    t.num_levels = sc.num_locations();
    t.spatial = true;
    t.locations = sc.locations;
    d.terms.push_back(std::move(t));
  }
  if (sc.has_categorical()) {
    for (std::size_t k = 0; k < sc.level_ids.size(); ++k) {
      RETerm t;
      t.level = sc.level_ids[k];
      t.weight.assign(n, 1.0);
      t.num_levels = sc.cardinalities[k];
      d.terms.push_back(std::move(t));
    }
  }
  if (sc.kind == ScenarioKind::Longitudinal) {
    for (int k = 0; k < sc.poly_terms; ++k) {
      RETerm t;
      t.level = sc.subject_ids;
      t.num_levels = sc.num_subjects;
      t.weight.resize(n);
      for (std::size_t i = 0; i < n; ++i) t.weight[i] = std::pow(sc.times[i], k);
      d.terms.push_back(std::move(t));
    }
  }
  return d;
}

/// Grouping factors as (ids, cardinality) pairs: the variables a
/// baseline would one-hot encode or embed.
inline std::vector<std::pair<std::vector<int>, int>> grouping_factors(const REScenario& sc) {
  std::vector<std::pair<std::vector<int>, int>> out;
  if (sc.has_spatial()) out.emplace_back(sc.location_ids, sc.num_locations());
  if (sc.has_categorical())
    for (std::size_t k = 0; k < sc.level_ids.size(); ++k) out.emplace_back(sc.level_ids[k], sc.cardinalities[k]);
  if (sc.kind == ScenarioKind::Longitudinal) out.emplace_back(sc.subject_ids, sc.num_subjects);
  return out;
}

}  // namespace lmmvae::re
