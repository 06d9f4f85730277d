#pragma once

#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/re/design.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lmmvae::io {

inline constexpr const char* kTimeColumn = "__t";
inline constexpr const char* kLocXColumn = "__loc_x";
inline constexpr const char* kLocYColumn = "__loc_y";
inline std::string id_column(std::size_t k) { return "__id_" + std::to_string(k); }

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Header plus an all-numeric body.
struct NumericTable {
  std::vector<std::string> header;
  Matrix values;

  std::optional<Index> find(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<Index>(it - header.begin());
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Parse a comma-separated file with a header row. Every body cell must be
/// a finite number; errors name the 1-based data row and the column.
inline NumericTable read_numeric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw CsvError("'" + path + "' is empty");
  NumericTable t;
  t.header = detail::split(line);
  const auto cols = t.header.size();
  std::vector<double> flat;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line);
    ++rows;
    if (cells.size() != cols)
      throw CsvError("row " + std::to_string(rows) + ": expected " + std::to_string(cols) + " cells, found " +
                     std::to_string(cells.size()));
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string& s = cells[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw CsvError("row " + std::to_string(rows) + ", column '" + t.header[c] + "': non-numeric value '" + s + "'");
      if (!std::isfinite(v))
        throw CsvError("row " + std::to_string(rows) + ", column '" + t.header[c] + "': value '" + s + "' is not finite");
      flat.push_back(v);
    }
  }
  if (rows == 0) throw CsvError("'" + path + "' has no data rows");
  t.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), static_cast<Index>(rows), static_cast<Index>(cols));
  return t;
}

/// Which reserved columns to expect.
struct ScenarioDeclaration {
  re::ScenarioKind kind = re::ScenarioKind::Categorical;
  int num_categorical = 1;  // __id_0 .. __id_{k-1}
  int poly_terms = 3;       // longitudinal K; subject id in __id_0
};

/// Raw id value -> dense level, per grouping column.
struct Vocabulary {
  std::vector<std::vector<double>> categorical;  // sorted distinct raw ids per feature
  std::vector<double> subjects;                  // sorted distinct subject ids
  Matrix locations;                              // q x 2, in first-appearance order

  int lookup(const std::vector<double>& sorted, double v) const {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), v);
    if (it == sorted.end() || *it != v) return re::kUnseenLevel;
    return static_cast<int>(it - sorted.begin());
  }

  int lookup_location(double x, double y) const {
    for (Index j = 0; j < locations.rows(); ++j)
      if (locations(j, 0) == x && locations(j, 1) == y) return static_cast<int>(j);
    return re::kUnseenLevel;
  }
};

struct Standardization {
  RowVector mean;
  RowVector scale;
  bool empty() const { return mean.size() == 0; }
  Matrix apply(const Matrix& x) const {
    if (empty()) return x;
    return (x.rowwise() - mean).array().rowwise() / scale.array();
  }
  Matrix invert(const Matrix& z) const {
    if (empty()) return z;
    return (z.array().rowwise() * scale.array()).matrix().rowwise() + mean;
  }
};

inline Standardization fit_standardization(const Matrix& x) {
  Standardization s;
  s.mean = x.colwise().mean();
  s.scale = ((x.rowwise() - s.mean).array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
  for (Index j = 0; j < s.scale.size(); ++j)
    if (!(s.scale(j) > 0.0)) s.scale(j) = 1.0;
  return s;
}

struct CsvDataset {
  Matrix x;  // n x p features (standardized when requested)
  re::REScenario scenario;
  std::vector<std::string> feature_names;
  Vocabulary vocabulary;
  Standardization standardization;
};

namespace detail {

struct ColumnMap {
  std::vector<Index> features;
  std::vector<Index> ids;
  std::optional<Index> time, loc_x, loc_y;
};

inline ColumnMap map_columns(const NumericTable& t, const ScenarioDeclaration& decl, const std::string& path) {
  ColumnMap m;
  auto need = [&](const std::string& name) {
    auto c = t.find(name);
    if (!c) throw CsvError("'" + path + "': missing column '" + name + "'");
    return *c;
  };
  const bool spatial = decl.kind == re::ScenarioKind::Spatial || decl.kind == re::ScenarioKind::SpatialCategorical;
  const bool categorical = decl.kind == re::ScenarioKind::Categorical || decl.kind == re::ScenarioKind::SpatialCategorical;
  if (categorical) {
    if (decl.num_categorical < 1) throw std::invalid_argument("declaration: need at least one categorical column");
    for (int k = 0; k < decl.num_categorical; ++k) m.ids.push_back(need(id_column(static_cast<std::size_t>(k))));
  }
  if (decl.kind == re::ScenarioKind::Longitudinal) {
    m.ids.push_back(need(id_column(0)));
    m.time = need(kTimeColumn);
  }
  if (spatial) {
    m.loc_x = need(kLocXColumn);
    m.loc_y = need(kLocYColumn);
  }
  for (Index c = 0; c < static_cast<Index>(t.header.size()); ++c)
    if (t.header[static_cast<std::size_t>(c)].rfind("__", 0) != 0) m.features.push_back(c);
  if (m.features.empty()) throw CsvError("'" + path + "': no feature columns");
  return m;
}

inline void check_integer_ids(const NumericTable& t, Index col, const std::string& path) {
  for (Index i = 0; i < t.values.rows(); ++i) {
    const double v = t.values(i, col);
    if (v != std::floor(v))
      throw CsvError("'" + path + "' row " + std::to_string(i + 1) + ", column '" + t.header[static_cast<std::size_t>(col)] +
                     "': id must be an integer");
  }
}

inline void add_distinct(std::vector<double>& sorted, const Matrix& values, Index col) {
  for (Index i = 0; i < values.rows(); ++i) sorted.push_back(values(i, col));
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
}

}  // namespace detail

/// Build the level vocabulary over one or more tables (e.g. train and test).
inline Vocabulary build_vocabulary(const std::vector<const NumericTable*>& tables, const ScenarioDeclaration& decl) {
  Vocabulary v;
  const bool categorical = decl.kind == re::ScenarioKind::Categorical || decl.kind == re::ScenarioKind::SpatialCategorical;
  if (categorical) v.categorical.resize(static_cast<std::size_t>(decl.num_categorical));
  std::vector<std::pair<double, double>> locs;
  std::map<std::pair<double, double>, int> seen;
  for (const auto* t : tables) {
    const auto cols = detail::map_columns(*t, decl, "table");
    if (categorical)
      for (std::size_t k = 0; k < cols.ids.size(); ++k) detail::add_distinct(v.categorical[k], t->values, cols.ids[k]);
    if (decl.kind == re::ScenarioKind::Longitudinal) detail::add_distinct(v.subjects, t->values, cols.ids[0]);
    if (cols.loc_x) {
      for (Index i = 0; i < t->values.rows(); ++i) {
        const std::pair<double, double> key{t->values(i, *cols.loc_x), t->values(i, *cols.loc_y)};
        if (seen.emplace(key, static_cast<int>(locs.size())).second) locs.push_back(key);
      }
    }
  }
  v.locations.resize(static_cast<Index>(locs.size()), 2);
  for (std::size_t j = 0; j < locs.size(); ++j) {
    v.locations(static_cast<Index>(j), 0) = locs[j].first;
    v.locations(static_cast<Index>(j), 1) = locs[j].second;
  }
  return v;
}

struct LoadOptions {
  bool standardize = true;
  const Vocabulary* vocabulary = nullptr;            // reuse (ids outside it become unseen)
  const Standardization* standardization = nullptr;  // reuse training statistics
};

/// Convert a parsed table into features plus grouping metadata.
inline CsvDataset dataset_from_table(const NumericTable& t, const ScenarioDeclaration& decl, const LoadOptions& opt = {},
                                     const std::string& path = "table") {
  const auto cols = detail::map_columns(t, decl, path);
  for (auto c : cols.ids) detail::check_integer_ids(t, c, path);
  CsvDataset ds;
  ds.vocabulary = opt.vocabulary ? *opt.vocabulary : build_vocabulary({&t}, decl);
  const Index n = t.values.rows();
  ds.x.resize(n, static_cast<Index>(cols.features.size()));
  for (std::size_t j = 0; j < cols.features.size(); ++j) {
    ds.x.col(static_cast<Index>(j)) = t.values.col(cols.features[j]);
    ds.feature_names.push_back(t.header[static_cast<std::size_t>(cols.features[j])]);
  }
  if (opt.standardization) {
    if (opt.standardization->mean.size() != ds.x.cols()) throw ShapeError("standardization: feature count differs");
    ds.standardization = *opt.standardization;
  } else if (opt.standardize) {
    ds.standardization = fit_standardization(ds.x);
  }
  ds.x = ds.standardization.apply(ds.x);

  auto& sc = ds.scenario;
  sc.kind = decl.kind;
  const auto& vocab = ds.vocabulary;
  if (decl.kind == re::ScenarioKind::Categorical || decl.kind == re::ScenarioKind::SpatialCategorical) {
    if (vocab.categorical.size() != cols.ids.size()) throw std::invalid_argument("vocabulary: categorical count differs");
    for (std::size_t k = 0; k < cols.ids.size(); ++k) {
      std::vector<int> ids(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = vocab.lookup(vocab.categorical[k], t.values(i, cols.ids[k]));
      sc.level_ids.push_back(std::move(ids));
      sc.cardinalities.push_back(static_cast<int>(vocab.categorical[k].size()));
    }
  }
  if (decl.kind == re::ScenarioKind::Longitudinal) {
    sc.poly_terms = decl.poly_terms;
    sc.num_subjects = static_cast<int>(vocab.subjects.size());
    sc.subject_ids.resize(static_cast<std::size_t>(n));
    sc.times.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      sc.subject_ids[static_cast<std::size_t>(i)] = vocab.lookup(vocab.subjects, t.values(i, cols.ids[0]));
      sc.times[static_cast<std::size_t>(i)] = t.values(i, *cols.time);
    }
  }
  if (cols.loc_x) {
    sc.locations = vocab.locations;
    sc.location_ids.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
      sc.location_ids[static_cast<std::size_t>(i)] = vocab.lookup_location(t.values(i, *cols.loc_x), t.values(i, *cols.loc_y));
  }
  sc.validate();
  return ds;
}

/// Read a dataset CSV: feature columns plus the reserved grouping columns
/// (`__id_k`, `__t`, `__loc_x`, `__loc_y`) required by the declaration.
inline CsvDataset load_csv_dataset(const std::string& path, const ScenarioDeclaration& decl, const LoadOptions& opt = {}) {
  return dataset_from_table(read_numeric_csv(path), decl, opt, path);
}

inline ScenarioDeclaration declaration_for(const re::REScenario& sc) {
  ScenarioDeclaration d;
  d.kind = sc.kind;
  d.num_categorical = static_cast<int>(sc.level_ids.size());
  d.poly_terms = sc.poly_terms;
  return d;
}

/// Write features and grouping columns. Unseen ids are not representable.
inline void write_csv_dataset(const std::string& path, const Matrix& x, const re::REScenario& sc,
                              const std::vector<std::string>& feature_names = {}) {
  if (static_cast<Index>(sc.rows()) != x.rows()) throw ShapeError("write_csv_dataset: scenario rows differ from data");
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write '" + path + "'");
  out << std::setprecision(17);
  for (Index j = 0; j < x.cols(); ++j) {
    if (j) out << ',';
    out << (feature_names.empty() ? "x" + std::to_string(j) : feature_names[static_cast<std::size_t>(j)]);
  }
  const bool longitudinal = sc.kind == re::ScenarioKind::Longitudinal;
  if (sc.has_categorical())
    for (std::size_t k = 0; k < sc.level_ids.size(); ++k) out << ',' << id_column(k);
  if (longitudinal) out << ',' << id_column(0) << ',' << kTimeColumn;
  if (sc.has_spatial()) out << ',' << kLocXColumn << ',' << kLocYColumn;
  out << '\n';
  for (Index i = 0; i < x.rows(); ++i) {
    const auto r = static_cast<std::size_t>(i);
    for (Index j = 0; j < x.cols(); ++j) {
      if (j) out << ',';
      out << x(i, j);
    }
    if (sc.has_categorical())
      for (const auto& ids : sc.level_ids) {
        if (ids[r] == re::kUnseenLevel) throw CsvError("write_csv_dataset: unseen level at row " + std::to_string(i + 1));
        out << ',' << ids[r];
      }
    if (longitudinal) out << ',' << sc.subject_ids[r] << ',' << sc.times[r];
    if (sc.has_spatial()) {
      const int l = sc.location_ids[r];
      if (l == re::kUnseenLevel) throw CsvError("write_csv_dataset: unseen location at row " + std::to_string(i + 1));
      out << ',' << sc.locations(l, 0) << ',' << sc.locations(l, 1);
    }
    out << '\n';
  }
  if (!out) throw CsvError("write failed for '" + path + "'");
}

}  // namespace lmmvae::io
