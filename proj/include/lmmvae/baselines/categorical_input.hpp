#pragma once

#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/re/design.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace lmmvae::baselines {

/// Dense one-hot expansion above this many total columns is refused.
inline constexpr Index kMaxOneHotColumns = 5000;

/// Categorical side information for the baselines: one id vector per
/// grouping factor, with its cardinality. Ids may be re::kUnseenLevel.
struct CategoricalInput {
  std::vector<std::vector<int>> ids;
  std::vector<int> cardinalities;

  static CategoricalInput from_scenario(const re::REScenario& sc) {
    CategoricalInput c;
    for (auto& [ids, q] : re::grouping_factors(sc)) {
      c.ids.push_back(std::move(ids));
      c.cardinalities.push_back(q);
    }
    return c;
  }

  bool empty() const { return ids.empty(); }
  Index total_levels() const {
    Index q = 0;
    for (int c : cardinalities) q += c;
    return q;
  }

  template <typename IndexRange>
  CategoricalInput subset(const IndexRange& idx) const {
    CategoricalInput out;
    out.cardinalities = cardinalities;
    for (const auto& v : ids) {
      std::vector<int> r;
      for (auto i : idx) r.push_back(v[static_cast<std::size_t>(i)]);
      out.ids.push_back(std::move(r));
    }
    return out;
  }
};

/// n x sum(q_k) one-hot block; unseen ids give all-zero blocks.
inline Matrix one_hot(const CategoricalInput& c, Index rows) {
  const Index q = c.total_levels();
  if (q > kMaxOneHotColumns) {
    throw std::invalid_argument("one-hot encoding would need " + std::to_string(q) + " columns (limit " +
                                std::to_string(kMaxOneHotColumns) + ")");
  }
  Matrix out = Matrix::Zero(rows, q);
  Index off = 0;
  for (std::size_t k = 0; k < c.ids.size(); ++k) {
    if (static_cast<Index>(c.ids[k].size()) != rows) throw ShapeError("one_hot: id vector length differs from rows");
    for (Index i = 0; i < rows; ++i) {
      const int id = c.ids[k][static_cast<std::size_t>(i)];
      if (id == re::kUnseenLevel) continue;
      if (id < 0 || id >= c.cardinalities[k]) throw std::out_of_range("one_hot: id out of range");
      out(i, off + id) = 1.0;
    }
    off += c.cardinalities[k];
  }
  return out;
}

}  // namespace lmmvae::baselines
