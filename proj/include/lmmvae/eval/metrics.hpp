#pragma once

#include "lmmvae/nn/matrix.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmmvae::eval {

/// Mean of (x - x_hat)^2 over every entry.
inline double recon_mse(const Matrix& x, const Matrix& x_hat) {
  require_same_shape(x, x_hat, "recon_mse");
  if (x.size() == 0) throw ShapeError("recon_mse: empty input");
  return (x - x_hat).squaredNorm() / static_cast<double>(x.size());
}

struct MetricRow {
  std::string method;
  std::string scenario;
  int d = 1;
  std::string params;
  std::uint64_t seed = 0;
  double recon_mse = 0.0;
  double nll = 0.0;
  double runtime_s = 0.0;
  std::string error;  // non-empty when the fit failed
};

struct DownstreamResult {
  std::string method;
  int d = 1;
  int k = 100;
  double micro_auc = 0.0;
  std::vector<double> per_fold;
};

/// Rank-based AUC (Mann-Whitney U with average ranks for ties).
inline double auc_from_scores(const std::vector<double>& scores, const std::vector<char>& positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t r = i; r < j; ++r)
      if (positive[order[r]]) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc: need both positive and negative examples");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

/// Class-frequency scores among the k nearest training rows (Euclidean;
/// equal distances resolved by lower training row index). Returns
/// n_te x num_classes.
inline Matrix knn_scores(const Matrix& u_train, const std::vector<int>& y_train, const Matrix& u_test, int num_classes,
                         int k) {
  if (u_train.cols() != u_test.cols()) throw ShapeError("knn: latent dims differ");
  if (static_cast<Index>(y_train.size()) != u_train.rows()) throw ShapeError("knn: label count differs from rows");
  if (k < 1 || k > u_train.rows()) throw std::invalid_argument("knn: need 1 <= k <= n_train");
  const auto n_tr = static_cast<std::size_t>(u_train.rows());
  Matrix scores = Matrix::Zero(u_test.rows(), num_classes);
  std::vector<std::pair<double, std::size_t>> dist(n_tr);
  const auto kk = static_cast<std::size_t>(k);
  for (Index i = 0; i < u_test.rows(); ++i) {
    for (std::size_t j = 0; j < n_tr; ++j)
      dist[j] = {(u_train.row(static_cast<Index>(j)) - u_test.row(i)).squaredNorm(), j};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
    for (std::size_t r = 0; r < kk; ++r) scores(i, y_train[dist[r].second]) += 1.0;
  }
  return scores / static_cast<double>(k);
}

/// k-NN classifier on latent rows scored by micro-average one-vs-rest AUC
/// over all flattened (example, class) pairs.
inline DownstreamResult knn_auc(const Matrix& u_train, const std::vector<int>& y_train, const Matrix& u_test,
                                const std::vector<int>& y_test, int k = 100) {
  if (static_cast<Index>(y_test.size()) != u_test.rows()) throw ShapeError("knn_auc: label count differs from rows");
  int num_classes = 0;
  for (int y : y_train) {
    if (y < 0) throw std::invalid_argument("knn_auc: labels must be >= 0");
    num_classes = std::max(num_classes, y + 1);
  }
  for (int y : y_test) {
    if (y < 0) throw std::invalid_argument("knn_auc: labels must be >= 0");
    num_classes = std::max(num_classes, y + 1);
  }
  std::vector<char> seen(static_cast<std::size_t>(num_classes), 0);
  for (int y : y_train) seen[static_cast<std::size_t>(y)] = 1;
  for (int y : y_test) seen[static_cast<std::size_t>(y)] = 1;
  if (std::count(seen.begin(), seen.end(), 1) < 2) throw std::invalid_argument("knn_auc: labels have a single class");

  const Matrix scores = knn_scores(u_train, y_train, u_test, num_classes, k);
  std::vector<double> flat;
  std::vector<char> pos;
  flat.reserve(static_cast<std::size_t>(scores.size()));
  pos.reserve(static_cast<std::size_t>(scores.size()));
  for (Index i = 0; i < scores.rows(); ++i)
    for (int c = 0; c < num_classes; ++c) {
      flat.push_back(scores(i, c));
      pos.push_back(y_test[static_cast<std::size_t>(i)] == c ? 1 : 0);
    }
  DownstreamResult r;
  r.d = static_cast<int>(u_train.cols());
  r.k = k;
  r.micro_auc = auc_from_scores(flat, pos);
  r.per_fold.push_back(r.micro_auc);
  return r;
}

struct TTestResult {
  double t = 0.0;
  double p_value = 0.5;  // one-sided, alternative mean(a - b) > 0
  bool tie = false;
  std::size_t df = 0;
};

/// Paired t on a - b. Zero-variance differences: t = 0 with tie = true when
/// all differences are zero, otherwise t = +-inf with p = 0 or 1.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : diff) ss += (v - mean) * (v - mean);
  TTestResult r;
  r.df = n - 1;
  const double var = ss / static_cast<double>(n - 1);
  if (var == 0.0) {
    if (mean == 0.0) {
      r.tie = true;
      r.t = 0.0;
      r.p_value = 0.5;
    } else {
      r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_value = mean > 0 ? 0.0 : 1.0;
    }
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  boost::math::students_t dist(static_cast<double>(r.df));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean and standard error (sample SD / sqrt(n)); se = 0 for a single value.
inline MeanSe mean_se(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_se: empty input");
  MeanSe r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return r;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  return r;
}

/// Pearson correlation of two equal-length columns; 0 when either is constant.
inline double pearson(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("pearson: need equal lengths >= 2");
  const Vector ac = a.array() - a.mean();
  const Vector bc = b.array() - b.mean();
  const double den = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
  return den > 0.0 ? ac.dot(bc) / den : 0.0;
}

/// Average over columns of the per-column Pearson correlation.
inline double mean_column_correlation(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "mean_column_correlation");
  double s = 0.0;
  for (Index j = 0; j < a.cols(); ++j) s += pearson(a.col(j), b.col(j));
  return s / static_cast<double>(a.cols());
}

}  // namespace lmmvae::eval
