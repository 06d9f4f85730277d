#include "lmmvae/eval/metrics.hpp"
#include "lmmvae/nn/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace lmmvae;
using namespace lmmvae::eval;

TEST(ReconMse, HandValues) {
  const Matrix x = Matrix::Zero(2, 2);
  EXPECT_EQ(recon_mse(x, x), 0.0);
  Matrix xh(2, 2);
  xh << 1, 1, 1, 1;
  EXPECT_EQ(recon_mse(x, xh), 1.0);
  xh << 2, 0, 0, 0;
  EXPECT_EQ(recon_mse(x, xh), 1.0);
  EXPECT_THROW(recon_mse(x, Matrix::Zero(2, 3)), ShapeError);
}

TEST(Auc, HandValuesAndTies) {
  EXPECT_DOUBLE_EQ(auc_from_scores({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc_from_scores({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(auc_from_scores({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
  // Pairs: (0.3 > 0.1), (0.3 < 0.4), (0.6 > 0.1), (0.6 > 0.4) -> 3 of 4.
  EXPECT_DOUBLE_EQ(auc_from_scores({0.1, 0.3, 0.4, 0.6}, {0, 1, 0, 1}), 0.75);
  EXPECT_THROW(auc_from_scores({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST(Knn, SeparableClustersGivePerfectAuc) {
  Rng rng(1);
  Matrix tr(200, 2), te(40, 2);
  std::vector<int> ytr(200), yte(40);
  for (Index i = 0; i < 200; ++i) {
    ytr[static_cast<std::size_t>(i)] = static_cast<int>(i % 2);
    tr.row(i) << (i % 2 ? 10.0 : -10.0) + rng.normal(), rng.normal();
  }
  for (Index i = 0; i < 40; ++i) {
    yte[static_cast<std::size_t>(i)] = static_cast<int>(i % 2);
    te.row(i) << (i % 2 ? 10.0 : -10.0) + rng.normal(), rng.normal();
  }
  EXPECT_DOUBLE_EQ(knn_auc(tr, ytr, te, yte, 10).micro_auc, 1.0);
}

TEST(Knn, ShuffledLabelsGiveChance) {
  Rng rng(2);
  const Matrix tr = rng.normal_matrix(3000, 2), te = rng.normal_matrix(1000, 2);
  std::vector<int> ytr(3000), yte(1000);
  for (auto& y : ytr) y = static_cast<int>(rng.uniform_index(4));
  for (auto& y : yte) y = static_cast<int>(rng.uniform_index(4));
  EXPECT_NEAR(knn_auc(tr, ytr, te, yte, 50).micro_auc, 0.5, 0.03);
}

TEST(Knn, MatchesBruteForceOracle) {
  Matrix tr(6, 1), te(2, 1);
  tr << 0, 1, 2, 3, 4, 5;
  te << 0.4, 4.6;
  const std::vector<int> ytr = {0, 0, 1, 1, 2, 2};
  const Matrix s = knn_scores(tr, ytr, te, 3, 3);
  // Neighbors of 0.4: {0, 1, 2}; of 4.6: {5, 4, 3}.
  EXPECT_NEAR(s(0, 0), 2.0 / 3, 1e-15);
  EXPECT_NEAR(s(0, 1), 1.0 / 3, 1e-15);
  EXPECT_EQ(s(0, 2), 0.0);
  EXPECT_EQ(s(1, 0), 0.0);
  EXPECT_NEAR(s(1, 1), 1.0 / 3, 1e-15);
  EXPECT_NEAR(s(1, 2), 2.0 / 3, 1e-15);
}

TEST(Knn, EqualDistancesPreferLowerIndex) {
  Matrix tr(3, 1), te(1, 1);
  tr << -1, 1, 1;
  te << 0;
  const Matrix s = knn_scores(tr, {0, 1, 2}, te, 3, 2);
  EXPECT_EQ(s(0, 0), 0.5);
  EXPECT_EQ(s(0, 1), 0.5);
  EXPECT_EQ(s(0, 2), 0.0);
}

TEST(Knn, TrainingOrderDoesNotMatter) {
  Rng rng(3);
  const Matrix tr = rng.normal_matrix(300, 3), te = rng.normal_matrix(100, 3);
  std::vector<int> ytr(300), yte(100);
  for (Index i = 0; i < 300; ++i) ytr[static_cast<std::size_t>(i)] = tr(i, 0) > 0 ? 1 : 0;
  for (Index i = 0; i < 100; ++i) yte[static_cast<std::size_t>(i)] = te(i, 0) > 0 ? 1 : 0;
  const auto perm = rng.permutation(300);
  std::vector<int> yp;
  for (auto i : perm) yp.push_back(ytr[i]);
  EXPECT_DOUBLE_EQ(knn_auc(tr, ytr, te, yte, 15).micro_auc, knn_auc(gather_rows(tr, perm), yp, te, yte, 15).micro_auc);
}

TEST(Knn, Errors) {
  const Matrix a = Matrix::Zero(4, 2);
  EXPECT_THROW(knn_auc(a, {0, 0, 0, 0}, a, {0, 0, 0, 0}, 2), std::invalid_argument);
  EXPECT_THROW(knn_auc(a, {0, 1, 0, 1}, a, {0, 1, 0, 1}, 5), std::invalid_argument);
  EXPECT_THROW(knn_auc(a, {0, 1, 0}, a, {0, 1, 0, 1}, 2), ShapeError);
}

TEST(TTest, HandComputedStatistic) {
  // Differences -1, -3, -2: mean -2, sd 1, t = -2 / (1 / sqrt 3).
  const auto r = paired_t_test({1, 2, 3}, {2, 5, 5});
  EXPECT_NEAR(r.t, -2.0 * std::sqrt(3.0), 1e-12);
  EXPECT_EQ(r.df, 2u);
  // One-sided upper tail of t_2 at t: 1/2 - t / (2 sqrt(t^2 + 2)).
  const double t = r.t;
  EXPECT_NEAR(r.p_value, 0.5 - t / (2 * std::sqrt(t * t + 2)), 1e-12);
  EXPECT_FALSE(r.tie);
}

TEST(TTest, DegenerateDifferences) {
  const auto tie = paired_t_test({1, 2, 3}, {1, 2, 3});
  EXPECT_TRUE(tie.tie);
  EXPECT_EQ(tie.t, 0.0);
  EXPECT_EQ(tie.p_value, 0.5);
  const auto up = paired_t_test({2, 3, 4}, {1, 2, 3});
  EXPECT_TRUE(std::isinf(up.t) && up.t > 0);
  EXPECT_EQ(up.p_value, 0.0);
  const auto down = paired_t_test({1, 2, 3}, {2, 3, 4});
  EXPECT_EQ(down.p_value, 1.0);
  EXPECT_THROW(paired_t_test({1}, {2}), std::invalid_argument);
  EXPECT_THROW(paired_t_test({1, 2}, {2}), std::invalid_argument);
}

TEST(Summary, MeanSeAndCorrelation) {
  const auto ms = mean_se({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(ms.mean, 2.5);
  EXPECT_NEAR(ms.se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
  EXPECT_EQ(mean_se({7}).se, 0.0);
  Vector a(4), b(4);
  a << 1, 2, 3, 4;
  b << 2, 4, 6, 8;
  EXPECT_NEAR(pearson(a, b), 1.0, 1e-15);
  EXPECT_NEAR(pearson(a, -b), -1.0, 1e-15);
  EXPECT_EQ(pearson(a, Vector::Ones(4)), 0.0);
  Matrix m1(4, 2), m2(4, 2);
  m1 << a, a;
  m2 << b, -b;
  EXPECT_NEAR(mean_column_correlation(m1, m2), 0.0, 1e-15);
}
