#include "lmmvae/nn/adam.hpp"
#include "lmmvae/nn/gaussian.hpp"
#include "lmmvae/nn/mlp.hpp"
#include "lmmvae/nn/rng.hpp"
#include "lmmvae/nn/serialize.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace lmmvae;
using namespace lmmvae::nn;

namespace {

// Explicit-loop forward pass used as the reference.
Matrix loop_forward(const MlpParams& p, const Matrix& input) {
  Matrix a = input;
  for (const auto& l : p.layers) {
    Matrix out(a.rows(), l.weight.cols());
    for (Index i = 0; i < a.rows(); ++i)
      for (Index j = 0; j < l.weight.cols(); ++j) {
        double s = l.bias(0, j);
        for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * l.weight(k, j);
        out(i, j) = l.activation == Activation::Relu ? std::max(0.0, s) : s;
      }
    a = out;
  }
  return a;
}

double weighted_sum(const Matrix& out, const Matrix& w) { return out.cwiseProduct(w).sum(); }

}  // namespace

TEST(Mlp, ZeroParametersGiveZeroOutput) {
  Rng rng(1);
  auto p = make_mlp(3, {4, 5}, 2, rng);
  for (auto* t : p.tensors()) t->setZero();
  const Matrix out = mlp_forward(p, rng.normal_matrix(6, 3));
  EXPECT_EQ(out.rows(), 6);
  EXPECT_EQ(out.cols(), 2);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, IdentityLayerPassesInputThrough) {
  Rng rng(2);
  auto p = make_mlp(3, {}, 3, rng);
  p.layers[0].weight = Matrix::Identity(3, 3);
  p.layers[0].bias.setZero();
  const Matrix v = rng.normal_matrix(4, 3);
  EXPECT_EQ((mlp_forward(p, v) - v).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, ForwardMatchesLoopOracle) {
  Rng rng(3);
  auto p = make_mlp(5, {7}, 3, rng);
  for (auto& l : p.layers) l.bias = rng.normal_matrix(1, l.bias.cols());
  const Matrix ones = Matrix::Ones(4, 5);
  EXPECT_LT((mlp_forward(p, ones) - loop_forward(p, ones)).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix r = rng.normal_matrix(9, 5);
  EXPECT_LT((mlp_forward(p, r) - loop_forward(p, r)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mlp, ShapeMismatchThrows) {
  Rng rng(4);
  auto p = make_mlp(3, {4}, 2, rng);
  EXPECT_THROW(mlp_forward(p, Matrix::Zero(2, 4)), ShapeError);
  EXPECT_THROW(mlp_backward(p, Matrix::Zero(2, 3), Matrix::Zero(2, 3)), ShapeError);
}

TEST(Mlp, ZeroOutputGradGivesZeroGrads) {
  Rng rng(5);
  auto p = make_mlp(3, {4}, 2, rng);
  const auto g = mlp_backward(p, rng.normal_matrix(5, 3), Matrix::Zero(5, 2));
  for (const auto* t : g.tensors()) EXPECT_EQ(t->cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.input.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, LinearLayerSumOfOutputs) {
  Rng rng(6);
  auto p = make_mlp(3, {}, 2, rng);
  const Matrix x = rng.normal_matrix(5, 3);
  const auto g = mlp_backward(p, x, Matrix::Ones(5, 2));
  // d(sum out)/dW[k, j] = sum_i x[i, k] for every j.
  for (Index j = 0; j < 2; ++j) EXPECT_LT((g.weight[0].col(j) - x.colwise().sum().transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((g.bias[0] - Matrix::Constant(1, 2, 5.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  for (const auto& hidden : {std::vector<int>{}, std::vector<int>{6}, std::vector<int>{6, 4}}) {
    auto p = make_mlp(4, hidden, 3, rng);
    for (auto& l : p.layers) l.bias = 0.3 * rng.normal_matrix(1, l.bias.cols());
    Matrix x = rng.normal_matrix(5, 4);
    const Matrix w = rng.normal_matrix(5, 3);
    const auto g = mlp_backward(p, x, w);
    const double h = 1e-5;
    auto params = p.tensors();
    auto grads = g.tensors();
    int probes = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (Index i = 0; i < params[t]->size(); ++i, ++probes) {
        double& v = params[t]->data()[i];
        const double old = v;
        v = old + h;
        const double lp = weighted_sum(mlp_forward(p, x), w);
        v = old - h;
        const double lm = weighted_sum(mlp_forward(p, x), w);
        v = old;
        const double fd = (lp - lm) / (2 * h);
        const double an = grads[t]->data()[i];
        EXPECT_LT(std::abs(fd - an), 1e-4 * std::max(1.0, std::abs(fd))) << "tensor " << t << " entry " << i;
      }
    }
    for (Index i = 0; i < x.size(); ++i) {
      double& v = x.data()[i];
      const double old = v;
      v = old + h;
      const double lp = weighted_sum(mlp_forward(p, x), w);
      v = old - h;
      const double lm = weighted_sum(mlp_forward(p, x), w);
      v = old;
      EXPECT_LT(std::abs((lp - lm) / (2 * h) - g.input.data()[i]), 1e-4 * std::max(1.0, std::abs(g.input.data()[i])));
    }
    EXPECT_GT(probes, 10);
  }
}

TEST(Adam, TwoStepHandTrace) {
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  AdamState st(cfg);
  Matrix w = Matrix::Constant(1, 1, 1.0);
  std::vector<Matrix*> params = {&w};
  Matrix g = Matrix::Constant(1, 1, 0.5);
  std::vector<const Matrix*> grads = {&g};
  adam_step(st, params, grads);
  // m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25: w = 1 - 0.1 * 0.5 / (0.5 + 1e-8).
  EXPECT_NEAR(w(0, 0), 1.0 - 0.05 / (0.5 + 1e-8), 1e-12);
  g(0, 0) = -0.2;
  adam_step(st, params, grads);
  // m = 0.025, v = 0.00028975, m_hat = 0.025 / 0.19, v_hat = 0.00028975 / 0.001999.
  EXPECT_NEAR(w(0, 0), 0.8654394181165108, 1e-10);
  EXPECT_EQ(st.step, 2);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  AdamState st;
  Matrix w = Matrix::Constant(2, 2, 0.7);
  Matrix g = Matrix::Zero(2, 2);
  std::vector<Matrix*> params = {&w};
  std::vector<const Matrix*> grads = {&g};
  for (int i = 0; i < 3; ++i) adam_step(st, params, grads);
  EXPECT_EQ((w.array() - 0.7).abs().maxCoeff(), 0.0);
}

TEST(Adam, ConstantGradientMovesAgainstSign) {
  AdamState st;
  Matrix w = Matrix::Zero(1, 2);
  Matrix g(1, 2);
  g << 1.0, -2.0;
  std::vector<Matrix*> params = {&w};
  std::vector<const Matrix*> grads = {&g};
  for (int i = 0; i < 50; ++i) adam_step(st, params, grads);
  EXPECT_LT(w(0, 0), 0.0);
  EXPECT_GT(w(0, 1), 0.0);
}

TEST(Adam, ShapeMismatchThrows) {
  AdamState st;
  Matrix w = Matrix::Zero(2, 2);
  Matrix g = Matrix::Zero(2, 3);
  std::vector<Matrix*> params = {&w};
  std::vector<const Matrix*> grads = {&g};
  EXPECT_THROW(adam_step(st, params, grads), ShapeError);
}

TEST(Reparameterize, ZeroNoiseReturnsMean) {
  Rng rng(8);
  GaussianHead h{rng.normal_matrix(3, 2), rng.normal_matrix(3, 2)};
  EXPECT_EQ((reparameterize(h, Matrix::Zero(3, 2)) - h.mu).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Reparameterize, UnitVarianceIdentity) {
  GaussianHead h{Matrix::Zero(1, 2), Matrix::Zero(1, 2)};
  Matrix eps(1, 2);
  eps << 1.0, -1.0;
  EXPECT_EQ(reparameterize(h, eps), eps);
}

TEST(Reparameterize, MonteCarloMoments) {
  Rng rng(9);
  const Index n = 1000000;
  GaussianHead h{Matrix::Constant(n, 1, 2.0), Matrix::Constant(n, 1, std::log(4.0))};
  const Matrix s = reparameterize(h, rng);
  const double mean = s.mean();
  const double var = (s.array() - mean).square().sum() / static_cast<double>(n - 1);
  EXPECT_NEAR(mean, 2.0, 0.01);
  EXPECT_NEAR(var, 4.0, 0.05);
}

TEST(Reparameterize, MomentsWithinThreeStandardErrors) {
  Rng rng(10);
  const Index n = 100000;
  const double mu = -0.7, var = 0.3;
  GaussianHead h{Matrix::Constant(n, 1, mu), Matrix::Constant(n, 1, std::log(var))};
  const Matrix s = reparameterize(h, rng);
  const double mean = s.mean();
  const double v = (s.array() - mean).square().sum() / static_cast<double>(n - 1);
  EXPECT_LT(std::abs(mean - mu), 3 * std::sqrt(var / n));
  EXPECT_LT(std::abs(v - var), 3 * var * std::sqrt(2.0 / (n - 1)));
}

TEST(Gaussian, LogVarianceIsClamped) {
  GaussianHead h{Matrix::Zero(1, 2), Matrix::Zero(1, 2)};
  h.gamma << 100.0, -100.0;
  const Matrix s = reparameterize(h, Matrix::Ones(1, 2));
  EXPECT_NEAR(s(0, 0), std::exp(7.5), 1e-6);
  EXPECT_NEAR(s(0, 1), std::exp(-7.5), 1e-12);
  const Matrix mask = clamp_pass_mask(h.gamma);
  EXPECT_EQ(mask(0, 0), 0.0);
  EXPECT_EQ(mask(0, 1), 0.0);
}

TEST(Gaussian, KlAtPriorIsZeroAndNonnegativeElsewhere) {
  Rng rng(11);
  GaussianHead prior{Matrix::Zero(4, 3), Matrix::Zero(4, 3)};
  EXPECT_NEAR(kl_standard_normal(prior).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  GaussianHead scaled{Matrix::Zero(4, 3), Matrix::Constant(4, 3, 0.8)};
  EXPECT_NEAR(kl_scaled_normal(scaled, 0.8).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  for (int trial = 0; trial < 200; ++trial) {
    GaussianHead h{3 * rng.normal_matrix(5, 4), 4 * rng.normal_matrix(5, 4)};
    const double delta = 2 * rng.normal();
    EXPECT_GE(kl_standard_normal(h).minCoeff(), -1e-10);
    EXPECT_GE(kl_scaled_normal(h, delta).minCoeff(), -1e-10);
  }
}

TEST(Gaussian, ScaledKlGradientMatchesFiniteDifferences) {
  Rng rng(12);
  GaussianHead h{rng.normal_matrix(3, 2), rng.normal_matrix(3, 2)};
  const double delta = 0.4;
  const auto g = kl_scaled_normal_grad(h, delta);
  const double eps = 1e-6;
  for (Index i = 0; i < h.mu.size(); ++i) {
    for (Matrix* t : {&h.mu, &h.gamma}) {
      const double old = t->data()[i];
      t->data()[i] = old + eps;
      const double lp = kl_scaled_normal(h, delta).sum();
      t->data()[i] = old - eps;
      const double lm = kl_scaled_normal(h, delta).sum();
      t->data()[i] = old;
      const double an = (t == &h.mu ? g.mu : g.gamma).data()[i];
      EXPECT_NEAR((lp - lm) / (2 * eps), an, 1e-7);
    }
  }
}

TEST(Gaussian, MismatchedHeadThrows) {
  GaussianHead h{Matrix::Zero(2, 3), Matrix::Zero(2, 2)};
  EXPECT_THROW(h.validate(), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  EXPECT_EQ(a.normal_matrix(5, 5), b.normal_matrix(5, 5));
  EXPECT_EQ(a.permutation(100), b.permutation(100));
  EXPECT_EQ(a.poisson(3.0), b.poisson(3.0));
  EXPECT_EQ(a.multinomial(1000, {0.2, 0.3, 0.5}), b.multinomial(1000, {0.2, 0.3, 0.5}));
}

TEST(Rng, MultinomialSumsToTrials) {
  Rng rng(13);
  const auto c = rng.multinomial(12345, std::vector<double>(7, 1.0 / 7));
  long s = 0;
  for (long v : c) s += v;
  EXPECT_EQ(s, 12345);
}

TEST(Rng, SampleWithoutReplacementIsDistinctAndSorted) {
  Rng rng(14);
  const auto s = rng.sample_without_replacement(50, 20);
  ASSERT_EQ(s.size(), 20u);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
  EXPECT_THROW(rng.sample_without_replacement(5, 6), std::invalid_argument);
}

TEST(Serialize, MlpRoundTripIsExact) {
  Rng rng(15);
  auto p = make_mlp(4, {3, 2}, 5, rng);
  for (auto& l : p.layers) l.bias = rng.normal_matrix(1, l.bias.cols());
  const auto q = mlp_from_json(json::parse(mlp_to_json(p).dump()));
  ASSERT_EQ(q.layers.size(), p.layers.size());
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    EXPECT_EQ(q.layers[k].weight, p.layers[k].weight);
    EXPECT_EQ(q.layers[k].bias, p.layers[k].bias);
    EXPECT_EQ(q.layers[k].activation, p.layers[k].activation);
  }
}

TEST(Serialize, RejectsBrokenLayouts) {
  Rng rng(16);
  auto p = make_mlp(4, {3}, 2, rng);
  auto j = mlp_to_json(p);
  auto bad_act = j;
  bad_act["layers"][0]["activation"] = "tanh";
  EXPECT_THROW(mlp_from_json(bad_act), std::invalid_argument);
  auto bad_chain = j;
  bad_chain["layers"][1]["weight"] = matrix_to_json(Matrix::Zero(5, 2));
  EXPECT_THROW(mlp_from_json(bad_chain), ShapeError);
  auto bad_len = j;
  bad_len["layers"][0]["bias"]["data"].push_back(1.0);
  EXPECT_THROW(mlp_from_json(bad_len), ShapeError);
}
