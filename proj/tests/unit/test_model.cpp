#include "lmmvae/model/lmmvae.hpp"
#include "lmmvae/model/loss.hpp"
#include "lmmvae/sim/simgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace lmmvae;

namespace {

re::REScenario two_feature_scenario() {
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Categorical;
  sc.level_ids = {{0, 1, 2, 0, 1}, {2, 2, 0, 1, 0}};
  sc.cardinalities = {3, 3};
  return sc;
}

re::REScenario spatial_categorical_scenario(Rng& rng) {
  re::REScenario sc;
  sc.kind = re::ScenarioKind::SpatialCategorical;
  sc.locations = rng.normal_matrix(3, 2);
  sc.location_ids = {0, 1, 2, 0, 1};
  sc.level_ids = {{0, 1, 2, 2, 0}};
  sc.cardinalities = {3};
  return sc;
}

LmmvaeModel tiny_model(const re::REDesign& z, EncoderLayout layout, Rng& rng) {
  LmmvaeConfig cfg;
  cfg.latent_dim = 2;
  cfg.hidden = {6, 5};
  cfg.beta = 0.7;
  cfg.delta_b = {0.3, -0.4};
  cfg.layout = layout;
  auto m = init_model(cfg, 4, z, rng);
  m.spatial_factor = compute_spatial_factor(cfg, z, rng);
  for (auto* t : m.tensors()) *t += 0.3 * rng.normal_matrix(t->rows(), t->cols());
  return m;
}

// Largest relative error between analytic and central-difference gradients.
double gradient_error(LmmvaeModel& m, const Matrix& x, const re::REDesign& z, const ReparamNoise& noise) {
  const auto grads = loss_and_grad(m, x, z, noise).second;
  auto params = m.tensors();
  auto g = grads.tensors();
  EXPECT_EQ(params.size(), g.size());
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (Index i = 0; i < params[t]->size(); ++i) {
      double& v = params[t]->data()[i];
      const double old = v;
      v = old + h;
      const double lp = loss_and_grad(m, x, z, noise).first.total;
      v = old - h;
      const double lm = loss_and_grad(m, x, z, noise).first.total;
      v = old;
      const double fd = (lp - lm) / (2 * h);
      const double an = g[t]->data()[i];
      const double scale = std::max(std::abs(fd), std::abs(an));
      if (scale > 1e-7) worst = std::max(worst, std::abs(fd - an) / scale);
    }
  }
  return worst;
}

}  // namespace

TEST(Aggregate, MeanDefinition) {
  Matrix b(2, 2);
  b << 1, 3, 3, 5;
  const std::vector<int> ids = {0, 0};
  const Matrix agg = aggregate_re(b, ids, 4);
  EXPECT_EQ(agg.row(0), (RowVector(2) << 2, 4).finished());
  EXPECT_EQ(agg.bottomRows(3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Aggregate, OneRowPerLevelPermutes) {
  Rng rng(1);
  const Matrix b = rng.normal_matrix(4, 3);
  const std::vector<int> ids = {2, 0, 3, 1};
  const Matrix agg = aggregate_re(b, ids, 4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(agg.row(ids[static_cast<std::size_t>(i)]), b.row(i));
}

TEST(Aggregate, MatchesLoopOracleAndIsPermutationInvariant) {
  Rng rng(2);
  const Matrix b = rng.normal_matrix(50, 3);
  std::vector<int> ids(50);
  for (auto& v : ids) v = static_cast<int>(rng.uniform_index(7));
  Matrix oracle = Matrix::Zero(7, 3);
  for (int j = 0; j < 7; ++j) {
    int c = 0;
    for (int i = 0; i < 50; ++i)
      if (ids[static_cast<std::size_t>(i)] == j) {
        oracle.row(j) += b.row(i);
        ++c;
      }
    if (c) oracle.row(j) /= c;
  }
  const Matrix agg = aggregate_re(b, ids, 7);
  EXPECT_LT((agg - oracle).cwiseAbs().maxCoeff(), 1e-12);
  const auto perm = rng.permutation(50);
  std::vector<int> pids;
  for (auto i : perm) pids.push_back(ids[i]);
  EXPECT_LT((aggregate_re(gather_rows(b, perm), pids, 7) - agg).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Loss, PriorMatchingLeavesReconstruction) {
  Rng rng(3);
  const Matrix x = rng.normal_matrix(4, 3), xh = rng.normal_matrix(4, 3);
  nn::GaussianHead u{Matrix::Zero(4, 2), Matrix::Zero(4, 2)};
  nn::GaussianHead b{Matrix::Zero(4, 3), Matrix::Constant(4, 3, 0.6)};
  const auto l = lmmvae_loss(x, xh, u, std::vector<nn::GaussianHead>{b}, 0.5, std::vector<double>{0.6});
  EXPECT_NEAR(l.total, (x - xh).squaredNorm() / 4.0, 1e-12);
}

TEST(Loss, HalfMuSquared) {
  nn::GaussianHead u{Matrix::Ones(1, 1), Matrix::Zero(1, 1)};
  const Matrix x = Matrix::Constant(1, 2, 3.0);
  const auto l = lmmvae_loss(x, x, u, std::vector<nn::GaussianHead>{}, 1.0, std::vector<double>{});
  EXPECT_DOUBLE_EQ(l.total, 0.5);
}

TEST(Loss, RandomEffectKlMatchesMonteCarlo) {
  Rng rng(4);
  const double delta = std::log(2.0);
  for (int trial = 0; trial < 3; ++trial) {
    const double mu = rng.normal(), gamma = 0.5 * rng.normal();
    nn::GaussianHead h{Matrix::Constant(1, 1, mu), Matrix::Constant(1, 1, gamma)};
    const double analytic = nn::kl_scaled_normal(h, delta)(0);
    const int n = 1000000;
    const double sd = std::exp(gamma / 2);
    double s = 0;
    for (int i = 0; i < n; ++i) {
      const double e = rng.normal();
      const double b = mu + sd * e;
      // log q(b) - log p(b) with q = N(mu, e^gamma), p = N(0, 2).
      s += -0.5 * gamma - 0.5 * e * e + 0.5 * delta + 0.5 * b * b / 2.0;
    }
    EXPECT_NEAR(s / n, analytic, 0.01 * std::max(analytic, 0.05));
  }
}

TEST(Loss, Errors) {
  const Matrix x = Matrix::Zero(2, 2);
  nn::GaussianHead u{Matrix::Zero(2, 1), Matrix::Zero(2, 1)};
  nn::GaussianHead b{Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
  EXPECT_THROW(lmmvae_loss(x, x, u, std::vector<nn::GaussianHead>{b}, 1.0, std::vector<double>{}), ShapeError);
  Matrix bad = x;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(lmmvae_loss(x, bad, u, std::vector<nn::GaussianHead>{}, 1.0, std::vector<double>{}), std::invalid_argument);
}

TEST(Loss, VaeKlEqualsFixedPartKl) {
  Rng rng(5);
  nn::GaussianHead u{rng.normal_matrix(6, 2), rng.normal_matrix(6, 2)};
  const Matrix x = rng.normal_matrix(6, 3);
  const auto with_re = lmmvae_loss(x, x, u, std::vector<nn::GaussianHead>{{rng.normal_matrix(6, 3), rng.normal_matrix(6, 3)}}, 1.0,
                                   std::vector<double>{0.0});
  const auto without = lmmvae_loss(x, x, u, std::vector<nn::GaussianHead>{}, 1.0, std::vector<double>{});
  EXPECT_EQ(with_re.kl_fixed, without.kl_fixed);
}

TEST(Gradient, CategoricalTwoTermsMatchesFiniteDifferences) {
  for (auto layout : {EncoderLayout::TwoEncoders, EncoderLayout::SingleEncoder}) {
    Rng rng(6);
    const auto z = re::make_design(two_feature_scenario());
    auto m = tiny_model(z, layout, rng);
    const Matrix x = rng.normal_matrix(5, 4);
    const auto noise = draw_noise(m, 5, rng);
    EXPECT_LT(gradient_error(m, x, z, noise), 1e-4);
  }
}

TEST(Gradient, SpatialCategoricalMatchesFiniteDifferences) {
  Rng rng(7);
  const auto z = re::make_design(spatial_categorical_scenario(rng));
  auto m = tiny_model(z, EncoderLayout::TwoEncoders, rng);
  const Matrix x = rng.normal_matrix(5, 4);
  EXPECT_LT(gradient_error(m, x, z, draw_noise(m, 5, rng)), 1e-4);
}

TEST(Gradient, LongitudinalMatchesFiniteDifferences) {
  Rng rng(8);
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Longitudinal;
  sc.poly_terms = 2;
  sc.num_subjects = 3;
  sc.subject_ids = {0, 1, 2, 1, 0};
  sc.times = {0.1, 0.5, 0.9, 0.3, 0.7};
  const auto z = re::make_design(sc);
  auto m = tiny_model(z, EncoderLayout::TwoEncoders, rng);
  const Matrix x = rng.normal_matrix(5, 4);
  EXPECT_LT(gradient_error(m, x, z, draw_noise(m, 5, rng)), 1e-4);
}

TEST(Forward, ZeroDecoderAndZeroBGiveZero) {
  Rng rng(9);
  const auto z = re::make_design(two_feature_scenario());
  auto m = tiny_model(z, EncoderLayout::TwoEncoders, rng);
  for (auto* t : m.fe_decoder.tensors()) t->setZero();
  for (auto& l : m.re_encoder.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  auto noise = draw_noise(m, 5, rng);
  for (auto& b : noise.b) b.setZero();
  EXPECT_EQ(forward(m, rng.normal_matrix(5, 4), z, noise).x_hat.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, IdentityToyComposition) {
  Rng rng(10);
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Categorical;
  sc.level_ids = {{0, 1, 2}};
  sc.cardinalities = {3};
  const auto z = re::make_design(sc);
  LmmvaeConfig cfg;
  cfg.latent_dim = 2;
  cfg.hidden = {};
  auto m = init_model(cfg, 3, z, rng);
  m.fe_decoder.layers[0].weight = Matrix::Identity(2, 3);
  m.fe_decoder.layers[0].bias.setZero();
  const Matrix x = rng.normal_matrix(3, 3);
  auto noise = draw_noise(m, 3, rng);
  noise.u.setZero();
  noise.b[0].setZero();
  const auto out = forward(m, x, z, noise);
  Matrix expected = out.heads.b[0].mu;
  expected.leftCols(2) += out.heads.u.mu;
  EXPECT_LT((out.x_hat - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Forward, MatchesLoopRecomposition) {
  Rng rng(11);
  const auto sc = spatial_categorical_scenario(rng);
  const auto z = re::make_design(sc);
  auto m = tiny_model(z, EncoderLayout::TwoEncoders, rng);
  const Matrix x = rng.normal_matrix(5, 4);
  const auto noise = draw_noise(m, 5, rng);
  const auto out = forward(m, x, z, noise);

  const Matrix u = out.heads.u.mu + (0.5 * out.heads.u.gamma.array()).exp().matrix().cwiseProduct(noise.u);
  Matrix expected = nn::mlp_forward(m.fe_decoder, u);
  Index off = 0;
  for (std::size_t k = 0; k < z.num_terms(); ++k) {
    const auto& term = z.terms[k];
    const auto& h = out.heads.b[k];
    const Matrix b = h.mu + (0.5 * h.gamma.array()).exp().matrix().cwiseProduct(noise.b[k]);
    Matrix agg = Matrix::Zero(term.num_levels, 4);
    std::vector<int> count(static_cast<std::size_t>(term.num_levels), 0);
    for (Index i = 0; i < 5; ++i) {
      agg.row(term.level[static_cast<std::size_t>(i)]) += b.row(i);
      ++count[static_cast<std::size_t>(term.level[static_cast<std::size_t>(i)])];
    }
    for (int j = 0; j < term.num_levels; ++j)
      if (count[static_cast<std::size_t>(j)]) agg.row(j) /= count[static_cast<std::size_t>(j)];
    EXPECT_LT((out.b_agg.middleRows(off, term.num_levels) - agg).cwiseAbs().maxCoeff(), 1e-12);
    if (term.spatial) agg = m.spatial_factor * agg;
    for (Index i = 0; i < 5; ++i)
      for (Index f = 0; f < 4; ++f) expected(i, f) += term.weight[static_cast<std::size_t>(i)] * agg(term.level[static_cast<std::size_t>(i)], f);
    off += term.num_levels;
  }
  EXPECT_LT((out.x_hat - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, SpatialWithoutFactorThrows) {
  Rng rng(12);
  const auto z = re::make_design(spatial_categorical_scenario(rng));
  auto m = tiny_model(z, EncoderLayout::TwoEncoders, rng);
  m.spatial_factor.resize(0, 0);
  EXPECT_THROW(forward(m, rng.normal_matrix(5, 4), z, rng), std::logic_error);
  m.spatial_factor = Matrix::Identity(3, 3);
  EXPECT_THROW(forward(m, rng.normal_matrix(5, 3), z, rng), ShapeError);
}

TEST(Layouts, SingleEncoderMatchesTwoEncodersWithSameHeads) {
  Rng rng(13);
  const auto z = re::make_design(two_feature_scenario());
  LmmvaeConfig cfg;
  cfg.latent_dim = 2;
  cfg.hidden = {};
  auto two = init_model(cfg, 4, z, rng);
  cfg.layout = EncoderLayout::SingleEncoder;
  auto one = init_model(cfg, 4, z, rng);
  // Single linear layer: stack the two encoders' outputs side by side.
  auto& w = one.fe_encoder.layers[0];
  w.weight << two.fe_encoder.layers[0].weight, two.re_encoder.layers[0].weight;
  w.bias << two.fe_encoder.layers[0].bias, two.re_encoder.layers[0].bias;
  one.fe_decoder = two.fe_decoder;
  const Matrix x = rng.normal_matrix(5, 4);
  const auto noise = draw_noise(two, 5, rng);
  EXPECT_NEAR(loss_and_grad(one, x, z, noise).first.total, loss_and_grad(two, x, z, noise).first.total, 1e-12);
}

TEST(BHat, ConstantEncoderGivesConstantRows) {
  Rng rng(14);
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Categorical;
  sc.level_ids = {{0, 1, 0, 1}};
  sc.cardinalities = {3};
  const auto z = re::make_design(sc);
  LmmvaeConfig cfg;
  cfg.hidden = {4};
  auto m = init_model(cfg, 2, z, rng);
  m.re_encoder.layers.back().weight.setZero();
  m.re_encoder.layers.back().bias << 0.5, -1.5, 0.0, 0.0;
  const Matrix b = extract_B_hat(m, rng.normal_matrix(4, 2), z);
  EXPECT_EQ(b.row(0), (RowVector(2) << 0.5, -1.5).finished());
  EXPECT_EQ(b.row(1), (RowVector(2) << 0.5, -1.5).finished());
  EXPECT_EQ(b.row(2).cwiseAbs().sum(), 0.0);
}

TEST(BHat, OneObservationPerLevelEqualsRowMeans) {
  Rng rng(15);
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Categorical;
  sc.level_ids = {{2, 0, 1}};
  sc.cardinalities = {3};
  const auto z = re::make_design(sc);
  LmmvaeConfig cfg;
  cfg.hidden = {4};
  auto m = init_model(cfg, 2, z, rng);
  const Matrix x = rng.normal_matrix(3, 2);
  const Matrix mu = nn::mlp_forward(m.re_encoder, x).leftCols(2);
  const Matrix b = extract_B_hat(m, x, z);
  EXPECT_EQ(b.row(2), mu.row(0));
  EXPECT_EQ(b.row(0), mu.row(1));
  EXPECT_EQ(b.row(1), mu.row(2));
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  Rng a(16), b(16);
  const auto z = re::make_design(two_feature_scenario());
  LmmvaeConfig cfg;
  cfg.hidden = {4};
  cfg.epochs = 0;
  Rng data(1);
  const Matrix x = data.normal_matrix(5, 4);
  const auto trained = train(x, z, cfg, a);
  auto init = init_model(cfg, 4, z, b);
  EXPECT_EQ(trained.fe_encoder.layers[0].weight, init.fe_encoder.layers[0].weight);
  EXPECT_EQ(trained.re_encoder.layers[0].weight, init.re_encoder.layers[0].weight);
  EXPECT_EQ(trained.b_hat.rows(), 6);
  EXPECT_EQ(trained.b_hat.cols(), 4);
}

TEST(Train, LinearToyHalvesReconstructionError) {
  Rng rng(17);
  const Index n = 2000, p = 10;
  const Matrix u = rng.normal_matrix(n, 1);
  const Matrix w = rng.normal_matrix(1, p);
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Categorical;
  sc.level_ids = {sim::gen_level_ids(n, 20, rng)};
  sc.cardinalities = {20};
  const Matrix b = rng.normal_matrix(20, p);
  Matrix x = u * w + 0.3 * rng.normal_matrix(n, p);
  for (Index i = 0; i < n; ++i) x.row(i) += b.row(sc.level_ids[0][static_cast<std::size_t>(i)]);
  const auto z = re::make_design(sc);
  LmmvaeConfig cfg;
  cfg.hidden = {32, 16};
  cfg.batch_size = 100;
  cfg.epochs = 20;
  Rng r0(3);
  cfg.epochs = 0;
  const double initial = evaluate_nll(train(x, z, cfg, r0), x, z).reconstruction;
  cfg.epochs = 20;
  Rng r1(3);
  const auto m = train(x, z, cfg, r1);
  const double final_err = evaluate_nll(m, x, z).reconstruction;
  EXPECT_LT(final_err, 0.5 * initial);
  EXPECT_EQ(m.loss_history.size(), 20u);
}

TEST(Train, SameSeedIsBitIdentical) {
  Rng data(18);
  const Matrix x = data.normal_matrix(40, 4);
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Categorical;
  sc.level_ids = {sim::gen_level_ids(40, 5, data)};
  sc.cardinalities = {5};
  const auto z = re::make_design(sc);
  LmmvaeConfig cfg;
  cfg.hidden = {8};
  cfg.epochs = 3;
  cfg.batch_size = 16;
  Rng a(5), b(5);
  const auto m1 = train(x, z, cfg, a);
  const auto m2 = train(x, z, cfg, b);
  EXPECT_EQ(m1.loss_history, m2.loss_history);
  EXPECT_EQ(m1.b_hat, m2.b_hat);
}

TEST(Train, DivergenceReportsEpoch) {
  Rng data(19);
  Matrix x = 1e160 * data.normal_matrix(20, 3);
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Categorical;
  sc.level_ids = {std::vector<int>(20, 0)};
  sc.cardinalities = {1};
  LmmvaeConfig cfg;
  cfg.hidden = {4};
  cfg.epochs = 2;
  Rng rng(1);
  try {
    train(x, re::make_design(sc), cfg, rng);
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.epoch(), 0);
  }
}

TEST(Reconstruct, DeterministicAndDecomposes) {
  Rng rng(20);
  const auto z = re::make_design(two_feature_scenario());
  auto m = tiny_model(z, EncoderLayout::TwoEncoders, rng);
  m.b_hat = rng.normal_matrix(6, 4);
  const Matrix x = rng.normal_matrix(5, 4);
  const auto r1 = reconstruct(m, x, z);
  const auto r2 = reconstruct(m, x, z);
  EXPECT_EQ(r1.x_hat, r2.x_hat);
  const Matrix fe = nn::mlp_forward(m.fe_decoder, r1.latent);
  EXPECT_LT((r1.x_hat - random_effect_term(m, z, 5) - fe).cwiseAbs().maxCoeff(), 1e-12);
  m.b_hat.setZero();
  EXPECT_EQ(reconstruct(m, x, z).x_hat, fe);
}

TEST(Reconstruct, UnseenLevelsContributeNothing) {
  Rng rng(21);
  re::REScenario sc;
  sc.kind = re::ScenarioKind::Spatial;
  sc.locations = rng.normal_matrix(3, 2);
  sc.location_ids = {0, 1, 2};
  const auto z_train = re::make_design(sc);
  LmmvaeConfig cfg;
  cfg.hidden = {4};
  auto m = init_model(cfg, 2, z_train, rng);
  m.b_hat = rng.normal_matrix(3, 2);
  auto sc_test = sc;
  sc_test.location_ids = {re::kUnseenLevel, re::kUnseenLevel, re::kUnseenLevel};
  EXPECT_EQ(random_effect_term(m, re::make_design(sc_test), 3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Nll, MatchesLossOnSameBatch) {
  Rng rng(22);
  const auto z = re::make_design(two_feature_scenario());
  auto m = tiny_model(z, EncoderLayout::TwoEncoders, rng);
  m.b_hat = rng.normal_matrix(6, 4);
  const Matrix x = rng.normal_matrix(5, 4);
  const auto heads = detail::encode(m, x, nullptr);
  const auto direct = lmmvae_loss(x, reconstruct(m, x, z).x_hat, heads.u, heads.b, m.config.beta, m.deltas());
  EXPECT_NEAR(evaluate_nll(m, x, z).total, direct.total, 1e-12);
  m.config.beta = 0.0;
  const auto rec = reconstruct(m, x, z);
  EXPECT_NEAR(evaluate_nll(m, x, z).total, 4.0 * (x - rec.x_hat).squaredNorm() / 20.0, 1e-12);
}
