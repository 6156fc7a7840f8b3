#include "morphsim/learn.hpp"

#include <gtest/gtest.h>

#include <random>

namespace morphsim {
namespace {

using MlpD = Mlp<double>;

// Loss = <c, f(x)> summed over the batch, for a fixed random direction c.
double directional_loss(const MlpD& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& c) {
  return (net.forward(x).array() * c.array()).sum();
}

double rel_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale < 1e-7 ? 0.0 : std::abs(a - b) / scale;
}

// Central differences on a sample of parameters from every layer.
double max_gradient_error(const std::vector<int>& sizes, unsigned seed) {
  std::mt19937_64 rng(seed);
  MlpD net(sizes, rng, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int l = 0; l < net.num_layers(); ++l)
    for (Eigen::Index i = 0; i < net.bias(l).size(); ++i) net.bias(l)[i] = 0.1 * n(rng);
  const int batch = 3;
  Eigen::MatrixXd x(sizes.front(), batch), c(sizes.back(), batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);

  MlpD::Cache cache;
  net.forward(x, &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
  Eigen::MatrixXd dx;
  net.backward(cache, c, grad, &dx);

  const double h = 1e-5;
  double worst = 0.0;
  std::uniform_int_distribution<Eigen::Index> pick(0, net.num_params() - 1);
  for (int k = 0; k < 400; ++k) {
    const Eigen::Index i = pick(rng);
    const double saved = net.params()[i];
    net.params()[i] = saved + h;
    const double up = directional_loss(net, x, c);
    net.params()[i] = saved - h;
    const double down = directional_loss(net, x, c);
    net.params()[i] = saved;
    worst = std::max(worst, rel_error(grad[i], (up - down) / (2 * h)));
  }
  for (int k = 0; k < 20; ++k) {
    const Eigen::Index r = k % x.rows(), col = k % batch;
    Eigen::MatrixXd xp = x, xm = x;
    xp(r, col) += h;
    xm(r, col) -= h;
    const double fd = (directional_loss(net, xp, c) - directional_loss(net, xm, c)) / (2 * h);
    worst = std::max(worst, rel_error(dx(r, col), fd));
  }
  return worst;
}

TEST(Mlp, ParameterCount) {
  const MlpD net({5, 7, 3});
  EXPECT_EQ(net.num_params(), 5 * 7 + 7 + 7 * 3 + 3);
}

TEST(Mlp, ZeroWeightsGiveOutputBias) {
  MlpD net({4, 6, 2});
  net.bias(1) << 0.3, -1.2;
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(4, -1, 1);
  const Eigen::VectorXd y = net.forward(x);
  EXPECT_DOUBLE_EQ(y[0], 0.3);
  EXPECT_DOUBLE_EQ(y[1], -1.2);
}

TEST(Mlp, LinearLayerGradientOfHalfSquaredNorm) {
  std::mt19937_64 rng(9);
  MlpD net({3, 2}, rng);
  Eigen::VectorXd x(3);
  x << 0.5, -1.0, 2.0;
  MlpD::Cache cache;
  const Eigen::MatrixXd y = net.forward(Eigen::MatrixXd(x), &cache);
  Eigen::VectorXd grad;
  net.backward(cache, y, grad);  // d(0.5 |y|^2)/dy = y
  const Eigen::MatrixXd expected = y * x.transpose();
  const Eigen::Map<const Eigen::MatrixXd> gw(grad.data(), 2, 3);
  EXPECT_LT((gw - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Mlp, GradientsMatchFiniteDifferences) {
  // Every layer shape used by the controller, its value function, and the
  // design policy and design value networks.
  const std::vector<std::vector<int>> shapes = {
      {118, 256, 256, 36}, {118, 128, 128, 1}, {118, 128, 128, 36},
      {154, 128, 128, 1},  {118, 64, 64, 36},  {7, 5, 3}};
  for (std::size_t s = 0; s < shapes.size(); ++s)
    EXPECT_LT(max_gradient_error(shapes[s], 100 + s), 1e-4) << "shape " << s;
}

TEST(Mlp, DimensionErrors) {
  const MlpD net({3, 2});
  EXPECT_THROW(net.forward(Eigen::VectorXd(Eigen::VectorXd::Zero(4))), DimensionError);
  MlpD::Cache cache;
  net.forward(Eigen::MatrixXd::Zero(3, 2), &cache);
  Eigen::VectorXd g;
  EXPECT_THROW(net.backward(cache, Eigen::MatrixXd::Zero(2, 5), g), DimensionError);
}

TEST(Gaussian, DensityIntegratesToOne) {
  GaussianPolicy<double> p(MlpD({1, 1}), std::log(0.1));
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 0.3);
  double sum = 0.0;
  const double lo = -1.0, hi = 1.6, step = 1e-3;
  for (double a = lo; a <= hi; a += step)
    sum += std::exp(p.log_prob(mu, Eigen::VectorXd::Constant(1, a))) * step;
  EXPECT_NEAR(sum, 1.0, 1e-3);
}

TEST(Gaussian, SamplesHaveFixedSpread) {
  GaussianPolicy<double> p(MlpD({2, 3}), std::log(0.1));
  std::mt19937_64 rng(1);
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  double s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) s2 += p.sample(x, rng).squaredNorm();
  EXPECT_NEAR(std::sqrt(s2 / (3.0 * n)), 0.1, 0.002);
}

TEST(Gae, LambdaZeroIsOneStepTd) {
  Eigen::VectorXd r(4), v(5);
  r << 1.0, 0.5, -0.2, 2.0;
  v << 0.3, 0.1, 0.7, -0.4, 0.9;
  const std::vector<bool> done = {false, true, false, false};
  const double g = 0.9;
  const GaeResult res = gae(r, v, done, g, 0.0);
  for (int t = 0; t < 4; ++t) {
    const double expected = r[t] + g * v[t + 1] * (done[t] ? 0.0 : 1.0) - v[t];
    EXPECT_NEAR(res.advantages[t], expected, 1e-15);
    EXPECT_NEAR(res.returns[t], res.advantages[t] + v[t], 1e-15);
  }
}

TEST(Gae, UndiscountedSuffixSums) {
  Eigen::VectorXd r(5);
  r << 1.0, 2.0, 3.0, 4.0, 5.0;
  const GaeResult res = gae(r, Eigen::VectorXd::Zero(6), std::vector<bool>(5, false), 1.0, 1.0);
  const double expected[] = {15.0, 14.0, 12.0, 9.0, 5.0};
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(res.advantages[t], expected[t], 1e-9);
}

TEST(Gae, ZeroRewardsAndValues) {
  const GaeResult res =
      gae(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4), {false, false, true}, 0.99, 0.95);
  EXPECT_TRUE(res.advantages.isZero());
  EXPECT_THROW(gae(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), {false, false, true}, 0.9,
                   0.9),
               DimensionError);
}

TEST(Gae, NormalizedAdvantages) {
  Eigen::VectorXd a(4);
  a << 1.0, 2.0, 3.0, 6.0;
  const Eigen::VectorXd n = normalize_advantages(a);
  EXPECT_NEAR(n.mean(), 0.0, 1e-12);
  EXPECT_NEAR(n.squaredNorm() / 4.0, 1.0, 1e-6);
  EXPECT_TRUE(normalize_advantages(Eigen::VectorXd::Constant(3, 2.0)).isZero());
}

struct PpoSetup {
  std::mt19937_64 rng{7};
  GaussianPolicy<double> policy{MlpD({4, 8, 2}, rng, 0.5), std::log(0.1)};
  ValueFunction<double> value{MlpD({4, 8, 1}, rng), 1.0};
  PpoOptimizers<double> opt;
  PpoConfig cfg;

  PpoBatch<double> batch(int n, double adv, double ratio = 1.0) {
    PpoBatch<double> b;
    b.obs = Eigen::MatrixXd::Random(4, n);
    b.actions.resize(2, n);
    b.old_log_prob.resize(n);
    for (int k = 0; k < n; ++k) {
      const Eigen::VectorXd mu = policy.mean(b.obs.col(k));
      b.actions.col(k) = mu + Eigen::Vector2d(0.05, -0.08);
      b.old_log_prob[k] = policy.log_prob(mu, b.actions.col(k)) - std::log(ratio);
    }
    b.advantages = Eigen::VectorXd::Constant(n, adv);
    b.returns = Eigen::VectorXd::Constant(n, 0.5);
    return b;
  }
};

TEST(Ppo, ZeroAdvantagesNeverMovePolicy) {
  PpoSetup s;
  // Warm Adam up with a real update first so momentum is non-zero.
  s.cfg.epochs = 2;
  s.cfg.minibatch = 8;
  ppo_update(s.policy, s.value, s.batch(16, 1.0), s.cfg, s.opt, s.rng);
  const Eigen::VectorXd before = s.policy.mean_net.params();
  ppo_update(s.policy, s.value, s.batch(16, 0.0), s.cfg, s.opt, s.rng);
  EXPECT_TRUE(s.policy.mean_net.params() == before);
}

TEST(Ppo, PositiveAdvantageRaisesLogProb) {
  PpoSetup s;
  s.cfg.epochs = 1;
  const PpoBatch<double> b = s.batch(1, 1.0);
  const double before = s.policy.log_prob(s.policy.mean(b.obs.col(0)), b.actions.col(0));
  ppo_update(s.policy, s.value, b, s.cfg, s.opt, s.rng);
  const double after = s.policy.log_prob(s.policy.mean(b.obs.col(0)), b.actions.col(0));
  EXPECT_GT(after, before);
}

TEST(Ppo, ClippedRegionHasZeroGradient) {
  const double eps = 0.2;
  EXPECT_EQ(surrogate_grad_logp(1.0 + 2 * eps, 1.0, eps), 0.0);
  EXPECT_EQ(surrogate_grad_logp(1.0 - 2 * eps, -1.0, eps), 0.0);
  EXPECT_NE(surrogate_grad_logp(1.0 - 2 * eps, 1.0, eps), 0.0);
  PpoSetup s;
  s.cfg.epochs = 1;
  const Eigen::VectorXd before = s.policy.mean_net.params();
  const PpoStats st = ppo_update(s.policy, s.value, s.batch(4, 1.0, 1.0 + 2 * eps), s.cfg, s.opt, s.rng);
  EXPECT_TRUE(s.policy.mean_net.params() == before);
  EXPECT_EQ(st.clip_fraction, 1.0);
}

TEST(Ppo, ValueRegressesTowardReturns) {
  PpoSetup s;
  s.cfg.epochs = 200;
  s.cfg.lr = 1e-2;
  const PpoBatch<double> b = s.batch(32, 0.0);
  ppo_update(s.policy, s.value, b, s.cfg, s.opt, s.rng);
  const Eigen::VectorXd v = s.value.batch(b.obs);
  EXPECT_LT((v.array() - 0.5).abs().maxCoeff(), 0.05);
}

TEST(Ppo, EmptyBatchAndNonFiniteLoss) {
  PpoSetup s;
  EXPECT_THROW(ppo_update(s.policy, s.value, s.batch(0, 0.0), s.cfg, s.opt, s.rng), TrainingError);
  PpoBatch<double> b = s.batch(4, 1.0);
  b.returns[0] = std::nan("");
  const Eigen::VectorXd before = s.policy.mean_net.params();
  EXPECT_THROW(ppo_update(s.policy, s.value, b, s.cfg, s.opt, s.rng), TrainingError);
  EXPECT_TRUE(s.policy.mean_net.params() == before);
  PpoConfig bad;
  bad.clip = 1.5;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(RunningNorm, MergedMomentsMatchWholeBatch) {
  Eigen::MatrixXd data = Eigen::MatrixXd::Random(3, 50);
  data.row(1).array() += 4.0;
  RunningNorm n(3);
  n.update(data.leftCols(17));
  n.update(data.rightCols(33));
  const Eigen::VectorXd mean = data.rowwise().mean();
  const Eigen::VectorXd var = (data.colwise() - mean).array().square().rowwise().mean();
  EXPECT_LT((n.mean - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((n.var - var).cwiseAbs().maxCoeff(), 1e-12);
  n.frozen = true;
  n.update(Eigen::MatrixXd::Ones(3, 10));
  EXPECT_LT((n.mean - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Adam, MinimizesQuadratic) {
  Adam<double> opt;
  opt.lr = 0.05;
  Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 2.0);
  for (int i = 0; i < 2000; ++i) opt.step(p, 2.0 * p);
  EXPECT_LT(p.cwiseAbs().maxCoeff(), 1e-3);
}

}  // namespace
}  // namespace morphsim
