#pragma once

// Dense networks with hand-written backpropagation, Adam, fixed-covariance
// Gaussian policies, generalized advantage estimation and the PPO update.
//
// Networks keep all parameters in one flat vector; layers are views into it.
// Batches are column-major: one sample per column.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "morphsim/errors.hpp"

namespace morphsim {

template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Mlp

template <class S>
class Mlp {
 public:
  using Mat = MatT<S>;
  using Vec = VecT<S>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using VecMap = Eigen::Map<Vec>;
  using ConstVecMap = Eigen::Map<const Vec>;

  // Activations of every layer for one batch, input first.
  struct Cache {
    std::vector<Mat> acts;
  };

  Mlp() = default;

  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw ValidationError("network needs at least two layer sizes");
    for (int s : sizes_)
      if (s <= 0) throw ValidationError("layer sizes must be positive");
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) n += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
    params_ = Vec::Zero(n);
  }

  // Glorot-uniform weights, zero biases; the last layer is scaled by
  // output_gain (small values start policies near the zero action).
  template <class R>
  Mlp(std::vector<int> sizes, R& rng, double output_gain = 1.0) : Mlp(std::move(sizes)) {
    for (int l = 0; l < num_layers(); ++l) {
      const double limit = std::sqrt(6.0 / (in(l) + out(l))) * (l + 1 == num_layers() ? output_gain : 1.0);
      std::uniform_real_distribution<double> u(-limit, limit);
      MatMap w = weight(l);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(u(rng));
    }
  }

  const std::vector<int>& sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int in(int l) const { return sizes_[l]; }
  int out(int l) const { return sizes_[l + 1]; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  Eigen::Index num_params() const { return params_.size(); }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  MatMap weight(int l) { return MatMap(params_.data() + offset(l), out(l), in(l)); }
  ConstMatMap weight(int l) const { return ConstMatMap(params_.data() + offset(l), out(l), in(l)); }
  VecMap bias(int l) { return VecMap(params_.data() + offset(l) + out(l) * in(l), out(l)); }
  ConstVecMap bias(int l) const {
    return ConstVecMap(params_.data() + offset(l) + out(l) * in(l), out(l));
  }

  // tanh hidden layers, linear output.
  Mat forward(const Mat& x, Cache* cache = nullptr) const {
    if (x.rows() != input_dim()) throw DimensionError("network input size mismatch");
    if (cache) {
      cache->acts.resize(num_layers() + 1);
      cache->acts[0] = x;
    }
    Mat h = x;
    for (int l = 0; l < num_layers(); ++l) {
      Mat z = weight(l) * h;
      z.colwise() += bias(l);
      if (l + 1 < num_layers()) z = z.array().tanh();
      h = std::move(z);
      if (cache) cache->acts[l + 1] = h;
    }
    return h;
  }

  Vec forward(const Vec& x) const { return forward(Mat(x)).col(0); }

  // Accumulates dL/dparams into grad (same layout as params) given dL/dy for
  // the batch in `cache`; optionally returns dL/dx.
  void backward(const Cache& cache, const Mat& dy, Vec& grad, Mat* dx = nullptr) const {
    if (static_cast<int>(cache.acts.size()) != num_layers() + 1)
      throw DimensionError("backward needs the cache of a forward pass");
    if (dy.rows() != output_dim() || dy.cols() != cache.acts[0].cols())
      throw DimensionError("upstream gradient size mismatch");
    if (grad.size() != num_params()) grad = Vec::Zero(num_params());
    Mat dz = dy;
    for (int l = num_layers() - 1; l >= 0; --l) {
      if (l + 1 < num_layers())
        dz = (dz.array() * (S(1) - cache.acts[l + 1].array().square())).matrix();
      MatMap gw(grad.data() + offset(l), out(l), in(l));
      VecMap gb(grad.data() + offset(l) + out(l) * in(l), out(l));
      gw.noalias() += dz * cache.acts[l].transpose();
      gb += dz.rowwise().sum();
      if (l > 0 || dx) {
        Mat prev = weight(l).transpose() * dz;
        if (l == 0) {
          *dx = std::move(prev);
        } else {
          dz = std::move(prev);
        }
      }
    }
  }

  template <class T>
  Mlp<T> cast() const {
    Mlp<T> m(sizes_);
    m.params() = params_.template cast<T>();
    return m;
  }

 private:
  Eigen::Index offset(int l) const {
    Eigen::Index o = 0;
    for (int k = 0; k < l; ++k) o += sizes_[k] * sizes_[k + 1] + sizes_[k + 1];
    return o;
  }

  std::vector<int> sizes_;
  Vec params_;
};

// ---------------------------------------------------------------------------
// Optimizer

template <class S>
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  VecT<S> m;
  VecT<S> v;
  long steps = 0;

  void step(VecT<S>& params, const VecT<S>& grad) {
    if (m.size() != params.size()) {
      m = VecT<S>::Zero(params.size());
      v = VecT<S>::Zero(params.size());
    }
    ++steps;
    m = S(beta1) * m + S(1 - beta1) * grad;
    v = S(beta2) * v + S(1 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    params.array() -= S(lr / c1) * m.array() / ((v.array() / S(c2)).sqrt() + S(eps));
  }
};

// Rescales grad so its norm is at most max_norm; returns the original norm.
template <class S>
double clip_grad_norm(VecT<S>& grad, double max_norm) {
  const double n = static_cast<double>(grad.norm());
  if (max_norm > 0.0 && n > max_norm) grad *= static_cast<S>(max_norm / n);
  return n;
}

// ---------------------------------------------------------------------------
// Observation normalization

// Running mean and variance (parallel-merge form); apply() standardizes and
// clips. Frozen normalizers ignore updates.
struct RunningNorm {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 0.0;
  double clip = 10.0;
  double min_std = 1e-2;  // inputs that never varied stay bounded
  bool frozen = false;

  RunningNorm() = default;
  explicit RunningNorm(int dim)
      : mean(Eigen::VectorXd::Zero(dim)), var(Eigen::VectorXd::Ones(dim)) {}

  int dim() const { return static_cast<int>(mean.size()); }

  void update(const Eigen::MatrixXd& batch) {
    if (frozen || batch.cols() == 0) return;
    if (batch.rows() != dim()) throw DimensionError("normalizer input size mismatch");
    const double n = static_cast<double>(batch.cols());
    const Eigen::VectorXd bm = batch.rowwise().mean();
    const Eigen::VectorXd bv =
        (batch.colwise() - bm).array().square().rowwise().sum().matrix() / n;
    const double total = count + n;
    const Eigen::VectorXd delta = bm - mean;
    mean += delta * (n / total);
    var = (var * count + bv * n + delta.cwiseAbs2() * (count * n / total)) / total;
    count = total;
  }

  template <class S>
  VecT<S> apply(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) throw DimensionError("normalizer input size mismatch");
    return ((x - mean).array() / var.array().sqrt().max(min_std))
        .cwiseMax(-clip)
        .cwiseMin(clip)
        .matrix()
        .template cast<S>();
  }

  template <class S>
  MatT<S> apply(const Eigen::MatrixXd& x) const {
    if (x.rows() != dim()) throw DimensionError("normalizer input size mismatch");
    const Eigen::ArrayXd inv = 1.0 / var.array().sqrt().max(min_std);
    return ((x.colwise() - mean).array().colwise() * inv)
        .cwiseMax(-clip)
        .cwiseMin(clip)
        .matrix()
        .template cast<S>();
  }
};

// ---------------------------------------------------------------------------
// Policies and values

template <class S>
struct GaussianPolicy {
  Mlp<S> mean_net;
  Eigen::VectorXd log_std;

  GaussianPolicy() = default;
  GaussianPolicy(Mlp<S> net, double log_std_value)
      : mean_net(std::move(net)),
        log_std(Eigen::VectorXd::Constant(mean_net.output_dim(), log_std_value)) {}

  int action_dim() const { return mean_net.output_dim(); }

  Eigen::VectorXd mean(const VecT<S>& x) const {
    return mean_net.forward(x).template cast<double>();
  }

  template <class R>
  Eigen::VectorXd sample(const VecT<S>& x, R& rng) const {
    Eigen::VectorXd a = mean(x);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += std::exp(log_std[i]) * n(rng);
    return a;
  }

  // log N(a; mu, diag(exp(2 log_std)))
  double log_prob(const Eigen::VectorXd& mu, const Eigen::VectorXd& a) const {
    if (mu.size() != a.size() || a.size() != log_std.size())
      throw DimensionError("action size mismatch");
    const Eigen::ArrayXd z = (a - mu).array() * (-log_std.array()).exp();
    return -0.5 * z.square().sum() - log_std.sum() -
           0.5 * static_cast<double>(a.size()) * std::log(2.0 * std::numbers::pi);
  }

  double entropy() const {
    return log_std.sum() +
           0.5 * static_cast<double>(log_std.size()) * (1.0 + std::log(2.0 * std::numbers::pi));
  }
};

// Scalar value network whose raw output is multiplied by `scale` (returns of
// a discounted sum of rewards in [0, 1] are bounded by 1 / (1 - gamma)).
template <class S>
struct ValueFunction {
  Mlp<S> net;
  double scale = 1.0;

  double operator()(const VecT<S>& x) const { return scale * static_cast<double>(net.forward(x)[0]); }

  Eigen::VectorXd batch(const MatT<S>& x) const {
    return (net.forward(x).row(0).transpose().template cast<double>() * scale).eval();
  }
};

// ---------------------------------------------------------------------------
// Advantage estimation

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

// One episode: values has one more entry than rewards (the value of the
// state after the last step, used when that step is not terminal).
inline GaeResult gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                     const std::vector<bool>& dones, double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n + 1 || static_cast<Eigen::Index>(dones.size()) != n)
    throw DimensionError("gae expects n rewards, n dones and n + 1 values");
  GaeResult r{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  double next = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * live - values[t];
    next = delta + gamma * lambda * live * next;
    r.advantages[t] = next;
  }
  r.returns = r.advantages + values.head(n);
  return r;
}

// Zero mean, unit variance; a constant batch maps to zeros.
inline Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& a) {
  if (a.size() == 0) return a;
  const double mean = a.mean();
  const double var = (a.array() - mean).square().mean();
  return (a.array() - mean) / (std::sqrt(var) + 1e-8);
}

// ---------------------------------------------------------------------------
// PPO

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  double lr = 3e-4;
  int epochs = 10;
  int minibatch = 512;
  int batch_steps = 16384;
  double max_grad_norm = 1.0;
  double value_coef = 1.0;
  double entropy_coef = 0.0;  // fixed log-std: entropy is constant
  double target_kl = 0.0;     // > 0: stop the epoch loop once KL passes 1.5x

  void validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw ValidationError("ppo clip must lie in (0, 1)");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in (0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
    if (!(lr > 0.0) || epochs < 0 || minibatch <= 0 || batch_steps <= 0)
      throw ValidationError("invalid ppo schedule");
  }
};

template <class S>
struct PpoBatch {
  MatT<S> obs;                  // normalized observations, one per column
  Eigen::MatrixXd actions;      // one per column
  Eigen::VectorXd old_log_prob;
  Eigen::VectorXd advantages;   // already normalized by the caller if desired
  Eigen::VectorXd returns;

  Eigen::Index size() const { return obs.cols(); }
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  int minibatches = 0;
  int epochs = 0;
};

template <class S>
struct PpoOptimizers {
  Adam<S> policy;
  Adam<S> value;
};

// Gradient of the clipped surrogate -min(r A, clip(r) A) with respect to the
// log-probability of one sample: zero where the clipped branch is active.
inline double surrogate_grad_logp(double ratio, double adv, double clip) {
  const bool clipped = (adv > 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip);
  return clipped ? 0.0 : -adv * ratio;
}

template <class S, class R>
PpoStats ppo_update(GaussianPolicy<S>& policy, ValueFunction<S>& value,
                    const PpoBatch<S>& batch, const PpoConfig& cfg,
                    PpoOptimizers<S>& opt, R& rng) {
  cfg.validate();
  const Eigen::Index n = batch.size();
  if (n == 0) throw TrainingError("empty batch");
  if (batch.actions.cols() != n || batch.old_log_prob.size() != n ||
      batch.advantages.size() != n || batch.returns.size() != n)
    throw DimensionError("ppo batch columns disagree");
  if (batch.actions.rows() != policy.action_dim())
    throw DimensionError("ppo batch action size mismatch");

  const VecT<S> policy_backup = policy.mean_net.params();
  const VecT<S> value_backup = value.net.params();
  const PpoOptimizers<S> opt_backup = opt;
  opt.policy.lr = opt.value.lr = cfg.lr;

  const Eigen::ArrayXd inv_var = (-2.0 * policy.log_std.array()).exp();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  PpoStats stats;
  stats.entropy = policy.entropy();
  double clipped_count = 0.0, counted = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_kl = 0.0;
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.minibatch) {
      const Eigen::Index m = std::min<Eigen::Index>(cfg.minibatch, n - start);
      MatT<S> x(batch.obs.rows(), m);
      Eigen::MatrixXd a(batch.actions.rows(), m);
      Eigen::VectorXd old_lp(m), adv(m), ret(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index i = order[start + k];
        x.col(k) = batch.obs.col(i);
        a.col(k) = batch.actions.col(i);
        old_lp[k] = batch.old_log_prob[i];
        adv[k] = batch.advantages[i];
        ret[k] = batch.returns[i];
      }

      typename Mlp<S>::Cache pc;
      const Eigen::MatrixXd mu = policy.mean_net.forward(x, &pc).template cast<double>();
      MatT<S> dmu(mu.rows(), m);
      double ploss = 0.0;
      for (Eigen::Index k = 0; k < m; ++k) {
        const double lp = policy.log_prob(mu.col(k), a.col(k));
        const double ratio = std::exp(lp - old_lp[k]);
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        ploss += -std::min(ratio * adv[k], clipped * adv[k]);
        const double g = surrogate_grad_logp(ratio, adv[k], cfg.clip) / static_cast<double>(m);
        // d log p / d mu = (a - mu) / sigma^2
        dmu.col(k) = (g * (a.col(k) - mu.col(k)).array() * inv_var).matrix().template cast<S>();
        if (std::abs(ratio - 1.0) > cfg.clip) clipped_count += 1.0;
        stats.approx_kl += old_lp[k] - lp;
        epoch_kl += old_lp[k] - lp;
        counted += 1.0;
      }
      ploss /= static_cast<double>(m);

      typename Mlp<S>::Cache vc;
      const Eigen::VectorXd v = value.net.forward(x, &vc).row(0).transpose().template cast<double>();
      const Eigen::VectorXd target = ret / value.scale;
      const double vloss = (v - target).squaredNorm() / static_cast<double>(m);
      MatT<S> dv = (cfg.value_coef * 2.0 / static_cast<double>(m) * (v - target))
                       .transpose()
                       .template cast<S>();

      if (!std::isfinite(ploss) || !std::isfinite(vloss)) {
        policy.mean_net.params() = policy_backup;
        value.net.params() = value_backup;
        opt = opt_backup;
        throw TrainingError("non-finite loss; update aborted");
      }

      VecT<S> pg = VecT<S>::Zero(policy.mean_net.num_params());
      policy.mean_net.backward(pc, dmu, pg);
      VecT<S> vg = VecT<S>::Zero(value.net.num_params());
      value.net.backward(vc, dv, vg);
      stats.grad_norm += clip_grad_norm(pg, cfg.max_grad_norm);
      clip_grad_norm(vg, cfg.max_grad_norm);
      // A zero gradient carries no information; skipping keeps Adam momentum
      // from moving the parameters on its own.
      if (pg.squaredNorm() > 0) opt.policy.step(policy.mean_net.params(), pg);
      if (vg.squaredNorm() > 0) opt.value.step(value.net.params(), vg);

      stats.policy_loss += ploss;
      stats.value_loss += vloss;
      ++stats.minibatches;
    }
    ++stats.epochs;
    if (cfg.target_kl > 0.0 && epoch_kl / static_cast<double>(n) > 1.5 * cfg.target_kl) break;
  }
  if (stats.minibatches > 0) {
    stats.policy_loss /= stats.minibatches;
    stats.value_loss /= stats.minibatches;
    stats.grad_norm /= stats.minibatches;
  }
  if (counted > 0) {
    stats.clip_fraction = clipped_count / counted;
    stats.approx_kl /= counted;
  }
  return stats;
}

}  // namespace morphsim
