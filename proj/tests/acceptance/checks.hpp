// Formula, gradient and physics checks for the acceptance run. Every expected
// value is computed here from its closed form, not taken from the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "morphsim/design_opt.hpp"

namespace morphsim::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

inline VecX vec1(double x) {
  VecX v(1);
  v << x;
  return v;
}

// Largest absolute deviation over the hand-evaluated examples.
inline Outcome formula_fidelity() {
  std::vector<std::pair<std::string, double>> dev;
  auto check = [&](const std::string& name, double got, double want) {
    dev.push_back({name, std::abs(got - want)});
  };

  // Torque law tau = gear * (kp (p_target - p) - kd pdot).
  check("pd_torque", pd_torque(vec1(2.0), vec1(0.3), vec1(1.0), vec1(0.5), vec1(0.2), vec1(1.0))[0],
        2.0 * (1.0 - 0.5) - 0.3 * 0.2);
  check("pd_equilibrium",
        pd_torque(vec1(2.0), vec1(0.3), vec1(0.4), vec1(0.4), vec1(0.0), vec1(1.0))[0], 0.0);

  // Reward terms on the default character; each case perturbs one error.
  const CharacterModel m = default_character();
  const int n = m.num_dofs();
  VecX q = VecX::Zero(n);
  q[1] = 1.0;
  const RewardWeights w;
  {
    VecX qr = q;
    qr[kRootDofs + body::kShoulderL] = std::sqrt(0.5);  // squared rotation error 0.5
    const RefFrame ref{qr, VecX::Zero(n), keypoints(m, q)};
    const RewardTerms r = reward(m, make_state(m, q, VecX::Zero(n)), ref, VecX::Zero(4), w);
    check("r_p", r.r_p, std::exp(-2.0 * 0.5));
  }
  {
    VecX qd = VecX::Zero(n);
    qd[0] = 1.0;
    qd[3] = -1.0;  // squared velocity error 2
    const RefFrame ref{q, VecX::Zero(n), keypoints(m, q)};
    const RewardTerms r = reward(m, make_state(m, q, qd), ref, VecX::Zero(4), w);
    check("r_v", r.r_v, std::exp(-0.005 * 2.0));
  }
  {
    Eigen::Matrix2Xd kp = keypoints(m, q);
    kp(0, 0) += 0.1;
    kp(1, 2) -= 0.2;  // squared keypoint error 0.05
    const RefFrame ref{q, VecX::Zero(n), kp};
    const RewardTerms r = reward(m, make_state(m, q, VecX::Zero(n)), ref, VecX::Zero(4), w);
    check("r_e", r.r_e, std::exp(-5.0 * 0.05));
  }
  {
    VecX f(2);
    f << 3.0 / 100.0, 4.0 / 100.0;  // (3, 4) N over a 100 N cap
    const RefFrame ref{q, VecX::Zero(n), keypoints(m, q)};
    const RewardTerms r = reward(m, make_state(m, q, VecX::Zero(n)), ref, f, w);
    check("r_vf", r.r_vf, std::exp(-(0.03 * 0.03 + 0.04 * 0.04)));
    check("r_vf_value", r.r_vf, 0.997503122397460);
    const double s = w.w_p + w.w_v + w.w_e + w.w_vf;
    check("r_total", r.total, (w.w_p + w.w_v + w.w_e + w.w_vf * r.r_vf) / s);
  }
  check("wrap", wrap_angle(3.0 - (-3.0)), 6.0 - 2.0 * std::numbers::pi);

  // Curriculum softmax over exp(-s / tau) and the normalized EWMA.
  {
    CurriculumState c;
    c.temperature = 1.0;
    c.add_clip("a");
    c.add_clip("b");
    c.success = {0.0, 1.0};
    const auto p = c.probabilities();
    check("softmax_0", p[0], 1.0 / (1.0 + std::exp(-1.0)));
    check("softmax_1", p[1], std::exp(-1.0) / (1.0 + std::exp(-1.0)));
    CurriculumState e;
    e.add_clip("x");
    record_outcome(e, "x", false);
    record_outcome(e, "x", true);
    check("ewma", e.success[0], (0.5 * 0.0 + 1.0 * 1.0) / 1.5);
  }

  // GAE: one-step TD at lambda 0, suffix sums at gamma = lambda = 1.
  {
    Eigen::VectorXd r(4), v(5);
    r << 1.0, 0.5, -0.2, 2.0;
    v << 0.3, 0.1, 0.7, -0.4, 0.9;
    const std::vector<bool> done{false, true, false, false};
    const GaeResult g = gae(r, v, done, 0.9, 0.0);
    const double td[] = {1.0 + 0.9 * 0.1 - 0.3, 0.5 - 0.1, -0.2 + 0.9 * -0.4 - 0.7,
                         2.0 + 0.9 * 0.9 + 0.4};
    for (int t = 0; t < 4; ++t) check("gae_td" + std::to_string(t), g.advantages[t], td[t]);
    Eigen::VectorXd r5(5);
    r5 << 1.0, 2.0, 3.0, 4.0, 5.0;
    const GaeResult s = gae(r5, Eigen::VectorXd::Zero(6), std::vector<bool>(5, false), 1.0, 1.0);
    const double suffix[] = {15.0, 14.0, 12.0, 9.0, 5.0};
    for (int t = 0; t < 5; ++t) check("gae_sum" + std::to_string(t), s.advantages[t], suffix[t]);
  }

  auto worst = std::max_element(dev.begin(), dev.end(),
                                [](const auto& a, const auto& b) { return a.second < b.second; });
  std::ostringstream os;
  os << dev.size() << " examples, max |error| " << worst->second << " (" << worst->first
     << "), tol 1e-9";
  return {worst->second <= 1e-9, os.str()};
}

// Central differences against backprop for one network shape.
inline double max_gradient_error(const std::vector<int>& sizes, std::uint64_t seed) {
  Rng rng(seed);
  Mlp<double> net(sizes, rng, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Eigen::Index i = 0; i < net.params().size(); ++i) net.params()[i] += 0.05 * nd(rng);
  const int batch = 3;
  Eigen::MatrixXd x(sizes.front(), batch), c(sizes.back(), batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = nd(rng);
  auto loss = [&](const Eigen::MatrixXd& in) { return (net.forward(in).array() * c.array()).sum(); };

  Mlp<double>::Cache cache;
  net.forward(x, &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
  Eigen::MatrixXd dx;
  net.backward(cache, c, grad, &dx);

  auto rel = [](double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s < 1e-7 ? 0.0 : std::abs(a - b) / s;
  };
  const double h = 1e-5;
  double worst = 0.0;
  std::uniform_int_distribution<Eigen::Index> pick(0, net.num_params() - 1);
  for (int k = 0; k < 300; ++k) {
    const Eigen::Index i = pick(rng);
    const double saved = net.params()[i];
    net.params()[i] = saved + h;
    const double up = loss(x);
    net.params()[i] = saved - h;
    const double down = loss(x);
    net.params()[i] = saved;
    worst = std::max(worst, rel(grad[i], (up - down) / (2 * h)));
  }
  for (int k = 0; k < 30; ++k) {
    const Eigen::Index r = k % x.rows(), col = k % batch;
    Eigen::MatrixXd xp = x, xm = x;
    xp(r, col) += h;
    xm(r, col) -= h;
    worst = std::max(worst, rel(dx(r, col), (loss(xp) - loss(xm)) / (2 * h)));
  }
  return worst;
}

// Every layer shape of the controller, its value function and the design
// networks under the given configurations.
inline Outcome gradient_suite(const TrainConfig& tc, const DesignOptConfig& dc) {
  const CharacterModel m = default_character();
  const int obs = observation_dim(m), act = action_dim(m, tc.imitation);
  auto shape = [](int in, const std::vector<int>& hidden, int out) {
    std::vector<int> s{in};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
  };
  const std::vector<std::vector<int>> shapes{
      shape(obs, tc.policy_hidden, act), shape(obs, tc.value_hidden, 1),
      shape(obs, dc.policy_hidden, dc.space.dimension()),
      shape(obs + design_dimension(m), dc.value_hidden, 1)};
  double worst = 0.0;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    worst = std::max(worst, max_gradient_error(shapes[i], 17 + i));
  std::ostringstream os;
  os << shapes.size() << " network shapes, max relative error " << worst << ", tol 1e-4";
  return {worst < 1e-4, os.str()};
}

inline Outcome physics_suite() {
  std::ostringstream os;
  bool pass = true;

  // Free fall of one link against the semi-implicit Euler recurrence.
  {
    CharacterModel m;
    m.links.push_back({"box", 0.5, 2.0, 0.05, box_inertia(2.0, 0.5, 0.05), 0.3, 0.0});
    VecX q(3);
    q << 0.0, 10.0, 0.0;
    SimState s = make_state(m, q, VecX::Zero(3));
    const double dt = 1.0 / 450.0;
    double worst = 0.0;
    for (int k = 1; k <= 200; ++k) {
      s = step(m, s, VecX::Zero(0), dt);
      worst = std::max(worst, std::abs((10.0 - s.q[1]) - 9.81 * dt * dt * k * (k + 1) / 2.0));
    }
    pass = pass && worst <= 1e-12;
    os << "free fall err " << worst << "; ";
  }
  // Double pendulum energy drift over 1 s.
  {
    CharacterModel m;
    const double down = -std::numbers::pi / 2;
    m.links.push_back({"upper", 1.0, 1.0, 0.05, box_inertia(1.0, 1.0, 0.05), down, 0.0});
    m.links.push_back({"lower", 0.8, 0.7, 0.05, box_inertia(0.7, 0.8, 0.05), down, 0.0});
    m.joints.push_back({"elbow", 0, 1, 1.0, -10.0, 10.0, 0.0, 1.0});
    m.pinned_root = true;
    SimConfig cfg;
    cfg.armature = 0.0;
    VecX q(4);
    q << 0.0, 3.0, 1.0, -0.5;
    SimState s = make_state(m, q, VecX::Zero(4), cfg);
    const double e0 = total_energy(m, s, cfg);
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k) {
      s = step(m, s, VecX::Zero(1), 1e-4, cfg);
      worst = std::max(worst, std::abs(total_energy(m, s, cfg) - e0));
    }
    const double drift = worst / std::abs(e0);
    pass = pass && drift < 0.01;
    os << "pendulum drift " << 100.0 * drift << "%/s; ";
  }
  // Linear momentum of the free-floating character under random torques.
  {
    const CharacterModel m = default_character();
    SimConfig cfg;
    cfg.gravity = 0.0;
    Rng rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VecX q = VecX::Zero(m.num_dofs()), qd(m.num_dofs());
    q[1] = 5.0;
    for (Eigen::Index i = 0; i < qd.size(); ++i) qd[i] = u(rng);
    SimState s = make_state(m, q, qd, cfg);
    double worst = 0.0;
    for (int k = 0; k < 450; ++k) {
      VecX tau(m.num_joints());
      for (Eigen::Index j = 0; j < tau.size(); ++j) tau[j] = 30.0 * u(rng);
      const Vec2 before = linear_momentum(m, s);
      s = step(m, s, tau, cfg.dt(), cfg);
      worst = std::max(worst, (linear_momentum(m, s) - before).norm() /
                                  std::max(1.0, before.norm()));
    }
    pass = pass && worst < 1e-8;
    os << "momentum rel " << worst << "; ";
  }
  // Residual forces on airborne feet must act exactly like zero forces.
  {
    const CharacterModel m = default_character();
    Rng rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int mismatches = 0, gated = 0;
    for (int trial = 0; trial < 100; ++trial) {
      VecX q = VecX::Zero(m.num_dofs()), qd(m.num_dofs());
      q[1] = 0.93 + 0.05 * u(rng);
      for (int j = 0; j < m.num_joints(); ++j) q[kRootDofs + j] = 0.2 * u(rng);
      for (Eigen::Index i = 0; i < qd.size(); ++i) qd[i] = u(rng);
      const SimState s = make_state(m, q, qd);
      std::vector<ResidualForce> all, zeroed;
      for (int g = 0; g < 2; ++g) {
        const double a = u(rng);
        ResidualForce f{g, Vec2(0.1 * u(rng), -0.04), Vec2(std::sin(a), std::cos(a)),
                        100.0 * std::abs(u(rng))};
        all.push_back(f);
        if (!s.contact[g]) {
          f.magnitude = 0.0;
          ++gated;
        }
        zeroed.push_back(f);
      }
      const VecX tau = VecX::Constant(m.num_joints(), 5.0 * u(rng));
      if (!(step(m, s, tau, all, 1.0 / 450.0) == step(m, s, tau, zeroed, 1.0 / 450.0)))
        ++mismatches;
    }
    pass = pass && mismatches == 0 && gated > 0;
    os << "gating mismatches " << mismatches << " over " << gated << " gated forces";
  }
  return {pass, os.str()};
}

}  // namespace morphsim::acceptance
