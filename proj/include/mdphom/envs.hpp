#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mdphom/errors.hpp"
#include "mdphom/rng.hpp"

namespace mdphom {

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
};

/// Analytic continuous-control environment. Actions live in
/// [-action_bound, action_bound]^action_dim and are clipped before the
/// dynamics; each instance owns a private random stream seeded at reset.
class ContinuousEnv {
 public:
  virtual ~ContinuousEnv() = default;
  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;  // observation dimension
  virtual int action_dim() const = 0;
  virtual int episode_length() const = 0;
  virtual double action_bound() const { return 1.0; }
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepResult step(const std::vector<double>& action) = 0;
};

// ---------------------------------------------------------------------------
// Pendulum swingup
// ---------------------------------------------------------------------------

struct PendulumState {
  double theta = 0.0;      // wrapped to [-pi, pi]
  double theta_dot = 0.0;  // clipped to [-8, 8]
};

namespace pendulum {

constexpr double kMass = 1.0;
constexpr double kLength = 1.0;
constexpr double kGravity = 10.0;
constexpr double kDt = 0.05;
constexpr double kTorqueScale = 2.0;
constexpr double kMaxSpeed = 8.0;
constexpr int kEpisodeLength = 1000;

}  // namespace pendulum

/// One frictionless pendulum step under semi-implicit Euler. Every term is an
/// odd function of (theta, theta_dot, action), so negating all three negates
/// the next state bit-exactly while the reward is invariant.
inline std::pair<PendulumState, double> pendulum_step(const PendulumState& s, double action) {
  using namespace pendulum;
  const double a = std::clamp(action, -1.0, 1.0);
  const double reward = (1.0 + std::cos(s.theta)) / 2.0;
  const double accel = (3.0 * kGravity / (2.0 * kLength)) * std::sin(s.theta) +
                       (3.0 / (kMass * kLength * kLength)) * (kTorqueScale * a);
  PendulumState next;
  next.theta_dot = std::clamp(s.theta_dot + kDt * accel, -kMaxSpeed, kMaxSpeed);
  next.theta = std::remainder(s.theta + kDt * next.theta_dot, 2.0 * M_PI);
  return {next, reward};
}

inline std::vector<double> pendulum_observation(const PendulumState& s) {
  return {std::cos(s.theta), std::sin(s.theta), s.theta_dot};
}

/// Z2 action on observations: (cos, sin, vel) -> (cos, -sin, -vel).
inline std::vector<double> pendulum_flip_observation(const std::vector<double>& obs) {
  return {obs[0], -obs[1], -obs[2]};
}

class PendulumSwingup final : public ContinuousEnv {
 public:
  std::string name() const override { return "pendulum"; }
  int state_dim() const override { return 3; }
  int action_dim() const override { return 1; }
  int episode_length() const override { return pendulum::kEpisodeLength; }

  std::vector<double> reset(std::uint64_t seed) override {
    rng_ = Rng(derive_seed(seed, "pendulum.reset"));
    state_.theta = rng_.uniform(-M_PI, M_PI);
    state_.theta_dot = rng_.uniform(-1.0, 1.0);
    return pendulum_observation(state_);
  }

  StepResult step(const std::vector<double>& action) override {
    auto [next, reward] = pendulum_step(state_, action.at(0));
    state_ = next;
    return {pendulum_observation(state_), reward};
  }

  PendulumState phase_state() const { return state_; }
  void set_phase_state(const PendulumState& s) { state_ = s; }

 private:
  PendulumState state_;
  Rng rng_{0};
};

// ---------------------------------------------------------------------------
// Linear-quadratic system
// ---------------------------------------------------------------------------

/// s' = A s + B a + noise_l * xi with xi ~ N(0, I); reward -(s'Qs + a'Ra).
/// Q and R are positive definite. Any invertible coordinate change (F, G)
/// yields an exactly homomorphic image (see reparameterize below).
struct LinearQuadraticEnv final : public ContinuousEnv {
  Eigen::MatrixXd A, B, Q, R;
  Eigen::MatrixXd noise_l;  // state_dim x state_dim
  double bound = 1.0;
  int horizon = 200;

  std::string name() const override { return "lqr"; }
  int state_dim() const override { return static_cast<int>(A.rows()); }
  int action_dim() const override { return static_cast<int>(B.cols()); }
  int episode_length() const override { return horizon; }
  double action_bound() const override { return bound; }

  double reward(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    return -(s.dot(Q * s) + a.dot(R * a));
  }

  Eigen::VectorXd dynamics_mean(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    return A * s + B * a;
  }

  Eigen::VectorXd clip_action(const Eigen::VectorXd& a) const {
    return a.cwiseMax(-bound).cwiseMin(bound);
  }

  std::vector<double> reset(std::uint64_t seed) override {
    rng_ = Rng(derive_seed(seed, "lqr.reset"));
    state_ = sample_initial_state(rng_);
    return to_std(state_);
  }

  StepResult step(const std::vector<double>& action) override {
    Eigen::VectorXd a = clip_action(Eigen::Map<const Eigen::VectorXd>(action.data(), action.size()));
    const double r = reward(state_, a);
    Eigen::VectorXd xi(state_dim());
    for (int i = 0; i < xi.size(); ++i) xi[i] = rng_.normal();
    state_ = dynamics_mean(state_, a) + noise_l * xi;
    return {to_std(state_), r};
  }

  Eigen::VectorXd sample_initial_state(Rng& rng) const {
    Eigen::VectorXd s(state_dim());
    for (int i = 0; i < s.size(); ++i) s[i] = rng.uniform(-0.5, 0.5);
    return s;
  }

  static std::vector<double> to_std(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  }

  /// Stable default instance: spectral radius of A below 1 so bounded
  /// policies keep values finite.
  static LinearQuadraticEnv make_default(int n = 2, int m = 1, double sigma = 0.05,
                                         std::uint64_t seed = 0) {
    Rng rng(derive_seed(seed, "lqr.make"));
    LinearQuadraticEnv env;
    env.A = Eigen::MatrixXd(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) env.A(i, j) = rng.uniform(-1.0, 1.0);
    const double radius = env.A.eigenvalues().cwiseAbs().maxCoeff();
    env.A *= 0.8 / std::max(radius, 0.1);
    env.B = Eigen::MatrixXd(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) env.B(i, j) = rng.uniform(-1.0, 1.0);
    env.Q = Eigen::MatrixXd::Identity(n, n);
    env.R = 0.1 * Eigen::MatrixXd::Identity(m, m);
    env.noise_l = sigma * Eigen::MatrixXd::Identity(n, n);
    return env;
  }

 private:
  Eigen::VectorXd state_;
  Rng rng_{0};
};

/// Coordinate change s -> F s, a -> G a: the returned system is the exact
/// continuous MDP homomorphic image of env (rewards invariant, transition
/// pushforward matched, including the noise covariance).
inline LinearQuadraticEnv reparameterize(const LinearQuadraticEnv& env, const Eigen::MatrixXd& F,
                                         const Eigen::MatrixXd& G) {
  const Eigen::MatrixXd f_inv = F.inverse();
  const Eigen::MatrixXd g_inv = G.inverse();
  LinearQuadraticEnv out = env;
  out.A = F * env.A * f_inv;
  out.B = F * env.B * g_inv;
  out.Q = f_inv.transpose() * env.Q * f_inv;
  out.R = g_inv.transpose() * env.R * g_inv;
  out.noise_l = F * env.noise_l;
  return out;
}

struct LqrSolution {
  Eigen::MatrixXd K;  // optimal gain, a = K s
  Eigen::MatrixXd P;  // value matrix, V*(s) = -s'Ps - constant
  double value_constant = 0.0;
};

/// Discounted discrete-time Riccati fixed point by iteration; residual is
/// driven below 1e-12 in the sup norm.
inline LqrSolution lqr_solve(const LinearQuadraticEnv& env, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw SchemaError("lqr_solve requires gamma in (0, 1)");
  const int n = env.state_dim();
  Eigen::MatrixXd p = env.Q;
  for (long iter = 0; iter < 1000000; ++iter) {
    const Eigen::MatrixXd bpb = env.R + gamma * env.B.transpose() * p * env.B;
    const Eigen::MatrixXd next = env.Q + gamma * env.A.transpose() * p * env.A -
                                 gamma * gamma * env.A.transpose() * p * env.B *
                                     bpb.inverse() * env.B.transpose() * p * env.A;
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (!p.allFinite() || p.cwiseAbs().maxCoeff() > 1e12)
      throw RiccatiDivergence("Riccati iteration diverged");
    if (change <= 1e-13 * std::max(1.0, p.cwiseAbs().maxCoeff())) {
      LqrSolution sol;
      sol.P = p;
      const Eigen::MatrixXd bpb_final = env.R + gamma * env.B.transpose() * p * env.B;
      sol.K = -gamma * bpb_final.inverse() * env.B.transpose() * p * env.A;
      const Eigen::MatrixXd cov = env.noise_l * env.noise_l.transpose();
      sol.value_constant = gamma * (p * cov).trace() / (1.0 - gamma);
      (void)n;
      return sol;
    }
  }
  throw RiccatiDivergence("Riccati iteration did not converge");
}

struct LqrPolicyValue {
  Eigen::MatrixXd P;  // V^K(s) = -s'Ps - constant
  double value_constant = 0.0;
};

/// Value matrix of a fixed linear policy a = K s (Lyapunov fixed point).
inline LqrPolicyValue lqr_policy_value(const LinearQuadraticEnv& env, const Eigen::MatrixXd& K,
                                       double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw SchemaError("lqr_policy_value requires gamma in (0,1)");
  const Eigen::MatrixXd closed = env.A + env.B * K;
  const Eigen::MatrixXd cost = env.Q + K.transpose() * env.R * K;
  Eigen::MatrixXd p = cost;
  for (long iter = 0; iter < 1000000; ++iter) {
    const Eigen::MatrixXd next = cost + gamma * closed.transpose() * p * closed;
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (!p.allFinite() || p.cwiseAbs().maxCoeff() > 1e12)
      throw RiccatiDivergence("Lyapunov iteration diverged (unstable closed loop)");
    if (change <= 1e-13 * std::max(1.0, p.cwiseAbs().maxCoeff())) {
      LqrPolicyValue out;
      out.P = p;
      const Eigen::MatrixXd cov = env.noise_l * env.noise_l.transpose();
      out.value_constant = gamma * (p * cov).trace() / (1.0 - gamma);
      return out;
    }
  }
  throw RiccatiDivergence("Lyapunov iteration did not converge");
}

/// Q(s, a) = r(s, a) + gamma * E V(s') for a quadratic value -s'Ps - c.
inline double lqr_q_value(const LinearQuadraticEnv& env, const Eigen::MatrixXd& P,
                          double value_constant, double gamma, const Eigen::VectorXd& s,
                          const Eigen::VectorXd& a) {
  const Eigen::VectorXd mean = env.dynamics_mean(s, a);
  const Eigen::MatrixXd cov = env.noise_l * env.noise_l.transpose();
  return env.reward(s, a) - gamma * (mean.dot(P * mean) + (P * cov).trace() + value_constant);
}

/// Gradient of the same Q with respect to the action.
inline Eigen::VectorXd lqr_q_action_gradient(const LinearQuadraticEnv& env,
                                             const Eigen::MatrixXd& P, double gamma,
                                             const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
  const Eigen::VectorXd mean = env.dynamics_mean(s, a);
  return -2.0 * env.R * a - 2.0 * gamma * env.B.transpose() * P * mean;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

inline std::unique_ptr<ContinuousEnv> make_env(const std::string& name, std::uint64_t seed = 0) {
  if (name == "pendulum") return std::make_unique<PendulumSwingup>();
  if (name == "lqr")
    return std::make_unique<LinearQuadraticEnv>(LinearQuadraticEnv::make_default(2, 1, 0.05, seed));
  throw SchemaError("unknown environment: " + name);
}

}  // namespace mdphom
