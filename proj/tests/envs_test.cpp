#include "mdphom/envs.hpp"

#include <gtest/gtest.h>

using namespace mdphom;

namespace {

TEST(Pendulum, RewardAtHangingAndUpright) {
  const auto [next_down, r_down] = pendulum_step({M_PI, 0.0}, 0.0);
  EXPECT_NEAR(r_down, 0.0, 1e-15);
  const auto [next_up, r_up] = pendulum_step({0.0, 0.0}, 0.0);
  EXPECT_DOUBLE_EQ(r_up, 1.0);
}

TEST(Pendulum, Z2EquivarianceIsExact) {
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const PendulumState s{rng.uniform(-M_PI, M_PI), rng.uniform(-8.0, 8.0)};
    const double a = rng.uniform(-1.0, 1.0);
    const auto [next, reward] = pendulum_step(s, a);
    const auto [next_flip, reward_flip] = pendulum_step({-s.theta, -s.theta_dot}, -a);
    EXPECT_EQ(next_flip.theta, -next.theta);
    EXPECT_EQ(next_flip.theta_dot, -next.theta_dot);
    EXPECT_EQ(reward_flip, reward);
  }
}

TEST(Pendulum, SpeedClippedAndAngleWrapped) {
  const auto [next, r] = pendulum_step({0.5, 7.9}, 1.0);
  EXPECT_LE(std::abs(next.theta_dot), 8.0);
  PendulumState s{3.0, 8.0};
  for (int i = 0; i < 100; ++i) s = pendulum_step(s, 1.0).first;
  EXPECT_LE(std::abs(s.theta), M_PI);
}

TEST(Pendulum, ObservationMapAndFlip) {
  const PendulumState s{0.7, -2.0};
  const auto obs = pendulum_observation(s);
  EXPECT_DOUBLE_EQ(obs[0], std::cos(0.7));
  EXPECT_DOUBLE_EQ(obs[1], std::sin(0.7));
  EXPECT_DOUBLE_EQ(obs[2], -2.0);
  const auto flipped = pendulum_flip_observation(obs);
  EXPECT_DOUBLE_EQ(flipped[0], obs[0]);
  EXPECT_DOUBLE_EQ(flipped[1], -obs[1]);
  EXPECT_DOUBLE_EQ(flipped[2], -obs[2]);
}

TEST(Pendulum, ResetIsDeterministicPerSeed) {
  PendulumSwingup env1, env2;
  const auto o1 = env1.reset(123);
  const auto o2 = env2.reset(123);
  EXPECT_EQ(o1, o2);
  const auto s1 = env1.step({0.37});
  const auto s2 = env2.step({0.37});
  EXPECT_EQ(s1.observation, s2.observation);
  EXPECT_EQ(s1.reward, s2.reward);
}

TEST(LqrSolve, ZeroDynamicsGiveZeroGain) {
  LinearQuadraticEnv env;
  env.A = Eigen::MatrixXd::Zero(2, 2);
  env.B = Eigen::MatrixXd::Identity(2, 2);
  env.Q = Eigen::MatrixXd::Identity(2, 2);
  env.R = Eigen::MatrixXd::Identity(2, 2);
  env.noise_l = Eigen::MatrixXd::Zero(2, 2);
  const LqrSolution sol = lqr_solve(env, 0.99);
  EXPECT_NEAR(sol.K.cwiseAbs().maxCoeff(), 0.0, 1e-12);
  EXPECT_NEAR((sol.P - env.Q).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(LqrSolve, ScalarMatchesLongIterationOracle) {
  LinearQuadraticEnv env;
  env.A = Eigen::MatrixXd::Constant(1, 1, 0.9);
  env.B = Eigen::MatrixXd::Constant(1, 1, 1.0);
  env.Q = Eigen::MatrixXd::Constant(1, 1, 1.0);
  env.R = Eigen::MatrixXd::Constant(1, 1, 1.0);
  env.noise_l = Eigen::MatrixXd::Zero(1, 1);
  const double gamma = 0.99;
  const LqrSolution sol = lqr_solve(env, gamma);
  // Independent oracle: value iteration on quadratic coefficients.
  double p = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double a = 0.9, b = 1.0, q = 1.0, r = 1.0;
    p = q + gamma * a * p * a -
        gamma * gamma * a * p * b * (1.0 / (r + gamma * b * p * b)) * b * p * a;
  }
  EXPECT_NEAR(sol.P(0, 0), p, 1e-8);
}

TEST(LqrSolve, RolloutValueMatchesQuadraticForm) {
  LinearQuadraticEnv env = LinearQuadraticEnv::make_default(2, 1, /*sigma=*/0.0, 7);
  env.bound = 1e9;  // no clipping for the analytic comparison
  const double gamma = 0.9;
  const LqrSolution sol = lqr_solve(env, gamma);
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd s(2);
    s << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
    double discounted = 0.0;
    Eigen::VectorXd x = s;
    double g = 1.0;
    for (int t = 0; t < 500; ++t) {
      const Eigen::VectorXd a = sol.K * x;
      discounted += g * env.reward(x, a);
      x = env.dynamics_mean(x, a);
      g *= gamma;
    }
    EXPECT_NEAR(discounted, -s.dot(sol.P * s), 1e-6);
  }
}

TEST(LqrPolicyValue, AgreesWithRiccatiAtOptimum) {
  const LinearQuadraticEnv env = LinearQuadraticEnv::make_default(2, 2, 0.05, 3);
  const double gamma = 0.95;
  const LqrSolution sol = lqr_solve(env, gamma);
  const LqrPolicyValue pv = lqr_policy_value(env, sol.K, gamma);
  EXPECT_NEAR((pv.P - sol.P).cwiseAbs().maxCoeff(), 0.0, 1e-9);
  EXPECT_NEAR(pv.value_constant, sol.value_constant, 1e-9);
}

TEST(Reparameterize, RewardInvarianceAndPushforward) {
  Rng rng(11);
  const LinearQuadraticEnv env = LinearQuadraticEnv::make_default(2, 2, 0.1, 5);
  Eigen::MatrixXd f(2, 2), g(2, 2);
  f << 1.3, -0.4, 0.2, 0.9;
  g << 0.8, 0.3, -0.2, 1.1;
  const LinearQuadraticEnv abstract = reparameterize(env, f, g);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd s(2), a(2);
    s << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    a << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    // Invariance of reward.
    EXPECT_NEAR(abstract.reward(f * s, g * a), env.reward(s, a), 1e-12);
    // Pushforward of the transition kernel: means map through f.
    const Eigen::VectorXd pushed = f * env.dynamics_mean(s, a);
    const Eigen::VectorXd abstract_mean = abstract.dynamics_mean(f * s, g * a);
    EXPECT_NEAR((pushed - abstract_mean).cwiseAbs().maxCoeff(), 0.0, 1e-10);
  }
  // Covariances match: F Sigma F' == Lbar Lbar'.
  const Eigen::MatrixXd pushed_cov =
      f * env.noise_l * env.noise_l.transpose() * f.transpose();
  const Eigen::MatrixXd abstract_cov = abstract.noise_l * abstract.noise_l.transpose();
  EXPECT_NEAR((pushed_cov - abstract_cov).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(MakeEnv, RegistryNamesAndSeedFlag) {
  const auto pend = make_env("pendulum");
  EXPECT_EQ(pend->state_dim(), 3);
  const auto lqr = make_env("lqr", 4);
  EXPECT_EQ(lqr->name(), "lqr");
  EXPECT_THROW(make_env("cartpole"), SchemaError);
}

}  // namespace
