#include "mdphom/mdp.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"

using namespace mdphom;

namespace {

FiniteMdp single_state_mdp(double reward, double gamma) {
  FiniteMdp m = FiniteMdp::zeros(1, 1, gamma);
  m.p(0, 0, 0) = 1.0;
  m.r(0, 0) = reward;
  return m;
}

TEST(PolicyEvaluation, GeometricSeries) {
  const FiniteMdp m = single_state_mdp(1.0, 0.99);
  const TabularPolicy pi = TabularPolicy::deterministic({0}, 1);
  const ValueTable vt = policy_evaluation(m, pi, 1e-10);
  EXPECT_NEAR(vt.v[0], 100.0, 1e-8);
}

TEST(PolicyEvaluation, ZeroRewardsGiveZeroValues) {
  Rng rng(11);
  const FiniteMdp base = random_mdp(6, 3, 0.9, rng);
  FiniteMdp m = base;
  std::fill(m.rewards.begin(), m.rewards.end(), 0.0);
  const ValueTable vt = policy_evaluation(m, TabularPolicy::uniform(6, 3), 1e-10);
  for (double x : vt.v) EXPECT_EQ(x, 0.0);
  for (double x : vt.q) EXPECT_EQ(x, 0.0);
}

TEST(PolicyEvaluation, TwoStateChain) {
  // s0 -(a0)-> s1 with reward 1; s1 absorbing with reward 0; gamma 0.5.
  FiniteMdp m = FiniteMdp::zeros(2, 1, 0.5);
  m.p(0, 0, 1) = 1.0;
  m.p(1, 0, 1) = 1.0;
  m.r(0, 0) = 1.0;
  const TabularPolicy pi = TabularPolicy::deterministic({0, 0}, 1);
  const ValueTable vt = policy_evaluation(m, pi, 1e-10);
  EXPECT_NEAR(vt.v[0], 1.0, 1e-9);
  EXPECT_NEAR(vt.v[1], 0.0, 1e-9);
}

TEST(PolicyEvaluation, RejectsGammaOne) {
  const FiniteMdp m = single_state_mdp(1.0, 1.0);
  EXPECT_THROW(policy_evaluation(m, TabularPolicy::deterministic({0}, 1), 1e-10), NoConvergence);
}

TEST(PolicyEvaluation, UniqueAcrossInitializations) {
  Rng rng(5);
  const FiniteMdp m = random_mdp(8, 3, 0.95, rng);
  const TabularPolicy pi = TabularPolicy::random(8, 3, rng);
  const double tol = 1e-10;
  const ValueTable a = policy_evaluation(m, pi, tol);
  std::vector<double> init(m.rewards.size());
  for (auto& x : init) x = rng.uniform(-50.0, 50.0);
  const ValueTable b = policy_evaluation(m, pi, tol, &init);
  for (std::size_t i = 0; i < a.q.size(); ++i) EXPECT_NEAR(a.q[i], b.q[i], 2.0 * tol);
}

TEST(PolicyEvaluation, SatisfiesBellmanResidual) {
  Rng rng(6);
  const FiniteMdp m = random_mdp(7, 4, 0.97, rng);
  const TabularPolicy pi = TabularPolicy::random(7, 4, rng);
  const double tol = 1e-10;
  const ValueTable vt = policy_evaluation(m, pi, tol);
  for (int s = 0; s < 7; ++s)
    for (int a = 0; a < 4; ++a) {
      double next = 0.0;
      for (int s2 = 0; s2 < 7; ++s2) next += m.p(s, a, s2) * vt.v[s2];
      EXPECT_NEAR(vt.q[s * 4 + a], m.r(s, a) + m.gamma * next, tol);
    }
}

TEST(ValueIteration, SingleStateTwoActions) {
  FiniteMdp m = FiniteMdp::zeros(1, 2, 0.9);
  m.p(0, 0, 0) = 1.0;
  m.p(0, 1, 0) = 1.0;
  m.r(0, 0) = 0.0;
  m.r(0, 1) = 1.0;
  const auto [vt, pi] = value_iteration(m, 1e-10);
  EXPECT_NEAR(vt.v[0], 10.0, 1e-8);
  EXPECT_EQ(pi.pi(0, 1), 1.0);
}

TEST(ValueIteration, TieBreaksToLowestAction) {
  Rng rng(3);
  FiniteMdp m = random_mdp(5, 3, 0.9, rng);
  std::fill(m.rewards.begin(), m.rewards.end(), 0.0);
  const auto [vt, pi] = value_iteration(m, 1e-10);
  for (int s = 0; s < 5; ++s) {
    EXPECT_NEAR(vt.v[s], 0.0, 1e-12);
    EXPECT_EQ(pi.pi(s, 0), 1.0);
  }
}

TEST(ValueIteration, MatchesLongHorizonBackupOracle) {
  Rng rng(7);
  const FiniteMdp m = random_mdp(5, 3, 0.9, rng);
  const auto [vt, pi] = value_iteration(m, 1e-10);
  const std::vector<double> oracle = oracles::optimal_q_backup(m, 10000);
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(vt.q[i], oracle[i], 1e-8);
}

TEST(ValueIteration, GreedyPolicyReproducesOptimalValues) {
  Rng rng(9);
  const FiniteMdp m = random_mdp(10, 4, 0.95, rng);
  const double tol = 1e-10;
  const auto [vt, greedy] = value_iteration(m, tol);
  const ValueTable pe = policy_evaluation(m, greedy, tol);
  for (int s = 0; s < 10; ++s) EXPECT_NEAR(pe.v[s], vt.v[s], 2.0 * tol);
}

TEST(ValueIteration, RewardMonotonicity) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    FiniteMdp m = random_mdp(6, 3, 0.9, rng);
    const auto [before, p0] = value_iteration(m, 1e-10);
    const int s = static_cast<int>(rng.uniform_index(6));
    const int a = static_cast<int>(rng.uniform_index(3));
    m.r(s, a) += rng.uniform(0.1, 2.0);
    const auto [after, p1] = value_iteration(m, 1e-10);
    for (std::size_t i = 0; i < before.q.size(); ++i)
      EXPECT_GE(after.q[i], before.q[i] - 2e-10);
  }
}

TEST(MdpIo, RoundTripIsBitExact) {
  Rng rng(21);
  const FiniteMdp m = random_mdp(6, 3, 0.875, rng);
  const std::string path = std::filesystem::temp_directory_path() / "mdphom_roundtrip.json";
  save_mdp(m, path);
  const FiniteMdp loaded = load_mdp(path);
  EXPECT_EQ(loaded.n_states, m.n_states);
  EXPECT_EQ(loaded.n_actions, m.n_actions);
  EXPECT_EQ(loaded.gamma, m.gamma);
  EXPECT_EQ(loaded.transitions, m.transitions);
  EXPECT_EQ(loaded.rewards, m.rewards);
  std::remove(path.c_str());
}

TEST(MdpIo, RejectsNonStochasticRow) {
  nlohmann::json j = mdp_to_json(single_state_mdp(1.0, 0.9));
  j["transitions"][0][0][0] = 0.9;
  EXPECT_THROW(mdp_from_json(j), NonStochasticMatrix);
}

TEST(MdpIo, RejectsBadGamma) {
  nlohmann::json j = mdp_to_json(single_state_mdp(1.0, 0.9));
  j["gamma"] = 1.5;
  EXPECT_THROW(mdp_from_json(j), SchemaError);
}

TEST(MdpIo, RejectsMissingField) {
  nlohmann::json j = mdp_to_json(single_state_mdp(1.0, 0.9));
  j.erase("gamma");
  EXPECT_THROW(mdp_from_json(j), SchemaError);
}

}  // namespace
