#include "mdphom/homomorphism.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "builders.hpp"

using namespace mdphom;

namespace {

TEST(QuotientMdp, IdentityHomomorphismReproducesInput) {
  Rng rng(2);
  const FiniteMdp m = random_mdp(5, 3, 0.9, rng);
  const auto h = FiniteHomomorphism::identity(5, 3);
  const auto [quot, report] = quotient_mdp(m, h, 1e-12);
  EXPECT_EQ(quot.transitions, m.transitions);
  EXPECT_EQ(quot.rewards, m.rewards);
  EXPECT_EQ(report.reward_invariance_error, 0.0);
  EXPECT_EQ(report.transition_equivariance_error, 0.0);
  EXPECT_TRUE(report.is_exact);
}

TEST(QuotientMdp, TwoStateSymmetricCollapse) {
  // Both states mirror each other's rewards and transitions.
  FiniteMdp m = FiniteMdp::zeros(2, 2, 0.9);
  for (int s = 0; s < 2; ++s) {
    m.p(s, 0, s) = 0.25;
    m.p(s, 0, 1 - s) = 0.75;
    m.p(s, 1, s) = 0.6;
    m.p(s, 1, 1 - s) = 0.4;
    m.r(s, 0) = 0.5;
    m.r(s, 1) = -0.25;
  }
  FiniteHomomorphism h;
  h.n_states = 2;
  h.n_actions = 2;
  h.n_abstract_states = 1;
  h.n_abstract_actions = 2;
  h.state_map = {0, 0};
  h.action_maps = {0, 1, 0, 1};
  const auto [quot, report] = quotient_mdp(m, h, 1e-12);
  EXPECT_EQ(quot.n_states, 1);
  EXPECT_TRUE(report.is_exact);
  // Block sums: all mass lands in the single abstract state.
  EXPECT_DOUBLE_EQ(quot.p(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(quot.p(0, 1, 0), 1.0);
  EXPECT_DOUBLE_EQ(quot.r(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(quot.r(0, 1), -0.25);
}

TEST(QuotientMdp, PerturbedRewardIsMeasured) {
  FiniteMdp m = FiniteMdp::zeros(2, 1, 0.9);
  for (int s = 0; s < 2; ++s) {
    m.p(s, 0, 0) = 0.5;
    m.p(s, 0, 1) = 0.5;
    m.r(s, 0) = 1.0;
  }
  m.r(1, 0) += 0.1;
  FiniteHomomorphism h;
  h.n_states = 2;
  h.n_actions = 1;
  h.n_abstract_states = 1;
  h.n_abstract_actions = 1;
  h.state_map = {0, 0};
  h.action_maps = {0, 0};
  try {
    quotient_mdp(m, h, 1e-9);
    FAIL() << "expected InconsistentQuotient";
  } catch (const InconsistentQuotient& e) {
    EXPECT_NEAR(e.report().reward_invariance_error, 0.1, 1e-12);
    EXPECT_FALSE(e.report().is_exact);
  }
  // With a permissive tolerance the same residual is simply reported.
  const auto [quot, report] = quotient_mdp(m, h, 0.2);
  EXPECT_NEAR(report.reward_invariance_error, 0.1, 1e-12);
  EXPECT_TRUE(report.is_exact);
}

TEST(LiftPolicy, UniformSplitOverPreimage) {
  FiniteHomomorphism h;
  h.n_states = 1;
  h.n_actions = 3;
  h.n_abstract_states = 1;
  h.n_abstract_actions = 2;
  h.state_map = {0};
  h.action_maps = {0, 0, 1};
  TabularPolicy abstract{1, 2, {0.6, 0.4}};
  const TabularPolicy lifted = lift_policy(abstract, h);
  EXPECT_DOUBLE_EQ(lifted.pi(0, 0), 0.3);
  EXPECT_DOUBLE_EQ(lifted.pi(0, 1), 0.3);
  EXPECT_DOUBLE_EQ(lifted.pi(0, 2), 0.4);
}

TEST(LiftPolicy, IdentityHomomorphismIsNoop) {
  Rng rng(4);
  const auto h = FiniteHomomorphism::identity(4, 3);
  const TabularPolicy abstract = TabularPolicy::random(4, 3, rng);
  const TabularPolicy lifted = lift_policy(abstract, h);
  EXPECT_EQ(lifted.probs, abstract.probs);
}

TEST(LiftPolicy, DeterministicThroughBijectiveMaps) {
  Rng rng(8);
  const auto mir = builders::mirror_mdp(random_mdp(3, 3, 0.9, rng), rng);
  std::vector<int> actions = {2, 0, 1};
  const TabularPolicy abstract = TabularPolicy::deterministic(actions, 3);
  const TabularPolicy lifted = lift_policy(abstract, mir.h);
  for (int s = 0; s < mir.mdp.n_states; ++s) {
    int chosen = -1;
    for (int a = 0; a < 3; ++a)
      if (lifted.pi(s, a) == 1.0) chosen = a;
    ASSERT_GE(chosen, 0);
    // Inverse consistency: g_s(lifted action) equals the abstract action.
    EXPECT_EQ(mir.h.g(s, chosen), actions[mir.h.f(s)]);
  }
}

TEST(LiftPolicy, PreimageSumsMatchAbstractPolicy) {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(4));
    const int k = 2 + static_cast<int>(rng.uniform_index(4));
    const auto mir = builders::mirror_mdp(random_mdp(n, k, 0.9, rng), rng);
    const TabularPolicy abstract = TabularPolicy::random(n, k, rng);
    const TabularPolicy lifted = lift_policy(abstract, mir.h);
    for (int s = 0; s < 2 * n; ++s) {
      std::vector<double> mass(k, 0.0);
      for (int a = 0; a < k; ++a) mass[mir.h.g(s, a)] += lifted.pi(s, a);
      for (int ab = 0; ab < k; ++ab)
        EXPECT_NEAR(mass[ab], abstract.pi(mir.h.f(s), ab), 1e-15);
    }
  }
}

TEST(VerifyValueEquivalence, IdentityHomomorphism) {
  Rng rng(5);
  const FiniteMdp m = random_mdp(6, 2, 0.95, rng);
  const auto h = FiniteHomomorphism::identity(6, 2);
  const TabularPolicy abstract = TabularPolicy::random(6, 2, rng);
  EXPECT_LE(verify_value_equivalence(m, h, abstract, 1e-9, 1e-10), 2e-10);
}

TEST(VerifyValueEquivalence, MirroredFourStateMdp) {
  Rng rng(6);
  const auto mir = builders::mirror_mdp(random_mdp(2, 2, 0.95, rng), rng);
  const TabularPolicy uniform = TabularPolicy::uniform(2, 2);
  EXPECT_LE(verify_value_equivalence(mir.mdp, mir.h, uniform, 1e-9, 1e-10), 1e-8);
}

TEST(VerifyValueEquivalence, OptimalValuesPerEqThree) {
  Rng rng(7);
  const auto mir = builders::mirror_mdp(random_mdp(2, 3, 0.95, rng), rng);
  EXPECT_LE(verify_optimal_value_equivalence(mir.mdp, mir.h, 1e-9, 1e-10), 1e-8);
}

TEST(VerifyValueEquivalence, ExactHomomorphismGivesSolverLevelGap) {
  // Theorem-level property: exact homomorphism + any abstract policy.
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(3));
    const int k = 2 + static_cast<int>(rng.uniform_index(3));
    const auto mir = builders::mirror_mdp(random_mdp(n, k, 0.9, rng), rng);
    const TabularPolicy abstract = TabularPolicy::random(n, k, rng);
    EXPECT_LE(verify_value_equivalence(mir.mdp, mir.h, abstract, 1e-9, 1e-10), 2e-10);
  }
}

TEST(MinimizeLax, GenericMdpKeepsIdentityPartition) {
  Rng rng(9);
  const FiniteMdp m = random_mdp(6, 2, 0.9, rng);
  const auto [h, quot] = minimize_lax(m, 0.0);
  EXPECT_EQ(h.n_abstract_states, 6);
  EXPECT_EQ(quot.transitions, m.transitions);
  EXPECT_EQ(quot.rewards, m.rewards);
}

TEST(MinimizeLax, MirroredCopiesCollapse) {
  Rng rng(10);
  const auto mir = builders::mirror_mdp(random_mdp(2, 3, 0.9, rng), rng);
  const auto [h, quot] = minimize_lax(mir.mdp, 0.0);
  EXPECT_EQ(h.n_abstract_states, 2);
  // Recovered blocks coincide with the construction's collapse map.
  for (int s = 0; s < 4; ++s)
    for (int t = 0; t < 4; ++t)
      EXPECT_EQ(h.state_map[s] == h.state_map[t], mir.h.state_map[s] == mir.h.state_map[t]);
}

TEST(MinimizeLax, PendulumGridHalvesStateCount) {
  const FiniteMdp m = builders::pendulum_grid_mdp(2, 2, 0.9);
  const auto [h, quot] = minimize_lax(m, 0.0);
  EXPECT_EQ(h.n_abstract_states, (m.n_states + 1) / 2);
}

TEST(MinimizeLax, Idempotent) {
  Rng rng(11);
  const auto mir = builders::mirror_mdp(random_mdp(3, 2, 0.9, rng), rng);
  const auto [h1, quot1] = minimize_lax(mir.mdp, 0.0);
  const auto [h2, quot2] = minimize_lax(quot1, 0.0);
  EXPECT_EQ(h2.n_abstract_states, quot1.n_states);
}

TEST(MinimizeLax, NeverGrowsStateCount) {
  Rng rng(12);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(6));
    const int k = 2 + static_cast<int>(rng.uniform_index(3));
    const FiniteMdp m = random_mdp(n, k, 0.9, rng);
    const auto [h, quot] = minimize_lax(m, 0.0);
    EXPECT_LE(h.n_abstract_states, n);
  }
}

TEST(MinimizeLax, QuotientVerifiesAtTolerance) {
  Rng rng(14);
  const auto mir = builders::mirror_mdp(random_mdp(3, 3, 0.9, rng), rng);
  const auto [h, quot] = minimize_lax(mir.mdp, 0.0);
  const TabularPolicy abstract = TabularPolicy::random(h.n_abstract_states, 3, rng);
  EXPECT_LE(verify_value_equivalence(mir.mdp, h, abstract, 1e-9, 1e-10), 2e-10);
}

TEST(HomomorphismIo, RoundTrip) {
  Rng rng(16);
  const auto mir = builders::mirror_mdp(random_mdp(3, 2, 0.9, rng), rng);
  const std::string path = std::filesystem::temp_directory_path() / "mdphom_hom.json";
  save_homomorphism(mir.h, path);
  const FiniteHomomorphism loaded = load_homomorphism(path);
  EXPECT_EQ(loaded.state_map, mir.h.state_map);
  EXPECT_EQ(loaded.action_maps, mir.h.action_maps);
  EXPECT_EQ(loaded.n_abstract_states, mir.h.n_abstract_states);
  std::remove(path.c_str());
}

TEST(HomomorphismIo, RejectsNonSurjectiveMaps) {
  nlohmann::json j;
  j["state_map"] = {0, 2};  // skips abstract state 1
  j["action_maps"] = {{0, 1}, {0, 1}};
  EXPECT_THROW(homomorphism_from_json(j), SchemaError);
}

}  // namespace
