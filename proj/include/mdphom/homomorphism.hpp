#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mdphom/errors.hpp"
#include "mdphom/mdp.hpp"

namespace mdphom {

/// Surjective state map f and per-state action maps g_s onto an abstract
/// state/action index space.
struct FiniteHomomorphism {
  int n_states = 0;
  int n_actions = 0;
  int n_abstract_states = 0;
  int n_abstract_actions = 0;
  std::vector<int> state_map;    // n_states entries in [0, n_abstract_states)
  std::vector<int> action_maps;  // n_states * n_actions entries, row per state

  int f(int s) const { return state_map[s]; }
  int g(int s, int a) const { return action_maps[static_cast<std::size_t>(s) * n_actions + a]; }
  int& g(int s, int a) { return action_maps[static_cast<std::size_t>(s) * n_actions + a]; }

  static FiniteHomomorphism identity(int n_states, int n_actions) {
    FiniteHomomorphism h;
    h.n_states = n_states;
    h.n_actions = n_actions;
    h.n_abstract_states = n_states;
    h.n_abstract_actions = n_actions;
    h.state_map.resize(n_states);
    std::iota(h.state_map.begin(), h.state_map.end(), 0);
    h.action_maps.resize(static_cast<std::size_t>(n_states) * n_actions);
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) h.g(s, a) = a;
    return h;
  }

  /// Checks index ranges and surjectivity of f and of every g_s row.
  void validate() const {
    if (state_map.size() != static_cast<std::size_t>(n_states) ||
        action_maps.size() != static_cast<std::size_t>(n_states) * n_actions)
      throw SchemaError("homomorphism map sizes do not match dimensions");
    if (n_abstract_states <= 0 || n_abstract_actions <= 0)
      throw SchemaError("abstract dimensions must be positive");
    std::vector<char> state_hit(n_abstract_states, 0);
    for (int s = 0; s < n_states; ++s) {
      if (state_map[s] < 0 || state_map[s] >= n_abstract_states)
        throw SchemaError("state_map entry out of range at state " + std::to_string(s));
      state_hit[state_map[s]] = 1;
      std::vector<char> action_hit(n_abstract_actions, 0);
      for (int a = 0; a < n_actions; ++a) {
        const int ab = g(s, a);
        if (ab < 0 || ab >= n_abstract_actions)
          throw SchemaError("action_maps entry out of range at state " + std::to_string(s));
        action_hit[ab] = 1;
      }
      if (std::find(action_hit.begin(), action_hit.end(), 0) != action_hit.end())
        throw SchemaError("action map for state " + std::to_string(s) +
                          " is not surjective onto the abstract actions");
    }
    if (std::find(state_hit.begin(), state_hit.end(), 0) != state_hit.end())
      throw SchemaError("state_map is not surjective onto the abstract states");
  }
};

/// Worst-case residuals of the reward-invariance and transition-equivariance
/// conditions across all preimage representatives.
struct HomomorphismReport {
  double reward_invariance_error = 0.0;
  double transition_equivariance_error = 0.0;
  double tolerance = 0.0;
  bool is_exact = false;
};

/// Thrown when preimage representatives disagree beyond tolerance; carries
/// the quotient and report so callers can still inspect the residuals.
class InconsistentQuotient : public Error {
 public:
  InconsistentQuotient(const std::string& msg, FiniteMdp quotient, HomomorphismReport report)
      : Error(msg), quotient_(std::move(quotient)), report_(report) {}
  const FiniteMdp& quotient() const { return quotient_; }
  const HomomorphismReport& report() const { return report_; }

 private:
  FiniteMdp quotient_;
  HomomorphismReport report_;
};

/// Builds the quotient MDP induced by h. Abstract rewards and transition
/// rows are taken from the lowest-index preimage representative of each
/// abstract state-action pair; disagreement across representatives is
/// measured, not averaged. Throws InconsistentQuotient when either residual
/// exceeds tol.
inline std::pair<FiniteMdp, HomomorphismReport> quotient_mdp(const FiniteMdp& mdp,
                                                             const FiniteHomomorphism& h,
                                                             double tol = 1e-9) {
  h.validate();
  if (h.n_states != mdp.n_states || h.n_actions != mdp.n_actions)
    throw DimensionMismatch("homomorphism dimensions do not match MDP");

  const int n = mdp.n_states, k = mdp.n_actions;
  const int nb = h.n_abstract_states, kb = h.n_abstract_actions;
  FiniteMdp quot = FiniteMdp::zeros(nb, kb, mdp.gamma);
  std::vector<char> filled(static_cast<std::size_t>(nb) * kb, 0);

  // Representative pass in lexicographic (s, a) order.
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < k; ++a) {
      const int sb = h.f(s), ab = h.g(s, a);
      if (filled[static_cast<std::size_t>(sb) * kb + ab]) continue;
      filled[static_cast<std::size_t>(sb) * kb + ab] = 1;
      quot.r(sb, ab) = mdp.r(s, a);
      for (int s2 = 0; s2 < n; ++s2) quot.p(sb, ab, h.f(s2)) += mdp.p(s, a, s2);
    }
  }

  // Residuals over every preimage pair.
  HomomorphismReport report;
  report.tolerance = tol;
  std::vector<double> block_mass(nb);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < k; ++a) {
      const int sb = h.f(s), ab = h.g(s, a);
      report.reward_invariance_error =
          std::max(report.reward_invariance_error, std::abs(quot.r(sb, ab) - mdp.r(s, a)));
      std::fill(block_mass.begin(), block_mass.end(), 0.0);
      for (int s2 = 0; s2 < n; ++s2) block_mass[h.f(s2)] += mdp.p(s, a, s2);
      for (int b = 0; b < nb; ++b)
        report.transition_equivariance_error = std::max(
            report.transition_equivariance_error, std::abs(quot.p(sb, ab, b) - block_mass[b]));
    }
  }
  report.is_exact = report.reward_invariance_error <= tol &&
                    report.transition_equivariance_error <= tol;
  if (!report.is_exact)
    throw InconsistentQuotient("preimage representatives disagree beyond tolerance",
                               std::move(quot), report);
  return {std::move(quot), report};
}

/// Lifts an abstract policy: probability of an abstract action is split
/// uniformly over its preimage under g_s.
inline TabularPolicy lift_policy(const TabularPolicy& abstract_policy,
                                 const FiniteHomomorphism& h) {
  h.validate();
  if (abstract_policy.n_states != h.n_abstract_states ||
      abstract_policy.n_actions != h.n_abstract_actions)
    throw DimensionMismatch("abstract policy dimensions do not match homomorphism");

  TabularPolicy lifted{h.n_states, h.n_actions,
                       std::vector<double>(static_cast<std::size_t>(h.n_states) * h.n_actions)};
  std::vector<int> preimage_count(h.n_abstract_actions);
  for (int s = 0; s < h.n_states; ++s) {
    std::fill(preimage_count.begin(), preimage_count.end(), 0);
    for (int a = 0; a < h.n_actions; ++a) ++preimage_count[h.g(s, a)];
    for (int a = 0; a < h.n_actions; ++a) {
      const int ab = h.g(s, a);
      lifted.pi(s, a) = abstract_policy.pi(h.f(s), ab) / preimage_count[ab];
    }
  }
  return lifted;
}

/// Evaluates the lifted policy on the actual MDP and the abstract policy on
/// the quotient; returns max |Q(s,a) - Qbar(f(s), g_s(a))|.
inline double verify_value_equivalence(const FiniteMdp& mdp, const FiniteHomomorphism& h,
                                       const TabularPolicy& abstract_policy, double tol = 1e-9,
                                       double solver_tol = 1e-10) {
  auto [quot, report] = quotient_mdp(mdp, h, tol);
  const TabularPolicy lifted = lift_policy(abstract_policy, h);
  const ValueTable actual = policy_evaluation(mdp, lifted, solver_tol);
  const ValueTable abstract = policy_evaluation(quot, abstract_policy, solver_tol);
  double max_err = 0.0;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      max_err = std::max(max_err,
                         std::abs(actual.q[static_cast<std::size_t>(s) * mdp.n_actions + a] -
                                  abstract.q[static_cast<std::size_t>(h.f(s)) * quot.n_actions +
                                             h.g(s, a)]));
  return max_err;
}

/// Same comparison for optimal values from value iteration on both MDPs.
inline double verify_optimal_value_equivalence(const FiniteMdp& mdp, const FiniteHomomorphism& h,
                                               double tol = 1e-9, double solver_tol = 1e-10) {
  auto [quot, report] = quotient_mdp(mdp, h, tol);
  const auto [actual, pi] = value_iteration(mdp, solver_tol);
  const auto [abstract, pib] = value_iteration(quot, solver_tol);
  double max_err = 0.0;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      max_err = std::max(max_err,
                         std::abs(actual.q[static_cast<std::size_t>(s) * mdp.n_actions + a] -
                                  abstract.q[static_cast<std::size_t>(h.f(s)) * quot.n_actions +
                                             h.g(s, a)]));
  return max_err;
}

namespace detail {

// Kuhn's augmenting-path matching on an n_actions x n_actions compatibility
// table; rows and columns are scanned in index order so the matching is
// deterministic.
class ActionMatcher {
 public:
  explicit ActionMatcher(int k) : k_(k), compat_(static_cast<std::size_t>(k) * k) {}

  char& compat(int a, int b) { return compat_[static_cast<std::size_t>(a) * k_ + b]; }

  // Returns the match b for each row a, or empty if no perfect matching.
  std::vector<int> perfect_matching() {
    match_of_col_.assign(k_, -1);
    for (int a = 0; a < k_; ++a) {
      seen_.assign(k_, 0);
      if (!augment(a)) return {};
    }
    std::vector<int> match_of_row(k_, -1);
    for (int b = 0; b < k_; ++b)
      if (match_of_col_[b] >= 0) match_of_row[match_of_col_[b]] = b;
    return match_of_row;
  }

 private:
  bool augment(int a) {
    for (int b = 0; b < k_; ++b) {
      if (!compat_[static_cast<std::size_t>(a) * k_ + b] || seen_[b]) continue;
      seen_[b] = 1;
      if (match_of_col_[b] < 0 || augment(match_of_col_[b])) {
        match_of_col_[b] = a;
        return true;
      }
    }
    return false;
  }

  int k_;
  std::vector<char> compat_;
  std::vector<int> match_of_col_;
  std::vector<char> seen_;
};

}  // namespace detail

/// Coarsest lax-bisimulation partition of the state space by refinement:
/// two states share a block iff their action sets can be matched so that
/// rewards agree within tol and block-aggregated transition masses agree
/// within tol, iterated to a fixpoint. Returns the induced homomorphism
/// (abstract action labels follow each block's lowest-index state) and its
/// quotient MDP.
inline std::pair<FiniteHomomorphism, FiniteMdp> minimize_lax(const FiniteMdp& mdp,
                                                             double tol = 0.0) {
  mdp.validate();
  if (tol < 0.0) throw SchemaError("tol must be nonnegative");
  const int n = mdp.n_states, k = mdp.n_actions;

  std::vector<int> block(n, 0);
  int n_blocks = 1;

  // Aggregated transition mass per (state, action, block) for the current
  // partition.
  std::vector<double> mass;
  const auto compute_mass = [&]() {
    mass.assign(static_cast<std::size_t>(n) * k * n_blocks, 0.0);
    for (int s = 0; s < n; ++s)
      for (int a = 0; a < k; ++a) {
        double* row = &mass[(static_cast<std::size_t>(s) * k + a) * n_blocks];
        for (int s2 = 0; s2 < n; ++s2) row[block[s2]] += mdp.p(s, a, s2);
      }
  };

  const auto rows_compatible = [&](int s, int a, int t, int b) {
    if (std::abs(mdp.r(s, a) - mdp.r(t, b)) > tol) return false;
    const double* ma = &mass[(static_cast<std::size_t>(s) * k + a) * n_blocks];
    const double* mb = &mass[(static_cast<std::size_t>(t) * k + b) * n_blocks];
    for (int c = 0; c < n_blocks; ++c)
      if (std::abs(ma[c] - mb[c]) > tol) return false;
    return true;
  };

  // Matching from t's actions onto s's actions; empty when infeasible.
  const auto match_states = [&](int s, int t) {
    detail::ActionMatcher matcher(k);
    for (int b = 0; b < k; ++b)
      for (int a = 0; a < k; ++a) matcher.compat(b, a) = rows_compatible(s, a, t, b) ? 1 : 0;
    return matcher.perfect_matching();
  };

  while (true) {
    compute_mass();
    std::vector<int> new_block(n, -1);
    int next_id = 0;
    std::vector<std::vector<int>> members(n_blocks);
    for (int s = 0; s < n; ++s) members[block[s]].push_back(s);
    for (int b = 0; b < n_blocks; ++b) {
      std::vector<int> reps;
      for (const int s : members[b]) {
        bool placed = false;
        for (const int r : reps) {
          if (!match_states(r, s).empty()) {
            new_block[s] = new_block[r];
            placed = true;
            break;
          }
        }
        if (!placed) {
          new_block[s] = next_id++;
          reps.push_back(s);
        }
      }
    }
    const bool stable = next_id == n_blocks;
    block.swap(new_block);
    n_blocks = next_id;
    if (stable) break;
  }

  // Canonical block ids ordered by each block's lowest state index.
  {
    std::vector<int> relabel(n_blocks, -1);
    int next_id = 0;
    for (int s = 0; s < n; ++s)
      if (relabel[block[s]] < 0) relabel[block[s]] = next_id++;
    for (int s = 0; s < n; ++s) block[s] = relabel[block[s]];
  }

  compute_mass();
  std::vector<int> rep_of_block(n_blocks, -1);
  for (int s = n - 1; s >= 0; --s) rep_of_block[block[s]] = s;

  FiniteHomomorphism h;
  h.n_states = n;
  h.n_actions = k;
  h.n_abstract_states = n_blocks;
  h.n_abstract_actions = k;
  h.state_map = block;
  h.action_maps.resize(static_cast<std::size_t>(n) * k);
  for (int s = 0; s < n; ++s) {
    const int r = rep_of_block[block[s]];
    if (r == s) {
      for (int a = 0; a < k; ++a) h.g(s, a) = a;
      continue;
    }
    const std::vector<int> m = match_states(r, s);
    if (m.empty())
      throw NoConvergence("internal error: refinement fixpoint lost a matching");
    // m[b] is the representative action matched to this state's action b.
    for (int b = 0; b < k; ++b) h.g(s, b) = m[b];
  }

  auto [quot, report] = quotient_mdp(mdp, h, std::max(tol, 1e-9));
  (void)report;
  return {std::move(h), std::move(quot)};
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline nlohmann::json homomorphism_to_json(const FiniteHomomorphism& h) {
  nlohmann::json j;
  j["state_map"] = h.state_map;
  auto maps = nlohmann::json::array();
  for (int s = 0; s < h.n_states; ++s) {
    auto row = nlohmann::json::array();
    for (int a = 0; a < h.n_actions; ++a) row.push_back(h.g(s, a));
    maps.push_back(std::move(row));
  }
  j["action_maps"] = std::move(maps);
  return j;
}

inline FiniteHomomorphism homomorphism_from_json(const nlohmann::json& j) {
  for (const char* field : {"state_map", "action_maps"})
    if (!j.contains(field)) throw SchemaError(std::string("missing field: ") + field);
  FiniteHomomorphism h;
  try {
    h.state_map = j.at("state_map").get<std::vector<int>>();
    h.n_states = static_cast<int>(h.state_map.size());
    const auto& maps = j.at("action_maps");
    if (static_cast<int>(maps.size()) != h.n_states)
      throw SchemaError("action_maps outer size does not match state_map");
    if (h.n_states == 0) throw SchemaError("empty homomorphism");
    h.n_actions = static_cast<int>(maps[0].size());
    for (const auto& row : maps) {
      if (static_cast<int>(row.size()) != h.n_actions)
        throw SchemaError("ragged action_maps rows");
      for (const auto& x : row) h.action_maps.push_back(x.get<int>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed homomorphism JSON: ") + e.what());
  }
  h.n_abstract_states = 1 + *std::max_element(h.state_map.begin(), h.state_map.end());
  h.n_abstract_actions = 1 + *std::max_element(h.action_maps.begin(), h.action_maps.end());
  h.validate();
  return h;
}

inline void save_homomorphism(const FiniteHomomorphism& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot open file for writing: " + path);
  out << homomorphism_to_json(h).dump(2) << "\n";
}

inline FiniteHomomorphism load_homomorphism(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  return homomorphism_from_json(j);
}

}  // namespace mdphom
