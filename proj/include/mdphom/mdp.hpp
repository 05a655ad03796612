#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdphom/errors.hpp"
#include "mdphom/rng.hpp"

namespace mdphom {

/// Tabular MDP with dense transition tensor [s][a][s'] and reward matrix
/// [s][a]. All values are owned; instances are immutable by convention after
/// construction and safe to share across threads.
struct FiniteMdp {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.99;
  std::vector<double> transitions;  // n_states * n_actions * n_states
  std::vector<double> rewards;      // n_states * n_actions

  static FiniteMdp zeros(int n_states, int n_actions, double gamma) {
    FiniteMdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.gamma = gamma;
    m.transitions.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
    m.rewards.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
    return m;
  }

  double p(int s, int a, int s2) const {
    return transitions[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double& p(int s, int a, int s2) {
    return transitions[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double r(int s, int a) const { return rewards[static_cast<std::size_t>(s) * n_actions + a]; }
  double& r(int s, int a) { return rewards[static_cast<std::size_t>(s) * n_actions + a]; }

  /// Checks stochasticity of every transition row (sum within row_tol of 1,
  /// entries >= 0), finiteness of rewards, and gamma in (0, 1].
  void validate(double row_tol = 1e-12) const {
    if (n_states <= 0 || n_actions <= 0) throw SchemaError("MDP dimensions must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw SchemaError("gamma must lie in (0, 1]");
    if (transitions.size() != static_cast<std::size_t>(n_states) * n_actions * n_states)
      throw SchemaError("transition tensor has wrong size");
    if (rewards.size() != static_cast<std::size_t>(n_states) * n_actions)
      throw SchemaError("reward matrix has wrong size");
    for (int s = 0; s < n_states; ++s) {
      for (int a = 0; a < n_actions; ++a) {
        double sum = 0.0;
        for (int s2 = 0; s2 < n_states; ++s2) {
          const double x = p(s, a, s2);
          if (!(x >= 0.0))
            throw NonStochasticMatrix("negative transition probability at state " +
                                      std::to_string(s) + ", action " + std::to_string(a));
          sum += x;
        }
        if (std::abs(sum - 1.0) > row_tol)
          throw NonStochasticMatrix("transition row for state " + std::to_string(s) +
                                    ", action " + std::to_string(a) + " sums to " +
                                    std::to_string(sum));
        if (!std::isfinite(r(s, a)))
          throw SchemaError("non-finite reward at state " + std::to_string(s) + ", action " +
                            std::to_string(a));
      }
    }
  }
};

/// Row-stochastic policy matrix; a deterministic policy is a row with a
/// single 1.
struct TabularPolicy {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;  // n_states * n_actions

  double pi(int s, int a) const { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
  double& pi(int s, int a) { return probs[static_cast<std::size_t>(s) * n_actions + a]; }

  static TabularPolicy uniform(int n_states, int n_actions) {
    TabularPolicy p{n_states, n_actions,
                    std::vector<double>(static_cast<std::size_t>(n_states) * n_actions,
                                        1.0 / n_actions)};
    return p;
  }

  static TabularPolicy deterministic(const std::vector<int>& actions, int n_actions) {
    TabularPolicy p{static_cast<int>(actions.size()), n_actions,
                    std::vector<double>(actions.size() * n_actions, 0.0)};
    for (std::size_t s = 0; s < actions.size(); ++s) p.probs[s * n_actions + actions[s]] = 1.0;
    return p;
  }

  static TabularPolicy random(int n_states, int n_actions, Rng& rng) {
    TabularPolicy p{n_states, n_actions,
                    std::vector<double>(static_cast<std::size_t>(n_states) * n_actions)};
    for (int s = 0; s < n_states; ++s) {
      double sum = 0.0;
      for (int a = 0; a < n_actions; ++a) {
        const double x = rng.uniform(0.05, 1.0);
        p.pi(s, a) = x;
        sum += x;
      }
      for (int a = 0; a < n_actions; ++a) p.pi(s, a) /= sum;
    }
    return p;
  }

  void validate(double row_tol = 1e-12) const {
    if (probs.size() != static_cast<std::size_t>(n_states) * n_actions)
      throw SchemaError("policy matrix has wrong size");
    for (int s = 0; s < n_states; ++s) {
      double sum = 0.0;
      for (int a = 0; a < n_actions; ++a) {
        if (!(pi(s, a) >= 0.0))
          throw NonStochasticMatrix("negative policy probability at state " + std::to_string(s));
        sum += pi(s, a);
      }
      if (std::abs(sum - 1.0) > row_tol)
        throw NonStochasticMatrix("policy row for state " + std::to_string(s) + " sums to " +
                                  std::to_string(sum));
    }
  }
};

struct ValueTable {
  std::vector<double> v;  // per state
  std::vector<double> q;  // per state-action, row-major [s][a]
};

namespace detail {

// One Bellman expectation backup of q under policy. Returns sup-norm change.
inline double policy_backup(const FiniteMdp& m, const TabularPolicy& pi, std::vector<double>& q,
                            std::vector<double>& v_scratch) {
  const int n = m.n_states, k = m.n_actions;
  for (int s = 0; s < n; ++s) {
    double vs = 0.0;
    for (int a = 0; a < k; ++a) vs += pi.pi(s, a) * q[static_cast<std::size_t>(s) * k + a];
    v_scratch[s] = vs;
  }
  double delta = 0.0;
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < k; ++a) {
      double next = 0.0;
      const double* row = &m.transitions[(static_cast<std::size_t>(s) * k + a) * n];
      for (int s2 = 0; s2 < n; ++s2) next += row[s2] * v_scratch[s2];
      const double updated = m.r(s, a) + m.gamma * next;
      delta = std::max(delta, std::abs(updated - q[static_cast<std::size_t>(s) * k + a]));
      q[static_cast<std::size_t>(s) * k + a] = updated;
    }
  }
  return delta;
}

// One Bellman optimality backup. Returns sup-norm change.
inline double optimality_backup(const FiniteMdp& m, std::vector<double>& q,
                                std::vector<double>& v_scratch) {
  const int n = m.n_states, k = m.n_actions;
  for (int s = 0; s < n; ++s) {
    double best = q[static_cast<std::size_t>(s) * k];
    for (int a = 1; a < k; ++a) best = std::max(best, q[static_cast<std::size_t>(s) * k + a]);
    v_scratch[s] = best;
  }
  double delta = 0.0;
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < k; ++a) {
      double next = 0.0;
      const double* row = &m.transitions[(static_cast<std::size_t>(s) * k + a) * n];
      for (int s2 = 0; s2 < n; ++s2) next += row[s2] * v_scratch[s2];
      const double updated = m.r(s, a) + m.gamma * next;
      delta = std::max(delta, std::abs(updated - q[static_cast<std::size_t>(s) * k + a]));
      q[static_cast<std::size_t>(s) * k + a] = updated;
    }
  }
  return delta;
}

// Stopping threshold on successive sup-norm changes that guarantees both a
// Bellman residual <= tol and a distance to the fixed point <= tol.
inline double stop_threshold(double tol, double gamma) {
  return tol * (1.0 - gamma) / std::max(gamma, 0.5);
}

constexpr long kMaxSolverIterations = 1000000;

}  // namespace detail

/// Iterative (Jacobi) policy evaluation with sup-norm stopping. The returned
/// q table has Bellman residual <= tol and lies within tol of the exact fixed
/// point. Rejects gamma = 1.
inline ValueTable policy_evaluation(const FiniteMdp& mdp, const TabularPolicy& policy,
                                    double tol = 1e-10,
                                    const std::vector<double>* q_init = nullptr) {
  mdp.validate();
  policy.validate();
  if (mdp.n_states != policy.n_states || mdp.n_actions != policy.n_actions)
    throw DimensionMismatch("policy dimensions do not match MDP");
  if (tol <= 0.0) throw SchemaError("tol must be positive");
  if (mdp.gamma >= 1.0) throw NoConvergence("policy evaluation requires gamma < 1");

  const int n = mdp.n_states, k = mdp.n_actions;
  std::vector<double> q(static_cast<std::size_t>(n) * k, 0.0);
  if (q_init) {
    if (q_init->size() != q.size()) throw DimensionMismatch("q_init has wrong size");
    q = *q_init;
  }
  std::vector<double> v(n, 0.0);
  const double stop = detail::stop_threshold(tol, mdp.gamma);
  long iter = 0;
  while (true) {
    const double delta = detail::policy_backup(mdp, policy, q, v);
    if (delta <= stop) break;
    if (++iter > detail::kMaxSolverIterations)
      throw NoConvergence("policy evaluation exceeded iteration cap");
  }
  ValueTable out;
  out.q = std::move(q);
  out.v.assign(n, 0.0);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < k; ++a) out.v[s] += policy.pi(s, a) * out.q[static_cast<std::size_t>(s) * k + a];
  return out;
}

/// Value iteration; returns optimal values and the greedy policy with argmax
/// ties broken toward the lowest action index.
inline std::pair<ValueTable, TabularPolicy> value_iteration(const FiniteMdp& mdp,
                                                            double tol = 1e-10) {
  mdp.validate();
  if (tol <= 0.0) throw SchemaError("tol must be positive");
  if (mdp.gamma >= 1.0) throw NoConvergence("value iteration requires gamma < 1");

  const int n = mdp.n_states, k = mdp.n_actions;
  std::vector<double> q(static_cast<std::size_t>(n) * k, 0.0);
  std::vector<double> v(n, 0.0);
  const double stop = detail::stop_threshold(tol, mdp.gamma);
  long iter = 0;
  while (true) {
    const double delta = detail::optimality_backup(mdp, q, v);
    if (delta <= stop) break;
    if (++iter > detail::kMaxSolverIterations)
      throw NoConvergence("value iteration exceeded iteration cap");
  }
  ValueTable out;
  out.q = q;
  out.v.assign(n, 0.0);
  std::vector<int> greedy(n, 0);
  for (int s = 0; s < n; ++s) {
    int best = 0;
    for (int a = 1; a < k; ++a)
      if (q[static_cast<std::size_t>(s) * k + a] > q[static_cast<std::size_t>(s) * k + best])
        best = a;
    greedy[s] = best;
    out.v[s] = q[static_cast<std::size_t>(s) * k + best];
  }
  return {std::move(out), TabularPolicy::deterministic(greedy, k)};
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline nlohmann::json mdp_to_json(const FiniteMdp& m) {
  nlohmann::json j;
  j["n_states"] = m.n_states;
  j["n_actions"] = m.n_actions;
  j["gamma"] = m.gamma;
  auto trans = nlohmann::json::array();
  for (int s = 0; s < m.n_states; ++s) {
    auto per_state = nlohmann::json::array();
    for (int a = 0; a < m.n_actions; ++a) {
      auto row = nlohmann::json::array();
      for (int s2 = 0; s2 < m.n_states; ++s2) row.push_back(m.p(s, a, s2));
      per_state.push_back(std::move(row));
    }
    trans.push_back(std::move(per_state));
  }
  j["transitions"] = std::move(trans);
  auto rew = nlohmann::json::array();
  for (int s = 0; s < m.n_states; ++s) {
    auto row = nlohmann::json::array();
    for (int a = 0; a < m.n_actions; ++a) row.push_back(m.r(s, a));
    rew.push_back(std::move(row));
  }
  j["rewards"] = std::move(rew);
  return j;
}

inline FiniteMdp mdp_from_json(const nlohmann::json& j) {
  for (const char* field : {"n_states", "n_actions", "gamma", "transitions", "rewards"})
    if (!j.contains(field)) throw SchemaError(std::string("missing field: ") + field);
  FiniteMdp m;
  try {
    m.n_states = j.at("n_states").get<int>();
    m.n_actions = j.at("n_actions").get<int>();
    m.gamma = j.at("gamma").get<double>();
    if (m.n_states <= 0 || m.n_actions <= 0) throw SchemaError("MDP dimensions must be positive");
    const auto& trans = j.at("transitions");
    const auto& rew = j.at("rewards");
    if (static_cast<int>(trans.size()) != m.n_states ||
        static_cast<int>(rew.size()) != m.n_states)
      throw SchemaError("outer dimension mismatch");
    m.transitions.reserve(static_cast<std::size_t>(m.n_states) * m.n_actions * m.n_states);
    m.rewards.reserve(static_cast<std::size_t>(m.n_states) * m.n_actions);
    for (int s = 0; s < m.n_states; ++s) {
      if (static_cast<int>(trans[s].size()) != m.n_actions ||
          static_cast<int>(rew[s].size()) != m.n_actions)
        throw SchemaError("action dimension mismatch at state " + std::to_string(s));
      for (int a = 0; a < m.n_actions; ++a) {
        if (static_cast<int>(trans[s][a].size()) != m.n_states)
          throw SchemaError("transition row length mismatch at state " + std::to_string(s));
        for (int s2 = 0; s2 < m.n_states; ++s2)
          m.transitions.push_back(trans[s][a][s2].get<double>());
        m.rewards.push_back(rew[s][a].get<double>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed MDP JSON: ") + e.what());
  }
  if (!(m.gamma > 0.0 && m.gamma <= 1.0)) throw SchemaError("gamma must lie in (0, 1]");
  m.validate(1e-9);
  return m;
}

inline void save_mdp(const FiniteMdp& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot open file for writing: " + path);
  out << mdp_to_json(m).dump(2) << "\n";
}

inline FiniteMdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  return mdp_from_json(j);
}

/// Random dense MDP with strictly positive transition rows; useful for tests
/// and property checks.
inline FiniteMdp random_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
  FiniteMdp m = FiniteMdp::zeros(n_states, n_actions, gamma);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double sum = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        const double x = rng.uniform(0.01, 1.0);
        m.p(s, a, s2) = x;
        sum += x;
      }
      for (int s2 = 0; s2 < n_states; ++s2) m.p(s, a, s2) /= sum;
      // Re-normalize the largest entry so the row sums to 1 exactly.
      int arg = 0;
      double total = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        total += m.p(s, a, s2);
        if (m.p(s, a, s2) > m.p(s, a, arg)) arg = s2;
      }
      m.p(s, a, arg) += 1.0 - total;
      m.r(s, a) = rng.uniform(-1.0, 1.0);
    }
  }
  return m;
}

}  // namespace mdphom
