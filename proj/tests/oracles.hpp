#pragma once

// Test-only oracles, kept independent of the library solver paths: value
// backups are written over v (not q) and run for a fixed iteration budget
// instead of a convergence test.

#include <cmath>
#include <vector>

#include "mdphom/mdp.hpp"

namespace oracles {

// Long-horizon Bellman expectation backup on the state-value function;
// returns the induced q table.
inline std::vector<double> policy_q_backup(const mdphom::FiniteMdp& m,
                                           const mdphom::TabularPolicy& pi, long iters) {
  const int n = m.n_states, k = m.n_actions;
  std::vector<double> v(n, 0.0), v_next(n, 0.0);
  for (long it = 0; it < iters; ++it) {
    for (int s = 0; s < n; ++s) {
      double vs = 0.0;
      for (int a = 0; a < k; ++a) {
        double next = 0.0;
        for (int s2 = 0; s2 < n; ++s2) next += m.p(s, a, s2) * v[s2];
        vs += pi.pi(s, a) * (m.r(s, a) + m.gamma * next);
      }
      v_next[s] = vs;
    }
    v.swap(v_next);
  }
  std::vector<double> q(static_cast<std::size_t>(n) * k, 0.0);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < k; ++a) {
      double next = 0.0;
      for (int s2 = 0; s2 < n; ++s2) next += m.p(s, a, s2) * v[s2];
      q[static_cast<std::size_t>(s) * k + a] = m.r(s, a) + m.gamma * next;
    }
  return q;
}

// Long-horizon Bellman optimality backup on v; returns the induced q* table.
inline std::vector<double> optimal_q_backup(const mdphom::FiniteMdp& m, long iters) {
  const int n = m.n_states, k = m.n_actions;
  std::vector<double> v(n, 0.0), v_next(n, 0.0);
  for (long it = 0; it < iters; ++it) {
    for (int s = 0; s < n; ++s) {
      double best = -1e300;
      for (int a = 0; a < k; ++a) {
        double next = 0.0;
        for (int s2 = 0; s2 < n; ++s2) next += m.p(s, a, s2) * v[s2];
        best = std::max(best, m.r(s, a) + m.gamma * next);
      }
      v_next[s] = best;
    }
    v.swap(v_next);
  }
  std::vector<double> q(static_cast<std::size_t>(n) * k, 0.0);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < k; ++a) {
      double next = 0.0;
      for (int s2 = 0; s2 < n; ++s2) next += m.p(s, a, s2) * v[s2];
      q[static_cast<std::size_t>(s) * k + a] = m.r(s, a) + m.gamma * next;
    }
  return q;
}

}  // namespace oracles
