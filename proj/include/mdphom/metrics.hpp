#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mdphom/errors.hpp"
#include "mdphom/mdp.hpp"

namespace mdphom {

namespace detail {

// Successive-shortest-path transportation solver. Nodes 0..n-1 are sources,
// n..n+m-1 sinks; Dijkstra runs on reduced costs so node potentials double
// as a dual certificate.
class TransportSolver {
 public:
  TransportSolver(const std::vector<double>& p, const std::vector<double>& q,
                  const std::vector<double>& ground)
      : n_(static_cast<int>(p.size())),
        m_(static_cast<int>(q.size())),
        cost_(ground),
        supply_(p),
        demand_(q),
        flow_(p.size() * q.size(), 0.0),
        pot_(p.size() + q.size(), 0.0) {}

  // Returns false if the augmentation cap is hit (should not happen on
  // well-formed inputs).
  bool solve(double& primal_out) {
    const int v = n_ + m_;
    std::vector<double> dist(v);
    std::vector<int> parent(v);
    std::vector<char> done(v);
    const long max_augment = 8L * n_ * m_ + 4L * (n_ + m_) + 64;
    long augments = 0;
    while (true) {
      // Multi-source Dijkstra over the residual graph (dense).
      std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
      std::fill(parent.begin(), parent.end(), -1);
      std::fill(done.begin(), done.end(), 0);
      for (int i = 0; i < n_; ++i)
        if (supply_[i] > 0.0) dist[i] = 0.0;
      for (int round = 0; round < v; ++round) {
        int u = -1;
        for (int w = 0; w < v; ++w)
          if (!done[w] && (u < 0 || dist[w] < dist[u])) u = w;
        if (u < 0 || dist[u] == std::numeric_limits<double>::infinity()) break;
        done[u] = 1;
        if (u < n_) {
          const int i = u;
          for (int j = 0; j < m_; ++j) {
            const double rc = cost_[static_cast<std::size_t>(i) * m_ + j] + pot_[i] - pot_[n_ + j];
            const double cand = dist[u] + std::max(rc, 0.0);
            if (cand < dist[n_ + j]) {
              dist[n_ + j] = cand;
              parent[n_ + j] = u;
            }
          }
        } else {
          const int j = u - n_;
          for (int i = 0; i < n_; ++i) {
            if (flow_[static_cast<std::size_t>(i) * m_ + j] <= 0.0) continue;
            const double rc = -cost_[static_cast<std::size_t>(i) * m_ + j] + pot_[n_ + j] - pot_[i];
            const double cand = dist[u] + std::max(rc, 0.0);
            if (cand < dist[i]) {
              dist[i] = cand;
              parent[i] = u;
            }
          }
        }
      }
      int sink = -1;
      for (int j = 0; j < m_; ++j)
        if (demand_[j] > 0.0 && dist[n_ + j] < std::numeric_limits<double>::infinity() &&
            (sink < 0 || dist[n_ + j] < dist[n_ + sink]))
          sink = j;
      if (sink < 0) break;
      const double reach = dist[n_ + sink];
      for (int w = 0; w < v; ++w) pot_[w] += std::min(dist[w], reach);

      // Bottleneck along the parent path.
      double delta = demand_[sink];
      for (int w = n_ + sink; parent[w] >= 0; w = parent[w]) {
        const int u = parent[w];
        if (u >= n_) delta = std::min(delta, flow_[static_cast<std::size_t>(w) * m_ + (u - n_)]);
      }
      int start = n_ + sink;
      while (parent[start] >= 0) start = parent[start];
      delta = std::min(delta, supply_[start]);

      for (int w = n_ + sink; parent[w] >= 0; w = parent[w]) {
        const int u = parent[w];
        if (u < n_)
          flow_[static_cast<std::size_t>(u) * m_ + (w - n_)] += delta;
        else
          flow_[static_cast<std::size_t>(w) * m_ + (u - n_)] -= delta;
      }
      supply_[start] -= delta;
      demand_[sink] -= delta;
      if (supply_[start] < 0.0) supply_[start] = 0.0;
      if (demand_[sink] < 0.0) demand_[sink] = 0.0;
      if (++augments > max_augment) return false;
    }
    double primal = 0.0;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < m_; ++j)
        primal += flow_[static_cast<std::size_t>(i) * m_ + j] *
                  cost_[static_cast<std::size_t>(i) * m_ + j];
    primal_out = primal;
    return true;
  }

  // Dual value under (alpha_i, beta_j) = (-pot_i, pot_{n+j}) against the
  // original marginals, plus the worst feasibility violation.
  std::pair<double, double> dual_certificate(const std::vector<double>& p,
                                             const std::vector<double>& q) const {
    double dual = 0.0, violation = 0.0;
    for (int i = 0; i < n_; ++i) dual -= p[i] * pot_[i];
    for (int j = 0; j < m_; ++j) dual += q[j] * pot_[n_ + j];
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < m_; ++j)
        violation = std::max(violation, (pot_[n_ + j] - pot_[i]) -
                                            cost_[static_cast<std::size_t>(i) * m_ + j]);
    return {dual, violation};
  }

 private:
  int n_, m_;
  std::vector<double> cost_;
  std::vector<double> supply_, demand_;
  std::vector<double> flow_;
  std::vector<double> pot_;
};

// Non-throwing certified solve for use inside parallel sweeps; returns false
// on cap overrun or a failed certificate.
inline bool certified_transport(const std::vector<double>& p, const std::vector<double>& q,
                                const std::vector<double>& ground, double& cost_out) {
  TransportSolver solver(p, q, ground);
  double primal = 0.0;
  if (!solver.solve(primal)) return false;
  const auto [dual, violation] = solver.dual_certificate(p, q);
  if (violation > 1e-9 || std::abs(primal - dual) > 1e-9) return false;
  cost_out = primal;
  return true;
}

}  // namespace detail

/// Exact Kantorovich (Wasserstein-1) optimal transport cost between discrete
/// distributions p and q under a nonnegative ground cost (row-major
/// |p| x |q|). The solution is certified against its dual; the primal-dual
/// gap is kept below 1e-9.
inline double kantorovich(const std::vector<double>& p, const std::vector<double>& q,
                          const std::vector<double>& ground) {
  if (ground.size() != p.size() * q.size())
    throw DimensionMismatch("ground cost size does not match marginals");
  double sp = 0.0, sq = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw InfeasibleMarginals("negative mass in p");
    sp += x;
  }
  for (double x : q) {
    if (!(x >= 0.0)) throw InfeasibleMarginals("negative mass in q");
    sq += x;
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
    throw InfeasibleMarginals("marginals must each sum to 1 within 1e-9");
  for (double c : ground)
    if (!(c >= 0.0)) throw InfeasibleMarginals("ground cost must be nonnegative");

  double cost = 0.0;
  if (!detail::certified_transport(p, q, ground, cost))
    throw NoConvergence("transport dual certificate failed");
  return cost;
}

/// Fixed point of a reward/transport metric operator together with the
/// residual trace of the iteration that produced it.
struct MetricTable {
  int size = 0;  // states for the bisimulation metric, state-action pairs for lax
  std::vector<double> d;  // size x size, symmetric, zero diagonal
  double c_r = 1.0;
  double c_t = 0.99;
  long iterations_run = 0;
  double residual = 0.0;
  std::vector<double> residual_history;

  double at(int i, int j) const { return d[static_cast<std::size_t>(i) * size + j]; }
};

namespace detail {

constexpr long kMaxMetricSweeps = 100000;

inline void check_metric_weights(double c_r, double c_t) {
  if (c_r < 0.0) throw SchemaError("c_r must be nonnegative");
  if (!(c_t >= 0.0)) throw SchemaError("c_t must be nonnegative");
  if (c_t >= 1.0) throw NoConvergence("metric iteration requires c_t < 1");
}

}  // namespace detail

/// Bisimulation metric over states: the operator takes, per action, the
/// reward gap plus the transport distance between next-state distributions
/// under the current metric, and maximizes over actions. Exact action
/// matching is required, which is what the lax variant relaxes.
inline MetricTable bisim_metric(const FiniteMdp& mdp, double c_r, double c_t,
                                double tol = 1e-10) {
  mdp.validate();
  detail::check_metric_weights(c_r, c_t);
  const int n = mdp.n_states, k = mdp.n_actions;
  MetricTable table;
  table.size = n;
  table.c_r = c_r;
  table.c_t = c_t;
  table.d.assign(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> next(table.d.size(), 0.0);

  std::vector<std::vector<double>> rows(n * k);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < k; ++a) {
      auto& row = rows[static_cast<std::size_t>(s) * k + a];
      row.resize(n);
      for (int s2 = 0; s2 < n; ++s2) row[s2] = mdp.p(s, a, s2);
    }

  while (true) {
    double residual = 0.0;
    bool failed = false;
#pragma omp parallel for schedule(dynamic) reduction(max : residual) reduction(|| : failed)
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        double value = 0.0;
        for (int a = 0; a < k; ++a) {
          double transport = 0.0;
          if (!detail::certified_transport(rows[static_cast<std::size_t>(i) * k + a],
                                           rows[static_cast<std::size_t>(j) * k + a], table.d,
                                           transport))
            failed = true;
          value = std::max(value, c_r * std::abs(mdp.r(i, a) - mdp.r(j, a)) + c_t * transport);
        }
        next[static_cast<std::size_t>(i) * n + j] = value;
        next[static_cast<std::size_t>(j) * n + i] = value;
        residual = std::max(residual, std::abs(value - table.at(i, j)));
      }
    }
    if (failed) throw NoConvergence("transport dual certificate failed inside metric sweep");
    table.d.swap(next);
    ++table.iterations_run;
    table.residual = residual;
    table.residual_history.push_back(residual);
    if (residual <= tol) break;
    if (table.iterations_run > detail::kMaxMetricSweeps)
      throw NoConvergence("bisimulation metric exceeded sweep cap");
  }
  return table;
}

/// Lax bisimulation metric over state-action pairs (index s * n_actions + a).
/// The transport ground cost over states is recovered from the pair metric by
/// the symmetric Hausdorff distance over each state's action set.
inline MetricTable lax_bisim_metric(const FiniteMdp& mdp, double c_r, double c_t,
                                    double tol = 1e-10) {
  mdp.validate();
  detail::check_metric_weights(c_r, c_t);
  const int n = mdp.n_states, k = mdp.n_actions;
  const int np = n * k;
  MetricTable table;
  table.size = np;
  table.c_r = c_r;
  table.c_t = c_t;
  table.d.assign(static_cast<std::size_t>(np) * np, 0.0);
  std::vector<double> next(table.d.size(), 0.0);
  std::vector<double> ground(static_cast<std::size_t>(n) * n, 0.0);

  std::vector<std::vector<double>> rows(np);
  for (int p = 0; p < np; ++p) {
    rows[p].resize(n);
    const int s = p / k, a = p % k;
    for (int s2 = 0; s2 < n; ++s2) rows[p][s2] = mdp.p(s, a, s2);
  }

  const auto directed_hausdorff = [&](int s, int t) {
    double worst = 0.0;
    for (int a = 0; a < k; ++a) {
      double best = std::numeric_limits<double>::infinity();
      for (int b = 0; b < k; ++b)
        best = std::min(best, table.d[static_cast<std::size_t>(s * k + a) * np + (t * k + b)]);
      worst = std::max(worst, best);
    }
    return worst;
  };

  while (true) {
    // State metric induced by the current pair metric.
    for (int s = 0; s < n; ++s)
      for (int t = s + 1; t < n; ++t) {
        const double d_st = std::max(directed_hausdorff(s, t), directed_hausdorff(t, s));
        ground[static_cast<std::size_t>(s) * n + t] = d_st;
        ground[static_cast<std::size_t>(t) * n + s] = d_st;
      }

    double residual = 0.0;
    bool failed = false;
#pragma omp parallel for schedule(dynamic) reduction(max : residual) reduction(|| : failed)
    for (int p1 = 0; p1 < np; ++p1) {
      next[static_cast<std::size_t>(p1) * np + p1] = 0.0;
      for (int p2 = p1 + 1; p2 < np; ++p2) {
        const int s1 = p1 / k, a1 = p1 % k, s2 = p2 / k, a2 = p2 % k;
        double transport = 0.0;
        if (!detail::certified_transport(rows[p1], rows[p2], ground, transport)) failed = true;
        const double value = c_r * std::abs(mdp.r(s1, a1) - mdp.r(s2, a2)) + c_t * transport;
        next[static_cast<std::size_t>(p1) * np + p2] = value;
        next[static_cast<std::size_t>(p2) * np + p1] = value;
        residual = std::max(residual, std::abs(value - table.d[static_cast<std::size_t>(p1) * np + p2]));
      }
    }
    if (failed) throw NoConvergence("transport dual certificate failed inside metric sweep");
    table.d.swap(next);
    ++table.iterations_run;
    table.residual = residual;
    table.residual_history.push_back(residual);
    if (residual <= tol) break;
    if (table.iterations_run > detail::kMaxMetricSweeps)
      throw NoConvergence("lax bisimulation metric exceeded sweep cap");
  }
  return table;
}

}  // namespace mdphom
