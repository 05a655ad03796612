#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "mdphom/envs.hpp"
#include "mdphom/errors.hpp"
#include "mdphom/nn.hpp"
#include "mdphom/rng.hpp"
#include "mdphom/tensor.hpp"

namespace mdphom {

/// Differentiable homomorphism map with explicit inverses and the action
/// Jacobian P = grad_a g_s(a) needed by the gradient-equivalence check.
struct AnalyticHomomorphism {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f_inv;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> g;  // g_s(a)
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> g_inv;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> g_jacobian;

  static AnalyticHomomorphism identity(int state_dim, int action_dim) {
    AnalyticHomomorphism h;
    h.f = [](const Eigen::VectorXd& s) { return s; };
    h.f_inv = h.f;
    h.g = [](const Eigen::VectorXd&, const Eigen::VectorXd& a) { return a; };
    h.g_inv = h.g;
    h.g_jacobian = [action_dim](const Eigen::VectorXd&, const Eigen::VectorXd&) {
      return Eigen::MatrixXd::Identity(action_dim, action_dim).eval();
    };
    return h;
  }

  static AnalyticHomomorphism linear(const Eigen::MatrixXd& F, const Eigen::MatrixXd& G) {
    AnalyticHomomorphism h;
    const Eigen::MatrixXd f_inv = F.inverse();
    const Eigen::MatrixXd g_inv = G.inverse();
    h.f = [F](const Eigen::VectorXd& s) { return (F * s).eval(); };
    h.f_inv = [f_inv](const Eigen::VectorXd& s) { return (f_inv * s).eval(); };
    h.g = [G](const Eigen::VectorXd&, const Eigen::VectorXd& a) { return (G * a).eval(); };
    h.g_inv = [g_inv](const Eigen::VectorXd&, const Eigen::VectorXd& a) {
      return (g_inv * a).eval();
    };
    h.g_jacobian = [G](const Eigen::VectorXd&, const Eigen::VectorXd&) { return G; };
    return h;
  }
};

/// Random matrix with singular values in [smin, smax]: invertible with a
/// controlled condition number.
inline Eigen::MatrixXd random_invertible(int dim, Rng& rng, double smin = 0.6,
                                         double smax = 1.6) {
  Eigen::MatrixXd raw(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) raw(i, j) = rng.normal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::VectorXd sing(dim);
  for (int i = 0; i < dim; ++i) sing[i] = rng.uniform(smin, smax);
  return svd.matrixU() * sing.asDiagonal() * svd.matrixV().transpose();
}

// ---------------------------------------------------------------------------
// Diff-engine policy helpers
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor row_tensor(const Eigen::VectorXd& v) {
  return Tensor::constant(1, static_cast<int>(v.size()),
                          std::vector<double>(v.data(), v.data() + v.size()));
}

inline void zero_param_grads(const Mlp& net) {
  for (auto& p : net.parameters()) std::fill(p.grad().begin(), p.grad().end(), 0.0);
}

}  // namespace detail

inline Eigen::VectorXd mlp_eval(const Mlp& net, const Eigen::VectorXd& x) {
  const Tensor out = net.forward(detail::row_tensor(x));
  return Eigen::Map<const Eigen::VectorXd>(out.value().data(), out.cols());
}

/// Jacobian of the network output with respect to its input, (out x in).
inline Eigen::MatrixXd mlp_input_jacobian(const Mlp& net, const Eigen::VectorXd& x) {
  const int in = static_cast<int>(x.size());
  Eigen::MatrixXd jac(net.output_dim(), in);
  for (int i = 0; i < net.output_dim(); ++i) {
    Tensor leaf = Tensor::param(1, in, std::vector<double>(x.data(), x.data() + in));
    detail::zero_param_grads(net);
    const Tensor out = net.forward(leaf);
    sum(slice_cols(out, i, 1)).backward();
    for (int j = 0; j < in; ++j) jac(i, j) = leaf.grad()[j];
  }
  return jac;
}

/// Jacobian with respect to the flattened parameter vector, (out x n_params).
inline Eigen::MatrixXd mlp_param_jacobian(const Mlp& net, const Eigen::VectorXd& x) {
  const auto params = net.parameters();
  std::size_t n_params = 0;
  for (const auto& p : params) n_params += p.size();
  Eigen::MatrixXd jac(net.output_dim(), static_cast<int>(n_params));
  for (int i = 0; i < net.output_dim(); ++i) {
    detail::zero_param_grads(net);
    const Tensor out = net.forward(detail::row_tensor(x));
    sum(slice_cols(out, i, 1)).backward();
    int col = 0;
    for (const auto& p : params)
      for (const double g : p.grad()) jac(i, col++) = g;
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Value equivalence (Theorems on optimal and policy values)
// ---------------------------------------------------------------------------

struct ValueEquivalenceReport {
  double max_abs_gap = 0.0;
  double stderr_gap = 0.0;
  int n_probes = 0;
};

/// Closed-form check for linear policies on a noiseless LQR pair: value
/// matrices are solved independently in each coordinate system and compared
/// on probe states. image_corruption breaks the image's reward invariance by
/// that amount on the leading state cost (negative controls).
inline ValueEquivalenceReport check_value_equivalence_lqr_analytic(
    const LinearQuadraticEnv& env, const Eigen::MatrixXd& F, const Eigen::MatrixXd& G,
    const Eigen::MatrixXd& K, double gamma, int n_probes, std::uint64_t seed,
    double image_corruption = 0.0) {
  LinearQuadraticEnv abstract = reparameterize(env, F, G);
  abstract.Q(0, 0) += image_corruption;
  const Eigen::MatrixXd k_bar = G * K * F.inverse();
  const LqrPolicyValue actual = lqr_policy_value(env, K, gamma);
  const LqrPolicyValue image = lqr_policy_value(abstract, k_bar, gamma);
  Rng rng(derive_seed(seed, "value_equiv.probes"));
  ValueEquivalenceReport report;
  report.n_probes = n_probes;
  std::vector<double> gaps(n_probes);
  for (int i = 0; i < n_probes; ++i) {
    Eigen::VectorXd s(env.state_dim());
    for (int d = 0; d < s.size(); ++d) s[d] = rng.uniform(-1.0, 1.0);
    const double v = -s.dot(actual.P * s) - actual.value_constant;
    const Eigen::VectorXd sb = F * s;
    const double v_bar = -sb.dot(image.P * sb) - image.value_constant;
    gaps[i] = v - v_bar;
    report.max_abs_gap = std::max(report.max_abs_gap, std::abs(gaps[i]));
  }
  double mean_gap = 0.0;
  for (const double g : gaps) mean_gap += g;
  mean_gap /= n_probes;
  double var = 0.0;
  for (const double g : gaps) var += (g - mean_gap) * (g - mean_gap);
  report.stderr_gap = std::sqrt(var / std::max(1, n_probes - 1) / n_probes);
  return report;
}

/// Paired-noise Monte Carlo comparison of V(s) on the actual system and
/// V(f(s)) on its image. The same standard normal draws drive both rollouts
/// (for the LQR pair the image noise is F * noise by construction).
inline ValueEquivalenceReport check_value_equivalence_lqr_mc(
    const LinearQuadraticEnv& env, const Eigen::MatrixXd& F, const Eigen::MatrixXd& G,
    const Eigen::MatrixXd& K, double gamma, int n_probes, int horizon, std::uint64_t seed) {
  const LinearQuadraticEnv abstract = reparameterize(env, F, G);
  const Eigen::MatrixXd k_bar = G * K * F.inverse();
  Rng rng(derive_seed(seed, "value_equiv.mc"));
  ValueEquivalenceReport report;
  report.n_probes = n_probes;
  std::vector<double> gaps(n_probes);
  const int n = env.state_dim();
  for (int trial = 0; trial < n_probes; ++trial) {
    Eigen::VectorXd s(n);
    for (int d = 0; d < n; ++d) s[d] = rng.uniform(-0.5, 0.5);
    Eigen::VectorXd sb = F * s;
    double v = 0.0, v_bar = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      Eigen::VectorXd xi(n);
      for (int d = 0; d < n; ++d) xi[d] = rng.normal();
      const Eigen::VectorXd a = K * s;
      const Eigen::VectorXd ab = k_bar * sb;
      v += disc * env.reward(s, a);
      v_bar += disc * abstract.reward(sb, ab);
      s = env.dynamics_mean(s, a) + env.noise_l * xi;
      sb = abstract.dynamics_mean(sb, ab) + abstract.noise_l * xi;
      disc *= gamma;
    }
    gaps[trial] = v - v_bar;
    report.max_abs_gap = std::max(report.max_abs_gap, std::abs(gaps[trial]));
  }
  double mean_gap = 0.0;
  for (const double g : gaps) mean_gap += g;
  mean_gap /= n_probes;
  double var = 0.0;
  for (const double g : gaps) var += (g - mean_gap) * (g - mean_gap);
  report.stderr_gap = std::sqrt(var / std::max(1, n_probes - 1) / n_probes);
  return report;
}

/// Pendulum Z2 check: a symmetric deterministic policy is its own lift under
/// the flip homomorphism, so V(s) and V(flip(s)) must agree. Rollouts are
/// deterministic and mirrored exactly.
inline ValueEquivalenceReport check_value_equivalence_pendulum(
    const std::function<double(const std::vector<double>&)>& policy, double gamma, int n_probes,
    int horizon, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "value_equiv.pendulum"));
  ValueEquivalenceReport report;
  report.n_probes = n_probes;
  std::vector<double> gaps(n_probes);
  for (int trial = 0; trial < n_probes; ++trial) {
    PendulumState s{rng.uniform(-M_PI, M_PI), rng.uniform(-4.0, 4.0)};
    PendulumState sb{-s.theta, -s.theta_dot};
    double v = 0.0, v_bar = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const double a = policy(pendulum_observation(s));
      // Abstract policy through the flip: pibar(sbar) = -policy(flip(sbar)).
      const double ab = -policy(pendulum_flip_observation(pendulum_observation(sb)));
      const auto [s_next, r] = pendulum_step(s, a);
      const auto [sb_next, r_bar] = pendulum_step(sb, ab);
      v += disc * r;
      v_bar += disc * r_bar;
      s = s_next;
      sb = sb_next;
      disc *= gamma;
    }
    gaps[trial] = v - v_bar;
    report.max_abs_gap = std::max(report.max_abs_gap, std::abs(gaps[trial]));
  }
  double mean_gap = 0.0;
  for (const double g : gaps) mean_gap += g;
  mean_gap /= n_probes;
  double var = 0.0;
  for (const double g : gaps) var += (g - mean_gap) * (g - mean_gap);
  report.stderr_gap = std::sqrt(var / std::max(1, n_probes - 1) / n_probes);
  return report;
}

struct OptimalValueReport {
  double max_q_gap = 0.0;
  double max_v_gap = 0.0;
  int n_probes = 0;
};

/// Riccati solutions computed independently in both coordinate systems;
/// compares Q*(s, a) with Qbar*(Fs, Ga) and V*(s) with Vbar*(Fs).
inline OptimalValueReport check_optimal_value_equivalence(const LinearQuadraticEnv& env,
                                                          const Eigen::MatrixXd& F,
                                                          const Eigen::MatrixXd& G, double gamma,
                                                          int n_probes, std::uint64_t seed,
                                                          double image_corruption = 0.0) {
  LinearQuadraticEnv abstract = reparameterize(env, F, G);
  abstract.Q(0, 0) += image_corruption;
  const LqrSolution actual = lqr_solve(env, gamma);
  const LqrSolution image = lqr_solve(abstract, gamma);
  Rng rng(derive_seed(seed, "optimal_value.probes"));
  OptimalValueReport report;
  report.n_probes = n_probes;
  for (int i = 0; i < n_probes; ++i) {
    Eigen::VectorXd s(env.state_dim()), a(env.action_dim());
    for (int d = 0; d < s.size(); ++d) s[d] = rng.uniform(-1.0, 1.0);
    for (int d = 0; d < a.size(); ++d) a[d] = rng.uniform(-1.0, 1.0);
    const double q = lqr_q_value(env, actual.P, actual.value_constant, gamma, s, a);
    const double q_bar =
        lqr_q_value(abstract, image.P, image.value_constant, gamma, F * s, G * a);
    report.max_q_gap = std::max(report.max_q_gap, std::abs(q - q_bar));
    const double v = -s.dot(actual.P * s) - actual.value_constant;
    const Eigen::VectorXd sb = F * s;
    const double v_bar = -sb.dot(image.P * sb) - image.value_constant;
    report.max_v_gap = std::max(report.max_v_gap, std::abs(v - v_bar));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Gradient equivalence (deterministic policy gradients)
// ---------------------------------------------------------------------------

enum class QGradientMode { analytic, finite_difference };

struct GradientEquivalenceReport {
  double max_rel_error = 0.0;
  double jacobian_condition_max = 0.0;
  double cancellation_max_rel_error = 0.0;  // |grad_a Q - grad_abar Qbar * P|
  int n_probes = 0;
};

namespace detail {

// Exact gradient of the horizon-truncated Q of a deterministic policy in a
// noiseless linear system: reverse accumulation over the stored rollout.
inline Eigen::VectorXd rollout_q_action_gradient(
    const LinearQuadraticEnv& env, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& pi,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& pi_jacobian,
    const Eigen::VectorXd& s, const Eigen::VectorXd& a, double gamma, int horizon) {
  std::vector<Eigen::VectorXd> states, actions;
  std::vector<Eigen::MatrixXd> jacs;
  Eigen::VectorXd x = env.dynamics_mean(s, a);
  for (int t = 0; t < horizon; ++t) {
    const Eigen::VectorXd u = pi(x);
    states.push_back(x);
    actions.push_back(u);
    jacs.push_back(pi_jacobian(x));
    x = env.dynamics_mean(x, u);
  }
  Eigen::VectorXd w = Eigen::VectorXd::Zero(env.state_dim());
  for (int t = horizon - 1; t >= 0; --t) {
    const Eigen::VectorXd grad_s =
        -2.0 * env.Q * states[t] - jacs[t].transpose() * (2.0 * env.R * actions[t]);
    w = grad_s + gamma * (env.A + env.B * jacs[t]).transpose() * w;
  }
  return -2.0 * env.R * a + gamma * env.B.transpose() * w;
}

// Horizon-truncated Q by plain rollout (for the finite-difference arm).
inline double rollout_q_value(const LinearQuadraticEnv& env,
                              const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& pi,
                              const Eigen::VectorXd& s, const Eigen::VectorXd& a, double gamma,
                              int horizon) {
  double total = env.reward(s, a);
  Eigen::VectorXd x = env.dynamics_mean(s, a);
  double disc = gamma;
  for (int t = 0; t < horizon; ++t) {
    const Eigen::VectorXd u = pi(x);
    total += disc * env.reward(x, u);
    x = env.dynamics_mean(x, u);
    disc *= gamma;
  }
  return total;
}

}  // namespace detail

/// Verifies, probe state by probe state, that
///   grad_a Q(s,a)|_{a=pi(s)} * grad_theta pi(s)
/// agrees with the same expression evaluated entirely on the homomorphic
/// image, with the abstract policy defined as pibar(sbar) =
/// g_s(pi(f_inv(sbar))). Q gradients come either from exact reverse
/// accumulation over the truncated rollout or from central differences.
inline GradientEquivalenceReport check_gradient_equivalence(
    const LinearQuadraticEnv& env, const AnalyticHomomorphism& hom,
    const LinearQuadraticEnv& abstract_env, const Mlp& policy,
    const std::vector<Eigen::VectorXd>& probe_states, double gamma, QGradientMode mode,
    double fd_step = 1e-4, int horizon = 600) {
  GradientEquivalenceReport report;
  report.n_probes = static_cast<int>(probe_states.size());

  const auto pi_actual = [&policy](const Eigen::VectorXd& s) { return mlp_eval(policy, s); };
  const auto pi_actual_jac = [&policy](const Eigen::VectorXd& s) {
    return mlp_input_jacobian(policy, s);
  };

  for (const Eigen::VectorXd& s : probe_states) {
    const Eigen::VectorXd a = pi_actual(s);
    const Eigen::VectorXd sb = hom.f(s);
    const Eigen::VectorXd ab = hom.g(s, a);

    const Eigen::MatrixXd p_jac = hom.g_jacobian(s, a);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(p_jac);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (!(smin > 1e-12 * std::max(smax, 1.0)))
      throw SingularJacobian("action map Jacobian is singular at a probe point");
    report.jacobian_condition_max = std::max(report.jacobian_condition_max, smax / smin);

    // Abstract policy as a function of the abstract state.
    const auto pi_abstract = [&](const Eigen::VectorXd& sbar) {
      const Eigen::VectorXd state = hom.f_inv(sbar);
      return hom.g(state, mlp_eval(policy, state));
    };
    const auto pi_abstract_jac = [&](const Eigen::VectorXd& sbar) {
      const Eigen::VectorXd state = hom.f_inv(sbar);
      const Eigen::VectorXd act = mlp_eval(policy, state);
      // d g_s(pi(s)) / d sbar; for state-independent g this is P * dpi * dF_inv.
      Eigen::MatrixXd f_inv_jac(state.size(), sbar.size());
      // Linear f assumed for LQR images; recover its Jacobian by probing.
      for (int j = 0; j < sbar.size(); ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(sbar.size());
        e[j] = 1.0;
        f_inv_jac.col(j) = hom.f_inv(sbar + e) - hom.f_inv(sbar);
      }
      return (hom.g_jacobian(state, act) * mlp_input_jacobian(policy, state) * f_inv_jac).eval();
    };

    Eigen::VectorXd dq_actual, dq_abstract;
    if (mode == QGradientMode::analytic) {
      dq_actual =
          detail::rollout_q_action_gradient(env, pi_actual, pi_actual_jac, s, a, gamma, horizon);
      dq_abstract = detail::rollout_q_action_gradient(abstract_env, pi_abstract, pi_abstract_jac,
                                                      sb, ab, gamma, horizon);
    } else {
      dq_actual.resize(a.size());
      for (int i = 0; i < a.size(); ++i) {
        Eigen::VectorXd hi = a, lo = a;
        hi[i] += fd_step;
        lo[i] -= fd_step;
        dq_actual[i] = (detail::rollout_q_value(env, pi_actual, s, hi, gamma, horizon) -
                        detail::rollout_q_value(env, pi_actual, s, lo, gamma, horizon)) /
                       (2.0 * fd_step);
      }
      dq_abstract.resize(ab.size());
      for (int i = 0; i < ab.size(); ++i) {
        Eigen::VectorXd hi = ab, lo = ab;
        hi[i] += fd_step;
        lo[i] -= fd_step;
        dq_abstract[i] =
            (detail::rollout_q_value(abstract_env, pi_abstract, sb, hi, gamma, horizon) -
             detail::rollout_q_value(abstract_env, pi_abstract, sb, lo, gamma, horizon)) /
            (2.0 * fd_step);
      }
    }

    // Appendix-style cancellation: right-multiplying the abstract action
    // gradient by P reproduces the actual action gradient.
    {
      const Eigen::VectorXd reproduced = p_jac.transpose() * dq_abstract;
      const double denom =
          std::max({dq_actual.cwiseAbs().maxCoeff(), reproduced.cwiseAbs().maxCoeff(), 1e-6});
      report.cancellation_max_rel_error =
          std::max(report.cancellation_max_rel_error,
                   (dq_actual - reproduced).cwiseAbs().maxCoeff() / denom);
    }

    const Eigen::MatrixXd theta_jac_actual = mlp_param_jacobian(policy, s);
    // grad_theta pibar(sbar) = P * grad_theta pi(s) evaluated at f_inv(sbar).
    const Eigen::VectorXd state_back = hom.f_inv(sb);
    const Eigen::MatrixXd theta_jac_abstract =
        hom.g_jacobian(state_back, mlp_eval(policy, state_back)) *
        mlp_param_jacobian(policy, state_back);

    const Eigen::VectorXd lhs = theta_jac_actual.transpose() * dq_actual;
    const Eigen::VectorXd rhs = theta_jac_abstract.transpose() * dq_abstract;
    const double denom = std::max({lhs.cwiseAbs().maxCoeff(), rhs.cwiseAbs().maxCoeff(), 1e-6});
    report.max_rel_error =
        std::max(report.max_rel_error, (lhs - rhs).cwiseAbs().maxCoeff() / denom);
  }
  return report;
}

// ---------------------------------------------------------------------------
// HPG estimator agreement (policy gradients under visitation sampling)
// ---------------------------------------------------------------------------

struct HpgEstimatorReport {
  double cosine_similarity = 0.0;
  double rel_norm_gap = 0.0;
  long n_samples = 0;
};

/// DPG estimated on the actual MDP versus HPG estimated on the image, from
/// the same trajectory draws (abstract states are the f-images of sampled
/// states). Linear policy a = Theta s keeps both Q functions in closed form.
/// reward_corruption is added to the image's leading state-cost entry, i.e.
/// the image reward becomes Rbar(sbar, abar) - corruption * sbar_1^2, a
/// direct violation of reward invariance (the negative control).
inline HpgEstimatorReport check_hpg_estimator(const LinearQuadraticEnv& env,
                                              const Eigen::MatrixXd& F, const Eigen::MatrixXd& G,
                                              const Eigen::MatrixXd& theta, double gamma,
                                              long n_samples, std::uint64_t seed,
                                              double reward_corruption = 0.0) {
  LinearQuadraticEnv abstract = reparameterize(env, F, G);
  abstract.Q(0, 0) += reward_corruption;

  const Eigen::MatrixXd f_inv = F.inverse();
  const Eigen::MatrixXd theta_bar = G * theta * f_inv;
  const LqrPolicyValue actual = lqr_policy_value(env, theta, gamma);
  const LqrPolicyValue image = lqr_policy_value(abstract, theta_bar, gamma);

  // Geometric horizon truncation at gamma-mass 1e-4.
  const int horizon = static_cast<int>(std::ceil(std::log(1e-4) / std::log(gamma)));
  const long n_traj = std::max(1L, n_samples / horizon);

  Rng rng(derive_seed(seed, "hpg.visitation"));
  const int n = env.state_dim(), m = env.action_dim();
  Eigen::MatrixXd dpg = Eigen::MatrixXd::Zero(m, n);
  Eigen::MatrixXd hpg = Eigen::MatrixXd::Zero(m, n);
  long used = 0;
  for (long traj = 0; traj < n_traj; ++traj) {
    Eigen::VectorXd s = env.sample_initial_state(rng);
    double disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const Eigen::VectorXd a = theta * s;
      const Eigen::VectorXd dq = lqr_q_action_gradient(env, actual.P, gamma, s, a);
      dpg += disc * dq * s.transpose();

      const Eigen::VectorXd sb = F * s;  // sample rho-bar through f
      const Eigen::VectorXd ab = theta_bar * sb;
      const Eigen::VectorXd dq_bar = lqr_q_action_gradient(abstract, image.P, gamma, sb, ab);
      hpg += disc * G.transpose() * dq_bar * (f_inv * sb).transpose();

      Eigen::VectorXd xi(n);
      for (int d = 0; d < n; ++d) xi[d] = rng.normal();
      s = env.dynamics_mean(s, a) + env.noise_l * xi;
      disc *= gamma;
      ++used;
    }
  }
  dpg /= static_cast<double>(n_traj);
  hpg /= static_cast<double>(n_traj);

  const Eigen::Map<const Eigen::VectorXd> v1(dpg.data(), dpg.size());
  const Eigen::Map<const Eigen::VectorXd> v2(hpg.data(), hpg.size());
  HpgEstimatorReport report;
  report.n_samples = used;
  const double denom = std::max(v1.norm() * v2.norm(), 1e-300);
  report.cosine_similarity = v1.dot(v2) / denom;
  report.rel_norm_gap = std::abs(v1.norm() - v2.norm()) / std::max({v1.norm(), v2.norm(), 1e-300});
  return report;
}

/// Designed instance for the estimator-agreement check and its negative
/// control: anisotropic dynamics with a rotation/scaling coordinate change,
/// where a 0.5 reward-invariance violation visibly rotates the gradient.
struct HpgCheckInstance {
  LinearQuadraticEnv env;
  Eigen::MatrixXd F, G, theta;
  double gamma = 0.99;
};

inline HpgCheckInstance hpg_check_instance() {
  HpgCheckInstance inst;
  inst.env.A = Eigen::MatrixXd(2, 2);
  inst.env.A << 0.9, 0.0, 0.0, 0.3;
  inst.env.B = Eigen::MatrixXd::Identity(2, 2);
  inst.env.Q = 0.25 * Eigen::MatrixXd::Identity(2, 2);
  inst.env.R = 0.05 * Eigen::MatrixXd::Identity(2, 2);
  inst.env.noise_l = 0.05 * Eigen::MatrixXd::Identity(2, 2);
  inst.env.bound = 1e9;
  const double c = std::cos(0.5), s = std::sin(0.5);
  inst.F = Eigen::MatrixXd(2, 2);
  inst.F << 1.2 * c, -1.2 * s, 0.8 * s, 0.8 * c;
  inst.G = Eigen::MatrixXd(2, 2);
  inst.G << 0.9, 0.3, -0.2, 1.1;
  inst.theta = Eigen::MatrixXd(2, 2);
  inst.theta << -0.3, 0.1, 0.05, -0.25;
  return inst;
}

}  // namespace mdphom
