// Command-line front end: MDP file tooling, quotient/minimization/metric
// computation, theorem verification suites, and training runs.
//
// Exit codes: 0 success, 1 check failure, 2 input error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdphom/agent.hpp"
#include "mdphom/envs.hpp"
#include "mdphom/grad_equiv.hpp"
#include "mdphom/homomorphism.hpp"
#include "mdphom/mdp.hpp"
#include "mdphom/metrics.hpp"
#include "mdphom/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path output_root() {
  if (const char* env = std::getenv("MDPHOM_OUTPUT_ROOT")) return fs::path(env);
  return fs::path(".");
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw mdphom::SchemaError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// mdp validate | show
// ---------------------------------------------------------------------------

int cmd_mdp(const std::string& action, const std::string& file) {
  const mdphom::FiniteMdp m = mdphom::load_mdp(file);
  if (action == "show") {
    std::printf("states: %d\nactions: %d\ngamma: %.17g\n", m.n_states, m.n_actions, m.gamma);
    double worst_row = 0.0;
    for (int s = 0; s < m.n_states; ++s)
      for (int a = 0; a < m.n_actions; ++a) {
        double sum = 0.0;
        for (int s2 = 0; s2 < m.n_states; ++s2) sum += m.p(s, a, s2);
        worst_row = std::max(worst_row, std::abs(sum - 1.0));
      }
    std::printf("worst row-sum deviation: %.3g\n", worst_row);
    double rmin = m.rewards[0], rmax = m.rewards[0];
    for (const double r : m.rewards) {
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
    }
    std::printf("reward range: [%.17g, %.17g]\n", rmin, rmax);
  } else {
    std::printf("valid MDP: %d states, %d actions\n", m.n_states, m.n_actions);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// quotient / minimize / metrics
// ---------------------------------------------------------------------------

int cmd_quotient(const std::string& mdp_file, const std::string& hom_file, double tol,
                 const std::string& out_prefix) {
  const mdphom::FiniteMdp m = mdphom::load_mdp(mdp_file);
  const mdphom::FiniteHomomorphism h = mdphom::load_homomorphism(hom_file);
  const auto [quot, report] = mdphom::quotient_mdp(m, h, tol);
  mdphom::save_mdp(quot, out_prefix + ".quotient.json");
  json r;
  r["reward_invariance_error"] = report.reward_invariance_error;
  r["transition_equivariance_error"] = report.transition_equivariance_error;
  r["tolerance"] = report.tolerance;
  r["is_exact"] = report.is_exact;
  write_json(r, out_prefix + ".report.json");
  std::printf("quotient: %d -> %d states; exact: %s\n", m.n_states, quot.n_states,
              report.is_exact ? "yes" : "no");
  return 0;
}

int cmd_minimize(const std::string& mdp_file, double tol, const std::string& out_prefix) {
  const mdphom::FiniteMdp m = mdphom::load_mdp(mdp_file);
  const auto [h, quot] = mdphom::minimize_lax(m, tol);
  mdphom::save_homomorphism(h, out_prefix + ".hom.json");
  mdphom::save_mdp(quot, out_prefix + ".quotient.json");
  std::printf("minimized: %d -> %d states\n", m.n_states, h.n_abstract_states);
  return 0;
}

int cmd_metrics(const std::string& mdp_file, const std::string& kind, double c_r, double c_t,
                double tol, const std::string& out_file) {
  const mdphom::FiniteMdp m = mdphom::load_mdp(mdp_file);
  const double ct = c_t >= 0.0 ? c_t : m.gamma;
  const mdphom::MetricTable table = kind == "bisim" ? mdphom::bisim_metric(m, c_r, ct, tol)
                                                    : mdphom::lax_bisim_metric(m, c_r, ct, tol);
  std::ofstream out(out_file);
  if (!out) throw mdphom::SchemaError("cannot open for writing: " + out_file);
  out << "row,col,distance\n";
  char line[128];
  for (int i = 0; i < table.size; ++i)
    for (int j = 0; j < table.size; ++j) {
      std::snprintf(line, sizeof(line), "%d,%d,%.17g\n", i, j, table.at(i, j));
      out << line;
    }
  std::printf("%s metric: %d entries, %ld sweeps, residual %.3g\n", kind.c_str(),
              table.size * table.size, table.iterations_run, table.residual);
  return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  json details;
};

// Two disjoint copies of a random base MDP with per-state rotated action
// labels, plus the collapse homomorphism.
struct MirrorInstance {
  mdphom::FiniteMdp mdp;
  mdphom::FiniteHomomorphism h;
};

MirrorInstance make_mirror(int n, int k, double gamma, mdphom::Rng& rng) {
  using namespace mdphom;
  MirrorInstance out;
  const FiniteMdp base = random_mdp(n, k, gamma, rng);
  out.mdp = FiniteMdp::zeros(2 * n, k, gamma);
  out.h.n_states = 2 * n;
  out.h.n_actions = k;
  out.h.n_abstract_states = n;
  out.h.n_abstract_actions = k;
  out.h.state_map.resize(2 * n);
  out.h.action_maps.resize(static_cast<std::size_t>(2 * n) * k);
  for (int s = 0; s < n; ++s) {
    out.h.state_map[s] = s;
    out.h.state_map[n + s] = s;
    for (int a = 0; a < k; ++a) {
      const int rotated = (a + 1 + s) % k;
      out.mdp.r(s, a) = base.r(s, a);
      out.mdp.r(n + s, rotated) = base.r(s, a);
      for (int s2 = 0; s2 < n; ++s2) {
        out.mdp.p(s, a, s2) = base.p(s, a, s2);
        out.mdp.p(n + s, rotated, n + s2) = base.p(s, a, s2);
      }
      out.h.g(s, a) = a;
      out.h.g(n + s, rotated) = a;
    }
  }
  return out;
}

void run_finite_suite(std::uint64_t seed, std::vector<CheckResult>& results) {
  using namespace mdphom;
  {
    CheckResult c{"finite_value_equivalence"};
    Rng rng(derive_seed(seed, "verify.finite"));
    double worst_policy = 0.0, worst_optimal = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 2 + static_cast<int>(rng.uniform_index(9));
      const int k = 2 + static_cast<int>(rng.uniform_index(4));
      const MirrorInstance inst = make_mirror(n, k, 0.95, rng);
      const TabularPolicy abstract = TabularPolicy::random(n, k, rng);
      worst_policy = std::max(worst_policy,
                              verify_value_equivalence(inst.mdp, inst.h, abstract, 1e-9, 1e-10));
      worst_optimal = std::max(worst_optimal,
                               verify_optimal_value_equivalence(inst.mdp, inst.h, 1e-9, 1e-10));
    }
    c.details["max_policy_q_gap"] = worst_policy;
    c.details["max_optimal_q_gap"] = worst_optimal;
    c.passed = worst_policy <= 1e-8 && worst_optimal <= 1e-8;
    results.push_back(std::move(c));
  }
  {
    CheckResult c{"lifting_identity"};
    Rng rng(derive_seed(seed, "verify.lifting"));
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = 1 + static_cast<int>(rng.uniform_index(6));
      const int k = 1 + static_cast<int>(rng.uniform_index(6));
      const int kb = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k)));
      FiniteHomomorphism h;
      h.n_states = n;
      h.n_actions = k;
      h.n_abstract_states = 1;
      h.n_abstract_actions = kb;
      h.state_map.assign(n, 0);
      h.action_maps.resize(static_cast<std::size_t>(n) * k);
      for (int s = 0; s < n; ++s)
        for (int a = 0; a < k; ++a)
          h.g(s, a) = a < kb ? a : static_cast<int>(rng.uniform_index(kb));
      const TabularPolicy abstract = TabularPolicy::random(1, kb, rng);
      const TabularPolicy lifted = lift_policy(abstract, h);
      for (int s = 0; s < n; ++s) {
        std::vector<double> mass(kb, 0.0);
        for (int a = 0; a < k; ++a) mass[h.g(s, a)] += lifted.pi(s, a);
        for (int ab = 0; ab < kb; ++ab)
          worst = std::max(worst, std::abs(mass[ab] - abstract.pi(0, ab)));
      }
    }
    c.details["max_sum_error"] = worst;
    c.passed = worst <= 1e-15;
    results.push_back(std::move(c));
  }
  {
    CheckResult c{"transport_metric_axioms"};
    Rng rng(derive_seed(seed, "verify.transport"));
    bool ok = true;
    double worst_violation = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 2 + static_cast<int>(rng.uniform_index(7));
      std::vector<double> px(n), py(n), pz(n);
      double sx = 0, sy = 0, sz = 0;
      for (int i = 0; i < n; ++i) {
        px[i] = rng.uniform(0.01, 1.0);
        py[i] = rng.uniform(0.01, 1.0);
        pz[i] = rng.uniform(0.01, 1.0);
        sx += px[i];
        sy += py[i];
        sz += pz[i];
      }
      for (int i = 0; i < n; ++i) {
        px[i] /= sx;
        py[i] /= sy;
        pz[i] /= sz;
      }
      std::vector<double> pts(n);
      for (auto& p : pts) p = rng.uniform(-1.0, 1.0);
      std::vector<double> ground(static_cast<std::size_t>(n) * n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          ground[static_cast<std::size_t>(i) * n + j] = std::abs(pts[i] - pts[j]);
      const double xy = kantorovich(px, py, ground);
      const double yx = kantorovich(py, px, ground);
      const double yz = kantorovich(py, pz, ground);
      const double xz = kantorovich(px, pz, ground);
      const double self = kantorovich(px, px, ground);
      worst_violation = std::max({worst_violation, std::abs(xy - yx), xz - (xy + yz), self});
      ok = ok && std::abs(xy - yx) <= 1e-10 && xz <= xy + yz + 1e-9 && self == 0.0;
    }
    c.details["worst_violation"] = worst_violation;
    c.passed = ok;
    results.push_back(std::move(c));
  }
  {
    CheckResult c{"metric_relation_consistency"};
    Rng rng(derive_seed(seed, "verify.metric"));
    bool zeros_match = true, separation_found = false;
    for (int trial = 0; trial < 5; ++trial) {
      const int n = 2 + static_cast<int>(rng.uniform_index(2));
      const int k = 2;
      const MirrorInstance inst = make_mirror(n, k, 0.9, rng);
      const auto [h, quot] = minimize_lax(inst.mdp, 0.0);
      const MetricTable lax = lax_bisim_metric(inst.mdp, 1.0, 0.9, 1e-10);
      for (int p1 = 0; p1 < lax.size; ++p1)
        for (int p2 = 0; p2 < lax.size; ++p2) {
          const int s1 = p1 / k, a1 = p1 % k, s2 = p2 / k, a2 = p2 % k;
          const bool related =
              h.state_map[s1] == h.state_map[s2] && h.g(s1, a1) == h.g(s2, a2);
          zeros_match = zeros_match && ((lax.at(p1, p2) < 1e-9) == related);
        }
      const MetricTable strict = bisim_metric(inst.mdp, 1.0, 0.9, 1e-10);
      for (int s = 0; s < n; ++s)
        if (h.state_map[s] == h.state_map[n + s] && strict.at(s, n + s) > 1e-6)
          separation_found = true;
    }
    c.details["zeros_match_classes"] = zeros_match;
    c.details["strict_vs_lax_separation"] = separation_found;
    c.passed = zeros_match && separation_found;
    results.push_back(std::move(c));
  }
}

void run_continuous_suite(std::uint64_t seed, double corruption,
                          std::vector<CheckResult>& results) {
  using namespace mdphom;
  {
    CheckResult c{"lqr_value_equivalence_analytic"};
    Rng rng(derive_seed(seed, "verify.lqr_value"));
    LinearQuadraticEnv env = LinearQuadraticEnv::make_default(2, 2, 0.0, seed);
    env.bound = 1e9;
    const Eigen::MatrixXd f = random_invertible(2, rng);
    const Eigen::MatrixXd g = random_invertible(2, rng);
    const LqrSolution sol = lqr_solve(env, 0.95);
    const auto report =
        check_value_equivalence_lqr_analytic(env, f, g, sol.K, 0.95, 100, seed + 1, corruption);
    c.details["max_abs_gap"] = report.max_abs_gap;
    c.passed = report.max_abs_gap <= 1e-8;
    results.push_back(std::move(c));
  }
  {
    CheckResult c{"lqr_optimal_value_equivalence"};
    Rng rng(derive_seed(seed, "verify.lqr_opt"));
    LinearQuadraticEnv env = LinearQuadraticEnv::make_default(2, 2, 0.05, seed + 2);
    env.bound = 1e9;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd rot(2, 2);
    const double a = 0.7;
    rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    double worst = 0.0;
    const std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> pairs = {
        {3.0 * eye, 2.0 * eye}, {rot, eye}, {random_invertible(2, rng), random_invertible(2, rng)}};
    for (const auto& pair : pairs) {
      const auto rep = check_optimal_value_equivalence(env, pair.first, pair.second, 0.95, 100,
                                                       seed + 3, corruption);
      worst = std::max({worst, rep.max_q_gap, rep.max_v_gap});
    }
    c.details["max_gap"] = worst;
    c.passed = worst <= 1e-8;
    results.push_back(std::move(c));
  }
  {
    CheckResult c{"pendulum_z2_value_equivalence"};
    const auto policy = [](const std::vector<double>& obs) {
      return std::tanh(0.9 * obs[1] + 0.25 * obs[2]);
    };
    const auto report = check_value_equivalence_pendulum(policy, 0.99, 100, 900, seed + 4);
    c.details["max_abs_gap"] = report.max_abs_gap;
    c.details["stderr"] = report.stderr_gap;
    c.passed = report.max_abs_gap <= 3.0 * report.stderr_gap + 1e-12;
    results.push_back(std::move(c));
  }
}

void run_gradient_suite(std::uint64_t seed, double corruption,
                        std::vector<CheckResult>& results) {
  using namespace mdphom;
  {
    CheckResult c{"diff_engine_finite_differences"};
    Rng rng(derive_seed(seed, "verify.fd"));
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const int rows = 2 + static_cast<int>(rng.uniform_index(3));
      const int cols = 2 + static_cast<int>(rng.uniform_index(3));
      std::vector<double> wdata(static_cast<std::size_t>(rows) * cols), xdata(cols);
      for (auto& v : wdata) v = rng.uniform(-1.0, 1.0);
      for (auto& v : xdata) v = rng.uniform(-1.0, 1.0);
      Tensor w = Tensor::param(rows, cols, wdata);
      const Tensor x = Tensor::constant(cols, 1, xdata);
      const auto loss = [&]() { return sum(tanh_op(matmul(w, x))); };
      loss().backward();
      const double h = 1e-4;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double saved = w.value()[i];
        w.value()[i] = saved + h;
        const double up = loss().item();
        w.value()[i] = saved - h;
        const double down = loss().item();
        w.value()[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - w.grad()[i]) /
                                    std::max({1.0, std::abs(fd), std::abs(w.grad()[i])}));
      }
    }
    c.details["max_rel_error"] = worst;
    c.passed = worst <= 1e-4;
    results.push_back(std::move(c));
  }
  {
    CheckResult c{"gradient_equivalence"};
    Rng rng(derive_seed(seed, "verify.grad_equiv"));
    double worst_analytic = 0.0, worst_fd = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      LinearQuadraticEnv env = LinearQuadraticEnv::make_default(2, 2, 0.0, seed + 10 + trial);
      env.bound = 1e9;
      const Eigen::MatrixXd f = random_invertible(2, rng);
      const Eigen::MatrixXd g = random_invertible(2, rng);
      const auto hom = AnalyticHomomorphism::linear(f, g);
      LinearQuadraticEnv abstract = reparameterize(env, f, g);
      abstract.Q(0, 0) += corruption;  // negative control breaks the image
      Rng policy_rng(derive_seed(seed, "verify.policy" + std::to_string(trial)));
      const Mlp policy = Mlp::make({2, 16, 2}, true, policy_rng);
      std::vector<Eigen::VectorXd> probes(3);
      for (auto& p : probes) {
        p.resize(2);
        p << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
      }
      const auto analytic = check_gradient_equivalence(env, hom, abstract, policy, probes, 0.95,
                                                       QGradientMode::analytic);
      const auto fd = check_gradient_equivalence(env, hom, abstract, policy, probes, 0.95,
                                                 QGradientMode::finite_difference, 1e-4);
      worst_analytic = std::max(worst_analytic, analytic.max_rel_error);
      worst_fd = std::max(worst_fd, fd.max_rel_error);
    }
    c.details["max_rel_error_analytic"] = worst_analytic;
    c.details["max_rel_error_fd"] = worst_fd;
    c.passed = worst_analytic <= 1e-4 && worst_fd <= 1e-3;
    results.push_back(std::move(c));
  }
  {
    CheckResult c{"hpg_estimator_agreement"};
    const HpgCheckInstance inst = hpg_check_instance();
    const auto clean = check_hpg_estimator(inst.env, inst.F, inst.G, inst.theta, inst.gamma,
                                           100000, seed + 20, corruption);
    c.details["cosine_similarity"] = clean.cosine_similarity;
    c.details["rel_norm_gap"] = clean.rel_norm_gap;
    c.passed = clean.cosine_similarity >= 0.99;
    results.push_back(std::move(c));
  }
  {
    CheckResult c{"hpg_negative_control"};
    const HpgCheckInstance inst = hpg_check_instance();
    const auto corrupted = check_hpg_estimator(inst.env, inst.F, inst.G, inst.theta, inst.gamma,
                                               100000, seed + 20, 0.5);
    c.details["cosine_similarity"] = corrupted.cosine_similarity;
    c.passed = corrupted.cosine_similarity < 0.99;
    results.push_back(std::move(c));
  }
}

int cmd_verify(const std::string& suite, std::uint64_t seed, bool corrupt,
               const std::string& out_file) {
  std::vector<CheckResult> results;
  const double corruption = corrupt ? 0.5 : 0.0;
  if (suite == "all" || suite == "finite") run_finite_suite(seed, results);
  if (suite == "all" || suite == "continuous") run_continuous_suite(seed, corruption, results);
  if (suite == "all" || suite == "gradients") run_gradient_suite(seed, corruption, results);

  json report;
  report["suite"] = suite;
  report["seed"] = seed;
  report["corrupt_homomorphism"] = corrupt;
  report["checks"] = json::array();
  bool all_passed = true;
  for (const auto& r : results) {
    json entry;
    entry["name"] = r.name;
    entry["passed"] = r.passed;
    entry["details"] = r.details;
    report["checks"].push_back(entry);
    all_passed = all_passed && r.passed;
    std::printf("[%s] %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str());
  }
  report["all_passed"] = all_passed;
  if (!out_file.empty()) write_json(report, out_file);
  return all_passed ? 0 : 1;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& env_name, const std::string& variant, std::uint64_t seed,
              long steps, const std::string& config_file, const std::string& out_dir) {
  mdphom::AgentConfig cfg;
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw mdphom::SchemaError("cannot open config: " + config_file);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw mdphom::SchemaError(std::string("invalid config JSON: ") + e.what());
    }
    cfg = mdphom::agent_config_from_json(j);
  }
  cfg.variant = variant;
  cfg.validate();

  const fs::path run_dir =
      out_dir.empty() ? output_root() / ("run_" + env_name + "_" + variant + "_seed" +
                                         std::to_string(seed) + "_" + std::to_string(steps))
                      : fs::path(out_dir);
  fs::create_directories(run_dir);

  const auto t0 = std::chrono::steady_clock::now();
  auto env = mdphom::make_env(env_name, seed);
  std::ofstream csv(run_dir / "log.csv");
  if (!csv) throw mdphom::SchemaError("cannot open log for writing");
  mdphom::DhpgAgent agent(env->state_dim(), env->action_dim(), cfg, seed);
  const mdphom::TrainResult result = mdphom::train(*env, cfg, seed, steps, &csv, &agent);
  csv.close();
  mdphom::save_checkpoint(agent.parameter_groups(), (run_dir / "checkpoint.json").string());
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json manifest;
  manifest["schema_version"] = mdphom::kManifestSchemaVersion;
  manifest["version"] = mdphom::kVersion;
  manifest["command"] = "train";
  manifest["env"] = env_name;
  manifest["config"] = mdphom::agent_config_to_json(cfg);
  manifest["seed"] = seed;
  manifest["steps"] = steps;
  manifest["outputs"] = {"log.csv", "checkpoint.json"};
  manifest["wall_clock_seconds"] = wall;
  write_json(manifest, run_dir / "manifest.json");

  double final_return = 0.0;
  if (!result.episode_returns.empty()) final_return = result.episode_returns.back();
  std::printf("trained %ld steps, %zu episodes, final episode return %.3f\n", steps,
              result.episode_returns.size(), final_return);
  std::printf("run directory: %s\n", run_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MDP homomorphism toolkit: exact quotients, bisimulation metrics, "
               "policy-gradient equivalence checks, and DHPG training"};
  app.require_subcommand(1);

  auto* mdp_cmd = app.add_subcommand("mdp", "validate or summarize an MDP JSON file");
  std::string mdp_action, mdp_file;
  mdp_cmd->add_option("action", mdp_action, "validate or show")
      ->check(CLI::IsMember({"validate", "show"}))
      ->required();
  mdp_cmd->add_option("file", mdp_file, "MDP JSON file")->required();

  auto* quot_cmd = app.add_subcommand("quotient", "build the quotient MDP under a homomorphism");
  std::string quot_mdp, quot_hom, quot_out = "quotient_out";
  double quot_tol = 1e-9;
  quot_cmd->add_option("mdp", quot_mdp)->required();
  quot_cmd->add_option("hom", quot_hom)->required();
  quot_cmd->add_option("--tol", quot_tol, "consistency tolerance");
  quot_cmd->add_option("-o,--out", quot_out, "output prefix");

  auto* min_cmd = app.add_subcommand("minimize", "lax-bisimulation minimization");
  std::string min_mdp, min_out = "minimize_out";
  double min_tol = 0.0;
  min_cmd->add_option("mdp", min_mdp)->required();
  min_cmd->add_option("--tol", min_tol, "matching tolerance");
  min_cmd->add_option("-o,--out", min_out, "output prefix");

  auto* met_cmd = app.add_subcommand("metrics", "bisimulation metric tables");
  std::string met_mdp, met_kind = "bisim", met_out = "metric.csv";
  double met_cr = 1.0, met_ct = -1.0, met_tol = 1e-10;
  met_cmd->add_option("mdp", met_mdp)->required();
  met_cmd->add_option("--kind", met_kind)->check(CLI::IsMember({"bisim", "lax"}));
  met_cmd->add_option("--c-r", met_cr, "reward weight");
  met_cmd->add_option("--c-t", met_ct, "transport weight (default: the MDP's gamma)");
  met_cmd->add_option("--tol", met_tol, "fixed point tolerance");
  met_cmd->add_option("-o,--out", met_out, "output CSV");

  auto* ver_cmd = app.add_subcommand("verify", "run theorem verification suites");
  std::string ver_suite = "all", ver_out;
  std::uint64_t ver_seed = 0;
  bool ver_corrupt = false;
  ver_cmd->add_option("--suite", ver_suite)
      ->check(CLI::IsMember({"all", "finite", "continuous", "gradients"}));
  ver_cmd->add_option("--seed", ver_seed);
  ver_cmd->add_flag("--corrupt-homomorphism", ver_corrupt,
                    "break the image's reward invariance by 0.5 (the affected checks must fail)");
  ver_cmd->add_option("-o,--out", ver_out, "JSON report path");

  auto* train_cmd = app.add_subcommand("train", "train DHPG or ablation variants");
  std::string train_env = "pendulum", train_variant = "dhpg_summed", train_config, train_out;
  std::uint64_t train_seed = 0;
  long train_steps = 100000;
  train_cmd->add_option("--env", train_env, "environment name (pendulum, lqr)");
  train_cmd->add_option("--variant", train_variant)
      ->check(CLI::IsMember(
          {"dhpg_summed", "dhpg_independent", "dhpg_no_dpg", "dhpg_single_critic", "ddpg"}));
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--steps", train_steps);
  train_cmd->add_option("--config", train_config, "agent config JSON");
  train_cmd->add_option("--out", train_out, "run directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mdp_cmd) return cmd_mdp(mdp_action, mdp_file);
    if (*quot_cmd) return cmd_quotient(quot_mdp, quot_hom, quot_tol, quot_out);
    if (*min_cmd) return cmd_minimize(min_mdp, min_tol, min_out);
    if (*met_cmd) return cmd_metrics(met_mdp, met_kind, met_cr, met_ct, met_tol, met_out);
    if (*ver_cmd) return cmd_verify(ver_suite, ver_seed, ver_corrupt, ver_out);
    if (*train_cmd)
      return cmd_train(train_env, train_variant, train_seed, train_steps, train_config,
                       train_out);
  } catch (const mdphom::SchemaError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const mdphom::NonStochasticMatrix& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const mdphom::DimensionMismatch& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const mdphom::InfeasibleMarginals& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const mdphom::InconsistentQuotient& e) {
    std::fprintf(stderr, "check failed: %s (reward error %.3g, transition error %.3g)\n",
                 e.what(), e.report().reward_invariance_error,
                 e.report().transition_equivariance_error);
    return 1;
  } catch (const mdphom::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
