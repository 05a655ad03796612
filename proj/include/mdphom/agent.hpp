#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdphom/envs.hpp"
#include "mdphom/errors.hpp"
#include "mdphom/nn.hpp"
#include "mdphom/rng.hpp"
#include "mdphom/tensor.hpp"

namespace mdphom {

struct ExplorationSchedule {
  double start = 1.0;
  double end = 0.1;
  double horizon = 1e6;

  double at(long step) const {
    const double frac = std::min(1.0, static_cast<double>(step) / horizon);
    return start + (end - start) * frac;
  }
};

enum class Variant { dhpg_summed, dhpg_independent, dhpg_no_dpg, dhpg_single_critic, ddpg };

inline Variant parse_variant(const std::string& name) {
  if (name == "dhpg_summed") return Variant::dhpg_summed;
  if (name == "dhpg_independent") return Variant::dhpg_independent;
  if (name == "dhpg_no_dpg") return Variant::dhpg_no_dpg;
  if (name == "dhpg_single_critic") return Variant::dhpg_single_critic;
  if (name == "ddpg") return Variant::ddpg;
  throw SchemaError("unknown variant: " + name);
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::dhpg_summed: return "dhpg_summed";
    case Variant::dhpg_independent: return "dhpg_independent";
    case Variant::dhpg_no_dpg: return "dhpg_no_dpg";
    case Variant::dhpg_single_critic: return "dhpg_single_critic";
    case Variant::ddpg: return "ddpg";
  }
  return "?";
}

struct AgentConfig {
  double learning_rate = 1e-4;
  int batch_size = 256;
  int n_step = 3;
  double gamma = 0.99;
  double tau = 0.01;
  int actor_delay = 2;
  int target_update_freq = 2;
  double noise_clip = 0.3;
  int hidden = 256;
  long buffer_capacity = 1000000;
  long seed_frames = 4000;
  long exploration_steps = 2000;
  ExplorationSchedule exploration_std;
  int action_repeat = 1;
  double lax_weight = 0.99;  // alpha in the lax loss target; defaults to gamma
  std::string variant = "dhpg_summed";
  int abstract_state_dim = 0;   // 0: same as the environment state dim
  int abstract_action_dim = 0;  // 0: same as the environment action dim
  bool stop_grad_encoder_target = false;  // detach f(s') in the model loss
  double log_std_min = -10.0;
  double log_std_max = 2.0;

  void validate() const {
    if (learning_rate <= 0 || batch_size <= 0 || n_step <= 0 || tau <= 0 || tau > 1 ||
        actor_delay <= 0 || target_update_freq <= 0 || noise_clip < 0 || hidden <= 0 ||
        buffer_capacity <= 0 || seed_frames < 0 || exploration_steps < 0 || action_repeat <= 0 ||
        lax_weight < 0)
      throw SchemaError("AgentConfig has a non-positive field");
    if (!(gamma > 0.0 && gamma < 1.0)) throw SchemaError("gamma must lie in (0, 1)");
    parse_variant(variant);
  }
};

inline nlohmann::json agent_config_to_json(const AgentConfig& c) {
  nlohmann::json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["n_step"] = c.n_step;
  j["gamma"] = c.gamma;
  j["tau"] = c.tau;
  j["actor_delay"] = c.actor_delay;
  j["target_update_freq"] = c.target_update_freq;
  j["noise_clip"] = c.noise_clip;
  j["hidden"] = c.hidden;
  j["buffer_capacity"] = c.buffer_capacity;
  j["seed_frames"] = c.seed_frames;
  j["exploration_steps"] = c.exploration_steps;
  j["exploration_std"] = {c.exploration_std.start, c.exploration_std.end,
                          c.exploration_std.horizon};
  j["action_repeat"] = c.action_repeat;
  j["lax_weight"] = c.lax_weight;
  j["variant"] = c.variant;
  j["abstract_state_dim"] = c.abstract_state_dim;
  j["abstract_action_dim"] = c.abstract_action_dim;
  j["stop_grad_encoder_target"] = c.stop_grad_encoder_target;
  j["log_std_min"] = c.log_std_min;
  j["log_std_max"] = c.log_std_max;
  return j;
}

inline AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  try {
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("n_step")) c.n_step = j["n_step"].get<int>();
    if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("actor_delay")) c.actor_delay = j["actor_delay"].get<int>();
    if (j.contains("target_update_freq"))
      c.target_update_freq = j["target_update_freq"].get<int>();
    if (j.contains("noise_clip")) c.noise_clip = j["noise_clip"].get<double>();
    if (j.contains("hidden")) c.hidden = j["hidden"].get<int>();
    if (j.contains("buffer_capacity")) c.buffer_capacity = j["buffer_capacity"].get<long>();
    if (j.contains("seed_frames")) c.seed_frames = j["seed_frames"].get<long>();
    if (j.contains("exploration_steps"))
      c.exploration_steps = j["exploration_steps"].get<long>();
    if (j.contains("exploration_std")) {
      const auto v = j["exploration_std"].get<std::vector<double>>();
      if (v.size() != 3) throw SchemaError("exploration_std must be [start, end, horizon]");
      c.exploration_std = {v[0], v[1], v[2]};
    }
    if (j.contains("action_repeat")) c.action_repeat = j["action_repeat"].get<int>();
    if (j.contains("lax_weight")) c.lax_weight = j["lax_weight"].get<double>();
    if (j.contains("variant")) c.variant = j["variant"].get<std::string>();
    if (j.contains("abstract_state_dim"))
      c.abstract_state_dim = j["abstract_state_dim"].get<int>();
    if (j.contains("abstract_action_dim"))
      c.abstract_action_dim = j["abstract_action_dim"].get<int>();
    if (j.contains("stop_grad_encoder_target"))
      c.stop_grad_encoder_target = j["stop_grad_encoder_target"].get<bool>();
    if (j.contains("log_std_min")) c.log_std_min = j["log_std_min"].get<double>();
    if (j.contains("log_std_max")) c.log_std_max = j["log_std_max"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed agent config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Replay buffer with n-step assembly at sample time
// ---------------------------------------------------------------------------

struct Batch {
  int size = 0;
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<double> obs;           // size x obs_dim, state at t
  std::vector<double> act;           // size x act_dim, action at t
  std::vector<double> reward;        // size, one-step reward r_t
  std::vector<double> next_obs;      // size x obs_dim, state at t+1
  std::vector<double> nstep_return;  // size, sum_{i<k} gamma^i r_{t+i}
  std::vector<double> nstep_obs;     // size x obs_dim, state at t+k (bootstrap)
  std::vector<double> gamma_pow;     // size, gamma^k
};

/// Uniform-sampling ring buffer; n-step windows are assembled at sample time
/// and truncated at episode boundaries.
class ReplayBuffer {
 public:
  ReplayBuffer(long capacity, int obs_dim, int act_dim, int n_step, double gamma)
      : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim), n_step_(n_step),
        gamma_(gamma) {
    obs_.resize(capacity_ * obs_dim_);
    act_.resize(capacity_ * act_dim_);
    reward_.resize(capacity_);
    next_obs_.resize(capacity_ * obs_dim_);
    episode_.resize(capacity_);
    global_.resize(capacity_);
  }

  void add(const std::vector<double>& obs, const std::vector<double>& act, double reward,
           const std::vector<double>& next_obs, long episode_id) {
    const long slot = total_ % capacity_;
    std::copy(obs.begin(), obs.end(), obs_.begin() + slot * obs_dim_);
    std::copy(act.begin(), act.end(), act_.begin() + slot * act_dim_);
    reward_[slot] = reward;
    std::copy(next_obs.begin(), next_obs.end(), next_obs_.begin() + slot * obs_dim_);
    episode_[slot] = episode_id;
    global_[slot] = total_;
    ++total_;
  }

  long size() const { return std::min(total_, capacity_); }
  bool can_sample(int batch) const { return size() >= batch; }

  Batch sample(int batch, Rng& rng) const {
    Batch b;
    b.size = batch;
    b.obs_dim = obs_dim_;
    b.act_dim = act_dim_;
    b.obs.resize(static_cast<std::size_t>(batch) * obs_dim_);
    b.act.resize(static_cast<std::size_t>(batch) * act_dim_);
    b.reward.resize(batch);
    b.next_obs.resize(static_cast<std::size_t>(batch) * obs_dim_);
    b.nstep_return.resize(batch);
    b.nstep_obs.resize(static_cast<std::size_t>(batch) * obs_dim_);
    b.gamma_pow.resize(batch);
    const long n = size();
    for (int i = 0; i < batch; ++i) {
      const long slot = static_cast<long>(rng.uniform_index(static_cast<std::uint64_t>(n)));
      std::copy(obs_.begin() + slot * obs_dim_, obs_.begin() + (slot + 1) * obs_dim_,
                b.obs.begin() + static_cast<std::size_t>(i) * obs_dim_);
      std::copy(act_.begin() + slot * act_dim_, act_.begin() + (slot + 1) * act_dim_,
                b.act.begin() + static_cast<std::size_t>(i) * act_dim_);
      b.reward[i] = reward_[slot];
      std::copy(next_obs_.begin() + slot * obs_dim_, next_obs_.begin() + (slot + 1) * obs_dim_,
                b.next_obs.begin() + static_cast<std::size_t>(i) * obs_dim_);

      // n-step window within the same episode and contiguous in time.
      double ret = 0.0, disc = 1.0;
      long last = slot;
      for (int k = 0; k < n_step_; ++k) {
        const long cur = (slot + k) % capacity_;
        if (k > 0 && (global_[cur] != global_[slot] + k || episode_[cur] != episode_[slot]))
          break;
        ret += disc * reward_[cur];
        disc *= gamma_;
        last = cur;
      }
      b.nstep_return[i] = ret;
      b.gamma_pow[i] = disc;
      std::copy(next_obs_.begin() + last * obs_dim_, next_obs_.begin() + (last + 1) * obs_dim_,
                b.nstep_obs.begin() + static_cast<std::size_t>(i) * obs_dim_);
    }
    return b;
  }

 private:
  long capacity_;
  int obs_dim_, act_dim_, n_step_;
  double gamma_;
  long total_ = 0;
  std::vector<double> obs_, act_, reward_, next_obs_;
  std::vector<long> episode_, global_;
};

// ---------------------------------------------------------------------------
// DHPG actor-critic
// ---------------------------------------------------------------------------

struct LossReport {
  double l_actual = 0.0;
  double l_abstract = 0.0;
  double l_lax = 0.0;
  double l_h = 0.0;
  double l_actor = 0.0;
  double value_equiv_error = 0.0;
  bool actor_updated = false;
};

class DhpgAgent {
 public:
  DhpgAgent(int obs_dim, int act_dim, const AgentConfig& cfg, std::uint64_t seed)
      : cfg_(cfg),
        variant_(parse_variant(cfg.variant)),
        obs_dim_(obs_dim),
        act_dim_(act_dim),
        zs_dim_(cfg.abstract_state_dim > 0 ? cfg.abstract_state_dim : obs_dim),
        za_dim_(cfg.abstract_action_dim > 0 ? cfg.abstract_action_dim : act_dim),
        action_rng_(derive_seed(seed, "agent.action_noise")),
        sample_rng_(derive_seed(seed, "agent.buffer_sampling")),
        target_noise_rng_(derive_seed(seed, "agent.target_noise")),
        hom_rng_(derive_seed(seed, "agent.hom_pairs")),
        model_rng_(derive_seed(seed, "agent.model_sampling")) {
    cfg_.validate();
    const int h = cfg_.hidden;
    Rng actor_init(derive_seed(seed, "init.actor"));
    actor_ = Mlp::make({obs_dim_, h, act_dim_}, true, actor_init, 1e-2);
    Rng critic_init(derive_seed(seed, "init.critic"));
    critic_ = Mlp::make({obs_dim_ + act_dim_, h, 1}, false, critic_init);
    Rng abs_critic_init(derive_seed(seed, "init.abstract_critic"));
    abstract_critic_ = Mlp::make({zs_dim_ + za_dim_, h, 1}, false, abs_critic_init);
    Rng f_init(derive_seed(seed, "init.state_map"));
    state_map_ = Mlp::make({obs_dim_, h, zs_dim_}, false, f_init);
    Rng g_init(derive_seed(seed, "init.action_map"));
    action_map_ = Mlp::make({obs_dim_ + act_dim_, h, za_dim_}, true, g_init);
    Rng r_init(derive_seed(seed, "init.reward_model"));
    reward_model_ = Mlp::make({zs_dim_, h, 1}, false, r_init);
    Rng t_init(derive_seed(seed, "init.transition_model"));
    transition_model_ = Mlp::make({zs_dim_ + za_dim_, h, 2 * zs_dim_}, false, t_init);

    actor_target_ = actor_.clone();
    actor_target_.freeze();
    critic_target_ = critic_.clone();
    critic_target_.freeze();
    abstract_critic_target_ = abstract_critic_.clone();
    abstract_critic_target_.freeze();

    const double lr = cfg_.learning_rate;
    actor_opt_ = std::make_unique<Adam>(actor_.parameters(), lr);
    critic_opt_ = std::make_unique<Adam>(critic_.parameters(), lr);
    abstract_critic_opt_ = std::make_unique<Adam>(abstract_critic_.parameters(), lr);
    state_map_opt_ = std::make_unique<Adam>(state_map_.parameters(), lr);
    action_map_opt_ = std::make_unique<Adam>(action_map_.parameters(), lr);
    reward_model_opt_ = std::make_unique<Adam>(reward_model_.parameters(), lr);
    transition_model_opt_ = std::make_unique<Adam>(transition_model_.parameters(), lr);
  }

  /// Behavior action: uniform during the initial exploration window, then
  /// the deterministic policy plus scheduled Gaussian noise, clipped to the
  /// action box.
  std::vector<double> act(const std::vector<double>& obs, long step, bool explore) {
    if (explore && step < cfg_.exploration_steps) {
      std::vector<double> a(act_dim_);
      for (double& x : a) x = action_rng_.uniform(-1.0, 1.0);
      return a;
    }
    const Tensor out = actor_.forward(Tensor::constant(1, obs_dim_, obs));
    std::vector<double> a = out.value();
    if (explore) {
      const double sigma = cfg_.exploration_std.at(step);
      for (double& x : a) x = std::clamp(x + action_rng_.normal(0.0, sigma), -1.0, 1.0);
    }
    return a;
  }

  /// Abstract image of a state-action pair under the learned map (or the
  /// hard-wired identity in identity_hom mode).
  std::pair<Tensor, Tensor> encode(const Tensor& obs, const Tensor& act) const {
    if (identity_hom) return {obs, act};
    return {state_map_.forward(obs), action_map_.forward(concat_cols(obs, act))};
  }

  /// n-step TD losses for the actual and abstract critics (the latter also
  /// carries gradients into the homomorphism maps).
  std::pair<Tensor, Tensor> critic_losses(const Batch& batch, long step) {
    const Tensor obs = Tensor::constant(batch.size, obs_dim_, batch.obs);
    const Tensor act = Tensor::constant(batch.size, act_dim_, batch.act);
    const Tensor nstep_obs = Tensor::constant(batch.size, obs_dim_, batch.nstep_obs);

    // Target action with clipped smoothing noise.
    Tensor target_act = actor_target_.forward(nstep_obs);
    {
      std::vector<double> noisy = target_act.value();
      const double sigma = cfg_.exploration_std.at(step);
      for (double& x : noisy) {
        const double eps =
            std::clamp(target_noise_rng_.normal(0.0, sigma), -cfg_.noise_clip, cfg_.noise_clip);
        x = std::clamp(x + eps, -1.0, 1.0);
      }
      target_act = Tensor::constant(batch.size, act_dim_, std::move(noisy));
    }

    // Actual critic target.
    const Tensor q_next = critic_target_.forward(concat_cols(nstep_obs, target_act));
    std::vector<double> y(batch.size);
    for (int i = 0; i < batch.size; ++i)
      y[i] = batch.nstep_return[i] + batch.gamma_pow[i] * q_next.value()[i];
    const Tensor target = Tensor::constant(batch.size, 1, y);
    const Tensor q = critic_.forward(concat_cols(obs, act));
    const Tensor l_actual = mean(square(sub(q, target)));

    if (variant_ == Variant::ddpg) {
      last_q_ = q.value();
      last_qbar_.clear();
      return {l_actual, Tensor::scalar(0.0)};
    }

    // Abstract critic target (image of the bootstrap pair, detached).
    auto [zs_next_live, za_next_live] = encode(nstep_obs, target_act);
    const Tensor zs_next = zs_next_live.detach();
    const Tensor za_next = za_next_live.detach();
    const Mlp& abs_target =
        variant_ == Variant::dhpg_single_critic ? critic_target_ : abstract_critic_target_;
    const Tensor qbar_next = abs_target.forward(concat_cols(zs_next, za_next));
    std::vector<double> y_bar(batch.size);
    for (int i = 0; i < batch.size; ++i)
      y_bar[i] = batch.nstep_return[i] + batch.gamma_pow[i] * qbar_next.value()[i];
    const Tensor target_bar = Tensor::constant(batch.size, 1, y_bar);
    auto [zs, za] = encode(obs, act);
    const Mlp& abs_critic =
        variant_ == Variant::dhpg_single_critic ? critic_ : abstract_critic_;
    const Tensor qbar = abs_critic.forward(concat_cols(zs, za));
    const Tensor l_abstract = mean(square(sub(qbar, target_bar)));

    last_q_ = q.value();
    last_qbar_ = qbar.value();
    return {l_actual, l_abstract};
  }

  /// Lax-bisimulation loss (Eq.-12-style regression onto the pairwise
  /// target) and the homomorphism conditions loss.
  std::pair<Tensor, Tensor> homomorphism_losses(const Batch& batch) {
    const Tensor obs = Tensor::constant(batch.size, obs_dim_, batch.obs);
    const Tensor act = Tensor::constant(batch.size, act_dim_, batch.act);
    const Tensor next_obs = Tensor::constant(batch.size, obs_dim_, batch.next_obs);
    const Tensor reward = Tensor::constant(batch.size, 1, batch.reward);

    auto [zs, za] = encode(obs, act);

    // Model forward with live encoder inputs (Eq.-13 path).
    const Tensor model_out = transition_model_.forward(concat_cols(zs, za));
    const Tensor mu = slice_cols(model_out, 0, zs_dim_);
    const Tensor log_std =
        clip(slice_cols(model_out, zs_dim_, zs_dim_), cfg_.log_std_min, cfg_.log_std_max);
    std::vector<double> eps(static_cast<std::size_t>(batch.size) * zs_dim_);
    for (double& e : eps) e = model_rng_.normal();
    const Tensor noise = Tensor::constant(batch.size, zs_dim_, std::move(eps));
    const Tensor zs_next_sample = gaussian_sample(mu, log_std, noise);

    Tensor zs_next = state_map_.forward(next_obs);
    if (cfg_.stop_grad_encoder_target) zs_next = zs_next.detach();
    const Tensor reward_pred = reward_model_.forward(zs);
    const Tensor l_h = add(mean(square(sub(zs_next, zs_next_sample))),
                           mean(square(sub(reward, reward_pred))));

    // Pairwise lax target: |r_i - r_j| + alpha * W2 between model
    // distributions with encoder inputs detached (live only in the model).
    std::vector<int> perm(batch.size);
    for (int i = 0; i < batch.size; ++i) perm[i] = static_cast<int>(i);
    for (int i = batch.size - 1; i > 0; --i)
      std::swap(perm[i], perm[hom_rng_.uniform_index(static_cast<std::uint64_t>(i) + 1)]);

    const Tensor encoder_gap = l1_norm(sub(zs, permute_rows(zs, perm)));

    const Tensor model_out_sg = transition_model_.forward(concat_cols(zs.detach(), za.detach()));
    const Tensor mu_sg = slice_cols(model_out_sg, 0, zs_dim_);
    const Tensor sigma_sg = exp_op(
        clip(slice_cols(model_out_sg, zs_dim_, zs_dim_), cfg_.log_std_min, cfg_.log_std_max));
    const Tensor w2 = sqrt_floor(add(row_sum(square(sub(mu_sg, permute_rows(mu_sg, perm)))),
                                     row_sum(square(sub(sigma_sg, permute_rows(sigma_sg, perm))))),
                                 1e-12);
    const Tensor reward_gap = abs_op(sub(reward, permute_rows(reward, perm)));
    const Tensor lax_target = add(reward_gap, scale(w2, cfg_.lax_weight));
    const Tensor l_lax = mean(square(sub(encoder_gap, lax_target)));
    return {l_lax, l_h};
  }

  /// Actor surrogate per Eq. 11 and the ablation variants; gradients flow
  /// only into the actor when stepped (critics and maps are not updated).
  Tensor actor_loss(const Batch& batch) {
    const Tensor obs = Tensor::constant(batch.size, obs_dim_, batch.obs);
    const Tensor pi = actor_.forward(obs);
    const Tensor q = critic_.forward(concat_cols(obs, pi));
    if (variant_ == Variant::ddpg) return neg(mean(q));

    auto [zs, za] = encode(obs, pi);
    const Mlp& abs_critic =
        variant_ == Variant::dhpg_single_critic ? critic_ : abstract_critic_;
    const Tensor qbar = abs_critic.forward(concat_cols(zs, za));
    if (variant_ == Variant::dhpg_no_dpg) return neg(mean(qbar));
    return neg(add(mean(q), mean(qbar)));
  }

  /// One training update: joint critic/homomorphism step every call, actor
  /// and target updates on their delays.
  LossReport update(ReplayBuffer& buffer, long step) {
    LossReport report;
    const Batch batch = buffer.sample(cfg_.batch_size, sample_rng_);
    const bool learn_hom = variant_ != Variant::ddpg && !identity_hom;

    zero_model_grads();
    Tensor total;
    auto [l_actual, l_abstract] = critic_losses(batch, step);
    report.l_actual = l_actual.item();
    if (variant_ == Variant::ddpg) {
      total = l_actual;
    } else {
      report.l_abstract = l_abstract.item();
      total = add(l_actual, l_abstract);
    }
    if (learn_hom) {
      auto [l_lax, l_h] = homomorphism_losses(batch);
      report.l_lax = l_lax.item();
      report.l_h = l_h.item();
      total = add(total, add(l_lax, l_h));
    }
    check_finite(report, step);
    total.backward();
    critic_opt_->step();
    if (variant_ != Variant::ddpg) abstract_critic_opt_->step();
    if (learn_hom) {
      state_map_opt_->step();
      action_map_opt_->step();
      reward_model_opt_->step();
      transition_model_opt_->step();
    }

    if (step % cfg_.actor_delay == 0) {
      if (variant_ == Variant::dhpg_independent) {
        // Two sequential actor updates from the two estimators.
        zero_model_grads();
        const Tensor dpg_term = [&] {
          const Tensor o = Tensor::constant(batch.size, obs_dim_, batch.obs);
          const Tensor pi = actor_.forward(o);
          return neg(mean(critic_.forward(concat_cols(o, pi))));
        }();
        report.l_actor = dpg_term.item();
        dpg_term.backward();
        actor_opt_->step();
        zero_model_grads();
        const Tensor hpg_term = [&] {
          const Tensor o = Tensor::constant(batch.size, obs_dim_, batch.obs);
          const Tensor pi = actor_.forward(o);
          auto [zs, za] = encode(o, pi);
          return neg(mean(abstract_critic_.forward(concat_cols(zs, za))));
        }();
        report.l_actor += hpg_term.item();
        hpg_term.backward();
        actor_opt_->step();
      } else {
        zero_model_grads();
        const Tensor l_actor = actor_loss(batch);
        report.l_actor = l_actor.item();
        if (!std::isfinite(report.l_actor))
          throw NumericalDivergence("actor loss diverged at step " + std::to_string(step));
        l_actor.backward();
        actor_opt_->step();
      }
      report.actor_updated = true;
    }
    if (step % cfg_.target_update_freq == 0) {
      soft_update(critic_target_.parameters(), critic_.parameters(), cfg_.tau);
      soft_update(abstract_critic_target_.parameters(), abstract_critic_.parameters(), cfg_.tau);
      soft_update(actor_target_.parameters(), actor_.parameters(), cfg_.tau);
    }

    report.value_equiv_error = value_equivalence_diagnostic();
    return report;
  }

  /// Appendix-style diagnostic: batch mean |Q - Qbar| normalized by the
  /// running range of observed critic values.
  double value_equivalence_diagnostic() {
    if (variant_ == Variant::ddpg || last_q_.empty()) return 0.0;
    double gap = 0.0;
    for (std::size_t i = 0; i < last_q_.size(); ++i) {
      gap += std::abs(last_q_[i] - last_qbar_[i]);
      q_running_min_ = std::min(q_running_min_, last_q_[i]);
      q_running_max_ = std::max(q_running_max_, last_q_[i]);
    }
    gap /= static_cast<double>(last_q_.size());
    const double range = q_running_max_ - q_running_min_;
    return range > 1e-6 ? gap / range : gap;
  }

  Mlp& actor() { return actor_; }
  Mlp& critic() { return critic_; }
  Mlp& abstract_critic() { return abstract_critic_; }
  Mlp& actor_target() { return actor_target_; }
  Mlp& critic_target() { return critic_target_; }
  Mlp& abstract_critic_target() { return abstract_critic_target_; }
  Mlp& state_map() { return state_map_; }
  Mlp& action_map() { return action_map_; }
  Mlp& reward_model() { return reward_model_; }
  Mlp& transition_model() { return transition_model_; }
  const AgentConfig& config() const { return cfg_; }

  /// Evaluation of the learned action encoder g(s, a) (tests and the
  /// symmetry probe).
  std::vector<double> encode_action(const std::vector<double>& obs,
                                    const std::vector<double>& act) const {
    if (identity_hom) return act;
    std::vector<double> input = obs;
    input.insert(input.end(), act.begin(), act.end());
    return action_map_.forward(Tensor::constant(1, obs_dim_ + act_dim_, input)).value();
  }

  std::map<std::string, std::vector<Tensor>> parameter_groups() {
    return {{"actor", actor_.parameters()},
            {"critic", critic_.parameters()},
            {"abstract_critic", abstract_critic_.parameters()},
            {"state_map", state_map_.parameters()},
            {"action_map", action_map_.parameters()},
            {"reward_model", reward_model_.parameters()},
            {"transition_model", transition_model_.parameters()}};
  }

  /// Replaces the learned maps with the identity (f = id, g = id) and stops
  /// homomorphism learning; used by equivalence tests.
  bool identity_hom = false;

  /// Copies actual-critic weights into the abstract critic (tests).
  void tie_critics() {
    const auto src = critic_.parameters();
    auto dst = abstract_critic_.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].value() = src[i].value();
    const auto srct = critic_target_.parameters();
    auto dstt = abstract_critic_target_.parameters();
    for (std::size_t i = 0; i < srct.size(); ++i) dstt[i].value() = srct[i].value();
  }

 private:
  void zero_model_grads() {
    actor_opt_->zero_grad();
    critic_opt_->zero_grad();
    abstract_critic_opt_->zero_grad();
    state_map_opt_->zero_grad();
    action_map_opt_->zero_grad();
    reward_model_opt_->zero_grad();
    transition_model_opt_->zero_grad();
  }

  void check_finite(const LossReport& r, long step) const {
    if (!std::isfinite(r.l_actual) || !std::isfinite(r.l_abstract) || !std::isfinite(r.l_lax) ||
        !std::isfinite(r.l_h)) {
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "non-finite loss at step %ld: actual=%g abstract=%g lax=%g h=%g", step,
                    r.l_actual, r.l_abstract, r.l_lax, r.l_h);
      throw NumericalDivergence(buf);
    }
  }

  AgentConfig cfg_;
  Variant variant_;
  int obs_dim_, act_dim_, zs_dim_, za_dim_;

  Rng action_rng_, sample_rng_, target_noise_rng_, hom_rng_, model_rng_;

  Mlp actor_, critic_, abstract_critic_;
  Mlp state_map_, action_map_, reward_model_, transition_model_;
  Mlp actor_target_, critic_target_, abstract_critic_target_;

  std::unique_ptr<Adam> actor_opt_, critic_opt_, abstract_critic_opt_;
  std::unique_ptr<Adam> state_map_opt_, action_map_opt_, reward_model_opt_,
      transition_model_opt_;

  std::vector<double> last_q_, last_qbar_;
  double q_running_min_ = std::numeric_limits<double>::infinity();
  double q_running_max_ = -std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<double> episode_returns;
  std::vector<double> value_equiv_trace;  // per-step diagnostic
  long steps = 0;
};

/// Runs Algorithm-1-style training (state observations): act with scheduled
/// exploration noise, store, one combined critic/homomorphism update per
/// step after the seed frames, delayed actor/target updates. When csv is
/// non-null a row is appended per environment step.
inline TrainResult train(ContinuousEnv& env, const AgentConfig& cfg, std::uint64_t seed,
                         long total_steps, std::ostream* csv = nullptr,
                         DhpgAgent* external_agent = nullptr) {
  cfg.validate();
  DhpgAgent local_agent(env.state_dim(), env.action_dim(), cfg, seed);
  DhpgAgent& agent = external_agent ? *external_agent : local_agent;
  ReplayBuffer buffer(cfg.buffer_capacity, env.state_dim(), env.action_dim(), cfg.n_step,
                      cfg.gamma);

  TrainResult result;
  result.value_equiv_trace.resize(total_steps, 0.0);
  if (csv) {
    *csv << "step,episode_return,l_actual,l_abstract,l_lax,l_h,value_equiv_error,"
            "exploration_std\n";
  }

  long episode_id = 0;
  int episode_step = 0;
  double episode_return = 0.0;
  double last_episode_return = 0.0;
  std::vector<double> obs = env.reset(derive_seed(seed, "episode.0"));
  LossReport report;
  char line[512];
  for (long step = 0; step < total_steps; ++step) {
    const std::vector<double> action = agent.act(obs, step, /*explore=*/true);
    const StepResult sr = env.step(action);
    episode_return += sr.reward;
    buffer.add(obs, action, sr.reward, sr.observation, episode_id);
    obs = sr.observation;
    if (++episode_step >= env.episode_length()) {
      result.episode_returns.push_back(episode_return);
      last_episode_return = episode_return;
      episode_return = 0.0;
      episode_step = 0;
      ++episode_id;
      obs = env.reset(derive_seed(seed, "episode." + std::to_string(episode_id)));
    }
    if (step >= cfg.seed_frames && buffer.can_sample(cfg.batch_size))
      report = agent.update(buffer, step);
    result.value_equiv_trace[step] = report.value_equiv_error;
    if (csv) {
      std::snprintf(line, sizeof(line),
                    "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step,
                    last_episode_return, report.l_actual, report.l_abstract, report.l_lax,
                    report.l_h, report.value_equiv_error, cfg.exploration_std.at(step));
      *csv << line;
    }
  }
  result.steps = total_steps;
  return result;
}

}  // namespace mdphom
