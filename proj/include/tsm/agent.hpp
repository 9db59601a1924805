#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tsm/bitset.hpp"
#include "tsm/env.hpp"
#include "tsm/errors.hpp"
#include "tsm/mlp.hpp"
#include "tsm/model.hpp"
#include "tsm/rng.hpp"

namespace tsm {

// Discrete distribution over the valid subset of actions: softmax over
// valid logits, exact zero probability elsewhere.
struct MaskedCategorical {
  Eigen::VectorXd probs;      // full action space, invalid entries 0
  Eigen::VectorXd log_probs;  // invalid entries -inf
  std::vector<std::size_t> valid;

  static MaskedCategorical from_logits(const Eigen::VectorXd& logits, const DynamicBitset& mask) {
    if (static_cast<std::size_t>(logits.size()) != mask.size())
      throw ContractViolation("logits / mask size mismatch");
    MaskedCategorical d;
    d.valid = mask.to_indices();
    if (d.valid.empty()) throw ContractViolation("mask admits no action");
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i : d.valid) m = std::max(m, logits(static_cast<Eigen::Index>(i)));
    double z = 0.0;
    for (std::size_t i : d.valid) z += std::exp(logits(static_cast<Eigen::Index>(i)) - m);
    const double lse = m + std::log(z);
    d.probs = Eigen::VectorXd::Zero(logits.size());
    d.log_probs =
        Eigen::VectorXd::Constant(logits.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t i : d.valid) {
      const auto ii = static_cast<Eigen::Index>(i);
      d.log_probs(ii) = logits(ii) - lse;
      d.probs(ii) = std::exp(d.log_probs(ii));
    }
    return d;
  }

  double log_prob(std::size_t a) const {
    const double lp = log_probs(static_cast<Eigen::Index>(a));
    if (!std::isfinite(lp)) throw ContractViolation("log_prob of invalid action");
    return lp;
  }

  double entropy() const {
    double h = 0.0;
    for (std::size_t i : valid) {
      const double p = probs(static_cast<Eigen::Index>(i));
      if (p > 0.0) h -= p * log_probs(static_cast<Eigen::Index>(i));
    }
    return h;
  }

  std::size_t sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    double acc = 0.0;
    for (std::size_t i : valid) {
      acc += probs(static_cast<Eigen::Index>(i));
      if (u < acc) return i;
    }
    return valid.back();  // u landed in rounding slack
  }
};

// Actor-critic networks. The actor maps the k-dim observation to one
// logit per test; the critic to a scalar value.
struct PolicyParameters {
  Mlp actor;
  Mlp critic;

  PolicyParameters(std::size_t obs_dim, std::size_t num_actions, std::mt19937_64& rng)
      : actor({obs_dim, 64, 64, num_actions}, 0.01, rng),
        critic({obs_dim, 128, 128, 1}, 1.0, rng) {}

  std::size_t param_count() const { return actor.param_count() + critic.param_count(); }

  Eigen::VectorXd flat_params() const {
    Eigen::VectorXd p(static_cast<Eigen::Index>(param_count()));
    actor.write_params(p.data());
    critic.write_params(p.data() + actor.param_count());
    return p;
  }

  void set_flat_params(const Eigen::VectorXd& p) {
    if (static_cast<std::size_t>(p.size()) != param_count())
      throw ContractViolation("parameter vector size mismatch");
    actor.read_params(p.data());
    critic.read_params(p.data() + actor.param_count());
  }

  Eigen::VectorXd flat_grads() const {
    Eigen::VectorXd g(static_cast<Eigen::Index>(param_count()));
    actor.write_grads(g.data());
    critic.write_grads(g.data() + actor.param_count());
    return g;
  }

  void zero_grad() {
    actor.zero_grad();
    critic.zero_grad();
  }
};

struct PolicyOutput {
  MaskedCategorical dist;
  double value = 0.0;
};

inline PolicyOutput policy_forward(PolicyParameters& params, const Eigen::VectorXd& obs,
                                   const DynamicBitset& mask) {
  Eigen::MatrixXd row = obs.transpose();
  PolicyOutput out;
  out.dist = MaskedCategorical::from_logits(params.actor.forward(row).row(0).transpose(), mask);
  out.value = params.critic.forward(row)(0, 0);
  if (!std::isfinite(out.value)) throw SolverError("critic produced a non-finite value");
  return out;
}

struct TrainConfig {
  std::size_t total_timesteps = 10'000;
  std::size_t num_envs = 5;
  std::size_t n_steps = 500;
  double learning_rate = 3e-4;
  std::size_t minibatch_size = 32;
  double clip_range = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  std::size_t update_epochs = 10;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 20;

  std::size_t iterations() const {
    return std::max<std::size_t>(1, total_timesteps / (num_envs * n_steps));
  }
};

// Flattened rollout storage, one row per (step, env) with env fastest.
// dones[i] flags whether that row's observation begins a new episode
// (the convention the advantage recursion below expects).
struct RolloutBuffer {
  std::size_t n_steps = 0;
  std::size_t num_envs = 0;
  Eigen::MatrixXd obs;          // (n_steps*num_envs) x k
  std::vector<std::size_t> actions;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd rewards;
  Eigen::VectorXd dones;
  Eigen::VectorXd values;
  std::vector<DynamicBitset> masks;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  RolloutBuffer(std::size_t steps, std::size_t envs, std::size_t obs_dim)
      : n_steps(steps), num_envs(envs) {
    const auto rows = static_cast<Eigen::Index>(steps * envs);
    obs.resize(rows, static_cast<Eigen::Index>(obs_dim));
    actions.assign(steps * envs, 0);
    log_probs.resize(rows);
    rewards.resize(rows);
    dones.resize(rows);
    values.resize(rows);
    masks.assign(steps * envs, DynamicBitset(0));
    advantages.resize(rows);
    returns.resize(rows);
  }

  std::size_t rows() const { return n_steps * num_envs; }
  std::size_t row(std::size_t step, std::size_t env) const { return step * num_envs + env; }

  // Generalized advantage estimation, bootstrapped with the value of the
  // observation following the last stored step.
  void compute_advantages(const Eigen::VectorXd& next_value, const std::vector<std::uint8_t>& next_done,
                          double gamma, double lambda) {
    Eigen::VectorXd lastgae = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_envs));
    for (std::size_t t = n_steps; t-- > 0;) {
      for (std::size_t e = 0; e < num_envs; ++e) {
        const auto i = static_cast<Eigen::Index>(row(t, e));
        double nonterminal;
        double next_v;
        if (t == n_steps - 1) {
          nonterminal = 1.0 - static_cast<double>(next_done[e]);
          next_v = next_value(static_cast<Eigen::Index>(e));
        } else {
          const auto j = static_cast<Eigen::Index>(row(t + 1, e));
          nonterminal = 1.0 - dones(j);
          next_v = values(j);
        }
        const double delta = rewards(i) + gamma * next_v * nonterminal - values(i);
        lastgae(static_cast<Eigen::Index>(e)) =
            delta + gamma * lambda * nonterminal * lastgae(static_cast<Eigen::Index>(e));
        advantages(i) = lastgae(static_cast<Eigen::Index>(e));
      }
    }
    returns = advantages + values;
  }
};

struct RolloutStats {
  std::vector<EpisodeRecord> episodes;
  Eigen::VectorXd next_value;
  std::vector<std::uint8_t> next_done;
};

// Runs n_steps of the current policy through the vectorized env,
// recording transitions and every finished episode.
inline RolloutStats collect_rollouts(PolicyParameters& params, VecNormalize& venv,
                                     RolloutBuffer& buf, Eigen::MatrixXd& next_obs,
                                     std::vector<DynamicBitset>& next_masks,
                                     std::vector<std::uint8_t>& next_done,
                                     std::mt19937_64& sample_rng) {
  const std::size_t n = venv.inner().size();
  for (std::size_t step = 0; step < buf.n_steps; ++step) {
    Eigen::MatrixXd logits = params.actor.forward(next_obs);
    Eigen::MatrixXd values = params.critic.forward(next_obs);
    std::vector<std::size_t> actions(n);
    for (std::size_t e = 0; e < n; ++e) {
      const std::size_t i = buf.row(step, e);
      buf.obs.row(static_cast<Eigen::Index>(i)) = next_obs.row(static_cast<Eigen::Index>(e));
      buf.dones(static_cast<Eigen::Index>(i)) = static_cast<double>(next_done[e]);
      buf.masks[i] = next_masks[e];
      auto dist = MaskedCategorical::from_logits(
          logits.row(static_cast<Eigen::Index>(e)).transpose(), next_masks[e]);
      const std::size_t a = dist.sample(sample_rng);
      actions[e] = a;
      buf.actions[i] = a;
      buf.log_probs(static_cast<Eigen::Index>(i)) = dist.log_prob(a);
      buf.values(static_cast<Eigen::Index>(i)) = values(static_cast<Eigen::Index>(e), 0);
    }
    VecStepResult res = venv.step(actions);
    for (std::size_t e = 0; e < n; ++e) {
      buf.rewards(static_cast<Eigen::Index>(buf.row(step, e))) =
          res.rewards(static_cast<Eigen::Index>(e));
      next_done[e] = res.dones[e];
      next_masks[e] = res.masks[e];
    }
    next_obs = res.observations;
  }

  RolloutStats stats;
  stats.episodes = venv.inner().drain_finished();
  stats.next_value = params.critic.forward(next_obs).col(0);
  stats.next_done = next_done;
  return stats;
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  std::size_t minibatches = 0;
};

// One PPO learning phase: update_epochs passes over the shuffled buffer
// in minibatches (a trailing short minibatch is processed as-is).
// Per minibatch: clipped-ratio policy loss with advantages normalized to
// zero mean / unit variance, value MSE, entropy bonus, joint gradient
// clipping, then one optimizer step over actor and critic together.
inline UpdateStats ppo_update(PolicyParameters& params, const RolloutBuffer& buf,
                              const TrainConfig& cfg, Adam& opt, std::mt19937_64& shuffle_rng) {
  const std::size_t rows = buf.rows();
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);

  UpdateStats stats;
  for (std::size_t epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < rows; start += cfg.minibatch_size) {
      const std::size_t count = std::min(cfg.minibatch_size, rows - start);
      Eigen::MatrixXd mb_obs(count, buf.obs.cols());
      for (std::size_t r = 0; r < count; ++r)
        mb_obs.row(static_cast<Eigen::Index>(r)) =
            buf.obs.row(static_cast<Eigen::Index>(order[start + r]));

      Eigen::MatrixXd logits = params.actor.forward(mb_obs);
      Eigen::MatrixXd values = params.critic.forward(mb_obs);

      // Advantage normalization within the minibatch.
      Eigen::VectorXd adv(count);
      for (std::size_t r = 0; r < count; ++r)
        adv(static_cast<Eigen::Index>(r)) =
            buf.advantages(static_cast<Eigen::Index>(order[start + r]));
      const double mean = adv.mean();
      const double var = (adv.array() - mean).square().mean();
      adv = (adv.array() - mean) / (std::sqrt(var) + 1e-8);

      Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
      Eigen::MatrixXd dvalues(count, 1);
      double pg_loss = 0.0;
      double v_loss = 0.0;
      double ent_sum = 0.0;
      const double inv = 1.0 / static_cast<double>(count);

      for (std::size_t r = 0; r < count; ++r) {
        const std::size_t i = order[start + r];
        const auto ri = static_cast<Eigen::Index>(r);
        auto dist = MaskedCategorical::from_logits(logits.row(ri).transpose(), buf.masks[i]);
        const std::size_t a = buf.actions[i];
        const double new_lp = dist.log_prob(a);
        const double ratio = std::exp(new_lp - buf.log_probs(static_cast<Eigen::Index>(i)));
        const double a_hat = adv(ri);
        const double unclipped = ratio * a_hat;
        const double clipped =
            std::clamp(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range) * a_hat;
        pg_loss += -std::min(unclipped, clipped) * inv;

        // d(-min)/d new_lp: the clipped branch is flat in the parameters,
        // so gradient flows only when the unclipped term is active.
        double dlp = 0.0;
        if (unclipped <= clipped) dlp = -a_hat * ratio * inv;

        const double h = dist.entropy();
        ent_sum += h * inv;

        for (std::size_t j : dist.valid) {
          const auto jj = static_cast<Eigen::Index>(j);
          const double p = dist.probs(jj);
          double g = dlp * ((j == a ? 1.0 : 0.0) - p);
          if (cfg.entropy_coef != 0.0 && p > 0.0) {
            const double dh = -p * (dist.log_probs(jj) + h);
            g += -cfg.entropy_coef * dh * inv;
          }
          dlogits(ri, jj) += g;
        }

        const double ret = buf.returns(static_cast<Eigen::Index>(i));
        const double diff = values(ri, 0) - ret;
        v_loss += diff * diff * inv;
        dvalues(ri, 0) = cfg.value_coef * 2.0 * diff * inv;
      }

      if (!std::isfinite(pg_loss) || !std::isfinite(v_loss))
        throw SolverError("non-finite loss in policy update (policy=" + std::to_string(pg_loss) +
                          " value=" + std::to_string(v_loss) + ")");

      params.zero_grad();
      params.actor.backward(dlogits);
      params.critic.backward(dvalues);

      Eigen::VectorXd grads = params.flat_grads();
      const double norm = grads.norm();
      if (norm > cfg.max_grad_norm && norm > 0.0) grads *= cfg.max_grad_norm / norm;

      Eigen::VectorXd p = params.flat_params();
      opt.step(p, grads);
      params.set_flat_params(p);
      if (!params.actor.params_finite() || !params.critic.params_finite())
        throw SolverError("non-finite parameters after optimizer step");

      stats.policy_loss += pg_loss;
      stats.value_loss += v_loss;
      stats.entropy += ent_sum;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    stats.policy_loss /= static_cast<double>(stats.minibatches);
    stats.value_loss /= static_cast<double>(stats.minibatches);
    stats.entropy /= static_cast<double>(stats.minibatches);
  }
  return stats;
}

struct IterationStats {
  std::size_t iteration = 0;
  std::size_t timesteps = 0;
  std::size_t episodes = 0;
  double mean_return = 0.0;  // raw episode rewards
  double best_objective = std::numeric_limits<double>::infinity();
  double policy_loss = 0.0;
  double value_loss = 0.0;
};

struct TrainResult {
  Solution solution;
  std::vector<IterationStats> log;
  bool found_feasible = false;
  bool early_stopped = false;
  std::shared_ptr<PolicyParameters> params;
};

// Full training run: rollout + update iterations with per-iteration
// evaluation, early stopping on stalled mean return, and extraction of
// the best feasible trajectory seen anywhere during training. If no
// episode ever completed the cover (only possible with a tightened step
// limit), the greedy baseline is returned flagged as a fallback.
inline TrainResult train(const TsmInstance& inst, const BipartiteGraph& g, const EmbeddingSet& emb,
                         const ObjectiveConfig& obj, const TrainConfig& cfg, EnvConfig env_cfg = {},
                         std::ostream* trace = nullptr) {
  Solution greedy = solve_greedy(inst, obj);
  auto best_obj_shared = std::make_shared<double>(greedy.objective);

  VecNormalize venv(VecEnv(cfg.num_envs, &g, &emb, &obj, best_obj_shared, env_cfg), cfg.gamma);
  auto init_rng = make_rng(cfg.seed, seed_stream::kPolicyInit);
  auto params_ptr = std::make_shared<PolicyParameters>(emb.k, g.u_size, init_rng);
  PolicyParameters& params = *params_ptr;
  auto sample_rng = make_rng(cfg.seed, seed_stream::kSampling);
  auto shuffle_rng = make_rng(cfg.seed, seed_stream::kShuffle);
  Adam opt(params.param_count(), cfg.learning_rate);

  RolloutBuffer buf(cfg.n_steps, cfg.num_envs, emb.k);
  auto [next_obs, next_masks] = venv.reset();
  std::vector<std::uint8_t> next_done(cfg.num_envs, 0);

  TrainResult result;
  Selection best_sel(g.u_size);
  double best_sel_obj = std::numeric_limits<double>::infinity();
  bool found = false;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t stale_evals = 0;
  double last_mean_return = 0.0;

  const std::size_t iterations = cfg.iterations();
  for (std::size_t it = 1; it <= iterations; ++it) {
    RolloutStats roll =
        collect_rollouts(params, venv, buf, next_obs, next_masks, next_done, sample_rng);
    buf.compute_advantages(roll.next_value, roll.next_done, cfg.gamma, cfg.gae_lambda);

    double ret_sum = 0.0;
    std::size_t n_eps = 0;
    for (const auto& ep : roll.episodes) {
      ret_sum += ep.total_reward;
      ++n_eps;
      if (ep.full_cover) {
        if (!found || detail::better_solution(ep.objective, ep.selection, best_sel_obj, best_sel)) {
          best_sel = ep.selection;
          best_sel_obj = ep.objective;
          found = true;
        }
      }
      if (trace)
        *trace << "episode len=" << ep.length << " reward=" << ep.total_reward
               << " full_cover=" << (ep.full_cover ? 1 : 0) << "\n";
    }
    if (n_eps > 0) last_mean_return = ret_sum / static_cast<double>(n_eps);

    UpdateStats up = ppo_update(params, buf, cfg, opt, shuffle_rng);

    IterationStats is;
    is.iteration = it;
    is.timesteps = it * cfg.num_envs * cfg.n_steps;
    is.episodes = n_eps;
    is.mean_return = last_mean_return;
    is.best_objective = found ? best_sel_obj : greedy.objective;
    is.policy_loss = up.policy_loss;
    is.value_loss = up.value_loss;
    result.log.push_back(is);

    if (last_mean_return > best_metric) {
      best_metric = last_mean_return;
      stale_evals = 0;
    } else if (++stale_evals >= cfg.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }

  result.found_feasible = found;
  Solution sol;
  sol.kind = obj.kind;
  sol.solver = "rl";
  sol.seed = cfg.seed;
  if (found) {
    sol.selected = best_sel;
    sol.objective = evaluate_objective(best_sel, obj);
    sol.feasible = true;
  } else {
    sol = greedy;
    sol.solver = "rl";
    sol.seed = cfg.seed;
    sol.fallback = true;
  }
  result.solution = sol;
  result.params = params_ptr;
  return result;
}

// Checkpoint: versioned document carrying both networks' flat
// parameters plus the training config and seed.
inline void save_checkpoint(const PolicyParameters& params, const TrainConfig& cfg,
                            const std::string& path) {
  nlohmann::ordered_json doc;
  doc["format"] = "tsm-checkpoint/1";
  doc["obs_dim"] = params.actor.input_dim();
  doc["num_actions"] = params.actor.output_dim();
  Eigen::VectorXd actor_p(static_cast<Eigen::Index>(params.actor.param_count()));
  params.actor.write_params(actor_p.data());
  Eigen::VectorXd critic_p(static_cast<Eigen::Index>(params.critic.param_count()));
  params.critic.write_params(critic_p.data());
  doc["actor"] = std::vector<double>(actor_p.data(), actor_p.data() + actor_p.size());
  doc["critic"] = std::vector<double>(critic_p.data(), critic_p.data() + critic_p.size());
  doc["config"] = {{"total_timesteps", cfg.total_timesteps}, {"num_envs", cfg.num_envs},
                   {"n_steps", cfg.n_steps},                 {"learning_rate", cfg.learning_rate},
                   {"minibatch_size", cfg.minibatch_size},   {"clip_range", cfg.clip_range},
                   {"gamma", cfg.gamma},                     {"gae_lambda", cfg.gae_lambda},
                   {"update_epochs", cfg.update_epochs},     {"entropy_coef", cfg.entropy_coef},
                   {"value_coef", cfg.value_coef},           {"max_grad_norm", cfg.max_grad_norm},
                   {"early_stop_patience", cfg.early_stop_patience}};
  doc["seed"] = cfg.seed;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out << doc.dump(2) << "\n";
}

struct Checkpoint {
  std::size_t obs_dim = 0;
  std::size_t num_actions = 0;
  std::vector<double> actor;
  std::vector<double> critic;
  std::uint64_t seed = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (doc.value("format", "") != "tsm-checkpoint/1")
    throw ParseError(path + ": not a tsm-checkpoint/1 document");
  Checkpoint ck;
  ck.obs_dim = doc.at("obs_dim").get<std::size_t>();
  ck.num_actions = doc.at("num_actions").get<std::size_t>();
  ck.actor = doc.at("actor").get<std::vector<double>>();
  ck.critic = doc.at("critic").get<std::vector<double>>();
  ck.seed = doc.value("seed", 0ULL);
  return ck;
}

}  // namespace tsm
