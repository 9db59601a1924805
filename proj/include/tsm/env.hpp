#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tsm/bitset.hpp"
#include "tsm/embedding.hpp"
#include "tsm/errors.hpp"
#include "tsm/graph.hpp"
#include "tsm/model.hpp"

namespace tsm {

// The terminal bonus max{best - O(s), 0} pays for solutions better than
// the best seen so far; the original formulation max{O(s) - best, 0}
// pays for worse ones. Both are available.
enum class BonusVariant { kIntent, kLiteral };

struct EnvConfig {
  BonusVariant bonus = BonusVariant::kIntent;
  std::size_t step_limit = 0;  // 0 means one step per test (|U|)
};

// One finished episode, recorded with raw (unnormalized) rewards.
struct EpisodeRecord {
  Selection selection;
  std::size_t length = 0;
  double total_reward = 0.0;
  bool full_cover = false;
  double objective = 0.0;  // meaningful only when full_cover
};

struct StepOutcome {
  Eigen::VectorXd observation;
  double reward = 0.0;
  bool done = false;
  DynamicBitset mask;
  std::size_t selected_count = 0;
  std::size_t covered_count = 0;
};

// Episodic test-selection environment over the bipartite graph. The
// observation is the sum of embeddings of unselected tests plus
// uncovered columns; selecting a test zeroes its vector and those of the
// columns it newly covers out of the sums. Reward per step is
// -(selections so far / |U|) + (columns newly covered / |V|).
class TsmEnv {
 public:
  TsmEnv(const BipartiteGraph* g, const EmbeddingSet* emb, const ObjectiveConfig* obj,
         std::shared_ptr<double> best_objective, EnvConfig cfg = {})
      : g_(g), emb_(emb), obj_(obj), best_(std::move(best_objective)), cfg_(cfg),
        selected_(g->u_size), covered_(g->v_size), mask_(g->u_size),
        uncovered_neighbors_(g->u_size, 0) {
    if (static_cast<std::size_t>(emb->u_vectors.rows()) != g->u_size ||
        static_cast<std::size_t>(emb->v_vectors.rows()) != g->v_size)
      throw ValidationError("embedding row counts do not match graph node counts");
    if (cfg_.step_limit == 0) cfg_.step_limit = g->u_size;
  }

  std::size_t num_actions() const { return g_->u_size; }
  std::size_t obs_dim() const { return emb_->k; }
  const DynamicBitset& mask() const { return mask_; }
  const DynamicBitset& covered() const { return covered_; }
  const Selection& selection() const { return selection_; }
  std::size_t step_count() const { return step_count_; }
  bool done() const { return done_; }

  Eigen::VectorXd reset() {
    selected_.clear();
    covered_.clear();
    selection_ = Selection(g_->u_size);
    step_count_ = 0;
    episode_reward_ = 0.0;
    done_ = false;
    u_sum_ = emb_->u_vectors.colwise().sum();
    v_sum_ = emb_->v_vectors.colwise().sum();
    for (std::size_t u = 0; u < g_->u_size; ++u) uncovered_neighbors_[u] = g_->adj[u].size();
    refresh_mask();
    return observation();
  }

  Eigen::VectorXd observation() const { return (u_sum_ + v_sum_).transpose(); }

  // Recomputed from scratch; the incremental sums must match this.
  Eigen::VectorXd observation_recomputed() const {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(emb_->k));
    for (std::size_t u = 0; u < g_->u_size; ++u)
      if (!selected_.test(u)) acc += emb_->u_vectors.row(static_cast<Eigen::Index>(u));
    for (std::size_t v = 0; v < g_->v_size; ++v)
      if (!covered_.test(v)) acc += emb_->v_vectors.row(static_cast<Eigen::Index>(v));
    return acc.transpose();
  }

  StepOutcome step(std::size_t action) {
    if (done_) throw ContractViolation("step on finished episode; reset first");
    if (action >= g_->u_size) throw ContractViolation("action index out of range");
    if (!mask_.test(action))
      throw ContractViolation("invalid action " + std::to_string(action) +
                              ": already selected or adds no coverage");

    selected_.set(action);
    selection_.add(action);
    ++step_count_;
    u_sum_ -= emb_->u_vectors.row(static_cast<Eigen::Index>(action));

    std::size_t newly = 0;
    for (std::size_t v : g_->adj[action]) {
      if (covered_.test(v)) continue;
      covered_.set(v);
      v_sum_ -= emb_->v_vectors.row(static_cast<Eigen::Index>(v));
      ++newly;
      for (std::size_t u : g_->radj[v]) {
        if (--uncovered_neighbors_[u] == 0) mask_.reset(u);
      }
    }
    mask_.reset(action);

    StepOutcome out;
    out.reward = -static_cast<double>(step_count_) / static_cast<double>(g_->u_size) +
                 static_cast<double>(newly) / static_cast<double>(g_->v_size);

    const bool all_covered = covered_.count() == g_->v_size;
    if (all_covered) {
      out.reward += termination_bonus();
      done_ = true;
    } else if (step_count_ >= cfg_.step_limit) {
      out.reward -= 1.0;
      done_ = true;
    }
    episode_reward_ += out.reward;
    full_cover_ = all_covered;

    out.observation = observation();
    out.done = done_;
    out.mask = mask_;
    out.selected_count = step_count_;
    out.covered_count = covered_.count();
    return out;
  }

  EpisodeRecord episode_record() const {
    if (!done_) throw ContractViolation("episode_record before episode end");
    EpisodeRecord rec;
    rec.selection = selection_;
    rec.length = step_count_;
    rec.total_reward = episode_reward_;
    rec.full_cover = full_cover_;
    if (full_cover_) rec.objective = evaluate_objective(selection_, *obj_);
    return rec;
  }

 private:
  void refresh_mask() {
    mask_.clear();
    for (std::size_t u = 0; u < g_->u_size; ++u)
      if (!selected_.test(u) && uncovered_neighbors_[u] > 0) mask_.set(u);
  }

  double termination_bonus() {
    const double obj = evaluate_objective(selection_, *obj_);
    double bonus = 0.0;
    if (cfg_.bonus == BonusVariant::kIntent)
      bonus = std::max(*best_ - obj, 0.0);
    else
      bonus = std::max(obj - *best_, 0.0);
    *best_ = std::min(*best_, obj);  // updated after the bonus is computed
    return bonus;
  }

  const BipartiteGraph* g_;
  const EmbeddingSet* emb_;
  const ObjectiveConfig* obj_;
  std::shared_ptr<double> best_;
  EnvConfig cfg_;

  DynamicBitset selected_;
  DynamicBitset covered_;
  DynamicBitset mask_;
  Selection selection_;
  std::vector<std::size_t> uncovered_neighbors_;
  Eigen::RowVectorXd u_sum_;
  Eigen::RowVectorXd v_sum_;
  std::size_t step_count_ = 0;
  double episode_reward_ = 0.0;
  bool done_ = false;
  bool full_cover_ = false;
};

struct VecStepResult {
  Eigen::MatrixXd observations;  // N x k
  Eigen::VectorXd rewards;
  std::vector<std::uint8_t> dones;
  std::vector<DynamicBitset> masks;
};

// N independent copies stepped in lockstep. A finished sub-environment
// reports done = true and is reset in place, so its row already holds
// the fresh episode's observation and mask; the finished episode is
// queued for the trainer to drain.
class VecEnv {
 public:
  VecEnv(std::size_t n, const BipartiteGraph* g, const EmbeddingSet* emb,
         const ObjectiveConfig* obj, std::shared_ptr<double> best_objective, EnvConfig cfg = {}) {
    if (n < 1) throw ValidationError("vectorized environment needs at least one copy");
    for (std::size_t i = 0; i < n; ++i) envs_.emplace_back(g, emb, obj, best_objective, cfg);
  }

  std::size_t size() const { return envs_.size(); }
  std::size_t obs_dim() const { return envs_[0].obs_dim(); }
  std::size_t num_actions() const { return envs_[0].num_actions(); }

  std::pair<Eigen::MatrixXd, std::vector<DynamicBitset>> reset() {
    Eigen::MatrixXd obs(envs_.size(), obs_dim());
    std::vector<DynamicBitset> masks;
    for (std::size_t i = 0; i < envs_.size(); ++i) {
      obs.row(static_cast<Eigen::Index>(i)) = envs_[i].reset().transpose();
      masks.push_back(envs_[i].mask());
    }
    return {obs, masks};
  }

  VecStepResult step(const std::vector<std::size_t>& actions) {
    if (actions.size() != envs_.size())
      throw ContractViolation("action batch size does not match environment count");
    VecStepResult res;
    res.observations.resize(envs_.size(), obs_dim());
    res.rewards.resize(static_cast<Eigen::Index>(envs_.size()));
    res.dones.resize(envs_.size());
    res.masks.resize(envs_.size());
    for (std::size_t i = 0; i < envs_.size(); ++i) {
      StepOutcome out;
      try {
        out = envs_[i].step(actions[i]);
      } catch (const Error& e) {
        throw ContractViolation("env " + std::to_string(i) + ": " + e.what());
      }
      res.rewards(static_cast<Eigen::Index>(i)) = out.reward;
      res.dones[i] = out.done ? 1 : 0;
      if (out.done) {
        finished_.push_back(envs_[i].episode_record());
        res.observations.row(static_cast<Eigen::Index>(i)) = envs_[i].reset().transpose();
        res.masks[i] = envs_[i].mask();
      } else {
        res.observations.row(static_cast<Eigen::Index>(i)) = out.observation.transpose();
        res.masks[i] = out.mask;
      }
    }
    return res;
  }

  std::vector<EpisodeRecord> drain_finished() {
    std::vector<EpisodeRecord> out;
    out.swap(finished_);
    return out;
  }

 private:
  std::vector<TsmEnv> envs_;
  std::vector<EpisodeRecord> finished_;
};

// Streaming per-feature mean/variance (parallel-update form).
struct RunningMeanStd {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 1e-4;

  explicit RunningMeanStd(std::size_t dim = 1)
      : mean(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim))),
        var(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(dim))) {}

  void update(const Eigen::MatrixXd& batch) {  // rows are samples
    const double bcount = static_cast<double>(batch.rows());
    if (bcount == 0) return;
    Eigen::VectorXd bmean = batch.colwise().mean();
    Eigen::VectorXd bvar =
        (batch.rowwise() - bmean.transpose()).array().square().colwise().mean();
    const double tot = count + bcount;
    Eigen::VectorXd delta = bmean - mean;
    Eigen::VectorXd m2 = var * count + bvar * bcount +
                         delta.array().square().matrix() * (count * bcount / tot);
    mean += delta * (bcount / tot);
    var = m2 / tot;
    count = tot;
  }
};

// Observation and reward normalization in the style of the standard
// vectorized-training wrapper: observations are whitened per feature,
// rewards divided by the running standard deviation of the discounted
// return, both clipped to +-10. Statistics freeze when training is off.
class VecNormalize {
 public:
  VecNormalize(VecEnv env, double gamma)
      : env_(std::move(env)), obs_rms_(env_.obs_dim()), ret_rms_(1), gamma_(gamma),
        returns_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(env_.size()))) {}

  static constexpr double kClip = 10.0;
  static constexpr double kEps = 1e-8;

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  VecEnv& inner() { return env_; }
  const RunningMeanStd& obs_stats() const { return obs_rms_; }
  const RunningMeanStd& return_stats() const { return ret_rms_; }

  std::pair<Eigen::MatrixXd, std::vector<DynamicBitset>> reset() {
    auto [obs, masks] = env_.reset();
    returns_.setZero();
    if (training_) obs_rms_.update(obs);
    return {normalize_obs(obs), masks};
  }

  VecStepResult step(const std::vector<std::size_t>& actions) {
    VecStepResult res = env_.step(actions);
    raw_rewards_ = res.rewards;
    if (training_) {
      returns_ = returns_ * gamma_ + res.rewards;
      obs_rms_.update(res.observations);
      Eigen::MatrixXd ret_col = returns_;
      ret_rms_.update(ret_col);
      for (std::size_t i = 0; i < res.dones.size(); ++i)
        if (res.dones[i]) returns_(static_cast<Eigen::Index>(i)) = 0.0;
    }
    res.observations = normalize_obs(res.observations);
    res.rewards = normalize_reward(res.rewards);
    return res;
  }

  Eigen::MatrixXd normalize_obs(const Eigen::MatrixXd& obs) const {
    Eigen::ArrayXd scale = (obs_rms_.var.array() + kEps).sqrt();
    Eigen::MatrixXd out = obs;
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      out.row(r) = ((out.row(r).transpose().array() - obs_rms_.mean.array()) / scale)
                       .cwiseMin(kClip).cwiseMax(-kClip).matrix().transpose();
    return out;
  }

  Eigen::VectorXd normalize_reward(const Eigen::VectorXd& rewards) const {
    const double scale = std::sqrt(ret_rms_.var(0) + kEps);
    return (rewards / scale).cwiseMin(kClip).cwiseMax(-kClip);
  }

  const Eigen::VectorXd& last_raw_rewards() const { return raw_rewards_; }

 private:
  VecEnv env_;
  RunningMeanStd obs_rms_;
  RunningMeanStd ret_rms_;
  double gamma_;
  Eigen::VectorXd returns_;
  Eigen::VectorXd raw_rewards_;
  bool training_ = true;
};

}  // namespace tsm
