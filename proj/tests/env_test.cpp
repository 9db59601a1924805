#include "tsm/env.hpp"

#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "test_support.hpp"

using tsm::testing::desk_instance;
using tsm::testing::kDeskTripObjective;

namespace {

// Owns everything a TsmEnv points at.
struct EnvRig {
  tsm::TsmInstance inst;
  tsm::BipartiteGraph g;
  tsm::EmbeddingSet emb;
  tsm::ObjectiveConfig obj;
  std::shared_ptr<double> best;

  EnvRig(tsm::TsmInstance instance, std::size_t k, std::uint64_t seed, double best_init)
      : inst(std::move(instance)),
        g(tsm::build_graph(inst)),
        emb(tsm::compute_embeddings(g, k, seed)),
        obj(tsm::make_trip_config(tsm::compute_similarity(emb, tsm::SimilarityMode::kCosine))),
        best(std::make_shared<double>(best_init)) {}

  tsm::TsmEnv env(tsm::EnvConfig cfg = {}) const {
    return tsm::TsmEnv(&g, &emb, &obj, best, cfg);
  }
  tsm::VecEnv vec(std::size_t n, tsm::EnvConfig cfg = {}) const {
    return tsm::VecEnv(n, &g, &emb, &obj, best, cfg);
  }
};

EnvRig desk_rig(double best_init) { return EnvRig(desk_instance(), 3, 0, best_init); }

std::size_t first_valid(const tsm::DynamicBitset& mask) {
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.test(i)) return i;
  throw std::logic_error("all-zero mask");
}

}  // namespace

TEST(Env, ResetObservationSumsAllNodeVectors) {
  const EnvRig rig = desk_rig(kDeskTripObjective);
  tsm::TsmEnv env = rig.env();
  const Eigen::VectorXd obs = env.reset();

  Eigen::RowVectorXd expected = rig.emb.u_vectors.colwise().sum();
  expected += rig.emb.v_vectors.colwise().sum();
  ASSERT_EQ(obs.size(), 3);
  for (Eigen::Index i = 0; i < obs.size(); ++i) EXPECT_NEAR(obs(i), expected(i), 1e-12);

  EXPECT_EQ(env.mask().count(), 3u);  // every test valid
  EXPECT_EQ(env.step_count(), 0u);
  EXPECT_EQ(env.covered().count(), 0u);
  EXPECT_FALSE(env.done());
}

TEST(Env, IsolatedTestIsMaskedAtReset) {
  tsm::TsmInstance inst = desk_instance();
  inst.test_ids.push_back("t4");
  inst.stmt.insert(inst.stmt.end(), {0, 0, 0});
  inst.fault.insert(inst.fault.end(), {0, 0, 0, 0});
  const EnvRig rig(std::move(inst), 3, 0, 100.0);
  tsm::TsmEnv env = rig.env();
  env.reset();
  EXPECT_FALSE(env.mask().test(3));
  EXPECT_EQ(env.mask().count(), 3u);
}

TEST(Env, EmbeddingGraphMismatchThrows) {
  const EnvRig desk = desk_rig(0.0);
  const EnvRig other(tsm::generate_synthetic(5, 8, 2, 0.5, 1), 3, 0, 0.0);
  EXPECT_THROW(tsm::TsmEnv(&desk.g, &other.emb, &desk.obj, desk.best), tsm::ValidationError);
}

TEST(Env, DeskFirstStepOnT2) {
  const EnvRig rig = desk_rig(kDeskTripObjective);
  tsm::TsmEnv env = rig.env();
  env.reset();
  const tsm::StepOutcome out = env.step(1);

  EXPECT_NEAR(out.reward, -1.0 / 3.0 + 5.0 / 7.0, 1e-12);
  EXPECT_FALSE(out.done);
  EXPECT_EQ(out.selected_count, 1u);
  EXPECT_EQ(out.covered_count, 5u);
  // t2 touches s2, s3 and f1..f3: column nodes 1,2,3,4,5.
  EXPECT_EQ(env.covered().to_indices(), (std::vector<std::size_t>{1, 2, 3, 4, 5}));
  // t3 stays valid: s1 is still uncovered.
  EXPECT_TRUE(out.mask.test(0));
  EXPECT_FALSE(out.mask.test(1));
  EXPECT_TRUE(out.mask.test(2));
}

TEST(Env, DeskEpisodeT2ThenT1Terminates) {
  const EnvRig rig = desk_rig(kDeskTripObjective);  // best = optimal, so bonus = 0
  tsm::TsmEnv env = rig.env();
  env.reset();
  env.step(1);
  const tsm::StepOutcome out = env.step(0);

  EXPECT_NEAR(out.reward, -2.0 / 3.0 + 2.0 / 7.0, 1e-12);
  EXPECT_TRUE(out.done);
  EXPECT_EQ(out.covered_count, 7u);

  const tsm::EpisodeRecord rec = env.episode_record();
  EXPECT_TRUE(rec.full_cover);
  EXPECT_EQ(rec.length, 2u);
  EXPECT_EQ(rec.selection.indices(), (std::vector<std::size_t>{0, 1}));
  EXPECT_NEAR(rec.objective, kDeskTripObjective, 1e-9);
}

TEST(Env, InvalidActionsThrow) {
  const EnvRig rig = desk_rig(0.0);
  tsm::TsmEnv env = rig.env();
  env.reset();
  env.step(1);
  EXPECT_THROW(env.episode_record(), tsm::ContractViolation);  // episode still running
  EXPECT_THROW(env.step(1), tsm::ContractViolation);   // already selected
  EXPECT_THROW(env.step(9), tsm::ContractViolation);   // out of range
  env.step(0);
  EXPECT_THROW(env.step(2), tsm::ContractViolation);   // episode finished
  EXPECT_NO_THROW(env.episode_record());
}

TEST(Env, TestWithFullyCoveredNeighborsIsMasked) {
  // t1 only touches s1; t2 covers s1 and s2; s3 belongs to t3 alone.
  tsm::TsmInstance inst;
  inst.test_ids = {"t1", "t2", "t3"};
  inst.num_stmts = 3;
  inst.num_faults = 0;
  inst.stmt = {1, 0, 0, 1, 1, 0, 0, 0, 1};
  const EnvRig rig(std::move(inst), 2, 0, 100.0);
  tsm::TsmEnv env = rig.env();
  env.reset();
  const tsm::StepOutcome out = env.step(1);
  EXPECT_FALSE(out.done);
  EXPECT_FALSE(out.mask.test(0));  // nothing left for t1 to add
  EXPECT_FALSE(out.mask.test(1));
  EXPECT_TRUE(out.mask.test(2));
}

TEST(Env, StepLimitTruncatesWithPenalty) {
  const EnvRig rig = desk_rig(0.0);
  tsm::EnvConfig cfg;
  cfg.step_limit = 1;
  tsm::TsmEnv env = rig.env(cfg);
  env.reset();
  const tsm::StepOutcome out = env.step(2);
  EXPECT_TRUE(out.done);
  EXPECT_NEAR(out.reward, -1.0 / 3.0 + 5.0 / 7.0 - 1.0, 1e-12);
  const tsm::EpisodeRecord rec = env.episode_record();
  EXPECT_FALSE(rec.full_cover);
  EXPECT_EQ(rec.length, 1u);
  EXPECT_NEAR(rec.total_reward, out.reward, 1e-12);
}

TEST(Env, TerminationBonusVariants) {
  {
    // Intent variant: pays best - objective when the episode improves on it.
    const EnvRig rig = desk_rig(10.0);
    tsm::TsmEnv env = rig.env();
    env.reset();
    env.step(1);
    const tsm::StepOutcome out = env.step(0);
    const double expected_bonus = 10.0 - kDeskTripObjective;
    EXPECT_NEAR(out.reward, -2.0 / 3.0 + 2.0 / 7.0 + expected_bonus, 1e-9);
    EXPECT_NEAR(*rig.best, kDeskTripObjective, 1e-9);  // best updated after payout
  }
  {
    // Literal variant: pays objective - best.
    const EnvRig rig = desk_rig(0.0);
    tsm::EnvConfig cfg;
    cfg.bonus = tsm::BonusVariant::kLiteral;
    tsm::TsmEnv env = rig.env(cfg);
    env.reset();
    env.step(1);
    const tsm::StepOutcome out = env.step(0);
    EXPECT_NEAR(out.reward, -2.0 / 3.0 + 2.0 / 7.0 + kDeskTripObjective, 1e-9);
    EXPECT_DOUBLE_EQ(*rig.best, 0.0);  // min(best, objective) keeps 0
  }
}

TEST(Env, ObservationMatchesRecomputationDuringRollout) {
  const EnvRig rig(tsm::generate_synthetic(15, 30, 8, 0.3, 9), 8, 9, 0.0);
  tsm::TsmEnv env = rig.env();
  env.reset();
  std::mt19937_64 pick(17);
  while (!env.done()) {
    const Eigen::VectorXd inc = env.observation();
    const Eigen::VectorXd ref = env.observation_recomputed();
    ASSERT_EQ(inc.size(), ref.size());
    for (Eigen::Index i = 0; i < inc.size(); ++i) EXPECT_NEAR(inc(i), ref(i), 1e-9);
    std::vector<std::size_t> valid = env.mask().to_indices();
    ASSERT_FALSE(valid.empty());
    env.step(valid[pick() % valid.size()]);
  }
}

TEST(Env, RandomRolloutProperties) {
  // With best pinned at 0 the intent bonus never pays, so the cumulative
  // reward of a covering episode is exactly 1 - (sum of 1..L)/|U|.
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5 + rng() % 16;
    const EnvRig rig(
        tsm::generate_synthetic(n, 8 + rng() % 25, 2 + rng() % 6,
                                0.15 + 0.35 * (static_cast<double>(rng() % 1000) / 1000.0),
                                rng()),
        6, 4, 0.0);
    tsm::TsmEnv env = rig.env();
    env.reset();
    double total = 0.0;
    while (!env.done()) {
      EXPECT_GE(env.mask().count(), 1u);  // never stuck before done
      std::vector<std::size_t> valid = env.mask().to_indices();
      total += env.step(valid[rng() % valid.size()]).reward;
    }
    const tsm::EpisodeRecord rec = env.episode_record();
    EXPECT_LE(rec.length, n);
    ASSERT_TRUE(rec.full_cover);  // step limit |U| cannot truncate a coverable instance
    const double l = static_cast<double>(rec.length);
    const double expected = 1.0 - (l * (l + 1.0) / 2.0) / static_cast<double>(n);
    EXPECT_NEAR(total, expected, 1e-9);
    EXPECT_NEAR(rec.total_reward, expected, 1e-9);
    EXPECT_TRUE(tsm::is_feasible(rec.selection, rig.inst,
                                 tsm::ConstraintMode::kStatementsAndFaults)
                    .feasible);
  }
}

TEST(VecEnv, LockstepCopiesGiveIdenticalRewards) {
  const EnvRig rig = desk_rig(kDeskTripObjective);
  tsm::VecEnv vec = rig.vec(5);
  vec.reset();
  const tsm::VecStepResult res = vec.step({1, 1, 1, 1, 1});
  for (Eigen::Index i = 0; i < 5; ++i)
    EXPECT_NEAR(res.rewards(i), -1.0 / 3.0 + 5.0 / 7.0, 1e-12);
  for (std::uint8_t d : res.dones) EXPECT_EQ(d, 0);
}

TEST(VecEnv, SingleCopyMatchesPlainEnvBitForBit) {
  // Two rigs so the plain env and the vectorized one do not share the
  // best-objective cell; identical seeds make everything else equal.
  const EnvRig rig = desk_rig(kDeskTripObjective);
  const EnvRig rig2 = desk_rig(kDeskTripObjective);
  tsm::TsmEnv env = rig.env();
  tsm::VecEnv vec = rig2.vec(1);

  const Eigen::VectorXd obs0 = env.reset();
  auto [vobs0, vmask0] = vec.reset();
  EXPECT_TRUE(vobs0.row(0).transpose() == obs0);
  EXPECT_TRUE(vmask0[0] == env.mask());

  const tsm::StepOutcome s1 = env.step(1);
  const tsm::VecStepResult v1 = vec.step({1});
  EXPECT_EQ(v1.rewards(0), s1.reward);
  EXPECT_EQ(v1.dones[0], 0);
  EXPECT_TRUE(v1.observations.row(0).transpose() == s1.observation);
  EXPECT_TRUE(v1.masks[0] == s1.mask);

  const tsm::StepOutcome s2 = env.step(0);
  const tsm::VecStepResult v2 = vec.step({0});
  EXPECT_EQ(v2.rewards(0), s2.reward);
  EXPECT_EQ(v2.dones[0], 1);
  EXPECT_TRUE(s2.done);
}

TEST(VecEnv, AutoResetDeliversFreshEpisode) {
  const EnvRig rig = desk_rig(kDeskTripObjective);
  tsm::VecEnv vec = rig.vec(1);
  auto [obs0, mask0] = vec.reset();
  vec.step({1});
  const tsm::VecStepResult done_step = vec.step({0});
  EXPECT_EQ(done_step.dones[0], 1);
  // The returned row is already the next episode's starting state.
  EXPECT_TRUE(done_step.observations.row(0) == obs0.row(0));
  EXPECT_TRUE(done_step.masks[0] == mask0[0]);

  const std::vector<tsm::EpisodeRecord> finished = vec.drain_finished();
  ASSERT_EQ(finished.size(), 1u);
  EXPECT_TRUE(finished[0].full_cover);
  EXPECT_EQ(finished[0].selection.indices(), (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(vec.drain_finished().empty());

  // The fresh episode is fully playable.
  const tsm::VecStepResult next = vec.step({1});
  EXPECT_NEAR(next.rewards(0), -1.0 / 3.0 + 5.0 / 7.0, 1e-12);
}

TEST(VecEnv, ErrorsCarryEnvIndex) {
  const EnvRig rig = desk_rig(0.0);
  tsm::VecEnv vec = rig.vec(3);
  vec.reset();
  try {
    vec.step({0, 1, 9});
    FAIL() << "expected ContractViolation";
  } catch (const tsm::ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("env 2"), std::string::npos);
  }
  EXPECT_THROW(vec.step({0, 1}), tsm::ContractViolation);  // batch size mismatch
  EXPECT_THROW(rig.vec(0), tsm::ValidationError);
}

TEST(RunningStats, ParallelUpdateMatchesDirectComputation) {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> gauss(2.0, 3.0);
  Eigen::MatrixXd all(300, 4);
  for (Eigen::Index i = 0; i < all.size(); ++i) all.data()[i] = gauss(rng);

  tsm::RunningMeanStd rms(4);
  rms.update(all.topRows(120));
  rms.update(all.middleRows(120, 80));
  rms.update(all.bottomRows(100));

  const Eigen::VectorXd mean = all.colwise().mean();
  const Eigen::VectorXd var =
      (all.rowwise() - mean.transpose()).array().square().colwise().mean();
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(rms.mean(i), mean(i), 1e-3);
    EXPECT_NEAR(rms.var(i), var(i), 1e-2);
  }
  EXPECT_NEAR(rms.count, 300.0, 1.0);
}

TEST(VecNormalize, RewardScaledByReturnStdAndObsWhitened) {
  const EnvRig rig = desk_rig(kDeskTripObjective);
  tsm::VecNormalize venv(rig.vec(2), 0.99);
  std::vector<tsm::DynamicBitset> masks = venv.reset().second;
  std::mt19937_64 rng(3);
  for (int s = 0; s < 40; ++s) {
    std::vector<std::size_t> actions;
    for (const tsm::DynamicBitset& m : masks) {
      std::vector<std::size_t> valid = m.to_indices();
      actions.push_back(valid[rng() % valid.size()]);
    }
    const tsm::VecStepResult res = venv.step(actions);
    masks = res.masks;

    const double scale = std::sqrt(venv.return_stats().var(0) + tsm::VecNormalize::kEps);
    for (Eigen::Index i = 0; i < res.rewards.size(); ++i) {
      const double expected =
          std::clamp(venv.last_raw_rewards()(i) / scale, -tsm::VecNormalize::kClip,
                     tsm::VecNormalize::kClip);
      EXPECT_NEAR(res.rewards(i), expected, 1e-12);
    }
    for (Eigen::Index i = 0; i < res.observations.size(); ++i) {
      EXPECT_LE(std::abs(res.observations.data()[i]), tsm::VecNormalize::kClip + 1e-12);
    }
  }
  EXPECT_GT(venv.obs_stats().count, 50.0);
}

TEST(VecNormalize, StatsFreezeWhenTrainingOff) {
  const EnvRig rig = desk_rig(kDeskTripObjective);
  tsm::VecNormalize venv(rig.vec(1), 0.99);
  auto [obs, masks] = venv.reset();
  venv.step({first_valid(masks[0])});

  const Eigen::VectorXd mean_before = venv.obs_stats().mean;
  const double count_before = venv.obs_stats().count;
  const double rvar_before = venv.return_stats().var(0);

  venv.set_training(false);
  auto [obs2, masks2] = venv.reset();
  venv.step({first_valid(masks2[0])});

  EXPECT_TRUE(venv.obs_stats().mean == mean_before);
  EXPECT_DOUBLE_EQ(venv.obs_stats().count, count_before);
  EXPECT_DOUBLE_EQ(venv.return_stats().var(0), rvar_before);
}

TEST(VecNormalize, ObservationClipAtDefaultStats) {
  const EnvRig rig = desk_rig(0.0);
  tsm::VecNormalize venv(rig.vec(1), 0.99);
  Eigen::MatrixXd huge = Eigen::MatrixXd::Constant(2, 3, 1e6);
  huge.row(1).setConstant(-1e6);
  const Eigen::MatrixXd out = venv.normalize_obs(huge);
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    EXPECT_DOUBLE_EQ(out(0, i), tsm::VecNormalize::kClip);
    EXPECT_DOUBLE_EQ(out(1, i), -tsm::VecNormalize::kClip);
  }
}
