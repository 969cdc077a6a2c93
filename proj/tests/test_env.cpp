#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "csgba/env.hpp"
#include "csgba/eval.hpp"
#include "csgba/policy.hpp"

using namespace csgba;

class EnvContract : public ::testing::TestWithParam<std::string> {};

TEST_P(EnvContract, ResetIsDeterministic) {
  const auto env = make_env(GetParam());
  const auto a = env->reset(11), b = env->reset(11);
  EXPECT_EQ(a.observation, b.observation);
  EXPECT_EQ(a.state.physical, b.state.physical);
  EXPECT_EQ(a.observation.size(), static_cast<Eigen::Index>(env->spec().state_dim));
}

TEST_P(EnvContract, DifferentSeedsGiveDifferentStarts) {
  const auto env = make_env(GetParam());
  std::set<std::vector<float>> seen;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Vec o = env->reset(s).observation;
    seen.insert({o.data(), o.data() + o.size()});
  }
  EXPECT_GE(seen.size(), 99u);
}

TEST_P(EnvContract, ZeroActionRunsToTimeLimit) {
  const auto env = make_env(GetParam());
  // The scripted expert never fails; zero actions may, so use the expert to
  // reach the limit and check the done bookkeeping.
  auto [state, obs] = env->reset(5);
  std::size_t steps = 0;
  StepResult r;
  do {
    r = env->step(state, as_span(env->expert_action(as_span(obs))));
    obs = r.observation;
    ++steps;
    EXPECT_GE(r.reward, env->spec().reward_min);
    EXPECT_LE(r.reward, env->spec().reward_max);
  } while (!r.done);
  EXPECT_EQ(steps, env->spec().max_episode_steps);
  EXPECT_FALSE(r.terminal);
  EXPECT_THROW(env->step(state, as_span(Vec::Zero(static_cast<Eigen::Index>(env->spec().action_dim)))), EnvError);
}

TEST_P(EnvContract, ActionErrors) {
  const auto env = make_env(GetParam());
  auto [state, obs] = env->reset(1);
  const auto ad = static_cast<Eigen::Index>(env->spec().action_dim);
  EXPECT_THROW(env->step(state, as_span(Vec::Zero(ad + 1))), DimensionError);
  Vec bad = Vec::Zero(ad);
  bad[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(env->step(state, as_span(bad)), NonFiniteError);
}

TEST_P(EnvContract, OutOfBoundsActionsAreClippedAndCounted) {
  const auto env = make_env(GetParam());
  auto a = env->reset(3), b = env->reset(3);
  const auto ad = static_cast<Eigen::Index>(env->spec().action_dim);
  const Vec big = Vec::Constant(ad, 0.5f) + Vec::Constant(ad, 50.0f).cwiseProduct(Vec::Ones(ad));
  const Vec clipped = env->spec().bounds.clip(big);
  const StepResult ra = env->step(a.state, as_span(big));
  const StepResult rb = env->step(b.state, as_span(clipped));
  EXPECT_EQ(a.state.clipped_actions, 1u);
  EXPECT_EQ(b.state.clipped_actions, 0u);
  EXPECT_EQ(ra.observation, rb.observation);
  EXPECT_EQ(ra.reward, rb.reward);
}

TEST_P(EnvContract, ExpertBeatsRandom) {
  const auto env = make_env(GetParam());
  ExpertPolicy expert(*env);
  FunctionPolicy zero([&](std::span<const float>) {
    return Vec::Zero(static_cast<Eigen::Index>(env->spec().action_dim)).eval();
  });
  EXPECT_GT(clean_mean_return(*env, expert, 10, 1), clean_mean_return(*env, zero, 10, 1));
}

INSTANTIATE_TEST_SUITE_P(All, EnvContract, ::testing::ValuesIn(env_names()));

TEST(PointReach, ZeroActionFromRestMovesByDriftOnly) {
  PointReach env;
  auto [state, obs] = env.reset(21);
  const double px = state.physical[0], py = state.physical[1];
  const double gx = state.physical[4], gy = state.physical[5];
  const StepResult r = env.step(state, as_span(Vec::Zero(2)));
  EXPECT_DOUBLE_EQ(state.physical[0], px + PointReach::kDriftX);
  EXPECT_DOUBLE_EQ(state.physical[1], py + PointReach::kDriftY);
  const double dist = std::hypot(gx - state.physical[0], gy - state.physical[1]);
  EXPECT_NEAR(r.reward, 1.0 - dist, 1e-6);
  EXPECT_FALSE(r.done);
}

TEST(PointReach, FullThrottleFromRestCrashes) {
  PointReach env;
  auto [state, obs] = env.reset(4);
  const StepResult r = env.step(state, as_span(Vec::Constant(2, 1.0f)));
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.terminal);
  EXPECT_EQ(r.reward, -1.0f);
}

TEST(PointReach, ObservationLayout) {
  PointReach env;
  auto [state, obs] = env.reset(8);
  EXPECT_FLOAT_EQ(obs[4], static_cast<float>(state.physical[4] - state.physical[0]));
  EXPECT_FLOAT_EQ(obs[6], static_cast<float>(state.physical[0]));
}

TEST(Balance1d, PushOutOfBandFails) {
  Balance1d env;
  auto [state, obs] = env.reset(2);
  StepResult r;
  std::size_t steps = 0;
  do {
    r = env.step(state, as_span(Vec::Constant(1, 1.0f)));
    ++steps;
  } while (!r.done);
  EXPECT_TRUE(r.terminal);
  EXPECT_EQ(r.reward, -1.0f);
  EXPECT_GT(std::abs(state.physical[0]), Balance1d::kSafeBand);
  EXPECT_LT(steps, env.spec().max_episode_steps);
}

TEST(Envs, UnknownNameIsConfigError) { EXPECT_THROW(make_env("hopper"), ConfigError); }
