#pragma once

// Mixed-quality behavior data: at every step the behavior policy acts as the
// (noisy) scripted expert with probability expert_fraction and otherwise
// draws a clipped zero-mean Gaussian "random" action.

#include <cstdint>
#include <string>
#include <vector>

#include "csgba/dataset.hpp"
#include "csgba/env.hpp"

namespace csgba {

struct BehaviorConfig {
  double expert_fraction = 0.5;
  double noise = 0.1;  // std of Gaussian noise added to expert actions
  std::uint64_t seed = 0;

  void validate() const {
    if (!(expert_fraction >= 0.0 && expert_fraction <= 1.0)) {
      throw ConfigError("behavior.expert_fraction must be in [0, 1]");
    }
    if (!(noise >= 0.0)) throw ConfigError("behavior.noise must be >= 0");
  }
};

struct GeneratedDataset {
  Dataset dataset;
  /// Generator-side only: 1 where the expert produced the action.
  std::vector<std::uint8_t> expert_flags;
  /// Returns of the episodes that ran to completion.
  std::vector<double> episode_returns;
};

inline Vec behavior_action(const Environment& env, std::span<const float> obs, const BehaviorConfig& cfg,
                           Rng& rng, bool& used_expert) {
  const auto& bounds = env.spec().bounds;
  used_expert = rng.uniform() < cfg.expert_fraction;
  Vec a;
  if (used_expert) {
    a = env.expert_action(obs);
    if (cfg.noise > 0.0) {
      for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += static_cast<float>(cfg.noise * rng.normal());
    }
  } else {
    a.resize(static_cast<Eigen::Index>(env.spec().action_dim));
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double half = 0.5 * (bounds.high[i] - bounds.low[i]);
      const double mid = 0.5 * (bounds.high[i] + bounds.low[i]);
      a[i] = static_cast<float>(mid + half * env.random_action_scale() * rng.normal());
    }
  }
  return bounds.clip(a);
}

/// Rolls whole episodes sequentially until exactly n transitions are collected;
/// the final episode may be cut short. Dataset done flags mark terminal
/// failures only; time-limit truncation is not terminal.
inline GeneratedDataset generate_dataset(const Environment& env, const BehaviorConfig& behavior,
                                         std::size_t n_transitions, std::uint64_t seed) {
  behavior.validate();
  if (n_transitions < 1) throw InvalidArgument("generate_dataset: n_transitions must be >= 1");
  const auto& sp = env.spec();
  DatasetBuilder builder(sp.name, sp.state_dim, sp.action_dim);
  builder.reserve(n_transitions);
  std::vector<std::uint8_t> flags;
  flags.reserve(n_transitions);
  std::vector<double> returns;
  Rng rng(derive_seed(seed, behavior.seed));
  std::uint64_t episode = 0;
  while (builder.size() < n_transitions) {
    auto [state, obs] = env.reset(derive_seed(seed, 1000003 + episode++));
    double ret = 0.0;
    while (!state.terminated && builder.size() < n_transitions) {
      bool expert = false;
      Vec a = behavior_action(env, as_span(obs), behavior, rng, expert);
      StepResult step = env.step(state, as_span(a));
      ret += step.reward;
      builder.push({obs, a, step.reward, step.observation, step.terminal});
      flags.push_back(expert ? 1 : 0);
      obs = std::move(step.observation);
    }
    if (state.terminated) returns.push_back(ret);
  }
  std::string prov = "generated:" + sp.name + ":n=" + std::to_string(n_transitions) +
                     ":expert=" + std::to_string(behavior.expert_fraction) +
                     ":noise=" + std::to_string(behavior.noise) + ":seed=" + std::to_string(seed) + "/" +
                     std::to_string(behavior.seed);
  return {builder.build(std::move(prov)), std::move(flags), std::move(returns)};
}

}  // namespace csgba
