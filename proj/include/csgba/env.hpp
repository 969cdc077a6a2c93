#pragma once

// Toy continuous-control environments. Both ship with a scripted
// proportional-derivative expert and expose a pair of strongly correlated
// observation features (a raw coordinate and its exponential moving average).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csgba/error.hpp"
#include "csgba/numeric.hpp"

namespace csgba {

struct ActionBounds {
  Vec low;
  Vec high;

  std::size_t dim() const { return static_cast<std::size_t>(low.size()); }

  bool contains(std::span<const float> a) const {
    if (a.size() != dim()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!(a[i] >= low[static_cast<Eigen::Index>(i)] && a[i] <= high[static_cast<Eigen::Index>(i)])) {
        return false;
      }
    }
    return true;
  }

  Vec clip(const Vec& a) const { return a.cwiseMax(low).cwiseMin(high); }

  Vec sample_uniform(Rng& rng) const {
    Vec a(low.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a[i] = static_cast<float>(rng.uniform(low[i], high[i]));
    }
    return clip(a);
  }
};

struct EnvSpec {
  std::string name;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  ActionBounds bounds;
  std::size_t max_episode_steps = 1;
  float reward_min = 0.0f;
  float reward_max = 0.0f;
};

struct EnvState {
  std::vector<double> physical;
  std::size_t timestep = 0;
  bool terminated = false;
  std::size_t clipped_actions = 0;  // actions that arrived outside the bounds
};

struct ResetResult {
  EnvState state;
  Vec observation;
};

struct StepResult {
  Vec observation;
  float reward = 0.0f;
  bool done = false;      // terminal failure or time limit
  bool terminal = false;  // terminal failure only
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual ResetResult reset(std::uint64_t seed) const = 0;
  virtual Vec observe(const EnvState& state) const = 0;
  /// Scripted expert; a deterministic function of the observation.
  virtual Vec expert_action(std::span<const float> observation) const = 0;
  /// Scale of the zero-mean Gaussian "random" behavior policy, per action dim.
  virtual float random_action_scale() const = 0;

  StepResult step(EnvState& state, std::span<const float> action) const {
    const auto& sp = spec();
    if (state.terminated) throw EnvError(sp.name + ": step called on a terminated state");
    if (action.size() != sp.action_dim) {
      throw DimensionError(sp.name + ": action has " + std::to_string(action.size()) +
                           " dims, expected " + std::to_string(sp.action_dim));
    }
    Vec a = to_vec(action);
    if (!all_finite(a)) throw NonFiniteError(sp.name + ": non-finite action");
    if (!sp.bounds.contains(action)) {
      ++state.clipped_actions;
      a = sp.bounds.clip(a);
    }
    const auto [reward, terminal] = advance(state, a);
    ++state.timestep;
    StepResult r;
    r.reward = std::clamp(reward, sp.reward_min, sp.reward_max);
    r.terminal = terminal;
    r.done = terminal || state.timestep >= sp.max_episode_steps;
    state.terminated = r.done;
    r.observation = observe(state);
    return r;
  }

 protected:
  struct Advance {
    float reward;
    bool terminal;
  };
  virtual Advance advance(EnvState& state, const Vec& action) const = 0;
};

/// Point mass chasing a goal in the plane.
///
/// physical = (px, py, vx, vy, gx, gy, qx, qy); observation =
/// (px, py, vx, vy, gx - px, gy - py, qx, qy), where q is an exponential
/// moving average of the position. Per step, with clipped action a:
///
///     v' = 0.6 v + 0.3 a
///     p' = p + v' + drift,        drift = (0.01, -0.01)
///     q' = 0.8 q + 0.2 p'
///     r  = 1 - |g - p'|           (clamped to [-1, 1])
///
/// The episode fails (r = -1, terminal) when |v'|_inf > 0.25, which any
/// single action component beyond about 0.83 triggers even from rest, or when
/// |p'|_inf > 1.5.
class PointReach final : public Environment {
 public:
  static constexpr double kDamping = 0.6;
  static constexpr double kGain = 0.3;
  static constexpr double kDriftX = 0.01;
  static constexpr double kDriftY = -0.01;
  static constexpr double kAverage = 0.2;
  static constexpr double kCrashSpeed = 0.25;
  static constexpr double kArena = 1.5;

  PointReach() {
    spec_.name = "point-reach";
    spec_.state_dim = 8;
    spec_.action_dim = 2;
    spec_.bounds.low = Vec::Constant(2, -1.0f);
    spec_.bounds.high = Vec::Constant(2, 1.0f);
    spec_.max_episode_steps = 100;
    spec_.reward_min = -1.0f;
    spec_.reward_max = 1.0f;
  }

  const EnvSpec& spec() const override { return spec_; }

  ResetResult reset(std::uint64_t seed) const override {
    Rng rng(derive_seed(seed, 0x5e7));
    EnvState s;
    s.physical.assign(8, 0.0);
    s.physical[0] = rng.uniform(-1.0, 1.0);
    s.physical[1] = rng.uniform(-1.0, 1.0);
    s.physical[4] = rng.uniform(-1.0, 1.0);
    s.physical[5] = rng.uniform(-1.0, 1.0);
    s.physical[6] = s.physical[0];
    s.physical[7] = s.physical[1];
    Vec obs = observe(s);
    return {std::move(s), std::move(obs)};
  }

  Vec observe(const EnvState& s) const override {
    const auto& x = s.physical;
    Vec o(8);
    o << static_cast<float>(x[0]), static_cast<float>(x[1]), static_cast<float>(x[2]),
        static_cast<float>(x[3]), static_cast<float>(x[4] - x[0]), static_cast<float>(x[5] - x[1]),
        static_cast<float>(x[6]), static_cast<float>(x[7]);
    return o;
  }

  /// Tracks a capped desired velocity toward the goal, compensating drift.
  Vec expert_action(std::span<const float> o) const override {
    Vec a(2);
    const double drift[2] = {kDriftX, kDriftY};
    for (int i = 0; i < 2; ++i) {
      const double to_goal = o[static_cast<std::size_t>(4 + i)];
      const double v = o[static_cast<std::size_t>(2 + i)];
      const double desired = std::clamp(0.35 * to_goal - drift[i], -0.12, 0.12);
      const double act = (desired - kDamping * v) / kGain;
      a[i] = static_cast<float>(std::clamp(act, -0.6, 0.6));
    }
    return a;
  }

  float random_action_scale() const override { return 0.25f; }

 protected:
  Advance advance(EnvState& s, const Vec& a) const override {
    auto& x = s.physical;
    x[2] = kDamping * x[2] + kGain * a[0];
    x[3] = kDamping * x[3] + kGain * a[1];
    x[0] += x[2] + kDriftX;
    x[1] += x[3] + kDriftY;
    x[6] = (1.0 - kAverage) * x[6] + kAverage * x[0];
    x[7] = (1.0 - kAverage) * x[7] + kAverage * x[1];
    const bool crash = std::max(std::abs(x[2]), std::abs(x[3])) > kCrashSpeed ||
                       std::max(std::abs(x[0]), std::abs(x[1])) > kArena;
    if (crash) return {-1.0f, true};
    const double dist = std::hypot(x[4] - x[0], x[5] - x[1]);
    return {static_cast<float>(1.0 - dist), false};
  }

 private:
  EnvSpec spec_;
};

/// Linearised inverted pendulum: unstable without control.
///
/// physical = observation = (theta, omega, theta_avg). Per step (dt = 0.05):
///
///     omega' = omega + dt (12 theta + 10 a)
///     theta' = theta + dt omega'
///     theta_avg' = 0.7 theta_avg + 0.3 theta'
///     r = 0.5 (1 - |theta'| / 0.4) + 0.5 [|theta'| < 0.05]
///
/// Leaving the safe band |theta'| > 0.4 ends the episode with r = -1.
class Balance1d final : public Environment {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kInstability = 12.0;
  static constexpr double kGain = 10.0;
  static constexpr double kAverage = 0.3;
  static constexpr double kSafeBand = 0.4;
  static constexpr double kUprightBand = 0.05;

  Balance1d() {
    spec_.name = "balance-1d";
    spec_.state_dim = 3;
    spec_.action_dim = 1;
    spec_.bounds.low = Vec::Constant(1, -1.0f);
    spec_.bounds.high = Vec::Constant(1, 1.0f);
    spec_.max_episode_steps = 100;
    spec_.reward_min = -1.0f;
    spec_.reward_max = 1.0f;
  }

  const EnvSpec& spec() const override { return spec_; }

  ResetResult reset(std::uint64_t seed) const override {
    Rng rng(derive_seed(seed, 0xba1));
    EnvState s;
    s.physical.assign(3, 0.0);
    s.physical[0] = rng.uniform(-0.15, 0.15);
    s.physical[1] = rng.uniform(-0.2, 0.2);
    s.physical[2] = s.physical[0];
    Vec obs = observe(s);
    return {std::move(s), std::move(obs)};
  }

  Vec observe(const EnvState& s) const override {
    Vec o(3);
    o << static_cast<float>(s.physical[0]), static_cast<float>(s.physical[1]),
        static_cast<float>(s.physical[2]);
    return o;
  }

  Vec expert_action(std::span<const float> o) const override {
    Vec a(1);
    a[0] = static_cast<float>(std::clamp(-(3.0 * o[0] + 0.8 * o[1]), -1.0, 1.0));
    return a;
  }

  float random_action_scale() const override { return 0.3f; }

 protected:
  Advance advance(EnvState& s, const Vec& a) const override {
    auto& x = s.physical;
    x[1] += kDt * (kInstability * x[0] + kGain * a[0]);
    x[0] += kDt * x[1];
    x[2] = (1.0 - kAverage) * x[2] + kAverage * x[0];
    if (std::abs(x[0]) > kSafeBand) return {-1.0f, true};
    const double upright = std::abs(x[0]) < kUprightBand ? 1.0 : 0.0;
    return {static_cast<float>(0.5 * (1.0 - std::abs(x[0]) / kSafeBand) + 0.5 * upright), false};
  }

 private:
  EnvSpec spec_;
};

inline std::vector<std::string> env_names() { return {"point-reach", "balance-1d"}; }

inline std::unique_ptr<Environment> make_env(std::string_view name) {
  if (name == "point-reach") return std::make_unique<PointReach>();
  if (name == "balance-1d") return std::make_unique<Balance1d>();
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

}  // namespace csgba
