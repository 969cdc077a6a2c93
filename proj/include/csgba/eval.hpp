#pragma once

// Rollouts of trained policies with an observation-only trigger and the
// Clean / Attack reward bookkeeping.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csgba/attack.hpp"
#include "csgba/env.hpp"
#include "csgba/error.hpp"
#include "csgba/io.hpp"
#include "csgba/numeric.hpp"
#include "csgba/policy.hpp"

namespace csgba {

enum class ScheduleMode { kNone, kDistributed, kConsecutive };

struct ScheduleRequest {
  ScheduleMode mode = ScheduleMode::kNone;
  std::size_t param = 0;  // N or L

  std::string name() const {
    switch (mode) {
      case ScheduleMode::kNone: return "clean";
      case ScheduleMode::kDistributed: return "distributed-N" + std::to_string(param);
      case ScheduleMode::kConsecutive: return "consecutive-L" + std::to_string(param);
    }
    return "?";
  }
};

struct TriggerSchedule {
  ScheduleRequest request;
  std::set<std::size_t> steps;

  bool active(std::size_t t) const { return steps.count(t) != 0; }
};

/// distributed(N): {N, 2N, ...} up to and including episode_len.
/// consecutive(L): {t0, ..., t0 + L - 1} with t0 uniform in [0, episode_len - L].
inline TriggerSchedule make_schedule(const ScheduleRequest& req, std::size_t episode_len, std::uint64_t seed) {
  TriggerSchedule s;
  s.request = req;
  switch (req.mode) {
    case ScheduleMode::kNone: break;
    case ScheduleMode::kDistributed:
      if (req.param < 1) throw InvalidArgument("make_schedule: distributed N must be >= 1");
      for (std::size_t t = req.param; t <= episode_len; t += req.param) s.steps.insert(t);
      break;
    case ScheduleMode::kConsecutive: {
      if (req.param < 1) throw InvalidArgument("make_schedule: consecutive L must be >= 1");
      if (req.param > episode_len) {
        throw InvalidArgument("make_schedule: consecutive L = " + std::to_string(req.param) +
                              " exceeds episode length " + std::to_string(episode_len));
      }
      Rng rng(seed);
      const std::size_t start = rng.below(episode_len - req.param + 1);
      for (std::size_t t = start; t < start + req.param; ++t) s.steps.insert(t);
      break;
    }
  }
  return s;
}

struct EpisodeResult {
  double total_reward = 0.0;
  std::size_t steps = 0;
  bool terminal = false;
  std::size_t triggered_steps = 0;
};

/// At activated timesteps the policy sees inject_trigger(obs); the environment
/// always steps its own state. `trace`, when given, receives the state after reset
/// and after every step.
inline EpisodeResult run_episode(const Environment& env, const Policy& policy, const TriggerSpec& trigger,
                                 const TriggerSchedule& schedule, std::uint64_t reset_seed,
                                 std::vector<EnvState>* trace = nullptr) {
  auto [state, obs] = env.reset(reset_seed);
  if (trace) trace->push_back(state);
  EpisodeResult out;
  bool done = false;
  while (!done) {
    const std::size_t t = state.timestep;
    Vec seen = obs;
    if (schedule.active(t)) {
      seen = inject_trigger(as_span(obs), trigger);
      ++out.triggered_steps;
    }
    const Vec a = policy.act(as_span(seen));
    const StepResult r = env.step(state, as_span(a));
    if (trace) trace->push_back(state);
    out.total_reward += static_cast<double>(r.reward);
    obs = r.observation;
    done = r.done;
    out.terminal = r.terminal;
    ++out.steps;
  }
  return out;
}

struct EvalConfig {
  std::size_t episodes = 10;
  std::vector<std::size_t> distributed = {10, 20, 50};
  std::vector<std::size_t> consecutive = {5, 10, 20};
  std::uint64_t seed = 0;

  void validate() const {
    if (episodes < 1) throw ConfigError("eval.episodes must be >= 1");
    for (auto n : distributed) {
      if (n < 1) throw ConfigError("eval.distributed entries must be >= 1");
    }
    for (auto l : consecutive) {
      if (l < 1) throw ConfigError("eval.consecutive entries must be >= 1");
    }
  }

  std::vector<ScheduleRequest> settings() const {
    std::vector<ScheduleRequest> out{{ScheduleMode::kNone, 0}};
    for (auto n : distributed) out.push_back({ScheduleMode::kDistributed, n});
    for (auto l : consecutive) out.push_back({ScheduleMode::kConsecutive, l});
    return out;
  }

  json to_json() const {
    return {{"episodes", episodes}, {"distributed", distributed}, {"consecutive", consecutive}, {"seed", seed}};
  }

  static EvalConfig from_json(const json& j) {
    EvalConfig c;
    c.episodes = j.value("episodes", c.episodes);
    c.distributed = j.value("distributed", c.distributed);
    c.consecutive = j.value("consecutive", c.consecutive);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct SettingResult {
  std::string name;
  ScheduleMode mode = ScheduleMode::kNone;
  std::size_t param = 0;
  std::size_t episodes = 0;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> returns;
};

struct EvalReport {
  std::string victim_fingerprint;
  std::string dataset_fingerprint;
  std::vector<SettingResult> settings;

  const SettingResult& clean() const { return settings.at(0); }

  const SettingResult& setting(const std::string& name) const {
    for (const auto& s : settings) {
      if (s.name == name) return s;
    }
    throw InvalidArgument("EvalReport: no setting '" + name + "'");
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& s : settings) {
      arr.push_back({{"name", s.name},
                     {"mode", static_cast<int>(s.mode)},
                     {"param", s.param},
                     {"episodes", s.episodes},
                     {"mean", s.mean},
                     {"std", s.std},
                     {"returns", s.returns}});
    }
    return {{"victim", victim_fingerprint}, {"dataset", dataset_fingerprint}, {"settings", arr}};
  }

  static EvalReport from_json(const json& j) {
    EvalReport r;
    r.victim_fingerprint = j.at("victim").get<std::string>();
    r.dataset_fingerprint = j.at("dataset").get<std::string>();
    for (const auto& s : j.at("settings")) {
      SettingResult x;
      x.name = s.at("name").get<std::string>();
      x.mode = static_cast<ScheduleMode>(s.at("mode").get<int>());
      x.param = s.at("param").get<std::size_t>();
      x.episodes = s.at("episodes").get<std::size_t>();
      x.mean = s.at("mean").get<double>();
      x.std = s.at("std").get<double>();
      x.returns = s.at("returns").get<std::vector<double>>();
      r.settings.push_back(std::move(x));
    }
    return r;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << "setting,mode,param,episodes,mean,std\n";
    for (const auto& s : settings) {
      const char* mode = s.mode == ScheduleMode::kNone ? "none"
                         : s.mode == ScheduleMode::kDistributed ? "distributed"
                                                                : "consecutive";
      os << s.name << ',' << mode << ',' << s.param << ',' << s.episodes << ',' << s.mean << ',' << s.std << '\n';
    }
    return os.str();
  }
};

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

/// Reset seed of episode i; shared by every setting so settings are paired.
inline std::uint64_t episode_seed(std::uint64_t seed, std::size_t i) { return derive_seed(seed, 0xe915 + i); }

inline SettingResult evaluate_setting(const Environment& env, const Policy& policy, const TriggerSpec& trigger,
                                      const ScheduleRequest& req, const EvalConfig& cfg) {
  SettingResult s;
  s.name = req.name();
  s.mode = req.mode;
  s.param = req.param;
  s.episodes = cfg.episodes;
  const std::size_t len = env.spec().max_episode_steps;
  for (std::size_t i = 0; i < cfg.episodes; ++i) {
    const std::uint64_t sched_seed = derive_seed(derive_seed(cfg.seed, 0x5c4ed + req.param), i);
    const TriggerSchedule sched = make_schedule(req, len, sched_seed);
    s.returns.push_back(run_episode(env, policy, trigger, sched, episode_seed(cfg.seed, i)).total_reward);
  }
  std::tie(s.mean, s.std) = mean_std(s.returns);
  return s;
}

inline EvalReport evaluate(const Policy& policy, const Environment& env, const TriggerSpec& trigger,
                           const EvalConfig& cfg, std::string victim_fingerprint = {},
                           std::string dataset_fingerprint = {}) {
  cfg.validate();
  EvalReport r;
  r.victim_fingerprint = std::move(victim_fingerprint);
  r.dataset_fingerprint = std::move(dataset_fingerprint);
  for (const auto& req : cfg.settings()) r.settings.push_back(evaluate_setting(env, policy, trigger, req, cfg));
  return r;
}

/// Mean return of `policy` over `episodes` clean episodes with the shared reset seeds.
inline double clean_mean_return(const Environment& env, const Policy& policy, std::size_t episodes,
                                std::uint64_t seed) {
  EvalConfig cfg;
  cfg.episodes = episodes;
  cfg.seed = seed;
  return evaluate_setting(env, policy, TriggerSpec{}, {ScheduleMode::kNone, 0}, cfg).mean;
}

/// Settings as rows, one "mean ± std" column per named report.
inline std::string markdown_table(const std::vector<std::pair<std::string, EvalReport>>& columns,
                                  const std::string& corner = "Setting") {
  std::ostringstream os;
  os << "| " << corner << " |";
  for (const auto& [name, _] : columns) os << ' ' << name << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) os << "---:|";
  os << '\n';
  if (columns.empty()) return os.str();
  for (const auto& row : columns.front().second.settings) {
    os << "| " << row.name << " |";
    for (const auto& [_, rep] : columns) {
      std::optional<SettingResult> cell;
      for (const auto& s : rep.settings) {
        if (s.name == row.name) cell = s;
      }
      char buf[64];
      if (cell) {
        std::snprintf(buf, sizeof buf, " %.2f ± %.2f |", cell->mean, cell->std);
      } else {
        std::snprintf(buf, sizeof buf, " n/a |");
      }
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace csgba
