#pragma once

// The poisoning pipeline: correlation-breaking trigger, TD-ranked critical
// sample selection, gradient-guided worst-action search, reward relabeling,
// and patch assembly. Baseline components (random selection, median trigger,
// unconstrained inverted-loss actions, max reward) share the same code paths
// and differ only by configuration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "csgba/dataset.hpp"
#include "csgba/env.hpp"
#include "csgba/error.hpp"
#include "csgba/io.hpp"
#include "csgba/numeric.hpp"
#include "csgba/proxy.hpp"

namespace csgba {

// ---------------------------------------------------------------------------
// Configuration

enum class SelectionStrategy { kTdTop, kTdWindow, kRandom };
enum class ActionStrategy { kGradientGuided, kInvertedLoss, kRandom };
enum class TriggerStrategy { kCorrelationBreaking, kMedian };
enum class ScoreAggregate { kMean, kMax };
enum class RewardStrategy { kPercentile, kMax };

NLOHMANN_JSON_SERIALIZE_ENUM(SelectionStrategy, {{SelectionStrategy::kTdTop, "td-top"},
                                                 {SelectionStrategy::kTdWindow, "td-window"},
                                                 {SelectionStrategy::kRandom, "random"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ActionStrategy, {{ActionStrategy::kGradientGuided, "gradient-guided"},
                                              {ActionStrategy::kInvertedLoss, "inverted-loss"},
                                              {ActionStrategy::kRandom, "random"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TriggerStrategy, {{TriggerStrategy::kCorrelationBreaking, "correlation-breaking"},
                                               {TriggerStrategy::kMedian, "median"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ScoreAggregate, {{ScoreAggregate::kMean, "mean"}, {ScoreAggregate::kMax, "max"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RewardStrategy, {{RewardStrategy::kPercentile, "percentile"},
                                              {RewardStrategy::kMax, "max"}})

namespace detail {
// Enum from JSON, rejecting unknown strings (the macro maps them to the first entry).
template <typename E>
E parse_enum(const json& j, const char* key, E fallback) {
  if (!j.contains(key)) return fallback;
  const E e = j.at(key).get<E>();
  if (json(e) != j.at(key)) throw ConfigError(std::string("unknown value for '") + key + "': " + j.at(key).dump());
  return e;
}
}  // namespace detail

/// floor(eps * n), tolerant of eps*n landing a hair below an integer.
inline std::size_t budget_rows(double eps, std::size_t n) {
  return static_cast<std::size_t>(std::floor(eps * static_cast<double>(n) + 1e-9));
}

struct SelectionSpec {
  SelectionStrategy strategy = SelectionStrategy::kTdTop;
  double budget = 0.05;
  double window_lo = 0.0;  // percent of the descending TD order, td-window only
  double window_hi = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(budget > 0.0 && budget <= 1.0)) throw ConfigError("selection.budget must be in (0, 1]");
    if (strategy == SelectionStrategy::kTdWindow) {
      if (!(window_lo >= 0.0 && window_lo < window_hi && window_hi <= 100.0)) {
        throw ConfigError("selection window must satisfy 0 <= lo < hi <= 100");
      }
      if (std::abs((window_hi - window_lo) / 100.0 - budget) > 1e-9) {
        throw ConfigError("selection window width must equal the budget");
      }
    }
  }

  json to_json() const {
    json j{{"strategy", strategy}, {"budget", budget}, {"seed", seed}};
    if (strategy == SelectionStrategy::kTdWindow) {
      j["window_lo"] = window_lo;
      j["window_hi"] = window_hi;
    }
    return j;
  }

  static SelectionSpec from_json(const json& j) {
    SelectionSpec s;
    s.strategy = detail::parse_enum(j, "strategy", s.strategy);
    s.budget = j.value("budget", s.budget);
    s.window_lo = j.value("window_lo", s.window_lo);
    s.window_hi = j.value("window_hi", s.window_hi);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
  }
};

struct ActionGenSpec {
  ActionStrategy strategy = ActionStrategy::kGradientGuided;
  float step_size = 0.05f;
  std::size_t max_steps = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(step_size > 0.0f)) throw ConfigError("action.step_size must be > 0");
  }

  json to_json() const {
    return {{"strategy", strategy}, {"step_size", step_size}, {"max_steps", max_steps}, {"seed", seed}};
  }

  static ActionGenSpec from_json(const json& j) {
    ActionGenSpec s;
    s.strategy = detail::parse_enum(j, "strategy", s.strategy);
    s.step_size = j.value("step_size", s.step_size);
    s.max_steps = j.value("max_steps", s.max_steps);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
  }
};

struct RewardSpec {
  RewardStrategy strategy = RewardStrategy::kPercentile;
  double percentile = 75.0;

  json to_json() const { return {{"strategy", strategy}, {"percentile", percentile}}; }

  static RewardSpec from_json(const json& j) {
    RewardSpec s;
    s.strategy = detail::parse_enum(j, "strategy", s.strategy);
    s.percentile = j.value("percentile", s.percentile);
    if (!(s.percentile > 0.0 && s.percentile <= 100.0)) throw ConfigError("reward.percentile must be in (0, 100]");
    return s;
  }
};

struct PoisonConfig {
  SelectionSpec selection;
  TriggerStrategy trigger = TriggerStrategy::kCorrelationBreaking;
  double trigger_percentile = 95.0;  // used by the correlation-breaking trigger
  ScoreAggregate score_aggregate = ScoreAggregate::kMean;
  ActionGenSpec action;
  RewardSpec reward;
  std::uint64_t seed = 0;

  /// The median trigger is the same construction at the 50th percentile.
  double effective_trigger_percentile() const {
    return trigger == TriggerStrategy::kMedian ? 50.0 : trigger_percentile;
  }

  void validate() const {
    selection.validate();
    action.validate();
    if (!(trigger_percentile > 0.0 && trigger_percentile <= 100.0)) {
      throw ConfigError("trigger_percentile must be in (0, 100]");
    }
  }

  json to_json() const {
    return {{"selection", selection.to_json()}, {"trigger", trigger},
            {"trigger_percentile", trigger_percentile}, {"score_aggregate", score_aggregate},
            {"action", action.to_json()}, {"reward", reward.to_json()},
            {"seed", seed}};
  }

  static PoisonConfig from_json(const json& j) {
    PoisonConfig c;
    if (j.contains("selection")) c.selection = SelectionSpec::from_json(j.at("selection"));
    c.trigger = detail::parse_enum(j, "trigger", c.trigger);
    c.trigger_percentile = j.value("trigger_percentile", c.trigger_percentile);
    c.score_aggregate = detail::parse_enum(j, "score_aggregate", c.score_aggregate);
    if (j.contains("action")) c.action = ActionGenSpec::from_json(j.at("action"));
    if (j.contains("reward")) c.reward = RewardSpec::from_json(j.at("reward"));
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }

  /// TD-top selection at 5%, 95th-percentile correlation-breaking trigger,
  /// gradient-guided actions, 75th-percentile reward.
  static PoisonConfig cs_gba(double budget = 0.05) {
    PoisonConfig c;
    c.selection.budget = budget;
    return c;
  }

  /// Random selection at 10%, median trigger, inverted-loss actions.
  static PoisonConfig baffle(double budget = 0.10) {
    PoisonConfig c;
    c.selection.strategy = SelectionStrategy::kRandom;
    c.selection.budget = budget;
    c.trigger = TriggerStrategy::kMedian;
    c.action.strategy = ActionStrategy::kInvertedLoss;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Trigger

struct TriggerSpec {
  std::size_t dim = 0;
  float value = 0.0f;
  double percentile = 95.0;
  std::vector<double> scores;  // per-dimension off-diagonal |R| aggregate

  json to_json() const { return {{"dim", dim}, {"value", value}, {"percentile", percentile}, {"scores", scores}}; }

  static TriggerSpec from_json(const json& j) {
    TriggerSpec t;
    t.dim = j.at("dim").get<std::size_t>();
    t.value = j.at("value").get<float>();
    t.percentile = j.value("percentile", t.percentile);
    t.scores = j.value("scores", t.scores);
    return t;
  }
};

/// Picks the state dimension most correlated with its peers (lowest index on
/// ties) and its nearest-rank p-th percentile value.
inline TriggerSpec generate_trigger(const DatasetStats& stats, double p,
                                    ScoreAggregate aggregate = ScoreAggregate::kMean) {
  const auto d = static_cast<std::size_t>(stats.correlation.rows());
  if (d < 2) throw InvalidArgument("generate_trigger: need at least 2 state dimensions for a correlated peer");
  TriggerSpec t;
  t.percentile = p;
  t.scores.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    double agg = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (j == k) continue;
      const double r = std::abs(static_cast<double>(
          stats.correlation(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))));
      agg = aggregate == ScoreAggregate::kMean ? agg + r : std::max(agg, r);
    }
    t.scores[k] = aggregate == ScoreAggregate::kMean ? agg / static_cast<double>(d - 1) : agg;
  }
  for (std::size_t k = 1; k < d; ++k) {
    if (t.scores[k] > t.scores[t.dim]) t.dim = k;
  }
  t.value = stats.state_percentile(t.dim, p);
  return t;
}

inline Vec inject_trigger(std::span<const float> s, const TriggerSpec& t) {
  if (t.dim >= s.size()) {
    throw DimensionError("inject_trigger: trigger dimension " + std::to_string(t.dim) +
                         " out of range for state of width " + std::to_string(s.size()));
  }
  Vec out = to_vec(s);
  out[static_cast<Eigen::Index>(t.dim)] = t.value;
  return out;
}

// ---------------------------------------------------------------------------
// Selection

/// Indices ordered by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_by_score(std::span<const float> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

/// Returned indices are sorted ascending.
inline std::vector<std::size_t> select_critical(std::span<const float> scores, const SelectionSpec& spec) {
  spec.validate();
  const std::size_t n = scores.size();
  if (n < 1) throw InvalidArgument("select_critical: no scores");
  const std::size_t k = budget_rows(spec.budget, n);
  if (k == 0) {
    throw BudgetError("budget rounds to zero: floor(" + std::to_string(spec.budget) + " * " + std::to_string(n) +
                      ") = 0");
  }
  std::vector<std::size_t> out;
  switch (spec.strategy) {
    case SelectionStrategy::kTdTop: {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                        [&](std::size_t a, std::size_t b) {
                          return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                        });
      out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
      break;
    }
    case SelectionStrategy::kTdWindow: {
      const auto ranked = rank_by_score(scores);
      const std::size_t start = std::min(budget_rows(spec.window_lo / 100.0, n), n - k);
      out.assign(ranked.begin() + static_cast<std::ptrdiff_t>(start),
                 ranked.begin() + static_cast<std::ptrdiff_t>(start + k));
      break;
    }
    case SelectionStrategy::kRandom: {
      Rng rng(derive_seed(spec.seed, 0x5e1ec7));
      out = sample_without_replacement(n, k, rng);
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Worst-action search

/// Projected descent on Q(s_trig, .) from a0. Gradient-guided steps are
/// accepted only while Q strictly decreases; inverted-loss runs 4x max_steps
/// unconditional steps; random ignores the critic.
inline Vec worst_action(const QNetwork& q, std::span<const float> s_trig, std::span<const float> a0,
                        const ActionGenSpec& spec, const ActionBounds& bounds, std::uint64_t row_seed = 0) {
  spec.validate();
  if (a0.size() != bounds.dim()) throw DimensionError("worst_action: action width does not match bounds");
  if (!bounds.contains(a0)) throw InvalidArgument("worst_action: starting action outside the action bounds");
  Vec a = to_vec(a0);
  switch (spec.strategy) {
    case ActionStrategy::kGradientGuided: {
      float current = q.value(s_trig, as_span(a));
      for (std::size_t step = 0; step < spec.max_steps; ++step) {
        const Vec g = q.action_gradient(s_trig, as_span(a));
        const Vec next = bounds.clip(a - spec.step_size * g);
        const float value = q.value(s_trig, as_span(next));
        if (!(value < current)) break;
        a = next;
        current = value;
      }
      return a;
    }
    case ActionStrategy::kInvertedLoss: {
      for (std::size_t step = 0; step < 4 * spec.max_steps; ++step) {
        a = bounds.clip(a - spec.step_size * q.action_gradient(s_trig, as_span(a)));
      }
      return a;
    }
    case ActionStrategy::kRandom: {
      Rng rng(derive_seed(spec.seed, row_seed));
      return bounds.sample_uniform(rng);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Reward relabeling

inline float relabel_reward(const DatasetStats& stats, const RewardSpec& spec) {
  return spec.strategy == RewardStrategy::kMax ? stats.reward_max : stats.reward_percentile(spec.percentile);
}

// ---------------------------------------------------------------------------
// Orchestration

struct PoisonedRow {
  std::size_t index = 0;
  Vec original_action;
  Vec poisoned_action;
  float delta_q = 0.0f;  // Q(s~, a~) - Q(s~, a)
};

struct PoisonReport {
  TriggerSpec trigger;
  std::vector<std::size_t> indices;
  std::vector<PoisonedRow> rows;
  float reward_target = 0.0f;
  std::string config_fingerprint;
  std::uint64_t hash_before = 0;
  std::uint64_t hash_after = 0;

  json to_json() const {
    json rj = json::array();
    for (const auto& r : rows) {
      rj.push_back({{"index", r.index},
                    {"original_action", std::vector<float>(r.original_action.data(),
                                                           r.original_action.data() + r.original_action.size())},
                    {"poisoned_action", std::vector<float>(r.poisoned_action.data(),
                                                           r.poisoned_action.data() + r.poisoned_action.size())},
                    {"delta_q", r.delta_q}});
    }
    return {{"trigger", trigger.to_json()},
            {"indices", indices},
            {"rows", rj},
            {"reward_target", reward_target},
            {"config_fingerprint", config_fingerprint},
            {"hash_before", hex64(hash_before)},
            {"hash_after", hex64(hash_after)}};
  }

  static PoisonReport from_json(const json& j) {
    PoisonReport p;
    p.trigger = TriggerSpec::from_json(j.at("trigger"));
    p.indices = j.at("indices").get<std::vector<std::size_t>>();
    for (const auto& rj : j.at("rows")) {
      PoisonedRow r;
      r.index = rj.at("index").get<std::size_t>();
      const auto oa = rj.at("original_action").get<std::vector<float>>();
      const auto pa = rj.at("poisoned_action").get<std::vector<float>>();
      r.original_action = to_vec(oa);
      r.poisoned_action = to_vec(pa);
      r.delta_q = rj.at("delta_q").get<float>();
      p.rows.push_back(std::move(r));
    }
    p.reward_target = j.at("reward_target").get<float>();
    p.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    p.hash_before = parse_hex64(j.at("hash_before").get<std::string>());
    p.hash_after = parse_hex64(j.at("hash_after").get<std::string>());
    return p;
  }
};

inline void save_report(const PoisonReport& r, const std::string& path) { write_text(path, r.to_json().dump(2) + "\n"); }

inline PoisonReport load_report(const std::string& path) {
  try {
    return PoisonReport::from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

struct PoisonResult {
  Dataset dataset;
  PoisonReport report;
};

/// Full three-phase pipeline against explicit action bounds.
inline PoisonResult poison(const Dataset& clean, const QNetwork& proxy, const PoisonConfig& cfg,
                           const ActionBounds& bounds) {
  cfg.validate();
  if (proxy.source_hash != clean.content_hash()) {
    throw HashMismatch("poison: proxy critic was trained on dataset " + hex64(proxy.source_hash) +
                       ", not " + hex64(clean.content_hash()));
  }
  const std::size_t k = budget_rows(cfg.selection.budget, clean.size());
  if (k == 0) {
    throw BudgetError("budget rounds to zero: floor(" + std::to_string(cfg.selection.budget) + " * " +
                      std::to_string(clean.size()) + ") = 0");
  }

  // Phase 1: trigger and reward target from clean statistics.
  const DatasetStats stats = compute_stats(clean);
  PoisonReport report;
  report.trigger = generate_trigger(stats, cfg.effective_trigger_percentile(), cfg.score_aggregate);
  report.reward_target = relabel_reward(stats, cfg.reward);
  report.config_fingerprint = fingerprint(cfg.to_json());
  report.hash_before = clean.content_hash();

  // Phase 2: critical samples.
  SelectionSpec sel = cfg.selection;
  sel.seed = derive_seed(cfg.seed, cfg.selection.seed);
  if (sel.strategy == SelectionStrategy::kRandom) {
    std::vector<float> unused(clean.size(), 0.0f);
    report.indices = select_critical(unused, sel);
  } else {
    const TdScores scores = td_errors(clean, proxy);
    report.indices = select_critical(scores.values, sel);
  }

  // Phase 3: injection. Worst actions are searched at the triggered state.
  ActionGenSpec act = cfg.action;
  act.seed = derive_seed(cfg.seed, cfg.action.seed);
  PatchSet patch;
  for (std::size_t i : report.indices) {
    Transition t = clean.row(i);
    const Vec s_trig = inject_trigger(as_span(t.s), report.trigger);
    const Vec a_bad = worst_action(proxy, as_span(s_trig), as_span(t.a), act, bounds, i);
    PoisonedRow row;
    row.index = i;
    row.original_action = t.a;
    row.poisoned_action = a_bad;
    row.delta_q = proxy.value(as_span(s_trig), as_span(a_bad)) - proxy.value(as_span(s_trig), as_span(t.a));
    report.rows.push_back(std::move(row));
    t.s = s_trig;
    t.a = a_bad;
    t.r = report.reward_target;
    patch.rows.emplace_back(i, std::move(t));
  }
  Dataset out = apply_patch(clean, patch, clean.provenance() + "|poisoned:" + report.config_fingerprint);
  report.hash_after = out.content_hash();
  return {std::move(out), std::move(report)};
}

inline PoisonResult poison(const Dataset& clean, const QNetwork& proxy, const PoisonConfig& cfg) {
  return poison(clean, proxy, cfg, make_env(clean.env_name())->spec().bounds);
}

}  // namespace csgba
