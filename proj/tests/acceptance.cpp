// Acceptance gate: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is the number of failing criteria.
//
// Criteria 6, 7 and 10 share one run of configs/headline.json through the
// csgba binary; 9 reuses that output directory for configs/sensitivity.json so
// clean data, proxies and benign victims come from the cache.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "csgba/csgba.hpp"
#include "csgba/pipeline.hpp"
#include "oracles.hpp"

using namespace csgba;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const fs::path kWork = fs::temp_directory_path() / "csgba-acceptance";
const fs::path kRuns = kWork / "runs";

// ---------------------------------------------------------------------------
// 1-3: oracles

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  double worst = 0.0;
  std::size_t bad = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t sd = 1 + rng.below(8), ad = 1 + rng.below(3);
    const std::size_t h = 8 + rng.below(57);
    QNetwork q = QNetwork::from_params(make_mlp({sd + ad, h, h, 1}, Activation::kRelu, Activation::kLinear, rng), sd, ad);
    Vec s(static_cast<Eigen::Index>(sd)), a(static_cast<Eigen::Index>(ad));
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Vec g = q.action_gradient(as_span(s), as_span(a));
    Vec x(static_cast<Eigen::Index>(sd + ad));
    x << s, a;
    const auto fd = oracle::input_gradient_fd(q.net, x, Vec::Ones(1), 1e-6);
    double scale = 0.0;
    for (std::size_t i = sd; i < sd + ad; ++i) scale = std::max(scale, std::abs(fd[i]));
    for (std::size_t i = 0; i < ad; ++i) {
      const double f = fd[sd + i], an = g[static_cast<Eigen::Index>(i)];
      const double rel = std::abs(f - an) / std::max(scale, 1e-12);
      worst = std::max(worst, rel);
      if (rel > 1e-4) ++bad;
    }
  }
  return {bad == 0, fmt("100 draws, worst |analytic - fd| / max|fd| = %.2e, %zu component(s) over 1e-4", worst, bad),
          since(t0)};
}

Outcome selection_oracle() {
  const auto t0 = Clock::now();
  Rng rng(77);
  std::size_t mismatches = 0, largest = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    std::size_t n = static_cast<std::size_t>(std::exp(rng.uniform(0.0, std::log(1e5))));
    if (inst < 5) n = 100000;
    n = std::max<std::size_t>(n, 1);
    largest = std::max(largest, n);
    const std::size_t levels = 1 + rng.below(std::max<std::size_t>(2, n / 2));
    std::vector<float> scores(n);
    for (auto& v : scores) v = static_cast<float>(rng.below(levels)) * 0.01f;
    SelectionSpec spec;
    const std::size_t k = 1 + rng.below(n);
    spec.budget = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
    if (spec.budget > 1.0) spec.budget = 1.0;
    const std::size_t want_k = budget_rows(spec.budget, n);
    if (select_critical(scores, spec) != oracle::top_k(scores, want_k)) ++mismatches;
  }
  const double secs = since(t0);
  return {mismatches == 0 && secs < 30.0,
          fmt("1000 instances (largest N = %zu), %zu mismatch(es), %.1fs (limit 30s)", largest, mismatches, secs), secs};
}

Outcome statistics_oracles() {
  const auto t0 = Clock::now();
  Rng rng(3);
  std::size_t pct_bad = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = 1 + rng.below(2000);
    const std::size_t levels = 1 + rng.below(n + 5);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.below(levels)) - static_cast<float>(levels) / 3.0f;
    const double p = inst % 10 == 0 ? 100.0 : rng.uniform(0.001, 100.0);
    if (percentile_nearest_rank(v, p) != oracle::percentile(v, p)) ++pct_bad;
  }
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(500));
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(7));
    Mat x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) x(i, j) = static_cast<float>(rng.normal() * (1 + j));
      x(i, d - 1) = 0.7f * x(i, 0) + 0.3f * x(i, d - 1);  // some genuine correlation
    }
    const Mat r = pearson_matrix(x);
    const MatD o = oracle::pearson_ld(x);
    worst = std::max(worst, (r.cast<double>() - o).cwiseAbs().maxCoeff());
  }
  return {pct_bad == 0 && worst <= 1e-6,
          fmt("percentile: %zu/1000 mismatches; Pearson: max |diff| = %.2e over 100 matrices (limit 1e-6)", pct_bad,
              worst),
          since(t0)};
}

// ---------------------------------------------------------------------------
// 4-5: library-level experiments

Outcome algorithm_contract() {
  const auto t0 = Clock::now();
  const auto env = make_env("point-reach");
  BehaviorConfig bc;
  const fs::path dir = kWork / "contract";
  fs::create_directories(dir);
  std::string files[2];
  bool ok = true;
  std::size_t differing = 0, violations = 0;
  for (int rerun = 0; rerun < 2; ++rerun) {
    const Dataset clean = generate_dataset(*env, bc, 10000, 11).dataset;
    ProxyConfig pc;
    pc.seed = 11;
    const QNetwork q = train_proxy(clean, pc);
    PoisonConfig cfg = PoisonConfig::cs_gba(0.05);
    cfg.seed = 11;
    const PoisonResult r = poison(clean, q, cfg);
    differing = count_differing_rows(clean, r.dataset);
    const DatasetStats st = compute_stats(clean);
    const float r_target = oracle::percentile(clean.rewards(), 75);
    const float v = st.state_percentile(r.report.trigger.dim, 95);
    const auto kdim = static_cast<Eigen::Index>(r.report.trigger.dim);
    for (std::size_t n = 0; n < r.report.indices.size(); ++n) {
      const std::size_t i = r.report.indices[n];
      const Transition a = clean.row(i), b = r.dataset.row(i);
      const bool row_ok = b.s[kdim] == v && b.r == r_target && a.s_next == b.s_next && a.done == b.done &&
                          r.report.rows[n].delta_q <= 0.0f;
      violations += row_ok ? 0 : 1;
    }
    const std::string tag = std::to_string(rerun);
    save_dataset(r.dataset, (dir / ("poisoned-" + tag + ".bin")).string());
    save_report(r.report, (dir / ("report-" + tag + ".json")).string());
    save_qnetwork(q, (dir / ("proxy-" + tag + ".bin")).string());
    files[rerun] = read_text((dir / ("poisoned-" + tag + ".bin")).string()) +
                   read_text((dir / ("report-" + tag + ".json")).string()) +
                   read_text((dir / ("proxy-" + tag + ".bin")).string());
  }
  const bool identical = files[0] == files[1];
  ok = differing == 500 && violations == 0 && identical;
  return {ok,
          fmt("%zu rows differ (want 500), %zu row violation(s), reruns %s", differing, violations,
              identical ? "bit-identical" : "DIFFER"),
          since(t0)};
}

Outcome benign_sanity() {
  const auto t0 = Clock::now();
  const auto env = make_env("point-reach");
  ExpertPolicy expert(*env);
  BehaviorConfig bc;
  double expert_sum = 0.0;
  std::map<VictimKind, double> sums;
  for (std::size_t k = 0; k < 5; ++k) {
    const SeedPlan sp = SeedPlan::make(0, k);
    const Dataset d = generate_dataset(*env, bc, 10000, sp.data).dataset;
    expert_sum += clean_mean_return(*env, expert, 10, sp.eval);
    for (VictimKind kind : {VictimKind::kCql, VictimKind::kIql, VictimKind::kBcq}) {
      VictimConfig vc;
      vc.kind = kind;
      vc.seed = sp.victim;
      sums[kind] += clean_mean_return(*env, train_victim(d, vc), 10, sp.eval);
    }
  }
  const double expert_mean = expert_sum / 5.0;
  bool ok = true;
  std::string detail = fmt("expert %.2f;", expert_mean);
  for (const auto& [kind, s] : sums) {
    const double m = s / 5.0;
    ok = ok && m >= 0.8 * expert_mean;
    detail += fmt(" %s %.2f (%.0f%%)", victim_name(kind), m, 100.0 * m / expert_mean);
  }
  const double secs = since(t0);
  ok = ok && secs < 300.0;
  return {ok, detail + fmt("; %.0fs (limit 300s)", secs), secs};
}

// ---------------------------------------------------------------------------
// 6-10: pipeline runs through the CLI

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CSGBA_CLI + "\" " + args;
  std::fprintf(stderr, "  $ %s\n", cmd.c_str());
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string config_path(const char* name) { return (fs::path(CSGBA_SOURCE_DIR) / "configs" / name).string(); }

EvalReport eval_of(const fs::path& out, const std::string& variant, std::size_t k) {
  const fs::path p = out / "eval" / "cql" / variant / ("seed-" + std::to_string(k)) / "eval.json";
  return EvalReport::from_json(json::parse(read_text(p.string())));
}

/// Every artifact hash in a manifest, keyed by path relative to the run root.
std::map<std::string, std::string> artifact_hashes(const fs::path& out) {
  const json m = json::parse(read_text((out / "manifest.json").string()));
  std::map<std::string, std::string> h;
  for (const auto& s : m.at("stages")) {
    const auto a = s.at("artifacts").get<std::vector<std::string>>();
    const auto x = s.at("hashes").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < a.size(); ++i) h[fs::relative(a[i], out).string()] = x[i];
  }
  return h;
}

struct HeadlineRun {
  fs::path out = kRuns / "headline";
  int rc_first = -1, rc_force = -1;
  double seconds_first = 0.0, seconds_force = 0.0;
  bool reproducible = false;
  std::size_t artifacts = 0;
  double cs_gba_seconds = 0.0;  // stages feeding criterion 6
};

HeadlineRun run_headline() {
  HeadlineRun h;
  fs::remove_all(h.out);
  const std::string base = "run-all --config \"" + config_path("headline.json") + "\" --out \"" + h.out.string() + "\" -q";
  auto t0 = Clock::now();
  h.rc_first = run_cli(base);
  h.seconds_first = since(t0);
  if (h.rc_first != 0) return h;
  const auto first = artifact_hashes(h.out);
  const std::string md = read_text((h.out / "report" / "summary.md").string());
  const json m = json::parse(read_text((h.out / "manifest.json").string()));
  for (const auto& s : m.at("stages")) {
    const std::string cell = s.at("cell").get<std::string>();
    const bool feeds = cell.rfind("data/", 0) == 0 || cell.rfind("proxy/", 0) == 0 ||
                       cell.find("cs-gba") != std::string::npos || cell.find("benign") != std::string::npos;
    if (feeds) h.cs_gba_seconds += s.at("seconds").get<double>();
  }
  t0 = Clock::now();
  h.rc_force = run_cli(base + " --force");
  h.seconds_force = since(t0);
  if (h.rc_force != 0) return h;
  const auto second = artifact_hashes(h.out);
  h.artifacts = first.size();
  h.reproducible = first == second && md == read_text((h.out / "report" / "summary.md").string());
  return h;
}

Outcome backdoor_efficacy(const HeadlineRun& h) {
  if (h.rc_first != 0) return {false, "headline run failed", 0.0};
  std::size_t passing = 0;
  std::string detail;
  for (std::size_t k = 0; k < 5; ++k) {
    const double benign = eval_of(h.out, kBenign, k).clean().mean;
    const EvalReport cs = eval_of(h.out, "cs-gba", k);
    const double clean = cs.clean().mean, attack = cs.setting("distributed-N10").mean;
    const bool ok = clean >= 0.85 * benign && attack <= 0.5 * benign;
    passing += ok ? 1 : 0;
    detail += fmt("%s seed %zu: benign %.1f clean %.1f attack %.1f", k ? ";" : "", k, benign, clean, attack);
  }
  const bool ok = passing >= 4 && h.cs_gba_seconds < 600.0;
  return {ok, fmt("%zu/5 seeds pass (need 4), %.0fs of stage time (limit 600s) [", passing, h.cs_gba_seconds) +
                  detail + "]",
          h.cs_gba_seconds};
}

double mean_over_seeds(const fs::path& out, const std::string& variant, const std::string& setting) {
  double s = 0.0;
  for (std::size_t k = 0; k < 5; ++k) s += eval_of(out, variant, k).setting(setting).mean;
  return s / 5.0;
}

Outcome ablation_direction(const HeadlineRun& h) {
  if (h.rc_first != 0) return {false, "headline run failed", 0.0};
  const double td = mean_over_seeds(h.out, "cs-gba", "distributed-N10");
  const double rnd = mean_over_seeds(h.out, "random-select-ablation", "distributed-N10");
  return {td < rnd, fmt("attack reward (N=10), 5-seed mean: td-top %.2f vs random %.2f", td, rnd), 0.0};
}

Outcome stealth_direction() {
  const auto t0 = Clock::now();
  const fs::path out = kRuns / "stealth-balance";
  fs::remove_all(out);
  const int rc =
      run_cli("run-all --config \"" + config_path("stealth-balance.json") + "\" --out \"" + out.string() + "\" -q");
  if (rc != 0) return {false, fmt("run-all exited %d", rc), since(t0)};
  const double cs = mean_over_seeds(out, "cs-gba", "clean");
  const double med = mean_over_seeds(out, "median-trigger-ablation", "clean");
  const double benign = mean_over_seeds(out, kBenign, "clean");
  return {cs > med,
          fmt("balance-1d clean reward, 5-seed mean: correlation-breaking %.2f vs median %.2f (benign %.2f)", cs, med,
              benign),
          since(t0)};
}

Outcome sensitivity_direction(const HeadlineRun& h) {
  const auto t0 = Clock::now();
  const int rc =
      run_cli("run-all --config \"" + config_path("sensitivity.json") + "\" --out \"" + h.out.string() + "\" -q");
  if (rc != 0) return {false, fmt("run-all exited %d", rc), since(t0)};
  const double top = mean_over_seeds(h.out, "top-0-5", "distributed-N10");
  const double next = mean_over_seeds(h.out, "top-5-10", "distributed-N10");
  const double wide = mean_over_seeds(h.out, "top-0-10", "distributed-N10");
  return {next >= top,
          fmt("attack reward (N=10), 5-seed mean: top 5-10%% %.2f vs top 0-5%% %.2f (top 0-10%% %.2f)", next, top,
              wide),
          since(t0)};
}

Outcome pipeline_budget(const HeadlineRun& h) {
  if (h.rc_first != 0 || h.rc_force != 0) {
    return {false, fmt("run-all exit codes %d / %d", h.rc_first, h.rc_force), h.seconds_first};
  }
  const bool ok = h.seconds_first < 1800.0 && h.reproducible;
  return {ok,
          fmt("run-all %.0fs (limit 1800s); --force rerun %.0fs, %zu artifact hashes and summary.md %s",
              h.seconds_first, h.seconds_force, h.artifacts, h.reproducible ? "byte-identical" : "DIFFER"),
          h.seconds_first + h.seconds_force};
}

}  // namespace

int main() {
  fs::create_directories(kRuns);
  std::map<int, std::pair<std::string, Outcome>> results;
  auto run = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    std::fprintf(stderr, "[%d] %s ...\n", id, name.c_str());
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what(), 0.0};
    }
    std::fprintf(stderr, "[%d] %s (%.1fs)\n", id, o.pass ? "pass" : "FAIL", o.seconds);
    results[id] = {name, o};
  };

  run(1, "gradient oracle", gradient_oracle);
  run(2, "selection oracle", selection_oracle);
  run(3, "percentile and correlation oracles", statistics_oracles);
  run(4, "poisoning contract", algorithm_contract);
  run(5, "benign sanity", benign_sanity);
  HeadlineRun headline;
  run(10, "full pipeline budget", [&] {
    headline = run_headline();
    return pipeline_budget(headline);
  });
  run(6, "backdoor efficacy", [&] { return backdoor_efficacy(headline); });
  run(7, "ablation direction", [&] { return ablation_direction(headline); });
  run(9, "sensitivity direction", [&] { return sensitivity_direction(headline); });
  run(8, "stealth direction", stealth_direction);

  int failures = 0;
  for (const auto& [id, r] : results) {
    const auto& [name, o] = r;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    failures += o.pass ? 0 : 1;
  }
  std::fflush(stdout);
  return failures;
}
