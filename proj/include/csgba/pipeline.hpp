#pragma once

// Staged experiment runner: gen-data -> train-proxy -> poison -> train-victim
// -> evaluate -> report, with content-addressed stage caching.
//
// Layout under the output directory (k = seed index):
//
//   data/seed-k/clean.bin
//   proxy/seed-k/proxy.bin
//   poison/<variant>/seed-k/{dataset.bin, report.json}
//   victim/<victim>/<variant|benign>/seed-k/{victim.bin, curve.csv}
//   eval/<victim>/<variant|benign>/seed-k/{eval.json, eval.csv}
//   report/{summary.md, summary.csv}
//   manifest.json
//
// Every stage directory holds stamp.json with the cache key and the FNV-1a hash
// of each artifact. A stamp whose key matches but whose artifacts no longer
// hash-verify is a cache inconsistency, not a miss.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "csgba/attack.hpp"
#include "csgba/behavior.hpp"
#include "csgba/dataset.hpp"
#include "csgba/env.hpp"
#include "csgba/error.hpp"
#include "csgba/eval.hpp"
#include "csgba/io.hpp"
#include "csgba/proxy.hpp"
#include "csgba/victims.hpp"

namespace csgba {

namespace fs = std::filesystem;

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage " + stage + " failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

class CacheError : public Error {
 public:
  using Error::Error;
};

inline constexpr const char* kBenign = "benign";

struct NamedPoison {
  std::string name;
  PoisonConfig config;
};

struct NamedVictim {
  std::string name;
  VictimConfig config;
};

struct RunConfig {
  std::string env = "point-reach";
  std::size_t dataset_size = 10000;
  BehaviorConfig behavior;
  ProxyConfig proxy;
  std::vector<NamedPoison> variants;
  std::vector<NamedVictim> victims;
  EvalConfig eval;
  std::size_t seeds = 1;
  bool include_benign = true;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;

  void validate() const {
    const auto names = env_names();
    if (std::find(names.begin(), names.end(), env) == names.end()) throw ConfigError("unknown env '" + env + "'");
    if (dataset_size < 2) throw ConfigError("dataset.size must be >= 2");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (victims.empty()) throw ConfigError("at least one victim is required");
    std::set<std::string> seen;
    for (const auto& v : variants) {
      if (v.name.empty() || v.name == kBenign || !seen.insert(v.name).second) {
        throw ConfigError("variant names must be unique, non-empty and not '" + std::string(kBenign) + "'");
      }
    }
    seen.clear();
    for (const auto& v : victims) {
      if (v.name.empty() || !seen.insert(v.name).second) throw ConfigError("victim names must be unique and non-empty");
    }
    behavior.validate();
    proxy.validate();
    eval.validate();
  }

  json to_json() const {
    json vs = json::array(), ps = json::array();
    for (const auto& v : variants) ps.push_back({{"name", v.name}, {"poison", v.config.to_json()}});
    for (const auto& v : victims) {
      json j = v.config.to_json();
      j["name"] = v.name;
      vs.push_back(j);
    }
    return {{"env", env},
            {"dataset",
             {{"size", dataset_size},
              {"expert_fraction", behavior.expert_fraction},
              {"noise", behavior.noise},
              {"behavior_seed", behavior.seed}}},
            {"proxy", proxy.to_json()},
            {"variants", ps},
            {"victims", vs},
            {"eval", eval.to_json()},
            {"seeds", seeds},
            {"include_benign", include_benign},
            {"output_dir", output_dir},
            {"seed", seed}};
  }

  static RunConfig from_json(const json& j) {
    try {
      RunConfig c;
      c.env = j.value("env", c.env);
      if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        c.dataset_size = d.value("size", c.dataset_size);
        c.behavior.expert_fraction = d.value("expert_fraction", c.behavior.expert_fraction);
        c.behavior.noise = d.value("noise", c.behavior.noise);
        c.behavior.seed = d.value("behavior_seed", c.behavior.seed);
      }
      if (j.contains("proxy")) c.proxy = ProxyConfig::from_json(j.at("proxy"));
      for (const auto& v : j.value("variants", json::array())) {
        c.variants.push_back({v.at("name").get<std::string>(), PoisonConfig::from_json(v.value("poison", json::object()))});
      }
      for (const auto& v : j.value("victims", json::array())) {
        c.victims.push_back({v.value("name", v.value("kind", std::string("cql"))), VictimConfig::from_json(v)});
      }
      if (j.contains("eval")) c.eval = EvalConfig::from_json(j.at("eval"));
      c.seeds = j.value("seeds", c.seeds);
      c.include_benign = j.value("include_benign", c.include_benign);
      c.output_dir = j.value("output_dir", c.output_dir);
      c.seed = j.value("seed", c.seed);
      c.validate();
      return c;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("malformed config: ") + e.what());
    }
  }

  static RunConfig load(const std::string& path) {
    std::string text;
    try {
      text = read_text(path);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    json j = json::parse(text, nullptr, false, true);
    if (j.is_discarded()) throw ConfigError(path + ": not valid JSON");
    return from_json(j);
  }
};

/// Per-seed-index sub-seeds for each stage.
struct SeedPlan {
  std::uint64_t data, proxy, poison, victim, eval;

  static SeedPlan make(std::uint64_t global, std::size_t k) {
    const std::uint64_t base = derive_seed(global, k);
    return {derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3), derive_seed(base, 4),
            derive_seed(base, 5)};
  }
};

struct StageRecord {
  std::string stage;
  std::string cell;
  std::vector<std::string> artifacts;
  std::vector<std::string> hashes;
  double seconds = 0.0;
  bool cache_hit = false;
};

struct RunOptions {
  bool force = false;
  std::size_t jobs = 1;
  std::string variant;  // empty = all
  bool quiet = false;
};

inline std::string file_hash(const std::string& path) { return hex64(fnv1a(read_text(path))); }

class Pipeline {
 public:
  Pipeline(RunConfig cfg, RunOptions opts) : cfg_(std::move(cfg)), opts_(std::move(opts)), root_(cfg_.output_dir) {
    cfg_.validate();
    if (!opts_.variant.empty() && opts_.variant != kBenign) {
      bool found = false;
      for (const auto& v : cfg_.variants) found = found || v.name == opts_.variant;
      if (!found) throw ConfigError("--variant '" + opts_.variant + "' is not defined in the config");
    }
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + root_.string() + "': " + ec.message());
    if (!opts_.jobs) opts_.jobs = 1;
  }

  const RunConfig& config() const { return cfg_; }
  const std::vector<StageRecord>& records() const { return records_; }
  fs::path root() const { return root_; }

  fs::path data_dir(std::size_t k) const { return root_ / "data" / seed_dir(k); }
  fs::path proxy_dir(std::size_t k) const { return root_ / "proxy" / seed_dir(k); }
  fs::path poison_dir(const std::string& v, std::size_t k) const { return root_ / "poison" / v / seed_dir(k); }
  fs::path victim_dir(const std::string& victim, const std::string& v, std::size_t k) const {
    return root_ / "victim" / victim / v / seed_dir(k);
  }
  fs::path eval_dir(const std::string& victim, const std::string& v, std::size_t k) const {
    return root_ / "eval" / victim / v / seed_dir(k);
  }

  // Stages -----------------------------------------------------------------

  void gen_data() {
    for_each_seed("gen-data", [&](std::size_t k) {
      const SeedPlan sp = SeedPlan::make(cfg_.seed, k);
      const json conf = {{"env", cfg_.env},
                         {"size", cfg_.dataset_size},
                         {"expert_fraction", cfg_.behavior.expert_fraction},
                         {"noise", cfg_.behavior.noise},
                         {"behavior_seed", cfg_.behavior.seed}};
      run_stage("gen-data", data_dir(k), {"clean.bin"}, {}, conf, sp.data, [&](const fs::path& dir) {
        const auto env = make_env(cfg_.env);
        const GeneratedDataset g = generate_dataset(*env, cfg_.behavior, cfg_.dataset_size, sp.data);
        save_dataset(g.dataset, (dir / "clean.bin").string());
      });
    });
  }

  void train_proxy_stage() {
    for_each_seed("train-proxy", [&](std::size_t k) {
      const SeedPlan sp = SeedPlan::make(cfg_.seed, k);
      const std::string clean = require("train-proxy", data_dir(k) / "clean.bin");
      ProxyConfig pc = cfg_.proxy;
      pc.seed = sp.proxy;
      run_stage("train-proxy", proxy_dir(k), {"proxy.bin"}, {file_hash(clean)}, pc.to_json(), sp.proxy,
                [&](const fs::path& dir) {
                  const Dataset d = load_dataset(clean);
                  save_qnetwork(csgba::train_proxy(d, pc), (dir / "proxy.bin").string());
                });
    });
  }

  void poison_stage() {
    std::vector<std::pair<const NamedPoison*, std::size_t>> cells;
    for (const auto& v : cfg_.variants) {
      if (!selected(v.name)) continue;
      for (std::size_t k = 0; k < cfg_.seeds; ++k) cells.emplace_back(&v, k);
    }
    parallel("poison", cells.size(), [&](std::size_t c) {
      const auto& [v, k] = cells[c];
      const SeedPlan sp = SeedPlan::make(cfg_.seed, k);
      const std::string clean = require("poison", data_dir(k) / "clean.bin");
      const std::string proxy = require("poison", proxy_dir(k) / "proxy.bin");
      PoisonConfig pc = v->config;
      pc.seed = sp.poison;
      run_stage("poison", poison_dir(v->name, k), {"dataset.bin", "report.json"}, {file_hash(clean), file_hash(proxy)},
                pc.to_json(), sp.poison, [&](const fs::path& dir) {
                  const Dataset d = load_dataset(clean);
                  const QNetwork q = load_qnetwork(proxy);
                  const PoisonResult r = poison(d, q, pc);
                  save_dataset(r.dataset, (dir / "dataset.bin").string());
                  save_report(r.report, (dir / "report.json").string());
                });
    });
  }

  void train_victim_stage() {
    const auto cells = grid();
    parallel("train-victim", cells.size(), [&](std::size_t c) {
      const auto& [victim, variant, k] = cells[c];
      const std::string dataset = dataset_path(variant, k, "train-victim");
      train_one_victim(*victim, variant, k, dataset);
    });
  }

  void evaluate_stage() {
    const auto cells = grid();
    parallel("evaluate", cells.size(), [&](std::size_t c) {
      const auto& [victim, variant, k] = cells[c];
      const SeedPlan sp = SeedPlan::make(cfg_.seed, k);
      const std::string vpath = require("evaluate", victim_dir(victim->name, variant, k) / "victim.bin");
      const TriggerSpec trigger = trigger_for(variant, k);
      EvalConfig ec = cfg_.eval;
      ec.seed = sp.eval;
      const json conf = {{"eval", ec.to_json()}, {"trigger", trigger.to_json()}, {"env", cfg_.env}};
      run_stage("evaluate", eval_dir(victim->name, variant, k), {"eval.json", "eval.csv"}, {file_hash(vpath)}, conf,
                sp.eval, [&](const fs::path& dir) {
                  const TrainedVictim v = load_victim(vpath);
                  const auto env = make_env(cfg_.env);
                  const EvalReport rep = evaluate(v, *env, trigger, ec, v.config_fingerprint, hex64(v.dataset_hash));
                  write_text((dir / "eval.json").string(), rep.to_json().dump(2) + "\n");
                  write_text((dir / "eval.csv").string(), rep.to_csv());
                });
    });
  }

  /// Merges per-seed EvalReports: one table per victim, one column per variant.
  void report() {
    const auto t0 = std::chrono::steady_clock::now();
    std::ostringstream md, csv;
    md << "# Results: " << cfg_.env << "\n\n";
    md << "Config fingerprint `" << fingerprint(cfg_.to_json()) << "`, " << cfg_.seeds << " seed(s), "
       << cfg_.eval.episodes << " episode(s) per setting. Cells are mean ± std across seeds of the per-seed "
       << "mean episode return.\n";
    csv << "victim,variant,setting,seeds,mean,std\n";
    csv.precision(6);
    csv << std::fixed;
    std::vector<std::string> artifacts;
    for (const auto& victim : cfg_.victims) {
      std::vector<std::pair<std::string, EvalReport>> columns;
      for (const auto& variant : column_names()) {
        std::vector<EvalReport> per_seed;
        for (std::size_t k = 0; k < cfg_.seeds; ++k) {
          const fs::path p = eval_dir(victim.name, variant, k) / "eval.json";
          if (!fs::exists(p)) throw StageError("report", "missing evaluation " + p.string());
          per_seed.push_back(EvalReport::from_json(json::parse(read_text(p.string()))));
        }
        EvalReport merged = merge_seeds(per_seed);
        for (const auto& s : merged.settings) {
          csv << victim.name << ',' << variant << ',' << s.name << ',' << s.episodes << ',' << s.mean << ','
              << s.std << '\n';
        }
        columns.emplace_back(variant, std::move(merged));
      }
      md << "\n## Victim: " << victim.name << " (" << victim_name(victim.config.kind) << ")\n\n";
      md << markdown_table(columns);
    }
    const fs::path dir = root_ / "report";
    fs::create_directories(dir);
    write_text((dir / "summary.md").string(), md.str());
    write_text((dir / "summary.csv").string(), csv.str());
    StageRecord rec{"report", "all", {}, {}, seconds_since(t0), false};
    for (const char* f : {"summary.md", "summary.csv"}) {
      rec.artifacts.push_back((dir / f).string());
      rec.hashes.push_back(file_hash((dir / f).string()));
    }
    record(std::move(rec));
  }

  void run_all() {
    gen_data();
    train_proxy_stage();
    poison_stage();
    train_victim_stage();
    evaluate_stage();
    report();
  }

  void write_manifest() const {
    json stages = json::array();
    for (const auto& r : records_) {
      stages.push_back({{"stage", r.stage},
                        {"cell", r.cell},
                        {"artifacts", r.artifacts},
                        {"hashes", r.hashes},
                        {"seconds", r.seconds},
                        {"cache_hit", r.cache_hit}});
    }
    const json m = {{"config_fingerprint", fingerprint(cfg_.to_json())}, {"config", cfg_.to_json()}, {"stages", stages}};
    write_text((root_ / "manifest.json").string(), m.dump(2) + "\n");
  }

  std::size_t cache_hits() const {
    std::size_t n = 0;
    for (const auto& r : records_) n += r.cache_hit ? 1 : 0;
    return n;
  }

 private:
  struct Cell {
    const NamedVictim* victim;
    std::string variant;
    std::size_t k;
  };

  static std::string seed_dir(std::size_t k) { return "seed-" + std::to_string(k); }

  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  bool selected(const std::string& variant) const { return opts_.variant.empty() || opts_.variant == variant; }

  std::vector<std::string> column_names() const {
    std::vector<std::string> out;
    if (cfg_.include_benign) out.push_back(kBenign);
    for (const auto& v : cfg_.variants) out.push_back(v.name);
    return out;
  }

  std::vector<Cell> grid() const {
    std::vector<Cell> cells;
    for (const auto& victim : cfg_.victims) {
      for (const auto& variant : column_names()) {
        if (!selected(variant)) continue;
        for (std::size_t k = 0; k < cfg_.seeds; ++k) cells.push_back({&victim, variant, k});
      }
    }
    return cells;
  }

  static std::string require(const std::string& stage, const fs::path& p) {
    if (!fs::exists(p)) throw StageError(stage, "missing input artifact " + p.string() + " (run the earlier stage)");
    return p.string();
  }

  std::string dataset_path(const std::string& variant, std::size_t k, const std::string& stage) const {
    if (variant == kBenign) return require(stage, data_dir(k) / "clean.bin");
    return require(stage, poison_dir(variant, k) / "dataset.bin");
  }

  // Only the dataset path reaches the trainer; poisoning metadata never does.
  void train_one_victim(const NamedVictim& victim, const std::string& variant, std::size_t k,
                        const std::string& dataset) {
    const SeedPlan sp = SeedPlan::make(cfg_.seed, k);
    VictimConfig vc = victim.config;
    vc.seed = sp.victim;
    run_stage("train-victim", victim_dir(victim.name, variant, k), {"victim.bin", "curve.csv"}, {file_hash(dataset)},
              vc.to_json(), sp.victim, [&](const fs::path& dir) {
                const Dataset d = load_dataset(dataset);
                const TrainedVictim v = train_victim(d, vc);
                save_victim(v, (dir / "victim.bin").string());
                write_text((dir / "curve.csv").string(), v.curve.to_csv());
              });
  }

  /// Benign victims are probed with the default trigger built from clean statistics.
  TriggerSpec trigger_for(const std::string& variant, std::size_t k) const {
    if (variant != kBenign) {
      return load_report(require("evaluate", poison_dir(variant, k) / "report.json")).trigger;
    }
    const Dataset d = load_dataset(require("evaluate", data_dir(k) / "clean.bin"));
    const PoisonConfig def;
    return generate_trigger(compute_stats(d), def.effective_trigger_percentile(), def.score_aggregate);
  }

  static EvalReport merge_seeds(const std::vector<EvalReport>& reps) {
    EvalReport out;
    out.victim_fingerprint = reps.front().victim_fingerprint;
    out.dataset_fingerprint = "merged";
    for (std::size_t i = 0; i < reps.front().settings.size(); ++i) {
      SettingResult s = reps.front().settings[i];
      s.returns.clear();
      for (const auto& r : reps) s.returns.push_back(r.settings.at(i).mean);
      s.episodes = reps.size();
      std::tie(s.mean, s.std) = mean_std(s.returns);
      out.settings.push_back(std::move(s));
    }
    return out;
  }

  void for_each_seed(const std::string& stage, const std::function<void(std::size_t)>& fn) {
    parallel(stage, cfg_.seeds, fn);
  }

  /// Runs fn(0..n-1) on up to opts_.jobs threads; the first failure is rethrown.
  void parallel(const std::string& stage, std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(opts_.jobs, n);
    if (workers <= 1) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= n || failure) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    (void)stage;
  }

  void record(StageRecord r) {
    std::lock_guard lock(records_mu_);
    records_.push_back(std::move(r));
  }

  void run_stage(const std::string& stage, const fs::path& dir, const std::vector<std::string>& outputs,
                 const std::vector<std::string>& input_hashes, const json& conf, std::uint64_t seed,
                 const std::function<void(const fs::path&)>& body) {
    const std::string key =
        fingerprint({{"stage", stage}, {"inputs", input_hashes}, {"config", conf}, {"seed", hex64(seed)}});
    const fs::path stamp = dir / "stamp.json";
    const std::string cell = fs::relative(dir, root_).string();
    const auto t0 = std::chrono::steady_clock::now();
    if (!opts_.force && fs::exists(stamp)) {
      const json s = json::parse(read_text(stamp.string()), nullptr, false);
      if (!s.is_discarded() && s.value("key", std::string()) == key) {
        StageRecord rec{stage, cell, {}, {}, 0.0, true};
        for (const auto& f : outputs) {
          const fs::path p = dir / f;
          const std::string want = s.at("hashes").value(f, std::string());
          if (!fs::exists(p)) throw CacheError(stage + ": cached artifact " + p.string() + " is missing");
          const std::string got = file_hash(p.string());
          if (got != want) {
            throw CacheError(stage + ": cached artifact " + p.string() + " hashes to " + got + ", stamp says " + want +
                             " (rerun with --force)");
          }
          rec.artifacts.push_back(p.string());
          rec.hashes.push_back(got);
        }
        rec.seconds = seconds_since(t0);
        record(std::move(rec));
        if (!opts_.quiet) log("cached  " + stage + "  " + cell);
        return;
      }
    }
    fs::create_directories(dir);
    try {
      body(dir);
    } catch (const ConfigError&) {
      throw;
    } catch (const HashMismatch& e) {
      throw CacheError(stage + ": " + e.what());
    } catch (const Error& e) {
      throw StageError(stage, e.what());
    } catch (const json::exception& e) {
      throw StageError(stage, e.what());
    }
    StageRecord rec{stage, cell, {}, {}, 0.0, false};
    json hashes = json::object();
    for (const auto& f : outputs) {
      const fs::path p = dir / f;
      rec.artifacts.push_back(p.string());
      rec.hashes.push_back(file_hash(p.string()));
      hashes[f] = rec.hashes.back();
    }
    write_text(stamp.string(), json{{"stage", stage}, {"key", key}, {"hashes", hashes}}.dump(2) + "\n");
    rec.seconds = seconds_since(t0);
    if (!opts_.quiet) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1fs", rec.seconds);
      log("ran     " + stage + "  " + cell + "  " + buf);
    }
    record(std::move(rec));
  }

  void log(const std::string& line) const {
    std::lock_guard lock(log_mu_);
    std::fprintf(stderr, "%s\n", line.c_str());
  }

  RunConfig cfg_;
  RunOptions opts_;
  fs::path root_;
  std::vector<StageRecord> records_;
  std::mutex records_mu_;
  mutable std::mutex log_mu_;
};

}  // namespace csgba
