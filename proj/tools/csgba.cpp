// csgba: command-line driver for the poisoning lab.
//
//   csgba run-all --config configs/headline.json
//   csgba poison --config configs/headline.json --variant cs-gba --force
//
// Exit codes: 0 success, 1 config error, 2 stage failure, 3 hash/cache inconsistency.

#include <cstdio>
#include <string>

#if __has_include("CLI11.hpp")
#include "CLI11.hpp"
#else
#include <CLI/CLI.hpp>
#endif
#include "csgba/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kStage = 2, kCache = 3 };

struct Flags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string variant;
  std::size_t jobs = 1;
  bool force = false;
  bool quiet = false;
};

int run(const std::string& command, const Flags& f) {
  try {
    csgba::RunConfig cfg = csgba::RunConfig::load(f.config);
    if (!f.out.empty()) cfg.output_dir = f.out;
    if (f.seed_set) cfg.seed = f.seed;
    csgba::RunOptions opts;
    opts.force = f.force;
    opts.jobs = f.jobs;
    opts.variant = f.variant;
    opts.quiet = f.quiet;
    csgba::Pipeline p(cfg, opts);
    if (command == "gen-data") p.gen_data();
    else if (command == "train-proxy") p.train_proxy_stage();
    else if (command == "poison") p.poison_stage();
    else if (command == "train-victim") p.train_victim_stage();
    else if (command == "evaluate") p.evaluate_stage();
    else if (command == "report") p.report();
    else p.run_all();
    p.write_manifest();
    if (!f.quiet) {
      std::fprintf(stderr, "%s: %zu stage cell(s), %zu cache hit(s); outputs in %s\n", command.c_str(),
                   p.records().size(), p.cache_hits(), p.root().string().c_str());
    }
    return kOk;
  } catch (const csgba::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const csgba::CacheError& e) {
    std::fprintf(stderr, "cache inconsistency: %s\n", e.what());
    return kCache;
  } catch (const csgba::HashMismatch& e) {
    std::fprintf(stderr, "cache inconsistency: %s\n", e.what());
    return kCache;
  } catch (const csgba::StageError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return kStage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor-poisoning lab for offline RL: data, proxy critic, poisoning, victims, evaluation"};
  app.require_subcommand(1);
  Flags f;
  std::string command;
  const std::pair<const char*, const char*> commands[] = {
      {"gen-data", "Generate clean behavior datasets"},
      {"train-proxy", "Train the attacker's proxy critic on clean data"},
      {"poison", "Build poisoned datasets for each attack variant"},
      {"train-victim", "Train victims on clean and poisoned datasets"},
      {"evaluate", "Roll out victims under trigger schedules"},
      {"report", "Merge evaluations into comparison tables"},
      {"run-all", "Run every stage in order, reusing cached results"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", f.seed, "Global seed (overrides seed)")->each([&](const std::string&) { f.seed_set = true; });
    sub->add_option("--variant", f.variant, "Restrict to one attack variant (or 'benign')");
    sub->add_option("--jobs", f.jobs, "Worker threads for independent grid cells")->check(CLI::PositiveNumber);
    sub->add_flag("--force", f.force, "Ignore cached stage results");
    sub->add_flag("-q,--quiet", f.quiet, "Suppress progress lines");
    sub->callback([&command, name = std::string(name)] { command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfig;
  }
  return run(command, f);
}
