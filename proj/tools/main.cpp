#include <CLI11.hpp>
#include <exception>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "dtoll/experiment.hpp"

namespace ex = dtoll::experiment;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("config", opt.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", opt.out, "output directory (overrides 'out')");
  cmd->add_option("--seed", opt.seed, "simulation seed (overrides 'seed')");
  cmd->add_option("--threads", opt.threads, "worker threads (overrides 'threads')")->check(CLI::Range(1u, 1024u));
}

int run(const std::string& command, const Options& opt, const CLI::App& app) {
  auto cfg = ex::load_config(opt.config);
  if (command == "sweep") {
    if (!ex::is_sweep(cfg.kind)) {
      throw ex::ConfigError(fmt::format("{}: 'sweep' needs kind = sweep-..., config has {}", opt.config, ex::to_string(cfg.kind)));
    }
  } else {
    cfg.kind = *ex::parse_kind(command);
    cfg.grid.clear();
  }
  if (!opt.out.empty()) cfg.output = opt.out;
  if (app.get_subcommand(command)->count("--seed")) cfg.seed = opt.seed;
  if (opt.threads) cfg.threads = opt.threads;

  const auto files = ex::run_experiment(cfg);
  fmt::print("{}: wrote {} files to {}\n", ex::to_string(cfg.kind), files.size(), cfg.output.string());
  for (const auto& f : files) fmt::print("  {}\n", f);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Day-to-day toll pricing experiments"};
  app.require_subcommand(1);
  Options opt;
  const char* commands[][2] = {
      {"solve", "solve the configured instance and write the optimal policy"},
      {"verify", "solve and check the stability and bound conditions"},
      {"simulate", "solve and simulate the optimal policy"},
      {"sweep", "run the sweep named by the config's kind"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), opt);
  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, opt, app);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
}
