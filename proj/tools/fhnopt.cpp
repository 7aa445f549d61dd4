// Command-line front end: fhnopt <command> --scenario FILE --out DIR [--seed N]

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "fhnopt/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fhnopt: simulate, optimize and verify controlled FHN runs"};
  app.require_subcommand(1);
  std::string scenario_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  for (const auto& name : fhnopt::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--scenario", scenario_path, "scenario file (INI); omitted means all defaults");
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "master seed, overrides the scenario");
  }
  app.footer("Set FHNOPT_MAX_WORKERS to cap worker threads.");
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const fhnopt::Scenario s = scenario_path.empty() ? fhnopt::Scenario{} : fhnopt::load_scenario(scenario_path);
    const fhnopt::RunRecord r = fhnopt::run(s, command, out_dir, seed);
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("%s %s digest=%s time=%.2fs\n", command.c_str(), r.passed ? "PASS" : "FAIL", r.digest.c_str(),
                r.wall_time);
    std::printf("%s\n", r.summary.dump().c_str());
    if (!r.passed) {
      std::fprintf(stderr, "failed: %s\n", r.failure.c_str());
      return 1;
    }
    return 0;
  } catch (const fhnopt::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
