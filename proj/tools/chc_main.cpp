#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chc/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for null control of a 1D stochastic fourth-order parabolic equation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/last";
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  int threads = 1;

  for (const auto& name : chc::known_subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--set", overrides, "override: key=value (repeatable)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "rng seed");
    sub->add_option("--threads", threads, "worker threads for ensembles");
  }

  CLI11_PARSE(app, argc, argv);
  auto* sub = app.get_subcommands().front();

  try {
    chc::RunConfig cfg =
        config_path.empty() ? chc::RunConfig{} : chc::RunConfig::from_file(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    if (cfg.has("run.seed") && !sub->count("--seed"))
      seed = static_cast<std::uint64_t>(cfg.integer("run.seed", 1));
    if (cfg.has("run.threads") && !sub->count("--threads"))
      threads = static_cast<int>(cfg.integer("run.threads", 1));

    chc::RunOptions opt;
    opt.out_dir = out_dir;
    opt.seed = seed;
    opt.threads = threads;
    return chc::run_subcommand(sub->get_name(), std::move(cfg), opt, std::cerr);
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
