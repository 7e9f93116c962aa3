#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "lbmpc/error.hpp"
#include "lbmpc/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Learning-based multi-step identification and robust tracking MPC"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  app.add_option("--config", config_path, "JSON configuration (defaults reproduce the reference example)")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory, overrides output_dir");
  app.add_option("--seed", seed, "overrides plant.seed and closedloop.seed");
  app.add_option("--jobs", jobs, "worker threads for identification")->check(CLI::PositiveNumber);

  std::string trajectory, models, controller;
  auto* sim = app.add_subcommand("simulate-data", "collect open-loop data from the true plant");
  auto* ident = app.add_subcommand("identify", "learn the multi-step models and error bounds");
  ident->add_option("--trajectory", trajectory, "trajectory CSV (default <out>/trajectory.csv)");
  auto* synth = app.add_subcommand("synthesize", "build the robust controller from learned models");
  synth->add_option("--models", models, "models JSON (default <out>/models.json)");
  auto* closed = app.add_subcommand("closedloop", "run the controller against the true plant");
  closed->add_option("--controller", controller, "controller JSON (default <out>/controller.json)");
  auto* pipe = app.add_subcommand("pipeline", "all stages in sequence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lbmpc::exit_code_for(lbmpc::ErrorKind::Config);
  }

  try {
    lbmpc::PipelineConfig cfg = config_path.empty() ? lbmpc::config_from_json(lbmpc::Json::object())
                                                    : lbmpc::load_config(config_path);
    if (seed) {
      cfg.plant.seed = *seed;
      cfg.closedloop.seed = *seed;
    }
    const fs::path out = out_dir.empty() ? cfg.output_dir : fs::path(out_dir);
    const auto or_default = [&](const std::string& given, const char* name) {
      return given.empty() ? out / name : fs::path(given);
    };

    if (*sim) lbmpc::cmd_simulate_data(cfg, out);
    if (*ident) lbmpc::cmd_identify(cfg, or_default(trajectory, "trajectory.csv"), out, jobs);
    if (*synth) lbmpc::cmd_synthesize(cfg, or_default(models, "models.json"), out);
    if (*closed) lbmpc::cmd_closedloop(cfg, or_default(controller, "controller.json"), out);
    if (*pipe) lbmpc::cmd_pipeline(cfg, out, jobs);
  } catch (const lbmpc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return lbmpc::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
