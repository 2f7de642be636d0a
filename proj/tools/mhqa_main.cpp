// Command line front end: one verb per pipeline stage plus `pipeline`.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "mhqa/error.hpp"
#include "mhqa/io.hpp"
#include "mhqa/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  bool verbose = false;
};

void add_common(CLI::App& cmd, Options& options) {
  cmd.add_option("--config", options.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd.add_option("--seed", options.seed, "Seed for every stochastic component (default 13)");
  cmd.add_option("--out", options.out, "Output directory");
  cmd.add_option("--mode", options.mode, "with_qd or without_qd")->check(CLI::IsMember({"with_qd", "without_qd"}));
  cmd.add_flag("-v,--verbose", options.verbose, "Debug logging");
}

mhqa::pipeline::RunConfig resolve(const Options& options) {
  auto config = mhqa::pipeline::load_run_config(options.config);
  if (options.out) config.out = *options.out;
  if (options.mode) config.mode = mhqa::llm::parse_prompt_mode(*options.mode);
  if (options.seed) mhqa::pipeline::apply_seed(config, *options.seed);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mhqa: multi-hop question answering with generative question decomposition"};
  app.require_subcommand(1);
  Options options;

  std::optional<mhqa::pipeline::Stage> chosen;
  bool whole_pipeline = false;
  for (auto name : mhqa::pipeline::kStageNames) {
    auto* cmd = app.add_subcommand(std::string(name), "Run the " + std::string(name) + " stage");
    add_common(*cmd, options);
    cmd->callback([&chosen, name] { chosen = mhqa::pipeline::parse_stage(name); });
  }
  auto* all = app.add_subcommand("pipeline", "Run every stage in order and print the report");
  add_common(*all, options);
  all->callback([&whole_pipeline] { whole_pipeline = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  spdlog::set_level(options.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    const auto config = resolve(options);
    if (whole_pipeline) {
      mhqa::pipeline::run_pipeline(config);
      std::cout << mhqa::io::read_file(config.out / mhqa::pipeline::artifacts::kReportText);
      return 0;
    }
    const auto result = mhqa::pipeline::run_stage(config, *chosen);
    if (*chosen == mhqa::pipeline::Stage::kReport) {
      std::cout << mhqa::io::read_file(config.out / mhqa::pipeline::artifacts::kReportText);
    }
    for (const auto& path : result.outputs) spdlog::info("wrote {}", path.string());
    return 0;
  } catch (const mhqa::Error& e) {
    spdlog::error("{} error: {}", mhqa::to_string(e.category()), e.what());
    return mhqa::exit_code(e.category());
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return mhqa::exit_code(mhqa::ErrorCategory::kRuntime);
  }
}
