// cellguard: text-to-table population with calibrated per-cell error flags.
//
// Exit codes: 0 ok, 2 usage, 3 input validation, 4 gateway, 5 under-coverage
// with --strict, 6 file format/version mismatch.

#include <exception>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cellguard/error.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace cellguard;
  spdlog::set_default_logger(spdlog::stderr_color_mt("cellguard"));
  spdlog::set_pattern("%^%l%$: %v");

  CLI::App app{"cellguard: query-driven table population with calibrated error detection"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  std::vector<cli::Command> commands;
  cli::register_pipeline_commands(app, commands);
  cli::register_model_commands(app, commands);
  cli::register_review_commands(app, commands);
  cli::register_simulate_commands(app, commands);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  for (const auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      return cmd.run();
    } catch (const Error& e) {
      spdlog::error("{}", e.what());
      return static_cast<int>(e.code());
    } catch (const std::exception& e) {
      spdlog::error("internal error: {}", e.what());
      return 1;
    }
  }
  return static_cast<int>(ExitCode::kUsage);
}
