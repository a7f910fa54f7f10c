#pragma once

#include <functional>
#include <vector>

#include <CLI11.hpp>

namespace cellguard::cli {

// A leaf subcommand and the action to run once it has been parsed. The
// action returns the process exit code.
struct Command {
  CLI::App* app = nullptr;
  std::function<int()> run;
};

void register_pipeline_commands(CLI::App& root, std::vector<Command>& out);  // discover populate label
void register_model_commands(CLI::App& root, std::vector<Command>& out);     // train calibrate detect
void register_review_commands(CLI::App& root, std::vector<Command>& out);    // review export|import|replay, evaluate
void register_simulate_commands(CLI::App& root, std::vector<Command>& out);  // simulate coverage|setsize|sweep

}  // namespace cellguard::cli
