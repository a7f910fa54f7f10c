#pragma once

// Plumbing shared by the subcommands: gateway construction from flags and the
// run manifest written beside every output.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cellguard/gateway.hpp"

namespace cellguard::cli {

struct GatewayFlags {
  std::string replay_dir;  // answers only from transcripts when set
  std::string record_dir;  // live calls, transcripts persisted here
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::size_t max_in_flight = 4;
  ModelConfig models;
};

void add_gateway_flags(CLI::App& app, GatewayFlags& flags);
std::unique_ptr<Gateway> make_gateway(const GatewayFlags& flags);

// Captures every option of one subcommand (given or defaulted), the hashes
// of the files it read and wrote, and any extra facts the command reports.
// Contains no timestamps or absolute machine state, so reruns compare equal.
class RunManifest {
 public:
  explicit RunManifest(const CLI::App& command);

  void input(const std::filesystem::path& path);
  void output(const std::filesystem::path& path);
  void note(const std::string& key, nlohmann::json value);

  // Writes <output>.manifest.json, or <dir>/manifest.json for a directory.
  void write_beside(const std::filesystem::path& output) const;

 private:
  nlohmann::json doc_;
};

// Writes `content` to `path`, creating parent directories first.
void write_output(const std::filesystem::path& path, std::string_view content);

}  // namespace cellguard::cli
