#include "cli_support.hpp"

#include <fmt/format.h>

#include "cellguard/error.hpp"
#include "cellguard/io.hpp"

namespace cellguard::cli {
namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string command_path(const CLI::App& app) {
  std::vector<std::string> parts;
  for (const CLI::App* a = &app; a != nullptr && a->get_parent() != nullptr; a = a->get_parent()) {
    parts.insert(parts.begin(), a->get_name());
  }
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : " ") + p;
  return out;
}

nlohmann::json option_value(const CLI::Option& opt) {
  if (opt.count() == 0) {
    const auto def = opt.get_default_str();
    return def.empty() ? nlohmann::json(nullptr) : nlohmann::json(def);
  }
  const auto& results = opt.results();
  if (opt.get_expected_max() > 1 || results.size() > 1) return results;
  return results.front();
}

}  // namespace

void add_gateway_flags(CLI::App& app, GatewayFlags& flags) {
  auto* replay = app.add_option("--replay", flags.replay_dir, "answer from recorded transcripts in DIR (offline)");
  app.add_option("--record", flags.record_dir, "call the live endpoint and record transcripts into DIR")
      ->excludes(replay);
  app.add_option("--base-url", flags.base_url, "OpenAI-compatible endpoint; key from CELLGUARD_API_KEY");
  app.add_option("--max-in-flight", flags.max_in_flight, "concurrent gateway requests")
      ->check(CLI::Range(std::size_t{1}, static_cast<std::size_t>(Gateway::kMaxInFlight)));
  app.add_option("--discovery-model", flags.models.discovery_model);
  app.add_option("--population-model", flags.models.population_model);
  app.add_option("--verifier-model", flags.models.verifier_model);
  app.add_option("--committee", flags.models.committee, "committee model ids")->delimiter(',');
}

std::unique_ptr<Gateway> make_gateway(const GatewayFlags& flags) {
  std::unique_ptr<Provider> provider;
  if (!flags.replay_dir.empty()) {
    provider = std::make_unique<ReplayProvider>(flags.replay_dir);
  } else {
    HttpConfig cfg;
    cfg.base_url = flags.base_url;
    provider = std::make_unique<HttpProvider>(cfg);
    if (!flags.record_dir.empty()) provider = std::make_unique<RecordingProvider>(std::move(provider), flags.record_dir);
  }
  return std::make_unique<Gateway>(std::move(provider), static_cast<std::ptrdiff_t>(flags.max_in_flight),
                                   flags.models);
}

RunManifest::RunManifest(const CLI::App& command) {
  doc_["tool"] = "cellguard";
  doc_["version"] = kToolVersion;
  doc_["command"] = command_path(command);
  auto options = nlohmann::json::object();
  for (const CLI::Option* opt : command.get_options()) {
    const auto name = opt->get_name();
    if (name == "--help" || name == "-h,--help") continue;
    options[opt->get_single_name()] = option_value(*opt);
  }
  doc_["options"] = std::move(options);
  doc_["inputs"] = nlohmann::json::object();
  doc_["outputs"] = nlohmann::json::object();
}

void RunManifest::input(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) {
    auto files = nlohmann::json::object();
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file()) files[entry.path().filename().string()] = io::sha256_file(entry.path());
    }
    doc_["inputs"][path.string()] = std::move(files);
    return;
  }
  doc_["inputs"][path.string()] = io::sha256_file(path);
}

void RunManifest::output(const std::filesystem::path& path) { doc_["outputs"][path.string()] = io::sha256_file(path); }

void RunManifest::note(const std::string& key, nlohmann::json value) { doc_["notes"][key] = std::move(value); }

void RunManifest::write_beside(const std::filesystem::path& output) const {
  const auto target = std::filesystem::is_directory(output) ? output / "manifest.json"
                                                            : std::filesystem::path(output.string() + ".manifest.json");
  write_output(target, io::to_document(doc_));
}

void write_output(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  io::write_file(path, content);
}

}  // namespace cellguard::cli
