#include "test_support.hpp"

#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <unistd.h>

namespace cellguard::testing {

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          fmt::format("cellguard-test-{}-{}", static_cast<long>(::getpid()), counter++);
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::filesystem::path fixture_root() { return CELLGUARD_FIXTURE_DIR; }

std::filesystem::path cli_binary() { return CELLGUARD_CLI_PATH; }

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::unique_ptr<Gateway> callback_gateway(CallbackProvider::Fn fn, std::ptrdiff_t in_flight, ModelConfig models) {
  return std::make_unique<Gateway>(std::make_unique<CallbackProvider>(std::move(fn)), in_flight, std::move(models));
}

std::string json_reply(const nlohmann::json& fields) { return fields.dump(); }

int run_cli(const std::vector<std::string>& args, const std::filesystem::path& log) {
  std::string cmd = cli_binary().string();
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += log.empty() ? " >/dev/null 2>&1" : " >'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<double> random_profile(std::mt19937_64& rng, std::size_t layers) {
  std::uniform_real_distribution<double> u(0.001, 0.999);
  std::vector<double> pi(layers);
  for (auto& p : pi) p = u(rng);
  return pi;
}

}  // namespace cellguard::testing
