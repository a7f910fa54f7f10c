#pragma once

// Chat-completion access behind one interface, with three providers:
//   HttpProvider       live OpenAI-compatible /chat/completions endpoint
//   RecordingProvider  wraps another provider and persists every transcript
//   ReplayProvider     answers only from a transcript store (fully offline)
// Transcripts are keyed by a fingerprint of (template_id, variables, model_id).

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellguard/prompts.hpp"

namespace cellguard {

struct PromptRequest {
  TemplateId template_id = TemplateId::kPhase1;
  std::map<std::string, std::string> variables;
  std::string model_id;
  double temperature = 0.0;
};

// SHA-256 over the canonical JSON of {model_id, template_id, variables}.
// Temperature is deliberately not part of the key.
std::string fingerprint(const PromptRequest& req);

class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string complete(const PromptRequest& req) = 0;
};

struct HttpConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string api_key;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::seconds timeout{120};
};

// Reads CELLGUARD_API_KEY when `api_key` is empty.
class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(HttpConfig config);
  std::string complete(const PromptRequest& req) override;

  // Builds the chat-completions body sent for `req`.
  static nlohmann::json request_body(const PromptRequest& req);
  // Extracts choices[0].message.content; throws ProtocolError otherwise.
  static std::string parse_response_body(const std::string& body);

 private:
  HttpConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

class TranscriptStore {
 public:
  explicit TranscriptStore(std::filesystem::path dir);

  std::optional<std::string> load(const std::string& fingerprint) const;
  void save(const PromptRequest& req, const std::string& response_text);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

class ReplayProvider final : public Provider {
 public:
  explicit ReplayProvider(std::filesystem::path dir);
  std::string complete(const PromptRequest& req) override;

 private:
  TranscriptStore store_;
};

class RecordingProvider final : public Provider {
 public:
  RecordingProvider(std::unique_ptr<Provider> inner, std::filesystem::path dir);
  std::string complete(const PromptRequest& req) override;

 private:
  std::unique_ptr<Provider> inner_;
  TranscriptStore store_;
};

// In-process provider driven by a callback; used for scripted sessions.
class CallbackProvider final : public Provider {
 public:
  using Fn = std::function<std::string(const PromptRequest&)>;
  explicit CallbackProvider(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const PromptRequest& req) override { return fn_(req); }

 private:
  Fn fn_;
};

struct ModelConfig {
  std::string discovery_model = "schema-model";
  std::string population_model = "population-model";
  std::string verifier_model = "schema-model";
  std::vector<std::string> committee = {"committee-a", "committee-b", "committee-c"};
};

// Thread-safe facade: bounds concurrent in-flight requests.
class Gateway {
 public:
  static constexpr std::ptrdiff_t kMaxInFlight = 64;

  explicit Gateway(std::unique_ptr<Provider> provider, std::ptrdiff_t max_in_flight = 4,
                   ModelConfig models = {});

  std::string complete(const PromptRequest& req);
  const ModelConfig& models() const { return models_; }
  std::ptrdiff_t max_in_flight() const { return max_in_flight_; }

 private:
  std::unique_ptr<Provider> provider_;
  std::ptrdiff_t max_in_flight_;
  std::counting_semaphore<kMaxInFlight> slots_;
  ModelConfig models_;
};

// Field name -> value; JSON null where the model answered None.
using FieldMap = std::map<std::string, nlohmann::json>;

// Pulls the labeled Output fields out of a model reply. Accepts a JSON object
// embedded in prose (Python-style None/True/False tolerated) or plain
// "Label: value" sections. Throws StructuredParseError listing every missing
// field.
FieldMap parse_structured_reply(const std::string& text, const std::vector<std::string>& expected);

// Convenience for string-or-null fields. Non-string scalars are stringified.
std::optional<std::string> field_as_optional_string(const nlohmann::json& v);

}  // namespace cellguard
