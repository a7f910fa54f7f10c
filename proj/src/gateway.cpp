#include "cellguard/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "cellguard/error.hpp"
#include "cellguard/io.hpp"

namespace cellguard {

namespace {

nlohmann::json fingerprint_payload(const PromptRequest& req) {
  nlohmann::json vars = nlohmann::json::object();
  for (const auto& [k, v] : req.variables) vars[k] = v;
  return {{"model_id", req.model_id}, {"template_id", to_string(req.template_id)}, {"variables", vars}};
}

}  // namespace

std::string fingerprint(const PromptRequest& req) { return io::sha256_hex(fingerprint_payload(req).dump()); }

// --- HttpProvider ---------------------------------------------------------

HttpProvider::HttpProvider(HttpConfig config) : config_(std::move(config)) {
  if (config_.api_key.empty()) {
    if (const char* key = std::getenv("CELLGUARD_API_KEY")) config_.api_key = key;
  }
  const auto& url = config_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError(fmt::format("base URL '{}' has no scheme", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (config_.max_attempts < 1) config_.max_attempts = 1;
}

nlohmann::json HttpProvider::request_body(const PromptRequest& req) {
  auto messages = nlohmann::json::array();
  for (const auto& m : render_prompt(req.template_id, req.variables)) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  return {{"model", req.model_id}, {"messages", std::move(messages)}, {"temperature", req.temperature}};
}

std::string HttpProvider::parse_response_body(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError("response body is not JSON");
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw ProtocolError("response has no choices");
  }
  const auto& choice = j["choices"][0];
  if (!choice.contains("message") || !choice["message"].contains("content") ||
      !choice["message"]["content"].is_string()) {
    throw ProtocolError("choice has no message content");
  }
  return choice["message"]["content"].get<std::string>();
}

std::string HttpProvider::complete(const PromptRequest& req) {
  const auto body = request_body(req).dump();
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  std::string last_error;
  auto backoff = config_.initial_backoff;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
    if (res && res->status == 200) {
      return parse_response_body(res->body);
    }
    last_error = res ? fmt::format("HTTP status {}", res->status)
                     : fmt::format("transport error: {}", httplib::to_string(res.error()));
    spdlog::warn("chat completion attempt {}/{} failed: {}", attempt, config_.max_attempts, last_error);
    if (attempt < config_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw RetriableHttpError(fmt::format("chat completion failed: {}", last_error), config_.max_attempts);
}

// --- transcripts ----------------------------------------------------------

TranscriptStore::TranscriptStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::optional<std::string> TranscriptStore::load(const std::string& fp) const {
  const auto path = dir_ / (fp + ".json");
  std::lock_guard lock(mutex_);
  if (!std::filesystem::exists(path)) return std::nullopt;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("transcript {}: {}", path.string(), e.what()));
  }
  if (j.value("fingerprint", "") != fp || !j.contains("response_text") || !j["response_text"].is_string()) {
    throw ValidationError(fmt::format("transcript {} is inconsistent with its file name", path.string()));
  }
  return j["response_text"].get<std::string>();
}

void TranscriptStore::save(const PromptRequest& req, const std::string& response_text) {
  auto record = fingerprint_payload(req);
  const auto fp = fingerprint(req);
  record["fingerprint"] = fp;
  record["response_text"] = response_text;
  std::lock_guard lock(mutex_);
  io::write_file(dir_ / (fp + ".json"), io::to_document(record));
}

ReplayProvider::ReplayProvider(std::filesystem::path dir) : store_(std::move(dir)) {
  if (!std::filesystem::is_directory(store_.dir())) {
    throw ValidationError(fmt::format("transcript directory {} does not exist", store_.dir().string()));
  }
}

std::string ReplayProvider::complete(const PromptRequest& req) {
  const auto fp = fingerprint(req);
  if (auto hit = store_.load(fp)) return *hit;
  throw ReplayMissError(fp);
}

RecordingProvider::RecordingProvider(std::unique_ptr<Provider> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), store_(std::move(dir)) {}

std::string RecordingProvider::complete(const PromptRequest& req) {
  auto text = inner_->complete(req);
  store_.save(req, text);
  return text;
}

// --- Gateway --------------------------------------------------------------

Gateway::Gateway(std::unique_ptr<Provider> provider, std::ptrdiff_t max_in_flight, ModelConfig models)
    : provider_(std::move(provider)),
      max_in_flight_(std::clamp<std::ptrdiff_t>(max_in_flight, 1, kMaxInFlight)),
      slots_(max_in_flight_),
      models_(std::move(models)) {}

std::string Gateway::complete(const PromptRequest& req) {
  // Fail fast on unbound placeholders regardless of provider.
  (void)render_prompt(req.template_id, req.variables);
  slots_.acquire();
  struct Release {
    std::counting_semaphore<kMaxInFlight>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return provider_->complete(req);
}

// --- structured replies ---------------------------------------------------

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Rewrites bare None/True/False (outside string literals) to JSON literals.
std::string pythonic_to_json(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      out += c;
      if (c == '\\' && i + 1 < s.size()) {
        out += s[++i];
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
      out += c;
      continue;
    }
    auto word_at = [&](std::string_view w) {
      if (s.substr(i, w.size()) != w) return false;
      const bool left_ok = i == 0 || !std::isalnum(static_cast<unsigned char>(s[i - 1]));
      const auto r = i + w.size();
      const bool right_ok = r >= s.size() || !std::isalnum(static_cast<unsigned char>(s[r]));
      return left_ok && right_ok;
    };
    if (word_at("None")) {
      out += "null";
      i += 3;
    } else if (word_at("True")) {
      out += "true";
      i += 3;
    } else if (word_at("False")) {
      out += "false";
      i += 4;
    } else {
      out += c;
    }
  }
  return out;
}

// Balanced {...} spans at any nesting start, string-aware.
std::vector<std::string_view> object_candidates(std::string_view text) {
  std::vector<std::string_view> out;
  for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (c == '\\') {
          ++i;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          out.push_back(text.substr(start, i - start + 1));
          break;
        }
      }
    }
  }
  return out;
}

const nlohmann::json* find_matching_key(const nlohmann::json& obj, const std::string& key) {
  if (auto it = obj.find(key); it != obj.end()) return &*it;
  const auto want = lower(key);
  for (const auto& [k, v] : obj.items()) {
    if (lower(trim(k)) == want) return &v;
  }
  return nullptr;
}

nlohmann::json section_value(std::string raw) {
  raw = trim(raw);
  while (!raw.empty() && raw.back() == ',') raw = trim(raw.substr(0, raw.size() - 1));
  if (raw.empty()) return "";
  const auto low = lower(raw);
  if (low == "none" || low == "null" || low == "\"none\"") return nullptr;
  auto parsed = nlohmann::json::parse(pythonic_to_json(raw), nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  if (raw.size() >= 2 && (raw.front() == '\'' && raw.back() == '\'')) return raw.substr(1, raw.size() - 2);
  return raw;
}

// "Label: value" sections; a value runs until the next expected label.
FieldMap parse_sections(const std::string& text, const std::vector<std::string>& expected) {
  struct Hit {
    std::size_t label_begin;
    std::size_t value_begin;
    std::string field;
  };
  std::vector<Hit> hits;
  std::size_t line_begin = 0;
  while (line_begin <= text.size()) {
    auto line_end = text.find('\n', line_begin);
    if (line_end == std::string::npos) line_end = text.size();
    const std::string_view line(text.data() + line_begin, line_end - line_begin);
    std::size_t p = 0;
    while (p < line.size() && (std::isspace(static_cast<unsigned char>(line[p])) || line[p] == '*' ||
                               line[p] == '"' || line[p] == '\'' || line[p] == '-' || line[p] == '#')) {
      ++p;
    }
    for (const auto& field : expected) {
      if (line.size() < p + field.size()) continue;
      if (lower(line.substr(p, field.size())) != lower(field)) continue;
      auto q = p + field.size();
      while (q < line.size() && (line[q] == '*' || line[q] == '"' || line[q] == '\'' || line[q] == ' ')) ++q;
      if (q < line.size() && line[q] == ':') {
        ++q;
        while (q < line.size() && line[q] == '*') ++q;
        hits.push_back({line_begin + p, line_begin + q, field});
        break;
      }
    }
    if (line_end == text.size()) break;
    line_begin = line_end + 1;
  }
  FieldMap out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto end = i + 1 < hits.size() ? hits[i + 1].label_begin : text.size();
    if (out.contains(hits[i].field)) continue;
    out[hits[i].field] = section_value(text.substr(hits[i].value_begin, end - hits[i].value_begin));
  }
  return out;
}

}  // namespace

FieldMap parse_structured_reply(const std::string& text, const std::vector<std::string>& expected) {
  FieldMap best;
  bool found_object = false;
  for (auto candidate : object_candidates(text)) {
    auto parsed = nlohmann::json::parse(pythonic_to_json(candidate), nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) continue;
    FieldMap fields;
    for (const auto& key : expected) {
      if (const auto* v = find_matching_key(parsed, key)) fields[key] = *v;
    }
    if (fields.size() > best.size()) {
      best = std::move(fields);
      found_object = true;
    }
    if (best.size() == expected.size()) break;
  }
  if (best.size() < expected.size()) {
    auto sections = parse_sections(text, expected);
    if (sections.size() > best.size()) {
      best = std::move(sections);
      found_object = true;
    }
  }

  std::vector<std::string> missing;
  for (const auto& key : expected) {
    if (!best.contains(key)) missing.push_back(key);
  }
  if (!missing.empty()) {
    const auto list = fmt::format("{}", fmt::join(missing, ", "));
    throw StructuredParseError(found_object ? fmt::format("reply is missing field(s): {}", list)
                                            : fmt::format("malformed reply; missing field(s): {}", list),
                               std::move(missing));
  }
  return best;
}

std::optional<std::string> field_as_optional_string(const nlohmann::json& v) {
  if (v.is_null()) return std::nullopt;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "None") return std::nullopt;
    return s;
  }
  return v.dump();
}

}  // namespace cellguard
