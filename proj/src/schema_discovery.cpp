#include "cellguard/schema_discovery.hpp"

#include <cctype>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/error.hpp"

namespace cellguard {

namespace {

std::string retry_feedback(const std::string& reason) {
  return fmt::format(
      "Your previous reply was rejected: {}. Reply again and follow the Output format exactly.", reason);
}

std::string join_feedback(const std::string& hint, const std::string& retry) {
  if (hint.empty()) return retry;
  if (retry.empty()) return hint;
  return hint + "\n\n" + retry;
}

std::optional<std::string> assignment_of(const nlohmann::json& v) {
  auto s = field_as_optional_string(v);
  if (!s) return std::nullopt;
  if (s->empty() || *s == "null" || *s == "none") return std::nullopt;
  return s;
}

std::vector<TableDef> reply_tables(const nlohmann::json& v) {
  if (v.is_string()) {
    auto parsed = nlohmann::json::parse(v.get<std::string>(), nullptr, false);
    if (parsed.is_discarded()) throw StructuredParseError("schema field is not a table list", {});
    return tables_from_json(parsed.is_object() && parsed.contains("tables") ? parsed["tables"] : parsed);
  }
  if (v.is_object() && v.contains("tables")) return tables_from_json(v["tables"]);
  if (v.is_null()) return {};
  return tables_from_json(v);
}

// Reply tables parsed into TableDefs; parse failures become StructuredParseError.
std::vector<TableDef> parse_reply_tables(const nlohmann::json& v) {
  try {
    auto tables = reply_tables(v);
    std::set<std::string> names;
    for (const auto& t : tables) {
      if (!names.insert(t.name).second) {
        throw StructuredParseError(fmt::format("reply lists table {} twice", t.name), {});
      }
    }
    return tables;
  } catch (const ParseError& e) {
    throw StructuredParseError(fmt::format("malformed schema in reply: {}", e.what()), {});
  }
}

}  // namespace

SchemaDiscoverer::SchemaDiscoverer(Gateway& gateway, DiscoveryOptions options)
    : gateway_(gateway), options_(options) {}

// --- Phase I ----------------------------------------------------------------

StepOutcome SchemaDiscoverer::phase1_step(const SchemaState& state, const Chunk& chunk) {
  if (state.kind != SchemaKind::kGeneral) {
    throw ValidationError("phase 1 operates on a general schema");
  }
  const auto& tpl = prompt_template(TemplateId::kPhase1);
  std::string feedback;
  std::string last_error;
  for (int attempt = 0; attempt <= options_.parse_retries; ++attempt) {
    PromptRequest req{TemplateId::kPhase1,
                      {{"Document", chunk.text}, {"Record of Schema", tables_to_json(state.tables).dump()}},
                      gateway_.models().discovery_model,
                      0.0};
    if (!feedback.empty()) req.variables[std::string(kFeedbackVar)] = feedback;
    const auto reply = gateway_.complete(req);
    try {
      auto fields = parse_structured_reply(reply, tpl.outputs);
      auto proposed = parse_reply_tables(fields.at("Updated Record of Schema"));

      // Merge: tables and attributes only accumulate; descriptions may be revised.
      StepOutcome out{state, std::nullopt, false, {}};
      for (auto& t : proposed) {
        if (auto* existing = out.state.find_table(t.name)) {
          if (!t.description.empty()) existing->description = t.description;
          for (auto& a : t.attributes) {
            if (auto* attr = existing->find_attribute(a.name)) {
              if (!a.description.empty()) attr->description = a.description;
            } else {
              existing->attributes.push_back(std::move(a));
            }
          }
        } else {
          t.example_chunk_ids.clear();
          out.state.tables.push_back(std::move(t));
        }
      }
      out.assignment = assignment_of(fields.at("Assignment"));
      if (out.assignment) {
        auto* table = out.state.find_table(*out.assignment);
        if (table == nullptr) {
          throw StructuredParseError(
              fmt::format("assignment {} names a table absent from the updated schema", *out.assignment), {});
        }
        table->add_example_chunk(chunk.chunk_id);
      }
      validate_schema(out.state);
      return out;
    } catch (const StructuredParseError& e) {
      last_error = e.what();
    } catch (const ValidationError& e) {
      last_error = e.what();
    }
    spdlog::warn("phase1 chunk {}: attempt {} rejected: {}", chunk.chunk_id, attempt + 1, last_error);
    feedback = retry_feedback(last_error);
  }
  return {state, std::nullopt, true, last_error};
}

PhaseResult SchemaDiscoverer::run_phase1(const ChunkCorpus& corpus) {
  PhaseResult result{{{}, SchemaKind::kGeneral}, {}, {}};
  for (const auto& chunk : corpus) {
    auto step = phase1_step(result.schema, chunk);
    if (step.skipped) {
      spdlog::error("phase1: chunk {} skipped: {}", chunk.chunk_id, step.error);
      result.step_errors.push_back(fmt::format("{}: {}", chunk.chunk_id, step.error));
    }
    result.schema = std::move(step.state);
    result.assignments.push_back(std::move(step.assignment));
  }
  return result;
}

// --- Phase II -------------------------------------------------------------

StepOutcome SchemaDiscoverer::phase2_step(const SchemaState& state, const Chunk& chunk, const QuerySpec& query,
                                          const SchemaState& general, const std::string& hint) {
  if (state.kind != SchemaKind::kQuerySpecific) {
    throw ValidationError("phase 2 operates on a query-specific schema");
  }
  const auto& tpl = prompt_template(TemplateId::kPhase2);
  std::string retry;
  std::string last_error;
  int parse_failures = 0;
  int violations = 0;
  while (true) {
    PromptRequest req{TemplateId::kPhase2,
                      {{"Document", chunk.text},
                       {"Query", query.text},
                       {"Record of Query-specific Schema", tables_to_json(state.tables).dump()},
                       {"General Schema", tables_to_json(general.tables).dump()}},
                      gateway_.models().discovery_model,
                      0.0};
    if (auto fb = join_feedback(hint, retry); !fb.empty()) req.variables[std::string(kFeedbackVar)] = fb;
    const auto reply = gateway_.complete(req);
    try {
      auto fields = parse_structured_reply(reply, tpl.outputs);
      auto proposed = parse_reply_tables(fields.at("Updated Record of Query-specific Schema"));

      // Reduce the proposal to add-only actions against the current state.
      std::vector<TableDef> new_tables;
      std::vector<std::pair<std::string, std::vector<AttributeDef>>> extensions;
      for (auto& t : proposed) {
        if (const auto* existing = state.find_table(t.name)) {
          std::vector<AttributeDef> added;
          for (auto& a : t.attributes) {
            if (!existing->has_attribute(a.name)) added.push_back(std::move(a));
          }
          if (!added.empty()) extensions.emplace_back(t.name, std::move(added));
        } else {
          new_tables.push_back(std::move(t));
        }
      }
      if (new_tables.size() + extensions.size() > 1) {
        throw ContractViolation(fmt::format("reply applies {} structural actions; at most one is allowed",
                                            new_tables.size() + extensions.size()));
      }
      StepOutcome out{state, std::nullopt, false, {}};
      if (!new_tables.empty()) {
        auto& t = new_tables.front();
        const auto* general_def = general.find_table(t.name);
        if (!general.tables.empty() && general_def == nullptr) {
          throw ContractViolation(fmt::format("table {} is not in the general schema", t.name));
        }
        if (t.description.empty() && general_def != nullptr) t.description = general_def->description;
        t.example_chunk_ids.clear();
        out.state.tables.push_back(std::move(t));
      } else if (!extensions.empty()) {
        auto* table = out.state.find_table(extensions.front().first);
        for (auto& a : extensions.front().second) table->attributes.push_back(std::move(a));
      }
      out.assignment = assignment_of(fields.at("Assignment"));
      if (out.assignment) {
        auto* table = out.state.find_table(*out.assignment);
        if (table == nullptr) {
          throw ContractViolation(
              fmt::format("assignment {} names a table absent from the query-specific schema", *out.assignment));
        }
        table->add_example_chunk(chunk.chunk_id);
      }
      validate_schema(out.state);
      return out;
    } catch (const ContractViolation& e) {
      last_error = e.what();
      if (++violations > options_.contract_retries) break;
    } catch (const StructuredParseError& e) {
      last_error = e.what();
      if (++parse_failures > options_.parse_retries) break;
    } catch (const ValidationError& e) {
      last_error = e.what();
      if (++parse_failures > options_.parse_retries) break;
    }
    spdlog::warn("phase2 chunk {}: reply rejected: {}", chunk.chunk_id, last_error);
    retry = retry_feedback(last_error);
  }
  return {state, std::nullopt, true, last_error};
}

PhaseResult SchemaDiscoverer::run_phase2(const ChunkCorpus& corpus, const QuerySpec& query,
                                         const SchemaState& general, SchemaState initial, const std::string& hint) {
  initial.kind = SchemaKind::kQuerySpecific;
  PhaseResult result{std::move(initial), {}, {}};
  for (const auto& chunk : corpus) {
    auto step = phase2_step(result.schema, chunk, query, general, hint);
    if (step.skipped) {
      spdlog::error("phase2: chunk {} skipped: {}", chunk.chunk_id, step.error);
      result.step_errors.push_back(fmt::format("{}: {}", chunk.chunk_id, step.error));
    }
    result.schema = std::move(step.state);
    result.assignments.push_back(std::move(step.assignment));
  }
  return result;
}

// --- repair -----------------------------------------------------------------

SchemaDiscoverer::Verdict SchemaDiscoverer::verify(const SchemaState& schema, const QuerySpec& query) {
  const auto& tpl = prompt_template(TemplateId::kRepair);
  std::string feedback;
  std::string last_error;
  for (int attempt = 0; attempt <= options_.parse_retries; ++attempt) {
    PromptRequest req{TemplateId::kRepair,
                      {{"Query", query.text}, {"Schema", tables_to_json(schema.tables).dump()}},
                      gateway_.models().verifier_model,
                      0.0};
    if (!feedback.empty()) req.variables[std::string(kFeedbackVar)] = feedback;
    try {
      auto fields = parse_structured_reply(gateway_.complete(req), tpl.outputs);
      const auto& s = fields.at("Sufficient");
      bool sufficient = false;
      if (s.is_boolean()) {
        sufficient = s.get<bool>();
      } else if (s.is_string()) {
        auto v = s.get<std::string>();
        for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (v == "yes" || v == "true") {
          sufficient = true;
        } else if (v != "no" && v != "false") {
          throw StructuredParseError(fmt::format("Sufficient must be yes or no, got '{}'", v), {});
        }
      } else {
        throw StructuredParseError("Sufficient must be yes or no", {});
      }
      return {sufficient, field_as_optional_string(fields.at("Missing")).value_or("")};
    } catch (const StructuredParseError& e) {
      last_error = e.what();
    }
    feedback = retry_feedback(last_error);
  }
  throw StructuredParseError(fmt::format("verifier reply unusable: {}", last_error), {});
}

RepairResult SchemaDiscoverer::repair(const SchemaState& schema, const QuerySpec& query, const ChunkCorpus& corpus,
                                      const SchemaState& general) {
  if (schema.kind != SchemaKind::kQuerySpecific) {
    throw ValidationError("repair operates on a query-specific schema");
  }
  RepairResult result{schema, false, 0, {}};
  for (int round = 0;; ++round) {
    const auto verdict = verify(result.schema, query);
    if (verdict.sufficient) {
      result.sufficient = true;
      result.rounds_used = round;
      return result;
    }
    if (round == options_.repair_rounds) {
      result.rounds_used = round;
      spdlog::warn("repair: schema still insufficient after {} rounds", round);
      return result;
    }
    const auto hint = fmt::format("A reviewer judged the current query-specific schema insufficient for the query. "
                                  "Missing: {}",
                                  verdict.missing.empty() ? "unspecified" : verdict.missing);
    auto pass = run_phase2(corpus, query, general, result.schema, hint);
    result.schema = std::move(pass.schema);
    for (auto& e : pass.step_errors) result.step_errors.push_back(std::move(e));
  }
}

// --- metrics ----------------------------------------------------------------

std::string canonical_attribute_name(std::string_view name) {
  std::string out;
  char prev = '\0';
  for (const char raw : name) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      if (std::isupper(c) && std::islower(static_cast<unsigned char>(prev)) && !out.empty()) out += '_';
      out += static_cast<char>(std::tolower(c));
    } else if (!out.empty() && out.back() != '_') {
      out += '_';
    }
    prev = raw;
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

SchemaMetrics schema_metrics(const SchemaState& discovered, const SchemaState& truth,
                             const std::map<std::string, std::string>& aliases) {
  std::multiset<std::string> truth_names;
  for (const auto& t : truth.tables) {
    for (const auto& a : t.attributes) truth_names.insert(canonical_attribute_name(a.name));
  }
  SchemaMetrics m;
  m.truth_attributes = truth_names.size();
  for (const auto& t : discovered.tables) {
    for (const auto& a : t.attributes) {
      ++m.discovered_attributes;
      auto name = canonical_attribute_name(a.name);
      if (auto it = aliases.find(name); it != aliases.end()) name = canonical_attribute_name(it->second);
      if (auto hit = truth_names.find(name); hit != truth_names.end()) {
        truth_names.erase(hit);
        ++m.matched;
      }
    }
  }
  m.recall = m.truth_attributes == 0 ? 1.0
                                     : static_cast<double>(m.matched) / static_cast<double>(m.truth_attributes);
  if (m.discovered_attributes == 0) {
    m.precision = m.truth_attributes == 0 ? 1.0 : 0.0;
  } else {
    m.precision = static_cast<double>(m.matched) / static_cast<double>(m.discovered_attributes);
  }
  m.sufficient = m.matched == m.truth_attributes;
  return m;
}

}  // namespace cellguard
