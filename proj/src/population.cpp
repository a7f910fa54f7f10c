#include "cellguard/population.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/error.hpp"
#include "cellguard/evaluation.hpp"
#include "cellguard/io.hpp"
#include "cellguard/parallel.hpp"

namespace cellguard {
namespace {

std::string retry_feedback(const std::string& reason) {
  return fmt::format("Your previous reply was rejected: {}. Reply again and follow the Output format exactly.",
                     reason);
}

// Accepts a JSON list, a JSON-encoded list, a comma-separated string or None.
std::vector<std::string> table_names_of(const nlohmann::json& v) {
  std::vector<std::string> names;
  auto push = [&](std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n\"'");
    const auto e = s.find_last_not_of(" \t\r\n\"'.");
    if (b == std::string::npos) return;
    s = s.substr(b, e - b + 1);
    if (s == "None" || s == "none" || s == "null") return;
    if (std::find(names.begin(), names.end(), s) == names.end()) names.push_back(std::move(s));
  };
  if (v.is_null()) return names;
  if (v.is_array()) {
    for (const auto& x : v) {
      if (!x.is_string()) throw StructuredParseError("table assignment list holds a non-string entry", {});
      push(x.get<std::string>());
    }
    return names;
  }
  if (!v.is_string()) throw StructuredParseError("table assignment is neither a name nor a list", {});
  const auto s = v.get<std::string>();
  auto parsed = nlohmann::json::parse(s, nullptr, false);
  if (!parsed.is_discarded() && parsed.is_array()) return table_names_of(parsed);
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    push(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return names;
}

std::optional<std::string> value_of(const nlohmann::json& v) {
  if (v.is_array() || v.is_object()) return v.dump();
  return field_as_optional_string(v);
}

ExtractionRecord* find_attr_record(PartialRow& row, std::string_view attr) {
  for (auto& r : row.records) {
    if (r.attribute_name && *r.attribute_name == attr) return &r;
  }
  return nullptr;
}

}  // namespace

std::string_view to_string(TargetKind k) {
  return k == TargetKind::kTableAssignment ? "table_assignment" : "attribute_value";
}

TargetKind target_kind_from_string(std::string_view s) {
  if (s == "table_assignment") return TargetKind::kTableAssignment;
  if (s == "attribute_value") return TargetKind::kAttributeValue;
  throw ParseError(fmt::format("unknown target kind '{}'", s));
}

std::string_view to_string(MappingMode m) {
  switch (m) {
    case MappingMode::kOneToOne: return "one2one";
    case MappingMode::kOneToMany: return "one2many";
    case MappingMode::kMerge: return "merge";
  }
  return "one2one";
}

MappingMode mapping_mode_from_string(std::string_view s) {
  if (s == "one2one") return MappingMode::kOneToOne;
  if (s == "one2many") return MappingMode::kOneToMany;
  if (s == "merge") return MappingMode::kMerge;
  throw ValidationError(fmt::format("unknown mapping mode '{}'", s));
}

std::vector<std::string> token_span_of(const CellValue& value) {
  if (!value) return {"None"};
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char ch : *value) {
    if (std::isspace(ch)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (std::ispunct(ch)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      tokens.emplace_back(1, static_cast<char>(ch));
    } else {
      current.push_back(static_cast<char>(ch));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  // An all-whitespace answer still occupies one output token.
  if (tokens.empty()) tokens.push_back(*value);
  return tokens;
}

// --- record sidecar ----------------------------------------------------------

std::string serialize_records(const std::vector<ExtractionRecord>& records) {
  std::vector<nlohmann::json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    lines.push_back({{"extraction_id", r.extraction_id},
                     {"target_kind", to_string(r.kind)},
                     {"doc_id", r.doc_id},
                     {"chunk_id", r.chunk_id},
                     {"table", r.table_name},
                     {"attribute", r.attribute_name ? nlohmann::json(*r.attribute_name) : nlohmann::json(nullptr)},
                     {"value", r.value ? nlohmann::json(*r.value) : nlohmann::json(nullptr)},
                     {"token_span", r.token_span},
                     {"row_id", r.row_id},
                     {"error", r.error},
                     {"conflict", r.conflict},
                     {"representative", r.representative}});
  }
  return io::to_json_lines(lines);
}

std::vector<ExtractionRecord> parse_records(std::string_view text) {
  std::vector<ExtractionRecord> out;
  std::set<std::string> ids;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& j) {
    try {
      ExtractionRecord r;
      r.extraction_id = j.at("extraction_id").get<std::string>();
      r.kind = target_kind_from_string(j.at("target_kind").get<std::string>());
      r.doc_id = j.at("doc_id").get<std::string>();
      r.chunk_id = j.at("chunk_id").get<std::string>();
      r.table_name = j.at("table").get<std::string>();
      if (!j.at("attribute").is_null()) r.attribute_name = j["attribute"].get<std::string>();
      if (!j.at("value").is_null()) r.value = j["value"].get<std::string>();
      r.token_span = j.at("token_span").get<std::vector<std::string>>();
      r.row_id = j.at("row_id").get<std::string>();
      r.error = j.value("error", false);
      r.conflict = j.value("conflict", false);
      r.representative = j.value("representative", true);
      if (r.attribute_name.has_value() == (r.kind == TargetKind::kTableAssignment)) {
        throw ValidationError("attribute must be null exactly for table assignments");
      }
      if (!ids.insert(r.extraction_id).second) {
        throw ValidationError(fmt::format("duplicate extraction_id {}", r.extraction_id));
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("line {}: malformed extraction record: {}", line, e.what()));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("line {}: {}", line, e.what()));
    }
  });
  return out;
}

std::vector<ExtractionRecord> load_records(const std::filesystem::path& path) {
  return parse_records(io::read_file(path));
}

// --- merging -----------------------------------------------------------------

MergedCell merge_values(const std::vector<CellValue>& values, const TieBreak& tie_break) {
  struct Group {
    std::string key;
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::vector<Group> groups;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) continue;
    const auto key = normalize_value(*values[i]);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return g.key == key; });
    if (it == groups.end()) {
      groups.push_back({key, 1, i});
    } else {
      ++it->count;
    }
  }
  if (groups.empty()) return {std::nullopt, false, 0};
  if (groups.size() == 1) return {values[groups[0].first], false, groups[0].first};

  std::size_t best = 0;
  for (const auto& g : groups) best = std::max(best, g.count);
  std::vector<const Group*> tied;
  for (const auto& g : groups) {
    if (g.count == best) tied.push_back(&g);
  }
  const Group* winner = tied.front();
  if (tied.size() > 1) {
    std::vector<std::string> candidates;
    for (const auto* g : tied) candidates.push_back(*values[g->first]);
    const auto chosen = tie_break(candidates);
    for (const auto* g : tied) {
      if (values_match(*values[g->first], chosen)) {
        winner = g;
        break;
      }
    }
  }
  return {values[winner->first], true, winner->first};
}

// --- Populator ---------------------------------------------------------------

Populator::Populator(Gateway& gateway, PopulationOptions options) : gateway_(gateway), options_(options) {}

std::vector<std::string> Populator::resolve_table(const Chunk& chunk, const SchemaState& schema) {
  if (schema.kind != SchemaKind::kQuerySpecific) {
    throw ValidationError("table resolution needs a query-specific schema");
  }
  const auto& tpl = prompt_template(TemplateId::kTableResolver);
  const auto schema_text = tables_to_json(schema.tables).dump();
  std::string feedback;
  std::string last_error;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    PromptRequest req{TemplateId::kTableResolver,
                      {{"Document", chunk.text}, {"Schema", schema_text}},
                      gateway_.models().population_model,
                      0.0};
    if (!feedback.empty()) req.variables[std::string(kFeedbackVar)] = feedback;
    try {
      const auto fields = parse_structured_reply(gateway_.complete(req), tpl.outputs);
      auto names = table_names_of(fields.at("Table Assignment"));
      std::vector<std::string> unknown;
      for (const auto& n : names) {
        if (!schema.find_table(n)) unknown.push_back(n);
      }
      if (unknown.empty()) return names;
      last_error = fmt::format("unknown table name(s): {}", fmt::join(unknown, ", "));
    } catch (const ReplayMissError&) {
      throw;
    } catch (const StructuredParseError& e) {
      last_error = e.what();
    } catch (const GatewayError& e) {
      last_error = e.what();
    }
    spdlog::warn("resolve chunk {}: attempt {} rejected: {}", chunk.chunk_id, attempt + 1, last_error);
    feedback = retry_feedback(last_error);
  }
  spdlog::warn("resolve chunk {}: treated as irrelevant after {} attempts", chunk.chunk_id, options_.retries + 1);
  return {};
}

Populator::Extraction Populator::extract_attribute(const Chunk& chunk, const TableDef& table,
                                                   const AttributeDef& attr) {
  if (!table.has_attribute(attr.name)) {
    throw ValidationError(fmt::format("attribute {} is not part of table {}", attr.name, table.name));
  }
  Extraction out;
  auto& rec = out.record;
  rec.extraction_id = fmt::format("{}:{}:{}", chunk.chunk_id, table.name, attr.name);
  rec.kind = TargetKind::kAttributeValue;
  rec.doc_id = chunk.doc_id;
  rec.chunk_id = chunk.chunk_id;
  rec.table_name = table.name;
  rec.attribute_name = attr.name;
  rec.row_id = chunk.chunk_id;

  const auto schema_text = to_json(table).dump();
  std::string feedback;
  std::string last_error;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    PromptRequest req{TemplateId::kAttributeExtractor,
                      {{"Document", chunk.text}, {"Schema", schema_text}, {"Target Attribute", attr.name}},
                      gateway_.models().population_model,
                      0.0};
    if (!feedback.empty()) req.variables[std::string(kFeedbackVar)] = feedback;
    try {
      const auto fields = parse_structured_reply(gateway_.complete(req), {attr.name});
      out.value = value_of(fields.at(attr.name));
      rec.value = out.value;
      rec.token_span = token_span_of(out.value);
      return out;
    } catch (const ReplayMissError&) {
      throw;
    } catch (const StructuredParseError& e) {
      last_error = e.what();
    } catch (const GatewayError& e) {
      last_error = e.what();
    }
    spdlog::warn("extract {}: attempt {} rejected: {}", rec.extraction_id, attempt + 1, last_error);
    feedback = retry_feedback(last_error);
  }
  rec.error = true;
  rec.token_span = token_span_of(std::nullopt);
  return out;
}

std::vector<PartialRow> Populator::populate_chunk(const Chunk& chunk, const SchemaState& schema) {
  auto tables = resolve_table(chunk, schema);
  if (options_.mode == MappingMode::kOneToOne && tables.size() > 1) tables.resize(1);
  std::vector<PartialRow> rows;
  for (const auto& name : tables) {
    const TableDef& table = *schema.find_table(name);
    PartialRow pr;
    pr.table_name = name;
    pr.row.row_id = chunk.chunk_id;
    pr.row.chunk_ids = {chunk.chunk_id};
    ExtractionRecord assign;
    assign.extraction_id = fmt::format("{}:{}", chunk.chunk_id, name);
    assign.kind = TargetKind::kTableAssignment;
    assign.doc_id = chunk.doc_id;
    assign.chunk_id = chunk.chunk_id;
    assign.table_name = name;
    assign.value = name;
    assign.token_span = token_span_of(assign.value);
    assign.row_id = chunk.chunk_id;
    pr.records.push_back(std::move(assign));
    for (const auto& attr : table.attributes) {
      auto ex = extract_attribute(chunk, table, attr);
      pr.row.cells[attr.name] = ex.value;
      pr.records.push_back(std::move(ex.record));
    }
    rows.push_back(std::move(pr));
  }
  return rows;
}

std::string Populator::break_tie(const TableDef& table, const AttributeDef& attr,
                                 const std::vector<std::string>& tied, const std::vector<const Chunk*>& chunks) {
  auto documents = nlohmann::json::array();
  for (const auto* c : chunks) documents.push_back(c->text);
  std::string feedback;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    PromptRequest req{TemplateId::kConsolidate,
                      {{"Table", table.name},
                       {"Target Attribute", attr.name},
                       {"Candidates", nlohmann::json(tied).dump()},
                       {"Documents", documents.dump()}},
                      gateway_.models().population_model,
                      0.0};
    if (!feedback.empty()) req.variables[std::string(kFeedbackVar)] = feedback;
    std::string reason;
    try {
      const auto fields = parse_structured_reply(gateway_.complete(req), {"Value"});
      if (const auto v = value_of(fields.at("Value"))) {
        for (const auto& t : tied) {
          if (values_match(t, *v)) return t;
        }
        reason = fmt::format("'{}' is not one of the candidates", *v);
      } else {
        reason = "answer must be one of the candidates, not None";
      }
    } catch (const ReplayMissError&) {
      throw;
    } catch (const StructuredParseError& e) {
      reason = e.what();
    } catch (const GatewayError& e) {
      reason = e.what();
    }
    spdlog::warn("consolidate {}.{}: attempt {} rejected: {}", table.name, attr.name, attempt + 1, reason);
    feedback = retry_feedback(reason);
  }
  spdlog::warn("consolidate {}.{}: falling back to the first candidate", table.name, attr.name);
  return tied.front();
}

PartialRow Populator::consolidate_doc_rows(const std::vector<PartialRow>& rows, const TableDef& table,
                                           const std::vector<const Chunk*>& chunks) {
  if (rows.empty()) throw ValidationError("nothing to consolidate");
  PartialRow out;
  out.table_name = rows.front().table_name;
  const std::string doc_id = rows.front().records.front().doc_id;
  out.row.row_id = doc_id;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].table_name != out.table_name || rows[i].records.front().doc_id != doc_id) {
      throw ValidationError("consolidated rows must share doc_id and table");
    }
    out.row.chunk_ids.insert(out.row.chunk_ids.end(), rows[i].row.chunk_ids.begin(), rows[i].row.chunk_ids.end());
  }
  std::vector<PartialRow> work = rows;
  for (std::size_t i = 0; i < work.size(); ++i) {
    for (auto& r : work[i].records) r.row_id = doc_id;
    work[i].records.front().representative = i == 0;
  }
  for (const auto& attr : table.attributes) {
    std::vector<CellValue> values;
    for (const auto& r : work) {
      const auto it = r.row.cells.find(attr.name);
      values.push_back(it == r.row.cells.end() ? CellValue{} : it->second);
    }
    const auto merged = merge_values(values, [&](const std::vector<std::string>& tied) {
      return break_tie(table, attr, tied, chunks);
    });
    out.row.cells[attr.name] = merged.value;
    for (std::size_t i = 0; i < work.size(); ++i) {
      if (auto* rec = find_attr_record(work[i], attr.name)) {
        rec->conflict = merged.conflict;
        rec->representative = i == merged.winner;
      }
    }
  }
  for (auto& r : work) {
    for (auto& rec : r.records) out.records.push_back(std::move(rec));
  }
  return out;
}

PopulationResult Populator::populate(const ChunkCorpus& corpus, const SchemaState& schema) {
  validate_schema(schema);
  std::vector<std::vector<PartialRow>> per_chunk(corpus.size());
  parallel_for(corpus.size(), options_.threads,
               [&](std::size_t i) { per_chunk[i] = populate_chunk(corpus[i], schema); });

  PopulationResult result;
  for (const auto& t : schema.tables) result.tables.push_back({t.name, {}});

  if (options_.mode != MappingMode::kMerge) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      for (auto& pr : per_chunk[i]) {
        find_table(result.tables, pr.table_name)->rows.push_back(std::move(pr.row));
        for (auto& rec : pr.records) result.records.push_back(std::move(rec));
      }
    }
  } else {
    // Group by (table, doc) keeping first-appearance order of documents.
    std::vector<std::string> doc_order;
    std::map<std::string, std::map<std::string, std::vector<std::size_t>>> chunks_by_table_doc;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (std::find(doc_order.begin(), doc_order.end(), corpus[i].doc_id) == doc_order.end()) {
        doc_order.push_back(corpus[i].doc_id);
      }
      for (const auto& pr : per_chunk[i]) chunks_by_table_doc[pr.table_name][corpus[i].doc_id].push_back(i);
    }
    for (const auto& doc : doc_order) {
      for (const auto& t : schema.tables) {
        const auto by_doc = chunks_by_table_doc.find(t.name);
        if (by_doc == chunks_by_table_doc.end()) continue;
        const auto idx = by_doc->second.find(doc);
        if (idx == by_doc->second.end()) continue;
        std::vector<PartialRow> rows;
        std::vector<const Chunk*> chunks;
        for (std::size_t i : idx->second) {
          for (const auto& pr : per_chunk[i]) {
            if (pr.table_name == t.name) rows.push_back(pr);
          }
          chunks.push_back(&corpus[i]);
        }
        auto merged = consolidate_doc_rows(rows, t, chunks);
        find_table(result.tables, t.name)->rows.push_back(std::move(merged.row));
        for (auto& rec : merged.records) result.records.push_back(std::move(rec));
      }
    }
  }
  for (const auto& rec : result.records) {
    if (rec.error) result.errors.push_back(fmt::format("{}: extraction failed", rec.extraction_id));
  }
  return result;
}

}  // namespace cellguard
