#include "cellguard/corpus.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "cellguard/error.hpp"
#include "cellguard/io.hpp"

namespace cellguard {

namespace {

constexpr std::string_view kSchemaFormat = "cellguard-schema";
constexpr int kSchemaVersion = 1;

std::string require_string(const nlohmann::json& obj, const char* key, std::string_view context) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError(fmt::format("{}: missing field '{}'", context, key));
  }
  if (!it->is_string()) {
    throw ParseError(fmt::format("{}: field '{}' must be a string", context, key));
  }
  return it->get<std::string>();
}

}  // namespace

const AttributeDef* TableDef::find_attribute(std::string_view attr) const {
  auto it = std::find_if(attributes.begin(), attributes.end(),
                         [&](const AttributeDef& a) { return a.name == attr; });
  return it == attributes.end() ? nullptr : &*it;
}

AttributeDef* TableDef::find_attribute(std::string_view attr) {
  auto it = std::find_if(attributes.begin(), attributes.end(),
                         [&](const AttributeDef& a) { return a.name == attr; });
  return it == attributes.end() ? nullptr : &*it;
}

void TableDef::add_example_chunk(const std::string& chunk_id) {
  if (std::find(example_chunk_ids.begin(), example_chunk_ids.end(), chunk_id) != example_chunk_ids.end()) {
    return;
  }
  if (example_chunk_ids.size() >= kMaxExampleChunks) {
    example_chunk_ids.erase(example_chunk_ids.begin());
  }
  example_chunk_ids.push_back(chunk_id);
}

std::string_view to_string(SchemaKind kind) {
  return kind == SchemaKind::kGeneral ? "general" : "query_specific";
}

SchemaKind schema_kind_from_string(std::string_view s) {
  if (s == "general") return SchemaKind::kGeneral;
  if (s == "query_specific") return SchemaKind::kQuerySpecific;
  throw ParseError(fmt::format("unknown schema kind '{}'", s));
}

const TableDef* SchemaState::find_table(std::string_view name) const {
  auto it = std::find_if(tables.begin(), tables.end(), [&](const TableDef& t) { return t.name == name; });
  return it == tables.end() ? nullptr : &*it;
}

TableDef* SchemaState::find_table(std::string_view name) {
  auto it = std::find_if(tables.begin(), tables.end(), [&](const TableDef& t) { return t.name == name; });
  return it == tables.end() ? nullptr : &*it;
}

std::size_t SchemaState::attribute_count() const {
  std::size_t n = 0;
  for (const auto& t : tables) n += t.attributes.size();
  return n;
}

ExtractedRow* ExtractedTable::find_row(std::string_view row_id) {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const ExtractedRow& r) { return r.row_id == row_id; });
  return it == rows.end() ? nullptr : &*it;
}

const ExtractedRow* ExtractedTable::find_row(std::string_view row_id) const {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const ExtractedRow& r) { return r.row_id == row_id; });
  return it == rows.end() ? nullptr : &*it;
}

ExtractedTable* find_table(TableSet& tables, std::string_view name) {
  auto it = std::find_if(tables.begin(), tables.end(),
                         [&](const ExtractedTable& t) { return t.table_name == name; });
  return it == tables.end() ? nullptr : &*it;
}

const ExtractedTable* find_table(const TableSet& tables, std::string_view name) {
  auto it = std::find_if(tables.begin(), tables.end(),
                         [&](const ExtractedTable& t) { return t.table_name == name; });
  return it == tables.end() ? nullptr : &*it;
}

// --- validation ---------------------------------------------------------

void validate_chunk(const Chunk& chunk) {
  if (chunk.chunk_id.empty()) throw ValidationError("chunk_id must be non-empty");
  if (chunk.text.empty()) throw ValidationError(fmt::format("chunk {} has empty text", chunk.chunk_id));
}

void validate_schema(const SchemaState& schema) {
  std::set<std::string> names;
  for (const auto& t : schema.tables) {
    if (t.name.empty()) throw ValidationError("table name must be non-empty");
    if (!names.insert(t.name).second) {
      throw ValidationError(fmt::format("duplicate table name {}", t.name));
    }
    if (t.example_chunk_ids.size() > kMaxExampleChunks) {
      throw ValidationError(fmt::format("table {} lists more than {} example chunks", t.name, kMaxExampleChunks));
    }
    std::set<std::string> attrs;
    for (const auto& a : t.attributes) {
      if (a.name.empty()) throw ValidationError(fmt::format("table {} has an unnamed attribute", t.name));
      if (!attrs.insert(a.name).second) {
        throw ValidationError(fmt::format("duplicate attribute {} in table {}", a.name, t.name));
      }
    }
  }
}

void validate_table(const ExtractedTable& table, const SchemaState& schema) {
  const auto* def = schema.find_table(table.table_name);
  if (def == nullptr) {
    throw ValidationError(fmt::format("table {} is not in the schema", table.table_name));
  }
  std::set<std::string> row_ids;
  for (const auto& row : table.rows) {
    if (!row_ids.insert(row.row_id).second) {
      throw ValidationError(fmt::format("duplicate row_id {} in table {}", row.row_id, table.table_name));
    }
    for (const auto& [attr, _] : row.cells) {
      if (!def->has_attribute(attr)) {
        throw ValidationError(
            fmt::format("row {}: attribute {} is not in table {}", row.row_id, attr, table.table_name));
      }
    }
  }
}

// --- chunk corpus -------------------------------------------------------

ChunkCorpus parse_chunk_corpus_text(std::string_view text) {
  ChunkCorpus corpus;
  std::set<std::string> seen;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& obj) {
    const auto ctx = fmt::format("line {}", line);
    Chunk c{require_string(obj, "doc_id", ctx), require_string(obj, "chunk_id", ctx),
            require_string(obj, "text", ctx)};
    try {
      validate_chunk(c);
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("line {}: {}", line, e.what()));
    }
    if (!seen.insert(c.chunk_id).second) {
      throw ValidationError(fmt::format("line {}: duplicate chunk_id {}", line, c.chunk_id));
    }
    corpus.push_back(std::move(c));
  });
  return corpus;
}

ChunkCorpus parse_chunk_corpus(const std::filesystem::path& path) {
  return parse_chunk_corpus_text(io::read_file(path));
}

std::string serialize_chunk_corpus(const ChunkCorpus& corpus) {
  std::vector<nlohmann::json> lines;
  lines.reserve(corpus.size());
  for (const auto& c : corpus) {
    lines.push_back({{"doc_id", c.doc_id}, {"chunk_id", c.chunk_id}, {"text", c.text}});
  }
  return io::to_json_lines(lines);
}

// --- query ----------------------------------------------------------------

QuerySpec parse_query(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  QuerySpec q{require_string(j, "query_id", "query"), require_string(j, "text", "query")};
  if (q.text.empty()) throw ValidationError("query text must be non-empty");
  return q;
}

nlohmann::json to_json(const QuerySpec& q) { return {{"query_id", q.query_id}, {"text", q.text}}; }

// --- schema ---------------------------------------------------------------

nlohmann::json to_json(const TableDef& t) {
  auto attrs = nlohmann::json::array();
  for (const auto& a : t.attributes) {
    attrs.push_back({{"name", a.name}, {"description", a.description}});
  }
  return {{"name", t.name},
          {"description", t.description},
          {"example_chunk_ids", t.example_chunk_ids},
          {"attributes", std::move(attrs)}};
}

TableDef table_def_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("table definition must be an object");
  TableDef t;
  t.name = require_string(j, "name", "table");
  t.description = j.value("description", std::string{});
  if (auto it = j.find("example_chunk_ids"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError(fmt::format("table {}: example_chunk_ids must be a list", t.name));
    for (const auto& id : *it) t.example_chunk_ids.push_back(id.get<std::string>());
  }
  if (auto it = j.find("attributes"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError(fmt::format("table {}: attributes must be a list", t.name));
    for (const auto& a : *it) {
      if (a.is_string()) {
        t.attributes.push_back({a.get<std::string>(), ""});
      } else {
        t.attributes.push_back({require_string(a, "name", "attribute"), a.value("description", std::string{})});
      }
    }
  }
  return t;
}

nlohmann::json tables_to_json(const std::vector<TableDef>& tables) {
  auto arr = nlohmann::json::array();
  for (const auto& t : tables) arr.push_back(to_json(t));
  return arr;
}

std::vector<TableDef> tables_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("tables must be a list");
  std::vector<TableDef> out;
  for (const auto& t : j) out.push_back(table_def_from_json(t));
  return out;
}

std::string serialize_schema(const SchemaState& s) {
  nlohmann::json doc = {{"format", kSchemaFormat},
                        {"version", kSchemaVersion},
                        {"kind", to_string(s.kind)},
                        {"tables", tables_to_json(s.tables)}};
  return io::to_document(doc);
}

SchemaState parse_schema(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("schema: {}", e.what()));
  }
  if (!doc.is_object() || doc.value("format", "") != kSchemaFormat) {
    throw VersionMismatchError("not a cellguard schema document");
  }
  if (doc.value("version", 0) != kSchemaVersion) {
    throw VersionMismatchError(fmt::format("unsupported schema version {}", doc.value("version", 0)));
  }
  SchemaState s;
  s.kind = schema_kind_from_string(require_string(doc, "kind", "schema"));
  s.tables = tables_from_json(doc.at("tables"));
  validate_schema(s);
  return s;
}

SchemaState load_schema(const std::filesystem::path& path) { return parse_schema(io::read_file(path)); }

// --- extracted tables -----------------------------------------------------

std::string serialize_tables(const TableSet& tables) {
  std::vector<nlohmann::json> lines;
  for (const auto& t : tables) {
    for (const auto& row : t.rows) {
      nlohmann::json cells = nlohmann::json::object();
      for (const auto& [attr, v] : row.cells) {
        cells[attr] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
      }
      lines.push_back({{"table", t.table_name},
                       {"row_id", row.row_id},
                       {"chunk_ids", row.chunk_ids},
                       {"cells", std::move(cells)}});
    }
  }
  return io::to_json_lines(lines);
}

TableSet parse_tables(std::string_view text) {
  TableSet out;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& obj) {
    const auto ctx = fmt::format("line {}", line);
    const auto table = require_string(obj, "table", ctx);
    ExtractedRow row;
    row.row_id = require_string(obj, "row_id", ctx);
    const auto& ids = obj.value("chunk_ids", nlohmann::json::array());
    if (!ids.is_array()) throw ParseError(ctx + ": chunk_ids must be a list");
    for (const auto& id : ids) row.chunk_ids.push_back(id.get<std::string>());
    auto cells = obj.find("cells");
    if (cells == obj.end() || !cells->is_object()) throw ParseError(ctx + ": cells must be an object");
    for (const auto& [attr, v] : cells->items()) {
      if (v.is_null()) {
        row.cells[attr] = std::nullopt;
      } else if (v.is_string()) {
        row.cells[attr] = v.get<std::string>();
      } else {
        throw ParseError(fmt::format("{}: cell {} must be a string or null", ctx, attr));
      }
    }
    auto* t = find_table(out, table);
    if (t == nullptr) {
      out.push_back({table, {}});
      t = &out.back();
    }
    if (t->find_row(row.row_id) != nullptr) {
      throw ValidationError(fmt::format("{}: duplicate row_id {} in table {}", ctx, row.row_id, table));
    }
    t->rows.push_back(std::move(row));
  });
  return out;
}

TableSet load_tables(const std::filesystem::path& path) { return parse_tables(io::read_file(path)); }

}  // namespace cellguard
