#pragma once

// Domain types shared by every stage: chunks, queries, schemas, extracted tables.
// Everything here is a plain value type; the parse/serialize pairs are
// canonical so that equal values always produce byte-identical files.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cellguard {

struct Chunk {
  std::string doc_id;
  std::string chunk_id;
  std::string text;

  bool operator==(const Chunk&) const = default;
};

using ChunkCorpus = std::vector<Chunk>;

struct QuerySpec {
  std::string query_id;
  std::string text;

  bool operator==(const QuerySpec&) const = default;
};

struct AttributeDef {
  std::string name;
  std::string description;

  bool operator==(const AttributeDef&) const = default;
};

inline constexpr std::size_t kMaxExampleChunks = 5;

struct TableDef {
  std::string name;
  std::string description;
  std::vector<std::string> example_chunk_ids;
  std::vector<AttributeDef> attributes;

  const AttributeDef* find_attribute(std::string_view attr) const;
  AttributeDef* find_attribute(std::string_view attr);
  bool has_attribute(std::string_view attr) const { return find_attribute(attr) != nullptr; }
  // FIFO eviction once kMaxExampleChunks is reached; no duplicates.
  void add_example_chunk(const std::string& chunk_id);

  bool operator==(const TableDef&) const = default;
};

enum class SchemaKind { kGeneral, kQuerySpecific };

std::string_view to_string(SchemaKind kind);
SchemaKind schema_kind_from_string(std::string_view s);

struct SchemaState {
  std::vector<TableDef> tables;
  SchemaKind kind = SchemaKind::kGeneral;

  const TableDef* find_table(std::string_view name) const;
  TableDef* find_table(std::string_view name);
  std::size_t attribute_count() const;

  bool operator==(const SchemaState&) const = default;
};

// Null cells are distinct from empty strings: nullopt means the extractor
// answered None.
using CellValue = std::optional<std::string>;

struct ExtractedRow {
  std::string row_id;
  std::vector<std::string> chunk_ids;
  std::map<std::string, CellValue> cells;

  bool operator==(const ExtractedRow&) const = default;
};

struct ExtractedTable {
  std::string table_name;
  std::vector<ExtractedRow> rows;

  ExtractedRow* find_row(std::string_view row_id);
  const ExtractedRow* find_row(std::string_view row_id) const;

  bool operator==(const ExtractedTable&) const = default;
};

using TableSet = std::vector<ExtractedTable>;

// --- validation ---------------------------------------------------------

void validate_chunk(const Chunk& chunk);
void validate_schema(const SchemaState& schema);
// Every cell's attribute must exist in the schema table of the same name.
void validate_table(const ExtractedTable& table, const SchemaState& schema);

// --- chunk corpus (line-delimited {doc_id, chunk_id, text}) ---------------

ChunkCorpus parse_chunk_corpus(const std::filesystem::path& path);
ChunkCorpus parse_chunk_corpus_text(std::string_view text);
std::string serialize_chunk_corpus(const ChunkCorpus& corpus);

// --- query ---------------------------------------------------------------

QuerySpec parse_query(const std::filesystem::path& path);
nlohmann::json to_json(const QuerySpec& q);

// --- schema (single canonical document) ----------------------------------

nlohmann::json to_json(const TableDef& t);
TableDef table_def_from_json(const nlohmann::json& j);
nlohmann::json tables_to_json(const std::vector<TableDef>& tables);
std::vector<TableDef> tables_from_json(const nlohmann::json& j);

std::string serialize_schema(const SchemaState& s);
SchemaState parse_schema(std::string_view text);
SchemaState load_schema(const std::filesystem::path& path);

// --- extracted tables (line-delimited {table, row_id, chunk_ids, cells}) ---

std::string serialize_tables(const TableSet& tables);
TableSet parse_tables(std::string_view text);
TableSet load_tables(const std::filesystem::path& path);

ExtractedTable* find_table(TableSet& tables, std::string_view name);
const ExtractedTable* find_table(const TableSet& tables, std::string_view name);

}  // namespace cellguard
