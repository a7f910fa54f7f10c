#pragma once

// Fills the query-specific tables chunk by chunk: resolve the target
// table(s), then extract each attribute in schema order. Every model output
// that lands in a table is tracked by an ExtractionRecord so that hidden
// states, labels and detector decisions can be joined back to cells.
//
// Extraction ids: "<chunk>:<table>" for a table assignment and
// "<chunk>:<table>:<attribute>" for an attribute value.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cellguard/corpus.hpp"
#include "cellguard/gateway.hpp"

namespace cellguard {

enum class TargetKind { kTableAssignment, kAttributeValue };
std::string_view to_string(TargetKind k);
TargetKind target_kind_from_string(std::string_view s);

struct ExtractionRecord {
  std::string extraction_id;
  TargetKind kind = TargetKind::kAttributeValue;
  std::string doc_id;
  std::string chunk_id;
  std::string table_name;
  std::optional<std::string> attribute_name;  // empty iff kind == kTableAssignment
  CellValue value;
  std::vector<std::string> token_span;
  std::string row_id;           // row the output landed in
  bool error = false;           // extraction failed; value forced to null
  bool conflict = false;        // merged cell whose chunks disagreed
  bool representative = true;   // false for merged-away duplicates

  bool operator==(const ExtractionRecord&) const = default;
};

std::string serialize_records(const std::vector<ExtractionRecord>& records);
std::vector<ExtractionRecord> parse_records(std::string_view text);
std::vector<ExtractionRecord> load_records(const std::filesystem::path& path);

// Whitespace/punctuation tokenization of a model output; null is ["None"].
std::vector<std::string> token_span_of(const CellValue& value);

enum class MappingMode { kOneToOne, kOneToMany, kMerge };
std::string_view to_string(MappingMode m);
MappingMode mapping_mode_from_string(std::string_view s);

struct PopulationOptions {
  MappingMode mode = MappingMode::kOneToOne;
  int retries = 1;          // re-prompts after a malformed reply
  std::size_t threads = 4;  // chunk-level workers
};

struct PartialRow {
  std::string table_name;
  ExtractedRow row;
  std::vector<ExtractionRecord> records;  // assignment record first, then attributes in schema order
};

struct PopulationResult {
  TableSet tables;
  std::vector<ExtractionRecord> records;
  std::vector<std::string> errors;
};

struct MergedCell {
  CellValue value;
  bool conflict = false;
  std::size_t winner = 0;  // index into the input values holding the chosen value
};

// Per-attribute merge: all-null gives null; one distinct non-null value wins
// outright; otherwise the most frequent normalized value wins, `tie_break`
// picks among tied candidates, and the cell is marked conflicting.
using TieBreak = std::function<std::string(const std::vector<std::string>& tied)>;
MergedCell merge_values(const std::vector<CellValue>& values, const TieBreak& tie_break);

class Populator {
 public:
  Populator(Gateway& gateway, PopulationOptions options = {});

  std::vector<std::string> resolve_table(const Chunk& chunk, const SchemaState& schema);

  struct Extraction {
    CellValue value;
    ExtractionRecord record;
  };
  Extraction extract_attribute(const Chunk& chunk, const TableDef& table, const AttributeDef& attr);

  std::vector<PartialRow> populate_chunk(const Chunk& chunk, const SchemaState& schema);

  // Rows for one (doc_id, table), in chunk order, folded into one row.
  PartialRow consolidate_doc_rows(const std::vector<PartialRow>& rows, const TableDef& table,
                                  const std::vector<const Chunk*>& chunks);

  PopulationResult populate(const ChunkCorpus& corpus, const SchemaState& schema);

 private:
  std::string break_tie(const TableDef& table, const AttributeDef& attr, const std::vector<std::string>& tied,
                        const std::vector<const Chunk*>& chunks);

  Gateway& gateway_;
  PopulationOptions options_;
};

}  // namespace cellguard
