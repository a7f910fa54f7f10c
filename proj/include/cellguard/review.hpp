#pragma once

// File-based review loop. Flagged cells are exported as a line-delimited
// queue; a reviewer fills in `corrected_value` on the lines they resolve and
// the file is imported back. Every applied change is written to an audit log
// that replays onto the pre-review tables to give the same result.
//
// A line without a `corrected_value` key stays open. A present key is a
// correction, and null is a legal corrected value. Table-assignment items only
// accept null, which deletes the row the assignment produced.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cellguard/corpus.hpp"
#include "cellguard/detectors.hpp"
#include "cellguard/population.hpp"

namespace cellguard {

struct ReviewItem {
  std::string extraction_id;
  std::string table_name;
  std::string row_id;
  std::optional<std::string> attribute_name;  // empty for a table assignment
  CellValue current_value;
  PredictionSet prediction_set;
  bool conflict = false;
  std::string source_text;
  std::optional<CellValue> corrected_value;  // outer empty = still open

  bool operator==(const ReviewItem&) const = default;
};

// One item per representative record whose detection says review or whose
// cell is conflict-flagged, ordered by table, row, then attribute position.
std::vector<ReviewItem> build_queue(const TableSet& tables, const std::vector<ExtractionRecord>& records,
                                    const std::vector<Detection>& detections, const ChunkCorpus& corpus);

std::string serialize_queue(const std::vector<ReviewItem>& items);
std::vector<ReviewItem> parse_queue(std::string_view text);

struct AuditEntry {
  std::string extraction_id;
  std::string table_name;
  std::string row_id;
  std::optional<std::string> attribute_name;  // empty = row deletion
  CellValue old_value;
  CellValue new_value;
  std::string timestamp;

  bool operator==(const AuditEntry&) const = default;
};

std::string serialize_audit(const std::vector<AuditEntry>& entries);
std::vector<AuditEntry> parse_audit(std::string_view text);

// UTC ISO-8601 time. SOURCE_DATE_EPOCH, when set, replaces the wall clock.
std::string audit_timestamp();

// Applies entries in order. Each entry's old value must match the table.
TableSet replay_audit(TableSet tables, const std::vector<AuditEntry>& entries);

struct ImportResult {
  TableSet tables;
  std::vector<AuditEntry> audit;
  std::size_t open = 0;  // queue lines left without a correction
};

// Corrections equal to the current value are not logged.
ImportResult import_corrections(const TableSet& tables, const std::vector<ExtractionRecord>& records,
                                const std::vector<ReviewItem>& reviewed, const std::string& timestamp);

}  // namespace cellguard
