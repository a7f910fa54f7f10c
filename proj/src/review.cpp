#include "cellguard/review.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <map>
#include <set>
#include <tuple>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/error.hpp"
#include "cellguard/io.hpp"

namespace cellguard {
namespace {

nlohmann::json cell_json(const CellValue& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

CellValue cell_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::string>();
}

std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

std::string describe(const CellValue& v) { return v ? fmt::format("'{}'", *v) : std::string("null"); }

std::size_t row_index(const ExtractedTable& table, std::string_view row_id) {
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (table.rows[r].row_id == row_id) return r;
  }
  throw ValidationError(fmt::format("table {} has no row {}", table.table_name, row_id));
}

std::size_t table_index(const TableSet& tables, std::string_view name) {
  for (std::size_t t = 0; t < tables.size(); ++t) {
    if (tables[t].table_name == name) return t;
  }
  throw ValidationError(fmt::format("no extracted table named {}", name));
}

CellValue cell_of(const ExtractedRow& row, const std::string& attr) {
  const auto it = row.cells.find(attr);
  return it == row.cells.end() ? std::nullopt : it->second;
}

}  // namespace

std::vector<ReviewItem> build_queue(const TableSet& tables, const std::vector<ExtractionRecord>& records,
                                    const std::vector<Detection>& detections, const ChunkCorpus& corpus) {
  std::map<std::string, const Detection*> by_id;
  for (const auto& d : detections) {
    if (!by_id.emplace(d.extraction_id, &d).second) {
      throw ValidationError(fmt::format("duplicate detection for {}", d.extraction_id));
    }
  }
  std::map<std::string, const Chunk*> chunks;
  for (const auto& c : corpus) chunks.emplace(c.chunk_id, &c);

  using Key = std::tuple<std::size_t, std::size_t, int, std::size_t>;
  std::vector<std::pair<Key, ReviewItem>> keyed;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (!rec.representative) continue;
    const auto det = by_id.find(rec.extraction_id);
    if (det == by_id.end()) {
      throw ValidationError(fmt::format("no detection for extraction {}", rec.extraction_id));
    }
    if (det->second->decision == Decision::kAccept && !rec.conflict) continue;

    const std::size_t t = table_index(tables, rec.table_name);
    const std::size_t r = row_index(tables[t], rec.row_id);
    const auto chunk = chunks.find(rec.chunk_id);
    if (chunk == chunks.end()) throw ValidationError(fmt::format("unknown chunk {}", rec.chunk_id));

    ReviewItem item;
    item.extraction_id = rec.extraction_id;
    item.table_name = rec.table_name;
    item.row_id = rec.row_id;
    item.attribute_name = rec.attribute_name;
    item.current_value = rec.kind == TargetKind::kTableAssignment ? CellValue(rec.table_name)
                                                                   : cell_of(tables[t].rows[r], *rec.attribute_name);
    item.prediction_set = det->second->prediction_set;
    item.conflict = rec.conflict;
    item.source_text = chunk->second->text;
    const int is_attr = rec.kind == TargetKind::kAttributeValue ? 1 : 0;
    keyed.emplace_back(Key{t, r, is_attr, i}, std::move(item));
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<ReviewItem> out;
  out.reserve(keyed.size());
  for (auto& [_, item] : keyed) out.push_back(std::move(item));
  return out;
}

std::string serialize_queue(const std::vector<ReviewItem>& items) {
  std::vector<nlohmann::json> lines;
  lines.reserve(items.size());
  for (const auto& it : items) {
    nlohmann::json j{{"extraction_id", it.extraction_id},
                     {"table", it.table_name},
                     {"row_id", it.row_id},
                     {"attribute", cell_json(it.attribute_name)},
                     {"current_value", cell_json(it.current_value)},
                     {"prediction_set", to_json(it.prediction_set)},
                     {"conflict", it.conflict},
                     {"source_text", it.source_text}};
    if (it.corrected_value) j["corrected_value"] = cell_json(*it.corrected_value);
    lines.push_back(std::move(j));
  }
  return io::to_json_lines(lines);
}

std::vector<ReviewItem> parse_queue(std::string_view text) {
  std::vector<ReviewItem> out;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& j) {
    try {
      ReviewItem it;
      it.extraction_id = j.at("extraction_id").get<std::string>();
      it.table_name = j.at("table").get<std::string>();
      it.row_id = j.at("row_id").get<std::string>();
      it.attribute_name = optional_string(j, "attribute");
      it.current_value = cell_from_json(j.at("current_value"));
      it.prediction_set = prediction_set_from_json(j.at("prediction_set"));
      it.conflict = j.value("conflict", false);
      it.source_text = j.value("source_text", "");
      if (j.contains("corrected_value")) it.corrected_value = cell_from_json(j.at("corrected_value"));
      out.push_back(std::move(it));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("line {}: malformed review record: {}", line, e.what()));
    } catch (const Error& e) {
      throw ParseError(fmt::format("line {}: {}", line, e.what()));
    }
  });
  return out;
}

std::string serialize_audit(const std::vector<AuditEntry>& entries) {
  std::vector<nlohmann::json> lines;
  lines.reserve(entries.size());
  for (const auto& e : entries) {
    lines.push_back({{"extraction_id", e.extraction_id},
                     {"table", e.table_name},
                     {"row_id", e.row_id},
                     {"attribute", cell_json(e.attribute_name)},
                     {"old", cell_json(e.old_value)},
                     {"new", cell_json(e.new_value)},
                     {"timestamp", e.timestamp}});
  }
  return io::to_json_lines(lines);
}

std::vector<AuditEntry> parse_audit(std::string_view text) {
  std::vector<AuditEntry> out;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& j) {
    try {
      out.push_back({j.at("extraction_id").get<std::string>(), j.at("table").get<std::string>(),
                     j.at("row_id").get<std::string>(), optional_string(j, "attribute"),
                     cell_from_json(j.at("old")), cell_from_json(j.at("new")),
                     j.at("timestamp").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("line {}: malformed audit entry: {}", line, e.what()));
    }
  });
  return out;
}

std::string audit_timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch != nullptr && *epoch != '\0') {
    char* end = nullptr;
    const long long v = std::strtoll(epoch, &end, 10);
    if (*end != '\0' || v < 0) throw ValidationError(fmt::format("SOURCE_DATE_EPOCH='{}' is not a timestamp", epoch));
    t = static_cast<std::time_t>(v);
  }
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(t));
}

TableSet replay_audit(TableSet tables, const std::vector<AuditEntry>& entries) {
  for (const auto& e : entries) {
    auto& table = tables[table_index(tables, e.table_name)];
    const std::size_t r = row_index(table, e.row_id);
    if (!e.attribute_name) {
      if (e.old_value != CellValue(e.table_name) || e.new_value) {
        throw ValidationError(fmt::format("audit entry {} is not a row deletion", e.extraction_id));
      }
      table.rows.erase(table.rows.begin() + static_cast<std::ptrdiff_t>(r));
      continue;
    }
    auto& row = table.rows[r];
    if (cell_of(row, *e.attribute_name) != e.old_value) {
      throw ValidationError(fmt::format("audit entry {} expects {} but the table holds {}", e.extraction_id,
                                        describe(e.old_value), describe(cell_of(row, *e.attribute_name))));
    }
    row.cells[*e.attribute_name] = e.new_value;
  }
  return tables;
}

ImportResult import_corrections(const TableSet& tables, const std::vector<ExtractionRecord>& records,
                                const std::vector<ReviewItem>& reviewed, const std::string& timestamp) {
  std::map<std::string, const ExtractionRecord*> by_id;
  for (const auto& rec : records) by_id.emplace(rec.extraction_id, &rec);

  ImportResult result;
  std::set<std::string> seen;
  std::vector<AuditEntry> cell_edits;
  std::vector<AuditEntry> deletions;
  std::set<std::pair<std::string, std::string>> deleted_rows;
  for (const auto& item : reviewed) {
    const auto it = by_id.find(item.extraction_id);
    if (it == by_id.end()) throw ValidationError(fmt::format("unknown extraction_id {}", item.extraction_id));
    if (!seen.insert(item.extraction_id).second) {
      throw ValidationError(fmt::format("extraction_id {} appears twice in the review file", item.extraction_id));
    }
    if (!item.corrected_value) {
      ++result.open;
      continue;
    }
    const auto& rec = *it->second;
    const CellValue& corrected = *item.corrected_value;
    const auto& table = tables[table_index(tables, rec.table_name)];
    const auto& row = table.rows[row_index(table, rec.row_id)];

    if (rec.kind == TargetKind::kTableAssignment) {
      if (corrected == CellValue(rec.table_name)) continue;
      if (corrected) {
        throw ValidationError(fmt::format(
            "{}: a table assignment can only be corrected to null (row deletion), not reassigned to '{}'",
            rec.extraction_id, *corrected));
      }
      if (deleted_rows.emplace(rec.table_name, rec.row_id).second) {
        deletions.push_back({rec.extraction_id, rec.table_name, rec.row_id, std::nullopt,
                             CellValue(rec.table_name), std::nullopt, timestamp});
      }
      continue;
    }
    const CellValue old = cell_of(row, *rec.attribute_name);
    if (old == corrected) continue;
    cell_edits.push_back({rec.extraction_id, rec.table_name, rec.row_id, rec.attribute_name, old, corrected, timestamp});
  }

  // Deletions go last so that edits on a row never target a removed row.
  std::erase_if(cell_edits, [&](const AuditEntry& e) {
    if (!deleted_rows.contains({e.table_name, e.row_id})) return false;
    spdlog::warn("correction for {} dropped: its row is deleted in the same import", e.extraction_id);
    return true;
  });
  result.audit = std::move(cell_edits);
  result.audit.insert(result.audit.end(), deletions.begin(), deletions.end());
  result.tables = replay_audit(tables, result.audit);
  return result;
}

}  // namespace cellguard
