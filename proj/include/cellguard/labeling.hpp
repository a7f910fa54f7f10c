#pragma once

// Ground-truth labels for extractions (1 = erroneous, 0 = correct): committee
// judging, human label ingestion and the seeded train / cell / re-cal split.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cellguard/corpus.hpp"
#include "cellguard/gateway.hpp"

namespace cellguard {

enum class LabelSource { kCommittee, kHuman };
std::string_view to_string(LabelSource s);

struct LabelEntry {
  std::string extraction_id;
  int label = 0;
  LabelSource source = LabelSource::kCommittee;

  bool operator==(const LabelEntry&) const = default;
};

// Keyed by extraction_id.
using LabelSet = std::map<std::string, LabelEntry>;

std::string serialize_labels(const LabelSet& labels);
LabelSet parse_labels(std::string_view text);
LabelSet load_labels(const std::filesystem::path& path);

struct CommitteeVerdict {
  int label = 1;
  std::size_t agree = 0;
  std::size_t disagree = 0;
  std::size_t failed = 0;
};

// Each member re-extracts the attribute independently. The candidate is
// correct only when a strict majority of responding members agree with it
// (ties are erroneous). More than half the committee failing is an error.
CommitteeVerdict committee_label(Gateway& gateway, const CellValue& candidate, const Chunk& chunk,
                                 const TableDef& table, const AttributeDef& attr,
                                 const std::vector<std::string>& committee);

// Human file lines: {extraction_id, label}. Ids must appear in `known_ids`.
LabelSet ingest_human_labels(std::string_view text, const std::vector<std::string>& known_ids);

// Human labels replace committee labels for the same id; the union is kept.
LabelSet merge_labels(const LabelSet& committee, const LabelSet& human);

struct CalibrationSplit {
  std::vector<std::string> train;
  std::vector<std::string> cell;
  std::vector<std::string> recal;
};

// Shuffles ids under `seed`, takes n_cls for training and splits the rest
// between cell construction (floor(cell_fraction * rest)) and re-calibration.
CalibrationSplit split_calibration(const LabelSet& labels, std::size_t n_cls, std::uint64_t seed,
                                   double cell_fraction = 0.5);

nlohmann::json to_json(const CalibrationSplit& s);
// Rejects a split whose slices overlap.
CalibrationSplit calibration_split_from_json(const nlohmann::json& j);

}  // namespace cellguard
