#pragma once

// Cell-level metrics and the value normalization shared with labeling.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cellguard/corpus.hpp"
#include "cellguard/detectors.hpp"

namespace cellguard {

// Trim, casefold, collapse whitespace; numbers (with currency symbols and
// thousands separators removed) print in shortest round-trip form; common
// date spellings become YYYY-MM-DD. Anything else is returned as the
// whitespace- and case-normalized string.
std::string normalize_value(std::string_view raw);

inline constexpr double kNumericRelTol = 1e-6;

// Equality after normalization. Two numeric values match within a relative
// tolerance of 1e-6. Null matches only null.
bool values_match(std::string_view a, std::string_view b);
bool cells_match(const CellValue& a, const CellValue& b);

struct PopulationScore {
  double accuracy = 1.0;
  std::size_t truth_cells = 0;
  std::size_t missing = 0;
  std::size_t incorrect = 0;
};

// Key attributes per table name (composite keys allowed). Truth rows are
// matched to extracted rows of the same table whose key cells all match
// (first unmatched extracted row wins).
// Truth cells are the non-null cells of truth rows; a truth cell is missing
// when the matched extracted cell is null or absent, and incorrect when the
// values differ.
PopulationScore acc_pop(const TableSet& extracted, const TableSet& truth,
                        const std::map<std::string, std::vector<std::string>>& key_by_table);

// flags: extraction_id -> flagged for review; labels: extraction_id -> 1 if
// erroneous. FP/(FP+TN) over correct items; null when there are none.
std::optional<double> fpr_pop(const std::map<std::string, bool>& flagged, const std::map<std::string, int>& labels);

// Fraction of label-1 items whose set contains 1; null when none are errors.
std::optional<double> empirical_coverage(std::span<const PredictionSet> sets, std::span<const int> labels);

double mean_set_size(std::span<const PredictionSet> sets);

}  // namespace cellguard
