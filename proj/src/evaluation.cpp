#include "cellguard/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <regex>

#include <fmt/format.h>

#include "cellguard/error.hpp"

namespace cellguard {
namespace {

std::string collapse_and_fold(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (unsigned char ch : raw) {
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

// Removes a leading or trailing currency marker (ASCII symbols, UTF-8 symbols,
// ISO-style codes) and surrounding spaces.
std::string strip_currency(std::string s) {
  static const std::array<std::string_view, 10> kMarkers = {"$", "\xE2\x82\xAC", "\xC2\xA3", "\xC2\xA5", "usd",
                                                             "eur", "gbp", "jpy", "rmb", "cny"};
  auto trim = [](std::string& v) {
    while (!v.empty() && v.front() == ' ') v.erase(v.begin());
    while (!v.empty() && v.back() == ' ') v.pop_back();
  };
  for (auto m : kMarkers) {
    if (s.starts_with(m)) {
      s.erase(0, m.size());
      trim(s);
      break;
    }
  }
  // Sign before the symbol: "-$5".
  if (s.size() > 1 && (s[0] == '-' || s[0] == '+')) {
    for (auto m : kMarkers) {
      if (std::string_view(s).substr(1).starts_with(m)) {
        s.erase(1, m.size());
        break;
      }
    }
  }
  for (auto m : kMarkers) {
    if (s.ends_with(m)) {
      s.erase(s.size() - m.size());
      trim(s);
      break;
    }
  }
  return s;
}

std::optional<double> parse_number(const std::string& folded) {
  static const std::regex kGrouped(R"(^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$)");
  static const std::regex kPlain(R"(^[+-]?(\d+(\.\d*)?|\.\d+)(e[+-]?\d+)?$)");
  std::string s = strip_currency(folded);
  if (std::regex_match(s, kGrouped)) {
    s.erase(std::remove(s.begin(), s.end(), ','), s.end());
  } else if (!std::regex_match(s, kPlain)) {
    return std::nullopt;
  }
  if (!s.empty() && s[0] == '+') s.erase(0, 1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

int month_from_name(const std::string& name) {
  static const std::array<std::string_view, 12> kMonths = {"jan", "feb", "mar", "apr", "may", "jun",
                                                           "jul", "aug", "sep", "oct", "nov", "dec"};
  if (name.size() < 3) return 0;
  for (std::size_t i = 0; i < kMonths.size(); ++i) {
    if (name.compare(0, 3, kMonths[i]) == 0) {
      static const std::array<std::string_view, 12> kFull = {"january", "february", "march",     "april",
                                                             "may",     "june",     "july",      "august",
                                                             "september", "october", "november", "december"};
      if (name.size() == 3 || name == kFull[i] || (i == 8 && name == "sept")) return static_cast<int>(i) + 1;
      return 0;
    }
  }
  return 0;
}

bool valid_date(int y, int m, int d) {
  static const std::array<int, 12> kDays = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (y < 1 || m < 1 || m > 12 || d < 1 || d > kDays[static_cast<std::size_t>(m - 1)]) return false;
  if (m == 2 && d == 29) return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
  return true;
}

std::optional<std::string> parse_date(const std::string& s) {
  static const std::regex kIso(R"(^(\d{4})[-/.](\d{1,2})[-/.](\d{1,2})$)");
  static const std::regex kUs(R"(^(\d{1,2})/(\d{1,2})/(\d{4})$)");
  static const std::regex kMonthFirst(R"(^([a-z]+)\.? (\d{1,2})(?:st|nd|rd|th)?,? (\d{4})$)");
  static const std::regex kDayFirst(R"(^(\d{1,2})(?:st|nd|rd|th)? ([a-z]+)\.?,? (\d{4})$)");
  std::smatch m;
  int y = 0, mo = 0, d = 0;
  if (std::regex_match(s, m, kIso)) {
    y = std::stoi(m[1]);
    mo = std::stoi(m[2]);
    d = std::stoi(m[3]);
  } else if (std::regex_match(s, m, kUs)) {
    mo = std::stoi(m[1]);
    d = std::stoi(m[2]);
    y = std::stoi(m[3]);
  } else if (std::regex_match(s, m, kMonthFirst)) {
    mo = month_from_name(m[1]);
    d = std::stoi(m[2]);
    y = std::stoi(m[3]);
  } else if (std::regex_match(s, m, kDayFirst)) {
    d = std::stoi(m[1]);
    mo = month_from_name(m[2]);
    y = std::stoi(m[3]);
  } else {
    return std::nullopt;
  }
  if (!valid_date(y, mo, d)) return std::nullopt;
  return fmt::format("{:04}-{:02}-{:02}", y, mo, d);
}

}  // namespace

std::string normalize_value(std::string_view raw) {
  std::string folded = collapse_and_fold(raw);
  if (auto date = parse_date(folded)) return *date;
  if (auto num = parse_number(folded)) return fmt::format("{}", *num == 0.0 ? 0.0 : *num);
  return folded;
}

bool values_match(std::string_view a, std::string_view b) {
  const std::string na = normalize_value(a);
  const std::string nb = normalize_value(b);
  if (na == nb) return true;
  const auto xa = parse_number(na);
  const auto xb = parse_number(nb);
  if (!xa || !xb) return false;
  const double scale = std::max(std::abs(*xa), std::abs(*xb));
  return std::abs(*xa - *xb) <= kNumericRelTol * scale;
}

bool cells_match(const CellValue& a, const CellValue& b) {
  if (!a || !b) return !a && !b;
  return values_match(*a, *b);
}

PopulationScore acc_pop(const TableSet& extracted, const TableSet& truth,
                        const std::map<std::string, std::vector<std::string>>& key_by_table) {
  PopulationScore score;
  for (const auto& tt : truth) {
    const auto key_it = key_by_table.find(tt.table_name);
    if (key_it == key_by_table.end()) {
      throw ValidationError(fmt::format("no matching key configured for table {}", tt.table_name));
    }
    const auto& keys = key_it->second;
    if (keys.empty()) throw ValidationError(fmt::format("empty matching key for table {}", tt.table_name));
    const ExtractedTable* et = find_table(extracted, tt.table_name);
    std::vector<bool> used(et ? et->rows.size() : 0, false);

    for (const auto& truth_row : tt.rows) {
      for (const auto& key : keys) {
        const auto tk = truth_row.cells.find(key);
        if (tk == truth_row.cells.end() || !tk->second) {
          throw ValidationError(fmt::format("truth row {} of table {} has no value for key {}", truth_row.row_id,
                                            tt.table_name, key));
        }
      }
      const auto same_key = [&](const ExtractedRow& row) {
        return std::all_of(keys.begin(), keys.end(), [&](const std::string& key) {
          const auto ek = row.cells.find(key);
          return ek != row.cells.end() && cells_match(ek->second, truth_row.cells.at(key));
        });
      };
      const ExtractedRow* match = nullptr;
      if (et) {
        for (std::size_t i = 0; i < et->rows.size() && !match; ++i) {
          if (used[i] || !same_key(et->rows[i])) continue;
          used[i] = true;
          match = &et->rows[i];
        }
      }
      for (const auto& [attr, truth_value] : truth_row.cells) {
        if (!truth_value) continue;
        ++score.truth_cells;
        const CellValue* got = nullptr;
        if (match) {
          const auto it = match->cells.find(attr);
          if (it != match->cells.end()) got = &it->second;
        }
        if (!got || !*got) {
          ++score.missing;
        } else if (!cells_match(*got, truth_value)) {
          ++score.incorrect;
        }
      }
    }
  }
  if (score.truth_cells > 0) {
    score.accuracy = 1.0 - static_cast<double>(score.missing + score.incorrect) / static_cast<double>(score.truth_cells);
  }
  return score;
}

std::optional<double> fpr_pop(const std::map<std::string, bool>& flagged, const std::map<std::string, int>& labels) {
  std::size_t fp = 0, tn = 0;
  for (const auto& [id, is_flagged] : flagged) {
    const auto it = labels.find(id);
    if (it == labels.end()) {
      if (is_flagged) throw ValidationError(fmt::format("flagged item {} has no truth label", id));
      continue;
    }
    if (it->second != 0) continue;
    (is_flagged ? fp : tn) += 1;
  }
  if (fp + tn == 0) return std::nullopt;
  return static_cast<double>(fp) / static_cast<double>(fp + tn);
}

std::optional<double> empirical_coverage(std::span<const PredictionSet> sets, std::span<const int> labels) {
  if (sets.size() != labels.size()) {
    throw ValidationError(fmt::format("{} prediction sets but {} labels", sets.size(), labels.size()));
  }
  std::size_t errors = 0, covered = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (labels[i] != 1) continue;
    ++errors;
    if (sets[i].has_erroneous) ++covered;
  }
  if (errors == 0) return std::nullopt;
  return static_cast<double>(covered) / static_cast<double>(errors);
}

double mean_set_size(std::span<const PredictionSet> sets) {
  if (sets.empty()) throw ValidationError("mean set size of an empty batch");
  std::size_t total = 0;
  for (const auto& s : sets) total += s.size();
  return static_cast<double>(total) / static_cast<double>(sets.size());
}

}  // namespace cellguard
