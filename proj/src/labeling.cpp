#include "cellguard/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/error.hpp"
#include "cellguard/evaluation.hpp"
#include "cellguard/io.hpp"
#include "cellguard/parallel.hpp"

namespace cellguard {

std::string_view to_string(LabelSource s) { return s == LabelSource::kHuman ? "human" : "committee"; }

namespace {

LabelSource label_source_from_string(std::string_view s) {
  if (s == "human") return LabelSource::kHuman;
  if (s == "committee") return LabelSource::kCommittee;
  throw ParseError(fmt::format("unknown label source '{}'", s));
}

int checked_label(const nlohmann::json& j) {
  const int y = j.get<int>();
  if (y != 0 && y != 1) throw ValidationError(fmt::format("label {} is not 0 or 1", y));
  return y;
}

}  // namespace

std::string serialize_labels(const LabelSet& labels) {
  std::vector<nlohmann::json> lines;
  for (const auto& [id, e] : labels) {
    lines.push_back({{"extraction_id", id}, {"label", e.label}, {"source", to_string(e.source)}});
  }
  return io::to_json_lines(lines);
}

LabelSet parse_labels(std::string_view text) {
  LabelSet out;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& j) {
    try {
      LabelEntry e{j.at("extraction_id").get<std::string>(), checked_label(j.at("label")),
                   label_source_from_string(j.value("source", "committee"))};
      if (!out.emplace(e.extraction_id, e).second) {
        throw ValidationError(fmt::format("duplicate label for {}", e.extraction_id));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("line {}: malformed label record: {}", line, e.what()));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("line {}: {}", line, e.what()));
    }
  });
  return out;
}

LabelSet load_labels(const std::filesystem::path& path) { return parse_labels(io::read_file(path)); }

CommitteeVerdict committee_label(Gateway& gateway, const CellValue& candidate, const Chunk& chunk,
                                 const TableDef& table, const AttributeDef& attr,
                                 const std::vector<std::string>& committee) {
  if (committee.empty()) throw ValidationError("committee must have at least one member");
  const auto& tpl = prompt_template(TemplateId::kCommitteeJudge);
  const auto schema_text = to_json(table).dump();

  // nullopt outer = member failed; inner CellValue = the member's answer.
  std::vector<std::optional<CellValue>> answers(committee.size());
  parallel_for(committee.size(), committee.size(), [&](std::size_t m) {
    PromptRequest req{TemplateId::kCommitteeJudge,
                      {{"Document", chunk.text}, {"Schema", schema_text}, {"Target Attribute", attr.name}},
                      committee[m],
                      0.0};
    try {
      const auto fields = parse_structured_reply(gateway.complete(req), tpl.outputs);
      answers[m] = field_as_optional_string(fields.at("Value"));
    } catch (const ReplayMissError&) {
      throw;
    } catch (const Error& e) {
      spdlog::warn("committee member {} skipped for {}.{} on chunk {}: {}", committee[m], table.name, attr.name,
                   chunk.chunk_id, e.what());
    }
  });

  CommitteeVerdict v;
  for (const auto& a : answers) {
    if (!a) {
      ++v.failed;
    } else if (cells_match(*a, candidate)) {
      ++v.agree;
    } else {
      ++v.disagree;
    }
  }
  if (2 * v.failed > committee.size()) {
    throw GatewayError(fmt::format("{} of {} committee members failed on chunk {} attribute {}", v.failed,
                                   committee.size(), chunk.chunk_id, attr.name));
  }
  v.label = 2 * v.agree > v.agree + v.disagree ? 0 : 1;
  return v;
}

LabelSet ingest_human_labels(std::string_view text, const std::vector<std::string>& known_ids) {
  const std::set<std::string> known(known_ids.begin(), known_ids.end());
  LabelSet out;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& j) {
    try {
      LabelEntry e{j.at("extraction_id").get<std::string>(), checked_label(j.at("label")), LabelSource::kHuman};
      if (!known.contains(e.extraction_id)) {
        throw ValidationError(fmt::format("unknown extraction_id {}", e.extraction_id));
      }
      out[e.extraction_id] = e;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("line {}: malformed human label: {}", line, e.what()));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("line {}: {}", line, e.what()));
    }
  });
  return out;
}

LabelSet merge_labels(const LabelSet& committee, const LabelSet& human) {
  LabelSet out = committee;
  for (const auto& [id, e] : human) out[id] = e;
  return out;
}

CalibrationSplit split_calibration(const LabelSet& labels, std::size_t n_cls, std::uint64_t seed,
                                   double cell_fraction) {
  if (labels.size() <= n_cls + 1) {
    throw ValidationError(
        fmt::format("{} labeled examples cannot cover {} training examples plus a calibration set", labels.size(),
                    n_cls));
  }
  std::vector<std::string> ids;
  ids.reserve(labels.size());
  for (const auto& [id, _] : labels) ids.push_back(id);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  CalibrationSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_cls));
  const std::size_t rest = ids.size() - n_cls;
  const auto n_cell = static_cast<std::size_t>(std::floor(cell_fraction * static_cast<double>(rest)));
  if (n_cell == 0 || n_cell == rest) {
    throw ValidationError("calibration split leaves the cell or re-calibration subset empty");
  }
  auto mid = ids.begin() + static_cast<std::ptrdiff_t>(n_cls + n_cell);
  s.cell.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_cls), mid);
  s.recal.assign(mid, ids.end());

  std::size_t positives = 0;
  for (const auto& id : s.train) positives += static_cast<std::size_t>(labels.at(id).label);
  if (positives == 0 || positives == s.train.size()) {
    throw ValidationError(
        "training slice contains a single class; label more examples or resample with a different seed");
  }
  return s;
}

nlohmann::json to_json(const CalibrationSplit& s) {
  return {{"train", s.train}, {"cell", s.cell}, {"recal", s.recal}};
}

CalibrationSplit calibration_split_from_json(const nlohmann::json& j) {
  CalibrationSplit s;
  try {
    s.train = j.at("train").get<std::vector<std::string>>();
    s.cell = j.at("cell").get<std::vector<std::string>>();
    s.recal = j.at("recal").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("malformed calibration split: {}", e.what()));
  }
  std::set<std::string> seen;
  for (const auto* slice : {&s.train, &s.cell, &s.recal}) {
    for (const auto& id : *slice) {
      if (!seen.insert(id).second) throw ValidationError(fmt::format("{} appears in two split slices", id));
    }
  }
  return s;
}

}  // namespace cellguard
