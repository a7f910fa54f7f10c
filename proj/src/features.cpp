#include "cellguard/features.hpp"

#include <algorithm>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "cellguard/error.hpp"
#include "cellguard/io.hpp"

namespace cellguard {

DumpSet parse_hidden_dump_text(std::string_view text) {
  DumpSet set;
  std::set<std::pair<std::string, int>> seen;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& obj) {
    if (obj.contains("header")) {
      if (line != 1) throw ParseError(fmt::format("line {}: header must be the first record", line));
      set.header = obj["header"];
      return;
    }
    HiddenDump d;
    try {
      d.extraction_id = obj.at("extraction_id").get<std::string>();
      d.layer = obj.at("layer").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("line {}: {}", line, e.what()));
    }
    if (d.layer < 0) throw ValidationError(fmt::format("line {}: negative layer index", line));
    const auto it = obj.find("vectors");
    if (it == obj.end() || !it->is_array()) {
      throw ParseError(fmt::format("line {}: vectors must be a list of rows", line));
    }
    d.tokens = it->size();
    if (d.tokens == 0) {
      throw ValidationError(fmt::format("line {}: dump {} layer {} has no token rows", line, d.extraction_id, d.layer));
    }
    for (std::size_t r = 0; r < d.tokens; ++r) {
      const auto& row = (*it)[r];
      if (!row.is_array()) throw ParseError(fmt::format("line {}: row {} is not a list", line, r));
      if (r == 0) {
        d.dim = row.size();
        if (d.dim == 0) throw ValidationError(fmt::format("line {}: empty token vector", line));
        d.values.reserve(d.tokens * d.dim);
      } else if (row.size() != d.dim) {
        throw ValidationError(fmt::format("line {}: ragged rows in dump {} layer {} ({} vs {} values)", line,
                                          d.extraction_id, d.layer, row.size(), d.dim));
      }
      for (const auto& v : row) {
        if (!v.is_number()) throw ParseError(fmt::format("line {}: non-numeric hidden-state value", line));
        d.values.push_back(v.get<float>());
      }
    }
    if (set.dim == 0) {
      set.dim = d.dim;
    } else if (d.dim != set.dim) {
      throw ValidationError(
          fmt::format("line {}: hidden size mismatch, d={} but earlier records have d={}", line, d.dim, set.dim));
    }
    if (!seen.emplace(d.extraction_id, d.layer).second) {
      throw ValidationError(
          fmt::format("line {}: duplicate dump for extraction {} layer {}", line, d.extraction_id, d.layer));
    }
    set.dumps.push_back(std::move(d));
  });
  return set;
}

DumpSet parse_hidden_dump(const std::filesystem::path& path) {
  try {
    return parse_hidden_dump_text(io::read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string serialize_hidden_dumps(const DumpSet& set) {
  std::vector<nlohmann::json> lines;
  if (set.header) lines.push_back({{"header", *set.header}});
  for (const auto& d : set.dumps) {
    auto rows = nlohmann::json::array();
    for (std::size_t r = 0; r < d.tokens; ++r) {
      auto t = d.token(r);
      rows.push_back(std::vector<float>(t.begin(), t.end()));
    }
    lines.push_back({{"extraction_id", d.extraction_id}, {"layer", d.layer}, {"vectors", std::move(rows)}});
  }
  return io::to_json_lines(lines);
}

PooledFeature pool_mean_max(const HiddenDump& dump) {
  PooledFeature out{dump.extraction_id, dump.layer, std::vector<float>(2 * dump.dim)};
  for (std::size_t j = 0; j < dump.dim; ++j) {
    double sum = 0.0;
    float mx = dump.values[j];
    for (std::size_t i = 0; i < dump.tokens; ++i) {
      const float v = dump.values[i * dump.dim + j];
      sum += v;
      mx = std::max(mx, v);
    }
    out.vector[j] = static_cast<float>(sum / static_cast<double>(dump.tokens));
    out.vector[dump.dim + j] = mx;
  }
  return out;
}

FeatureTable pool_features(const DumpSet& dumps) {
  int max_layer = -1;
  for (const auto& d : dumps.dumps) max_layer = std::max(max_layer, d.layer);
  const auto layers = static_cast<std::size_t>(max_layer + 1);

  FeatureTable table;
  for (const auto& d : dumps.dumps) {
    auto& per_layer = table[d.extraction_id];
    per_layer.resize(layers);
    per_layer[static_cast<std::size_t>(d.layer)] = pool_mean_max(d).vector;
  }
  for (const auto& [id, per_layer] : table) {
    for (std::size_t l = 0; l < per_layer.size(); ++l) {
      if (per_layer[l].empty()) {
        throw ValidationError(fmt::format("extraction {} has no dump for layer {}", id, l));
      }
    }
  }
  return table;
}

std::size_t layer_count(const FeatureTable& features) {
  return features.empty() ? 0 : features.begin()->second.size();
}

}  // namespace cellguard
