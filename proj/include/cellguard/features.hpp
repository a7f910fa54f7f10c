#pragma once

// Hidden-state dumps and the per-layer mean-max pooled representation.
//
// Dump file: one JSON object per line,
//   {"extraction_id": str, "layer": int, "vectors": [[float, ...], ...]}
// where `layer` is the position in the configured layer list (0-based) and
// `vectors` holds one row per output token. An optional first line
//   {"header": {...}}
// carries producer metadata (model id, capture point, d, layer list).

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cellguard {

struct HiddenDump {
  std::string extraction_id;
  int layer = 0;
  std::size_t tokens = 0;  // m
  std::size_t dim = 0;     // d
  std::vector<float> values;  // row-major m x d

  std::span<const float> token(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

struct DumpSet {
  std::optional<nlohmann::json> header;
  std::size_t dim = 0;
  std::vector<HiddenDump> dumps;
};

DumpSet parse_hidden_dump(const std::filesystem::path& path);
DumpSet parse_hidden_dump_text(std::string_view text);
std::string serialize_hidden_dumps(const DumpSet& set);

struct PooledFeature {
  std::string extraction_id;
  int layer = 0;
  std::vector<float> vector;  // length 2d: mean half, then max half
};

PooledFeature pool_mean_max(const HiddenDump& dump);

// extraction_id -> per-layer pooled vectors, indexed by layer position.
using FeatureTable = std::map<std::string, std::vector<std::vector<float>>>;

// Pools every dump and groups by extraction id. Every id must cover layers
// 0..num_layers-1 exactly; num_layers is inferred from the largest layer seen.
FeatureTable pool_features(const DumpSet& dumps);

std::size_t layer_count(const FeatureTable& features);

}  // namespace cellguard
