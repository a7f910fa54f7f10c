#pragma once

// Two-phase one-pass schema induction over a chunk corpus:
//   Phase I   folds a general-schema prompt over every chunk;
//   Phase II  folds a query-aware prompt that may add at most one table or
//             extend one table per chunk;
//   repair    asks a verifier whether the query schema suffices and re-runs
//             Phase II for a bounded number of extra rounds if not.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cellguard/corpus.hpp"
#include "cellguard/gateway.hpp"

namespace cellguard {

struct DiscoveryOptions {
  int parse_retries = 2;       // re-prompts after an unparseable reply
  int contract_retries = 1;    // re-prompts after a Phase II contract violation
  int repair_rounds = 2;       // R
};

struct StepOutcome {
  SchemaState state;
  std::optional<std::string> assignment;
  bool skipped = false;        // chunk left the state untouched because of an error
  std::string error;
};

struct PhaseResult {
  SchemaState schema;
  std::vector<std::optional<std::string>> assignments;  // per chunk, corpus order
  std::vector<std::string> step_errors;                 // "chunk_id: message"
};

struct RepairResult {
  SchemaState schema;
  bool sufficient = false;
  int rounds_used = 0;
  std::vector<std::string> step_errors;
};

class SchemaDiscoverer {
 public:
  SchemaDiscoverer(Gateway& gateway, DiscoveryOptions options = {});

  StepOutcome phase1_step(const SchemaState& state, const Chunk& chunk);
  PhaseResult run_phase1(const ChunkCorpus& corpus);

  // `hint` carries verifier feedback during repair rounds; empty otherwise.
  StepOutcome phase2_step(const SchemaState& state, const Chunk& chunk, const QuerySpec& query,
                          const SchemaState& general, const std::string& hint = {});
  PhaseResult run_phase2(const ChunkCorpus& corpus, const QuerySpec& query, const SchemaState& general,
                         SchemaState initial = {{}, SchemaKind::kQuerySpecific}, const std::string& hint = {});

  struct Verdict {
    bool sufficient = false;
    std::string missing;
  };
  Verdict verify(const SchemaState& schema, const QuerySpec& query);

  RepairResult repair(const SchemaState& schema, const QuerySpec& query, const ChunkCorpus& corpus,
                      const SchemaState& general);

 private:
  Gateway& gateway_;
  DiscoveryOptions options_;
};

// trim, collapse whitespace, split camelCase, lower-case, non-alphanumerics -> '_'.
std::string canonical_attribute_name(std::string_view name);

struct SchemaMetrics {
  double recall = 0.0;
  double precision = 0.0;
  bool sufficient = false;
  std::size_t matched = 0;
  std::size_t truth_attributes = 0;
  std::size_t discovered_attributes = 0;
};

// Attribute-level matching on canonical names, as a multiset intersection
// (a join key present in two tables counts twice). `aliases` maps a canonical
// discovered name to the canonical truth name it stands for.
SchemaMetrics schema_metrics(const SchemaState& discovered, const SchemaState& truth,
                             const std::map<std::string, std::string>& aliases = {});

}  // namespace cellguard
