// discover, populate, label: the gateway-backed stages.

#include <map>
#include <memory>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/corpus.hpp"
#include "cellguard/error.hpp"
#include "cellguard/io.hpp"
#include "cellguard/labeling.hpp"
#include "cellguard/parallel.hpp"
#include "cellguard/population.hpp"
#include "cellguard/schema_discovery.hpp"
#include "cli_support.hpp"
#include "commands.hpp"

namespace cellguard::cli {
namespace {

namespace fs = std::filesystem;

struct DiscoverArgs {
  std::string corpus;
  std::string query;
  std::string out_dir;
  bool skip_phase1 = false;
  bool skip_repair = false;
  DiscoveryOptions options;
  GatewayFlags gateway;
};

int run_discover(const DiscoverArgs& a, const CLI::App& app) {
  RunManifest manifest(app);
  const auto corpus = parse_chunk_corpus(a.corpus);
  const auto query = parse_query(a.query);
  manifest.input(a.corpus);
  manifest.input(a.query);
  auto gateway = make_gateway(a.gateway);
  SchemaDiscoverer discoverer(*gateway, a.options);

  nlohmann::json report;
  SchemaState general{{}, SchemaKind::kGeneral};
  if (!a.skip_phase1) {
    auto p1 = discoverer.run_phase1(corpus);
    general = std::move(p1.schema);
    report["phase1_errors"] = p1.step_errors;
  }
  auto p2 = discoverer.run_phase2(corpus, query, general);
  SchemaState schema = std::move(p2.schema);
  report["phase2_errors"] = p2.step_errors;
  auto assignments = nlohmann::json::object();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    assignments[corpus[i].chunk_id] = p2.assignments[i] ? nlohmann::json(*p2.assignments[i]) : nlohmann::json(nullptr);
  }
  report["phase2_assignments"] = std::move(assignments);
  if (!a.skip_repair) {
    auto r = discoverer.repair(schema, query, corpus, general);
    schema = std::move(r.schema);
    report["repair"] = {{"sufficient", r.sufficient}, {"rounds_used", r.rounds_used}, {"step_errors", r.step_errors}};
    if (!r.sufficient) spdlog::warn("query schema still judged insufficient after {} repair round(s)", r.rounds_used);
  }

  const fs::path out(a.out_dir);
  if (!a.skip_phase1) {
    write_output(out / "general_schema.json", serialize_schema(general));
    manifest.output(out / "general_schema.json");
  }
  write_output(out / "query_schema.json", serialize_schema(schema));
  write_output(out / "discovery_report.json", io::to_document(report));
  manifest.output(out / "query_schema.json");
  manifest.output(out / "discovery_report.json");
  manifest.write_beside(out);
  spdlog::info("query schema: {} table(s), {} attribute(s)", schema.tables.size(), schema.attribute_count());
  return 0;
}

struct PopulateArgs {
  std::string schema;
  std::string corpus;
  std::string out_tables;
  std::string out_records;
  std::string mode = "one2one";
  PopulationOptions options;
  GatewayFlags gateway;
};

int run_populate(PopulateArgs a, const CLI::App& app) {
  RunManifest manifest(app);
  a.options.mode = mapping_mode_from_string(a.mode);
  const auto schema = load_schema(a.schema);
  const auto corpus = parse_chunk_corpus(a.corpus);
  manifest.input(a.schema);
  manifest.input(a.corpus);
  auto gateway = make_gateway(a.gateway);
  Populator populator(*gateway, a.options);
  const auto result = populator.populate(corpus, schema);
  for (const auto& e : result.errors) spdlog::warn("{}", e);

  write_output(a.out_tables, serialize_tables(result.tables));
  write_output(a.out_records, serialize_records(result.records));
  manifest.output(a.out_tables);
  manifest.output(a.out_records);
  manifest.note("extraction_errors", result.errors.size());
  manifest.write_beside(a.out_tables);
  std::size_t rows = 0;
  for (const auto& t : result.tables) rows += t.rows.size();
  spdlog::info("{} row(s) in {} table(s), {} extraction record(s), {} error(s)", rows, result.tables.size(),
               result.records.size(), result.errors.size());
  return 0;
}

struct LabelArgs {
  std::string records;
  std::string corpus;
  std::string schema;
  std::string human;
  std::string out;
  bool no_committee = false;
  std::size_t threads = 4;
  GatewayFlags gateway;
};

// Committee labels cover attribute values only; the committee re-extracts a
// value, which has no analogue for a table assignment.
LabelSet committee_labels(const LabelArgs& a, const std::vector<ExtractionRecord>& records) {
  const auto corpus = parse_chunk_corpus(a.corpus);
  const auto schema = load_schema(a.schema);
  std::map<std::string, const Chunk*> chunks;
  for (const auto& c : corpus) chunks.emplace(c.chunk_id, &c);

  std::vector<const ExtractionRecord*> targets;
  for (const auto& r : records) {
    if (r.kind == TargetKind::kAttributeValue) targets.push_back(&r);
  }
  auto gateway = make_gateway(a.gateway);
  std::vector<int> labels(targets.size());
  parallel_for(targets.size(), a.threads, [&](std::size_t i) {
    const auto& r = *targets[i];
    const auto chunk = chunks.find(r.chunk_id);
    if (chunk == chunks.end()) throw ValidationError(fmt::format("{}: unknown chunk {}", r.extraction_id, r.chunk_id));
    const TableDef* table = schema.find_table(r.table_name);
    const AttributeDef* attr = table ? table->find_attribute(*r.attribute_name) : nullptr;
    if (attr == nullptr) {
      throw ValidationError(fmt::format("{}: {}.{} is not in the schema", r.extraction_id, r.table_name,
                                        *r.attribute_name));
    }
    labels[i] = committee_label(*gateway, r.value, *chunk->second, *table, *attr, gateway->models().committee).label;
  });
  LabelSet out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    out[targets[i]->extraction_id] = {targets[i]->extraction_id, labels[i], LabelSource::kCommittee};
  }
  return out;
}

int run_label(const LabelArgs& a, const CLI::App& app) {
  RunManifest manifest(app);
  const auto records = load_records(a.records);
  manifest.input(a.records);
  if (a.no_committee && a.human.empty()) throw Error("--no-committee requires --human", ExitCode::kUsage);

  LabelSet committee;
  if (!a.no_committee) {
    if (a.corpus.empty() || a.schema.empty()) throw Error("committee labeling needs --corpus and --schema", ExitCode::kUsage);
    manifest.input(a.corpus);
    manifest.input(a.schema);
    committee = committee_labels(a, records);
  }
  LabelSet human;
  if (!a.human.empty()) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.extraction_id);
    human = ingest_human_labels(io::read_file(a.human), ids);
    manifest.input(a.human);
  }
  const auto labels = merge_labels(committee, human);
  write_output(a.out, serialize_labels(labels));
  manifest.output(a.out);
  std::size_t errors = 0;
  for (const auto& [_, e] : labels) errors += static_cast<std::size_t>(e.label);
  manifest.note("labels", {{"total", labels.size()}, {"erroneous", errors}, {"human", human.size()}});
  manifest.write_beside(a.out);
  spdlog::info("{} label(s), {} erroneous, {} from human review", labels.size(), errors, human.size());
  return 0;
}

}  // namespace

void register_pipeline_commands(CLI::App& root, std::vector<Command>& out) {
  {
    auto a = std::make_shared<DiscoverArgs>();
    auto* sub = root.add_subcommand("discover", "induce the query-specific schema from a chunk corpus");
    sub->add_option("--corpus", a->corpus, "chunk corpus (JSONL)")->required();
    sub->add_option("--query", a->query, "query file")->required();
    sub->add_option("--out-dir", a->out_dir, "directory for schema files and report")->required();
    sub->add_flag("--skip-phase1", a->skip_phase1, "run Phase II against an empty general schema");
    sub->add_flag("--skip-repair", a->skip_repair, "omit the verifier repair rounds");
    sub->add_option("--repair-rounds", a->options.repair_rounds)->check(CLI::NonNegativeNumber);
    sub->add_option("--parse-retries", a->options.parse_retries)->check(CLI::NonNegativeNumber);
    add_gateway_flags(*sub, a->gateway);
    out.push_back({sub, [a, sub] { return run_discover(*a, *sub); }});
  }
  {
    auto a = std::make_shared<PopulateArgs>();
    auto* sub = root.add_subcommand("populate", "fill the query tables chunk by chunk");
    sub->add_option("--schema", a->schema, "query schema")->required();
    sub->add_option("--corpus", a->corpus, "chunk corpus (JSONL)")->required();
    sub->add_option("--out-tables", a->out_tables)->required();
    sub->add_option("--out-records", a->out_records)->required();
    sub->add_option("--mode", a->mode, "chunk-to-row mapping")
        ->check(CLI::IsMember({"one2one", "one2many", "merge"}));
    sub->add_option("--retries", a->options.retries, "re-prompts after a malformed reply")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--threads", a->options.threads)->check(CLI::PositiveNumber);
    add_gateway_flags(*sub, a->gateway);
    out.push_back({sub, [a, sub] { return run_populate(*a, *sub); }});
  }
  {
    auto a = std::make_shared<LabelArgs>();
    auto* sub = root.add_subcommand("label", "committee and human labels for extractions");
    sub->add_option("--records", a->records, "extraction records (JSONL)")->required();
    sub->add_option("--corpus", a->corpus);
    sub->add_option("--schema", a->schema);
    sub->add_option("--human", a->human, "human labels {extraction_id, label}; override the committee")
        ;
    sub->add_flag("--no-committee", a->no_committee, "use human labels only");
    sub->add_option("--threads", a->threads)->check(CLI::PositiveNumber);
    sub->add_option("--out", a->out)->required();
    add_gateway_flags(*sub, a->gateway);
    out.push_back({sub, [a, sub] { return run_label(*a, *sub); }});
  }
}

}  // namespace cellguard::cli
