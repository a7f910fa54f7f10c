// review export|import|replay and evaluate.

#include <map>
#include <memory>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/detectors.hpp"
#include "cellguard/error.hpp"
#include "cellguard/evaluation.hpp"
#include "cellguard/io.hpp"
#include "cellguard/labeling.hpp"
#include "cellguard/population.hpp"
#include "cellguard/review.hpp"
#include "cli_support.hpp"
#include "commands.hpp"

namespace cellguard::cli {
namespace {

struct ExportArgs {
  std::string tables;
  std::string records;
  std::string detections;
  std::string corpus;
  std::string out;
};

int run_export(const ExportArgs& a, const CLI::App& app) {
  RunManifest manifest(app);
  const auto tables = load_tables(a.tables);
  const auto records = load_records(a.records);
  const auto detections = parse_detections(io::read_file(a.detections));
  const auto corpus = parse_chunk_corpus(a.corpus);
  for (const auto& p : {a.tables, a.records, a.detections, a.corpus}) manifest.input(p);

  const auto queue = build_queue(tables, records, detections, corpus);
  write_output(a.out, serialize_queue(queue));
  manifest.output(a.out);
  manifest.note("queued", queue.size());
  manifest.write_beside(a.out);
  spdlog::info("{} cell(s) queued for review", queue.size());
  return 0;
}

struct ImportArgs {
  std::string tables;
  std::string records;
  std::string queue;
  std::string out_tables;
  std::string out_audit;
};

int run_import(const ImportArgs& a, const CLI::App& app) {
  RunManifest manifest(app);
  const auto tables = load_tables(a.tables);
  const auto records = load_records(a.records);
  const auto reviewed = parse_queue(io::read_file(a.queue));
  for (const auto& p : {a.tables, a.records, a.queue}) manifest.input(p);

  const auto result = import_corrections(tables, records, reviewed, audit_timestamp());
  write_output(a.out_tables, serialize_tables(result.tables));
  write_output(a.out_audit, serialize_audit(result.audit));
  manifest.output(a.out_tables);
  manifest.output(a.out_audit);
  manifest.note("review", {{"applied", result.audit.size()}, {"open", result.open}});
  manifest.write_beside(a.out_tables);
  spdlog::info("{} correction(s) applied, {} item(s) still open", result.audit.size(), result.open);
  return 0;
}

struct ReplayArgs {
  std::string tables;
  std::string audit;
  std::string out;
};

int run_replay(const ReplayArgs& a, const CLI::App& app) {
  RunManifest manifest(app);
  const auto tables = load_tables(a.tables);
  const auto audit = parse_audit(io::read_file(a.audit));
  manifest.input(a.tables);
  manifest.input(a.audit);
  write_output(a.out, serialize_tables(replay_audit(tables, audit)));
  manifest.output(a.out);
  manifest.write_beside(a.out);
  return 0;
}

struct EvaluateArgs {
  std::string tables;
  std::string truth;
  std::string keys;
  std::string reviewed_tables;
  std::string detections;
  std::string labels;
  std::string model;
  std::string out;
};

std::map<std::string, std::vector<std::string>> load_keys(const std::string& path) {
  try {
    return io::read_json(path).get<std::map<std::string, std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("{}: key file must map table names to attribute lists: {}", path, e.what()));
  }
}

nlohmann::json score_json(const PopulationScore& s) {
  return {{"accuracy", s.accuracy}, {"truth_cells", s.truth_cells}, {"missing", s.missing}, {"incorrect", s.incorrect}};
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

int run_evaluate(const EvaluateArgs& a, const CLI::App& app) {
  RunManifest manifest(app);
  const auto tables = load_tables(a.tables);
  const auto truth = load_tables(a.truth);
  const auto keys = load_keys(a.keys);
  for (const auto& p : {a.tables, a.truth, a.keys}) manifest.input(p);

  nlohmann::json report;
  report["acc_pop"] = score_json(acc_pop(tables, truth, keys));
  report["acc_pop_post_review"] = nullptr;
  if (!a.reviewed_tables.empty()) {
    manifest.input(a.reviewed_tables);
    report["acc_pop_post_review"] = score_json(acc_pop(load_tables(a.reviewed_tables), truth, keys));
  }

  report["fpr_pop"] = nullptr;
  report["empirical_coverage"] = nullptr;
  report["mean_set_size"] = nullptr;
  if (!a.detections.empty()) {
    const auto detections = parse_detections(io::read_file(a.detections));
    manifest.input(a.detections);
    std::vector<PredictionSet> sets;
    for (const auto& d : detections) sets.push_back(d.prediction_set);
    if (!sets.empty()) report["mean_set_size"] = mean_set_size(sets);
    if (!a.labels.empty()) {
      const auto labels = load_labels(a.labels);
      manifest.input(a.labels);
      std::map<std::string, bool> flagged;
      std::map<std::string, int> truth_labels;
      std::vector<PredictionSet> labeled_sets;
      std::vector<int> labeled_y;
      for (const auto& d : detections) {
        const auto it = labels.find(d.extraction_id);
        if (it == labels.end()) continue;
        flagged[d.extraction_id] = d.decision == Decision::kReview;
        truth_labels[d.extraction_id] = it->second.label;
        labeled_sets.push_back(d.prediction_set);
        labeled_y.push_back(it->second.label);
      }
      report["fpr_pop"] = optional_json(fpr_pop(flagged, truth_labels));
      report["empirical_coverage"] = optional_json(empirical_coverage(labeled_sets, labeled_y));
      report["labeled_detections"] = labeled_y.size();
    }
  }

  report["parameters"] = nullptr;
  if (!a.model.empty()) {
    const auto p = load_partition(a.model);
    manifest.input(a.model);
    report["parameters"] = {{"alpha", p.alpha},
                            {"lambda", p.lambda ? nlohmann::json(*p.lambda) : nlohmann::json(nullptr)},
                            {"k_requested", p.requested_k},
                            {"k_effective", p.centroids.size()},
                            {"mode", to_string(p.mode)},
                            {"seed", p.seed}};
  }
  write_output(a.out, io::to_document(report));
  manifest.output(a.out);
  manifest.write_beside(a.out);
  spdlog::info("acc_pop {:.4f}", report["acc_pop"]["accuracy"].get<double>());
  return 0;
}

}  // namespace

void register_review_commands(CLI::App& root, std::vector<Command>& out) {
  auto* review = root.add_subcommand("review", "batch human review of flagged cells");
  review->require_subcommand(1);
  {
    auto a = std::make_shared<ExportArgs>();
    auto* sub = review->add_subcommand("export", "write the review queue");
    sub->add_option("--tables", a->tables)->required();
    sub->add_option("--records", a->records)->required();
    sub->add_option("--detections", a->detections)->required();
    sub->add_option("--corpus", a->corpus)->required();
    sub->add_option("--out", a->out)->required();
    out.push_back({sub, [a, sub] { return run_export(*a, *sub); }});
  }
  {
    auto a = std::make_shared<ImportArgs>();
    auto* sub = review->add_subcommand("import", "apply a reviewed queue; SOURCE_DATE_EPOCH pins audit times");
    sub->add_option("--tables", a->tables)->required();
    sub->add_option("--records", a->records)->required();
    sub->add_option("--queue", a->queue, "queue with corrected_value filled in")->required();
    sub->add_option("--out-tables", a->out_tables)->required();
    sub->add_option("--out-audit", a->out_audit)->required();
    out.push_back({sub, [a, sub] { return run_import(*a, *sub); }});
  }
  {
    auto a = std::make_shared<ReplayArgs>();
    auto* sub = review->add_subcommand("replay", "re-apply an audit log to pre-review tables");
    sub->add_option("--tables", a->tables)->required();
    sub->add_option("--audit", a->audit)->required();
    sub->add_option("--out", a->out)->required();
    out.push_back({sub, [a, sub] { return run_replay(*a, *sub); }});
  }
  {
    auto a = std::make_shared<EvaluateArgs>();
    auto* sub = root.add_subcommand("evaluate", "population accuracy, FPR, coverage and set size");
    sub->add_option("--tables", a->tables, "extracted tables before review")->required();
    sub->add_option("--truth", a->truth, "ground-truth tables")->required();
    sub->add_option("--keys", a->keys, "JSON map of table name to key attributes")->required();
    sub->add_option("--reviewed-tables", a->reviewed_tables, "tables after review import");
    sub->add_option("--detections", a->detections);
    sub->add_option("--labels", a->labels, "truth labels for FPR and coverage");
    sub->add_option("--model", a->model, "cell-partition model whose parameters are reported");
    sub->add_option("--out", a->out)->required();
    out.push_back({sub, [a, sub] { return run_evaluate(*a, *sub); }});
  }
}

}  // namespace cellguard::cli
