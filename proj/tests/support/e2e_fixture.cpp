#include "e2e_fixture.hpp"

#include <cstdlib>

#include <fmt/format.h>

#include "test_support.hpp"

namespace cellguard::testing {
namespace {

void step(PipelineRun& run, const std::filesystem::path& work, const std::string& name,
          const std::vector<std::string>& args) {
  if (!run.ok()) return;  // later steps depend on earlier outputs
  const auto log = work / "logs" / (name + ".log");
  std::filesystem::create_directories(log.parent_path());
  const int rc = run_cli(args, log);
  if (rc != 0) run.failures.push_back(fmt::format("{}: exit {}, see {}", name, rc, log.string()));
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::filesystem::path e2e_fixture_dir() { return fixture_root() / "e2e"; }

PipelineRun run_stage1(const std::filesystem::path& f, const std::filesystem::path& w,
                       const std::vector<std::string>& gateway_flags) {
  const auto gw = gateway_flags.empty() ? std::vector<std::string>{"--replay", (f / "transcripts").string()}
                                        : gateway_flags;
  const auto corpus = (f / "corpus.jsonl").string();
  const auto schema = (w / "discover" / "query_schema.json").string();
  const auto dumps = (f / "dumps.jsonl").string();
  PipelineRun run;
  step(run, w, "discover",
       concat({"discover", "--corpus", corpus, "--query", (f / "query.json").string(), "--out-dir",
               (w / "discover").string()},
              gw));
  step(run, w, "populate",
       concat({"populate", "--schema", schema, "--corpus", corpus, "--out-tables", (w / "tables.jsonl").string(),
               "--out-records", (w / "records.jsonl").string(), "--mode", "one2one"},
              gw));
  step(run, w, "label",
       concat({"label", "--records", (w / "records.jsonl").string(), "--corpus", corpus, "--schema", schema,
               "--human", (f / "human_labels.jsonl").string(), "--out", (w / "labels.jsonl").string()},
              gw));
  if (!std::filesystem::exists(dumps)) return run;  // the generator stops here to synthesize dumps
  step(run, w, "train",
       {"train", "--labels", (w / "labels.jsonl").string(), "--dumps", dumps, "--out-dir", (w / "model").string(),
        "--seed", "7"});
  step(run, w, "calibrate",
       {"calibrate", "--classifiers", (w / "model").string(), "--dumps", dumps, "--labels",
        (w / "labels.jsonl").string(), "--out", (w / "partition.json").string(), "--alpha", "0.15", "--lambda", "0.5",
        "--mode", "marginal", "--seed", "7"});
  step(run, w, "detect",
       {"detect", "--detector", "hyb", "--classifiers", (w / "model").string(), "--dumps", dumps, "--model",
        (w / "partition.json").string(), "--records", (w / "records.jsonl").string(), "--out",
        (w / "detections.jsonl").string()});
  step(run, w, "export",
       {"review", "export", "--tables", (w / "tables.jsonl").string(), "--records", (w / "records.jsonl").string(),
        "--detections", (w / "detections.jsonl").string(), "--corpus", corpus, "--out",
        (w / "queue.jsonl").string()});
  return run;
}

PipelineRun run_stage2(const std::filesystem::path& f, const std::filesystem::path& w) {
  ::setenv("SOURCE_DATE_EPOCH", kFixtureEpoch, 1);
  PipelineRun run;
  step(run, w, "import",
       {"review", "import", "--tables", (w / "tables.jsonl").string(), "--records", (w / "records.jsonl").string(),
        "--queue", (f / "reviewed_queue.jsonl").string(), "--out-tables", (w / "reviewed_tables.jsonl").string(),
        "--out-audit", (w / "audit.jsonl").string()});
  step(run, w, "replay",
       {"review", "replay", "--tables", (w / "tables.jsonl").string(), "--audit", (w / "audit.jsonl").string(),
        "--out", (w / "replayed_tables.jsonl").string()});
  step(run, w, "evaluate",
       {"evaluate", "--tables", (w / "tables.jsonl").string(), "--truth", (f / "truth.jsonl").string(), "--keys",
        (f / "keys.json").string(), "--reviewed-tables", (w / "reviewed_tables.jsonl").string(), "--detections",
        (w / "detections.jsonl").string(), "--labels", (w / "labels.jsonl").string(), "--model",
        (w / "partition.json").string(), "--out", (w / "report.json").string()});
  ::unsetenv("SOURCE_DATE_EPOCH");
  return run;
}

std::vector<std::string> golden_files() {
  std::vector<std::string> files = {"discover/general_schema.json",
                                    "discover/query_schema.json",
                                    "discover/discovery_report.json",
                                    "tables.jsonl",
                                    "records.jsonl",
                                    "labels.jsonl",
                                    "model/split.json",
                                    "partition.json",
                                    "detections.jsonl",
                                    "queue.jsonl",
                                    "reviewed_tables.jsonl",
                                    "audit.jsonl",
                                    "replayed_tables.jsonl",
                                    "report.json"};
  for (int l = 0; l < 4; ++l) files.push_back(fmt::format("model/layer_{}.json", l));
  return files;
}

std::vector<std::string> golden_mismatches(const std::filesystem::path& expected, const std::filesystem::path& actual) {
  std::vector<std::string> bad;
  for (const auto& rel : golden_files()) {
    const auto e = expected / rel;
    const auto a = actual / rel;
    if (!std::filesystem::exists(e) || !std::filesystem::exists(a) || slurp(e) != slurp(a)) bad.push_back(rel);
  }
  return bad;
}

}  // namespace cellguard::testing
