#include <gtest/gtest.h>

#include <cstdlib>

#include "cellguard/error.hpp"
#include "cellguard/evaluation.hpp"
#include "cellguard/review.hpp"

namespace cellguard {
namespace {

// Two Hospitals rows from two chunks, one record per output.
struct World {
  TableSet tables;
  std::vector<ExtractionRecord> records;
  ChunkCorpus corpus;
  std::vector<Detection> detections;
};

ExtractionRecord rec(const std::string& chunk, const std::optional<std::string>& attr, CellValue value) {
  ExtractionRecord r;
  r.extraction_id = chunk + ":Hospitals" + (attr ? ":" + *attr : "");
  r.kind = attr ? TargetKind::kAttributeValue : TargetKind::kTableAssignment;
  r.doc_id = "d-" + chunk;
  r.chunk_id = chunk;
  r.table_name = "Hospitals";
  r.attribute_name = attr;
  r.value = std::move(value);
  r.token_span = {"x"};
  r.row_id = chunk;
  return r;
}

World world() {
  World w;
  w.tables = {{"Hospitals",
               {{"c1", {"c1"}, {{"name", "Lakeview"}, {"beds", "150"}}},
                {"c2", {"c2"}, {{"name", "Mercy"}, {"beds", std::nullopt}}}}}};
  w.corpus = {{"d-c1", "c1", "Lakeview has 150 beds."}, {"d-c2", "c2", "Mercy has 210 beds."}};
  for (const auto& c : {std::string("c1"), std::string("c2")}) {
    w.records.push_back(rec(c, std::nullopt, std::string("Hospitals")));
    const auto& row = *w.tables[0].find_row(c);
    w.records.push_back(rec(c, std::string("name"), row.cells.at("name")));
    w.records.push_back(rec(c, std::string("beds"), row.cells.at("beds")));
  }
  for (const auto& r : w.records) w.detections.push_back({r.extraction_id, Decision::kAccept, singleton(0)});
  return w;
}

void flag_ids(World& w, const std::vector<std::string>& ids) {
  for (auto& d : w.detections) {
    if (std::find(ids.begin(), ids.end(), d.extraction_id) != ids.end()) {
      d.decision = Decision::kReview;
      d.prediction_set = {true, true};
    }
  }
}

TEST(Queue, NothingFlaggedGivesEmptyQueue) {
  const auto w = world();
  const auto q = build_queue(w.tables, w.records, w.detections, w.corpus);
  EXPECT_TRUE(q.empty());
  EXPECT_EQ(serialize_queue(q), "");
}

TEST(Queue, CanonicalOrderByTableRowThenAttribute) {
  auto w = world();
  flag_ids(w, {"c2:Hospitals:beds", "c1:Hospitals:beds", "c2:Hospitals"});
  const auto q = build_queue(w.tables, w.records, w.detections, w.corpus);
  ASSERT_EQ(q.size(), 3u);
  EXPECT_EQ(q[0].extraction_id, "c1:Hospitals:beds");
  EXPECT_EQ(q[1].extraction_id, "c2:Hospitals");
  EXPECT_EQ(q[2].extraction_id, "c2:Hospitals:beds");
  EXPECT_EQ(q[0].current_value, "150");
  EXPECT_EQ(q[1].current_value, "Hospitals");
  EXPECT_EQ(q[0].source_text, "Lakeview has 150 beds.");
  EXPECT_EQ(parse_queue(serialize_queue(q)), q);
}

TEST(Queue, ConflictCellsAreQueuedEvenWhenAccepted) {
  auto w = world();
  w.records[1].conflict = true;
  const auto q = build_queue(w.tables, w.records, w.detections, w.corpus);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_TRUE(q[0].conflict);
}

TEST(Queue, EveryRepresentativeRecordNeedsADetection) {
  auto w = world();
  w.detections.pop_back();
  EXPECT_THROW(build_queue(w.tables, w.records, w.detections, w.corpus), ValidationError);
  w.records.back().representative = false;
  EXPECT_NO_THROW(build_queue(w.tables, w.records, w.detections, w.corpus));
}

TEST(Import, UneditedQueueIsANoOp) {
  auto w = world();
  flag_ids(w, {"c1:Hospitals:beds", "c2:Hospitals"});
  const auto q = build_queue(w.tables, w.records, w.detections, w.corpus);
  const auto r = import_corrections(w.tables, w.records, parse_queue(serialize_queue(q)), "t");
  EXPECT_EQ(r.tables, w.tables);
  EXPECT_TRUE(r.audit.empty());
  EXPECT_EQ(r.open, 2u);
  EXPECT_TRUE(import_corrections(w.tables, w.records, {}, "t").audit.empty());
}

TEST(Import, CorrectionsToTruthNeverLowerAccuracyAndReplay) {
  auto w = world();
  flag_ids(w, {"c2:Hospitals:beds", "c1:Hospitals:name"});
  auto q = build_queue(w.tables, w.records, w.detections, w.corpus);
  ASSERT_EQ(q.size(), 2u);
  q[0].corrected_value = CellValue("Lakeview");  // unchanged: not logged
  q[1].corrected_value = CellValue("210");

  TableSet truth = w.tables;
  truth[0].rows[1].cells["beds"] = "210";
  const std::map<std::string, std::vector<std::string>> keys = {{"Hospitals", {"name"}}};
  const auto r = import_corrections(w.tables, w.records, q, "2026-01-01T00:00:00Z");
  ASSERT_EQ(r.audit.size(), 1u);
  EXPECT_EQ(r.audit[0].old_value, std::nullopt);
  EXPECT_EQ(r.audit[0].new_value, "210");
  EXPECT_EQ(r.audit[0].timestamp, "2026-01-01T00:00:00Z");
  EXPECT_GT(acc_pop(r.tables, truth, keys).accuracy, acc_pop(w.tables, truth, keys).accuracy);
  EXPECT_EQ(acc_pop(r.tables, truth, keys).accuracy, 1.0);

  const auto audit = parse_audit(serialize_audit(r.audit));
  EXPECT_EQ(audit, r.audit);
  EXPECT_EQ(replay_audit(w.tables, audit), r.tables);
}

TEST(Import, NullOnAnAssignmentDeletesTheRow) {
  auto w = world();
  flag_ids(w, {"c2:Hospitals", "c2:Hospitals:beds"});
  auto q = build_queue(w.tables, w.records, w.detections, w.corpus);
  q[0].corrected_value = CellValue(std::nullopt);
  q[1].corrected_value = CellValue("210");  // dropped: its row goes away
  const auto r = import_corrections(w.tables, w.records, q, "t");
  ASSERT_EQ(r.audit.size(), 1u);
  EXPECT_FALSE(r.audit[0].attribute_name.has_value());
  ASSERT_EQ(r.tables[0].rows.size(), 1u);
  EXPECT_EQ(r.tables[0].rows[0].row_id, "c1");
  EXPECT_EQ(replay_audit(w.tables, r.audit), r.tables);
}

TEST(Import, ReassignmentUnknownIdsAndDuplicatesAreRejected) {
  auto w = world();
  flag_ids(w, {"c2:Hospitals"});
  auto q = build_queue(w.tables, w.records, w.detections, w.corpus);
  q[0].corrected_value = CellValue("Clinics");
  EXPECT_THROW(import_corrections(w.tables, w.records, q, "t"), ValidationError);

  q[0].corrected_value.reset();
  auto unknown = q;
  unknown[0].extraction_id = "nope";
  EXPECT_THROW(import_corrections(w.tables, w.records, unknown, "t"), ValidationError);
  auto twice = q;
  twice.push_back(q[0]);
  EXPECT_THROW(import_corrections(w.tables, w.records, twice, "t"), ValidationError);
}

TEST(Replay, OldValueMustMatch) {
  const auto w = world();
  const std::vector<AuditEntry> stale = {
      {"c1:Hospitals:beds", "Hospitals", "c1", "beds", std::string("999"), std::string("151"), "t"}};
  EXPECT_THROW(replay_audit(w.tables, stale), ValidationError);
}

TEST(AuditTimestamp, HonorsSourceDateEpoch) {
  ::setenv("SOURCE_DATE_EPOCH", "1767225600", 1);
  EXPECT_EQ(audit_timestamp(), "2026-01-01T00:00:00Z");
  ::setenv("SOURCE_DATE_EPOCH", "yesterday", 1);
  EXPECT_THROW(audit_timestamp(), ValidationError);
  ::unsetenv("SOURCE_DATE_EPOCH");
  EXPECT_EQ(audit_timestamp().size(), 20u);
}

}  // namespace
}  // namespace cellguard
