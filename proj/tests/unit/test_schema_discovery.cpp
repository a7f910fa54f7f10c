#include <gtest/gtest.h>

#include <atomic>

#include "cellguard/error.hpp"
#include "cellguard/schema_discovery.hpp"
#include "test_support.hpp"

namespace cellguard {
namespace {

using nlohmann::json;
using testing::callback_gateway;

const Chunk kHospital{"d2", "c-hosp", "Lakeview Community Hospital is a 150-bed hospital in Madison."};
const Chunk kTreatment{"d1", "c-treat", "At Lakeview, pneumonia is treated with antibiotics for $4,200."};
const Chunk kPatient{"d3", "c-pat", "Patient profile: 67-year-old with hypertension."};
const QuerySpec kQuery{"q", "Average treatment cost per disease by hospital"};

json table(const std::string& name, std::vector<std::string> attrs) {
  json a = json::array();
  for (const auto& n : attrs) a.push_back({{"name", n}, {"description", n + " of the row"}});
  return {{"name", name}, {"description", name + " table"}, {"attributes", a}};
}

SchemaState general_schema() {
  return {{table_def_from_json(table("Hospitals", {"hospital_name", "bed_count", "city"})),
           table_def_from_json(table("Treatments", {"hospital_name", "disease", "cost"})),
           table_def_from_json(table("Patients", {"age"}))},
          SchemaKind::kGeneral};
}

std::string reply(json fields) {
  fields["Reasoning"] = "scripted";
  return fields.dump();
}

// Phase I model: adds the chunk's table when absent, then assigns to it.
std::string phase1_model(const PromptRequest& r) {
  auto tables = json::parse(r.variables.at("Record of Schema"));
  const auto& doc = r.variables.at("Document");
  std::string name = doc == kHospital.text ? "Hospitals" : doc == kTreatment.text ? "Treatments" : "Patients";
  bool present = false;
  for (const auto& t : tables) present = present || t.at("name") == name;
  if (!present) tables.push_back(table(name, {"a_" + name}));
  return reply({{"Updated Record of Schema", tables}, {"Assignment", name}});
}

TEST(Phase1, EmptyStateGainsATableAndAssignsTheChunk) {
  auto gw = callback_gateway(phase1_model);
  SchemaDiscoverer d(*gw);
  const auto out = d.phase1_step({{}, SchemaKind::kGeneral}, kHospital);
  ASSERT_FALSE(out.skipped) << out.error;
  ASSERT_EQ(out.state.tables.size(), 1u);
  EXPECT_EQ(out.state.tables[0].name, "Hospitals");
  EXPECT_EQ(out.assignment, "Hospitals");
  EXPECT_EQ(out.state.tables[0].example_chunk_ids, (std::vector<std::string>{"c-hosp"}));
}

TEST(Phase1, CoveredChunkLeavesTableSetUnchanged) {
  auto gw = callback_gateway(phase1_model);
  SchemaDiscoverer d(*gw);
  const auto first = d.phase1_step({{}, SchemaKind::kGeneral}, kHospital);
  const auto second = d.phase1_step(first.state, kHospital);
  EXPECT_EQ(second.state, first.state);  // idempotent: same fingerprint, same reply
  EXPECT_EQ(second.assignment, "Hospitals");
}

TEST(Phase1, RunFoldsInCorpusOrderAndNeverShrinks) {
  auto gw = callback_gateway(phase1_model);
  SchemaDiscoverer d(*gw);
  EXPECT_TRUE(d.run_phase1({}).schema.tables.empty());
  const auto r = d.run_phase1({kHospital, kTreatment, kPatient, kHospital});
  ASSERT_EQ(r.schema.tables.size(), 3u);
  EXPECT_EQ(r.schema.tables[0].name, "Hospitals");
  EXPECT_EQ(r.schema.tables[1].name, "Treatments");
  EXPECT_EQ(r.schema.tables[2].name, "Patients");
  EXPECT_EQ(r.assignments.size(), 4u);
  EXPECT_TRUE(r.step_errors.empty());
}

TEST(Phase1, UnparseableRepliesSkipTheChunkAfterRetries) {
  std::atomic<int> calls{0};
  auto gw = callback_gateway([&](const PromptRequest&) {
    ++calls;
    return std::string("I am not sure.");
  });
  SchemaDiscoverer d(*gw, {.parse_retries = 2});
  const SchemaState start{{}, SchemaKind::kGeneral};
  const auto out = d.phase1_step(start, kHospital);
  EXPECT_TRUE(out.skipped);
  EXPECT_EQ(out.state, start);
  EXPECT_EQ(calls.load(), 3);
  EXPECT_EQ(d.run_phase1({kHospital}).step_errors.size(), 1u);
}

TEST(Phase1, RejectsQuerySpecificState) {
  auto gw = callback_gateway(phase1_model);
  SchemaDiscoverer d(*gw);
  EXPECT_THROW(d.phase1_step({{}, SchemaKind::kQuerySpecific}, kHospital), ValidationError);
}

// Phase II model: irrelevant patients; otherwise adds the general table with
// the listed attributes, or extends it when the feedback asks for city.
std::string phase2_model(const PromptRequest& r) {
  auto tables = json::parse(r.variables.at("Record of Query-specific Schema"));
  const auto& doc = r.variables.at("Document");
  if (doc == kPatient.text) return reply({{"Updated Record of Query-specific Schema", tables}, {"Assignment", nullptr}});
  const std::string name = doc == kHospital.text ? "Hospitals" : "Treatments";
  const auto fb = r.variables.find(std::string(kFeedbackVar));
  const bool wants_city = fb != r.variables.end() && fb->second.find("city") != std::string::npos;
  bool present = false;
  for (auto& t : tables) {
    if (t.at("name") != name) continue;
    present = true;
    if (wants_city && name == "Hospitals") t = table(name, {"hospital_name", "city"});
  }
  if (!present) {
    tables.push_back(name == "Hospitals" ? table(name, {"hospital_name"})
                                         : table(name, {"hospital_name", "disease", "cost"}));
  }
  return reply({{"Updated Record of Query-specific Schema", tables}, {"Assignment", name}});
}

const SchemaState kEmptyQuery{{}, SchemaKind::kQuerySpecific};

TEST(Phase2, IrrelevantChunkIsUnassignedAndUnchanged) {
  auto gw = callback_gateway(phase2_model);
  SchemaDiscoverer d(*gw);
  const auto out = d.phase2_step(kEmptyQuery, kPatient, kQuery, general_schema());
  EXPECT_FALSE(out.skipped);
  EXPECT_FALSE(out.assignment.has_value());
  EXPECT_EQ(out.state, kEmptyQuery);
}

TEST(Phase2, TreatmentChunkAddsTreatmentsWithJoinKey) {
  auto gw = callback_gateway(phase2_model);
  SchemaDiscoverer d(*gw);
  const auto out = d.phase2_step(kEmptyQuery, kTreatment, kQuery, general_schema());
  ASSERT_FALSE(out.skipped) << out.error;
  ASSERT_EQ(out.state.tables.size(), 1u);
  EXPECT_TRUE(out.state.tables[0].has_attribute("hospital_name"));
  EXPECT_TRUE(out.state.tables[0].has_attribute("cost"));
  EXPECT_EQ(out.assignment, "Treatments");
}

TEST(Phase2, TwoStructuralActionsAreRepromptedOnceThenSkipped) {
  std::atomic<int> calls{0};
  auto gw = callback_gateway([&](const PromptRequest&) {
    ++calls;
    return reply({{"Updated Record of Query-specific Schema",
                   json::array({table("Hospitals", {"hospital_name"}), table("Treatments", {"cost"})})},
                  {"Assignment", "Hospitals"}});
  });
  SchemaDiscoverer d(*gw, {.contract_retries = 1});
  const auto out = d.phase2_step(kEmptyQuery, kHospital, kQuery, general_schema());
  EXPECT_TRUE(out.skipped);
  EXPECT_EQ(out.state, kEmptyQuery);
  EXPECT_EQ(calls.load(), 2);
  EXPECT_NE(out.error.find("structural actions"), std::string::npos) << out.error;
}

TEST(Phase2, TableAbsentFromGeneralSchemaIsAViolation) {
  auto gw = callback_gateway([](const PromptRequest&) {
    return reply({{"Updated Record of Query-specific Schema", json::array({table("Invoices", {"total"})})},
                  {"Assignment", "Invoices"}});
  });
  SchemaDiscoverer d(*gw);
  const auto out = d.phase2_step(kEmptyQuery, kHospital, kQuery, general_schema());
  EXPECT_TRUE(out.skipped);
  // Without a general schema any table may be introduced.
  EXPECT_FALSE(d.phase2_step(kEmptyQuery, kHospital, kQuery, {{}, SchemaKind::kGeneral}).skipped);
}

TEST(Phase2, AcceptedStepsChangeAtMostOneTable) {
  auto gw = callback_gateway(phase2_model);
  SchemaDiscoverer d(*gw);
  SchemaState state = kEmptyQuery;
  for (const auto& chunk : {kHospital, kPatient, kTreatment, kHospital, kTreatment}) {
    const auto out = d.phase2_step(state, chunk, kQuery, general_schema(), "Missing: city");
    std::size_t changed = 0;
    for (const auto& t : out.state.tables) {
      const auto* before = state.find_table(t.name);
      if (before == nullptr || before->attributes != t.attributes) ++changed;
    }
    EXPECT_LE(changed, 1u);
    EXPECT_GE(out.state.tables.size(), state.tables.size());
    state = out.state;
  }
}

std::string verifier(const PromptRequest& r) {
  const auto schema = json::parse(r.variables.at("Schema"));
  bool has_city = false;
  for (const auto& t : schema) {
    for (const auto& a : t.at("attributes")) has_city = has_city || a.at("name") == "city";
  }
  return reply({{"Sufficient", has_city ? "yes" : "no"}, {"Missing", has_city ? json(nullptr) : json("city")}});
}

std::string discovery_model(const PromptRequest& r) {
  return r.template_id == TemplateId::kRepair ? verifier(r) : phase2_model(r);
}

TEST(Repair, SufficientSchemaIsReturnedUnchanged) {
  auto gw = callback_gateway(discovery_model);
  SchemaDiscoverer d(*gw);
  SchemaState s{{table_def_from_json(table("Hospitals", {"hospital_name", "city"}))}, SchemaKind::kQuerySpecific};
  const auto r = d.repair(s, kQuery, {kHospital}, general_schema());
  EXPECT_TRUE(r.sufficient);
  EXPECT_EQ(r.rounds_used, 0);
  EXPECT_EQ(r.schema, s);
}

TEST(Repair, MissingKeyIsAddedInRoundOne) {
  auto gw = callback_gateway(discovery_model);
  SchemaDiscoverer d(*gw);
  const ChunkCorpus corpus{kHospital, kTreatment, kPatient};
  const auto pass = d.run_phase2(corpus, kQuery, general_schema());
  ASSERT_FALSE(pass.schema.find_table("Hospitals")->has_attribute("city"));
  const auto r = d.repair(pass.schema, kQuery, corpus, general_schema());
  EXPECT_TRUE(r.sufficient);
  EXPECT_EQ(r.rounds_used, 1);
  EXPECT_TRUE(r.schema.find_table("Hospitals")->has_attribute("city"));
}

TEST(Repair, ExhaustedRoundsFlagTheSchema) {
  auto gw = callback_gateway([](const PromptRequest& r) {
    return r.template_id == TemplateId::kRepair ? reply({{"Sufficient", "no"}, {"Missing", "everything"}})
                                                : phase2_model(r);
  });
  SchemaDiscoverer d(*gw, {.repair_rounds = 2});
  const auto r = d.repair(kEmptyQuery, kQuery, {kPatient}, general_schema());
  EXPECT_FALSE(r.sufficient);
  EXPECT_EQ(r.rounds_used, 2);
}

SchemaState attrs_schema(const std::vector<std::vector<std::string>>& tables) {
  SchemaState s{{}, SchemaKind::kQuerySpecific};
  int i = 0;
  for (const auto& attrs : tables) s.tables.push_back(table_def_from_json(table("T" + std::to_string(i++), attrs)));
  return s;
}

TEST(SchemaMetrics, IdentityIsPerfect) {
  const auto s = attrs_schema({{"a", "b"}, {"a", "c"}});
  const auto m = schema_metrics(s, s);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_TRUE(m.sufficient);
}

TEST(SchemaMetrics, ExtraAttributesLowerPrecisionOnly) {
  const auto truth = attrs_schema({{"a1", "a2", "a3", "a4"}, {"a5", "a6", "a7", "a8"}});
  const auto found = attrs_schema({{"a1", "a2", "a3", "a4", "x1"}, {"a5", "a6", "a7", "a8", "x2"}});
  const auto m = schema_metrics(found, truth);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.precision, 0.8);
  EXPECT_TRUE(m.sufficient);
}

TEST(SchemaMetrics, CanonicalNamesAndAliases) {
  EXPECT_EQ(canonical_attribute_name("  Hospital Name "), "hospital_name");
  EXPECT_EQ(canonical_attribute_name("bedCount"), "bed_count");
  const auto truth = attrs_schema({{"bed_count", "hospital_name"}});
  const auto found = attrs_schema({{"BedCount", "Hospital"}});
  EXPECT_DOUBLE_EQ(schema_metrics(found, truth).recall, 0.5);
  const auto m = schema_metrics(found, truth, {{"hospital", "hospital_name"}});
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_TRUE(m.sufficient);
}

TEST(SchemaMetrics, JoinKeyInTwoTablesCountsTwice) {
  const auto truth = attrs_schema({{"hospital_name", "city"}, {"hospital_name", "cost"}});
  const auto found = attrs_schema({{"hospital_name", "city", "cost"}});
  const auto m = schema_metrics(found, truth);
  EXPECT_DOUBLE_EQ(m.recall, 0.75);
  EXPECT_FALSE(m.sufficient);
}

}  // namespace
}  // namespace cellguard
