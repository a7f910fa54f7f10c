#include "cellguard/prompts.hpp"

#include <array>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cellguard/error.hpp"

namespace cellguard {

namespace {

const char* const kPhase1System = R"(You are a database expert specializing in relational schema design for heterogeneous, natural-language documents. Given a document and the current schema state, iteratively construct and refine a schema that captures the document's structure and semantics.

Instructions:
- Identify all salient attributes in the document.
- Decide whether the current schema can accommodate the document; create a new table if more than two attributes are missing from every suitable table.
- Assign the document to the most appropriate table in the schema.
- For each attribute, give a 1-2 sentence explanation derived from how it is used in the document.

Rules:
- Only include attributes supported by explicit evidence in the document.
- Do not add placeholders such as ID unless they are mentioned or directly inferable.
- Reason step by step before giving the revised schema and the document assignment.

Format:
- Input: { "Document": <text>, "Record of Schema": <schema state> }
- Output: { "Reasoning": <text>, "Updated Record of Schema": <tables>, "Assignment": <table name> }

Each table in "Updated Record of Schema" is an object {"name", "description", "attributes": [{"name", "description"}]}.)";

const char* const kPhase2System = R"(You are a database expert focusing on schema design. Iteratively construct a query-specific relational schema over a collection of natural-language documents. In each iteration you receive a natural language query, a new document, a general schema derived from the whole corpus, and the current query-specific schema state.

Instructions:
- Determine which table of the general schema the document maps to.
- Identify the query-relevant attributes in the document that are needed to answer the query, including attributes needed for joins.
- Update the query-specific schema only by (a) adding a new table, reusing the general schema's table name, or (b) adding new attributes to an existing table.
- Apply at most one of these actions per iteration.
- Assign the document to a table, or return "Assignment": None if the document is irrelevant.

Rules:
- Do not judge whether the data satisfies the query conditions; only whether it carries schema-relevant attributes.
- Do not include unnecessary attributes.
- For aggregate queries, include the raw attributes needed to compute the aggregate.

Format:
- Input: { "Document", "Query", "Record of Query-specific Schema", "General Schema" }
- Output: { "Reasoning", "Updated Record of Query-specific Schema", "Assignment" }

Each table in "Updated Record of Query-specific Schema" is an object {"name", "description", "attributes": [{"name", "description"}]}.)";

const char* const kRepairSystem = R"(You are a database expert reviewing a relational schema that was induced from a document collection to answer one natural language query. Decide whether the schema contains every table and attribute needed to answer the query, including join keys, filter columns, group-by keys and the raw inputs of aggregates.

Format:
- Input: { "Query", "Schema" }
- Output: { "Reasoning": <text>, "Sufficient": "yes" | "no", "Missing": <short description of what is missing, or None> })";

const char* const kResolverSystem = R"(You are a database expert. Determine which table a given document belongs to, based on a provided set of table schemas. Each document can be assigned to only one table.

Instructions:
- Read the document and compare it with the attribute descriptions in each table schema.
- Assign the document to the table whose schema best matches its content.
- If no table matches, return None.

Format:
- Input: { "Document", "Schema" }
- Output: { "Table Assignment": <Schema Name> })";

const char* const kExtractorSystem = R"(You are a database expert. Extract a specific attribute value from a natural language document, given a table schema and a target attribute.

Instructions:
- Examine the document and the schema.
- Locate the value in the document corresponding to the target attribute.
- If the attribute value is found, return it; otherwise, return None.

Format:
- Input: { "Document", "Schema", "Target Attribute" }
- Output: { <Target Attribute>: <Extracted Value or None> })";

const char* const kJudgeSystem = R"(You are a meticulous data auditor. Independently extract the value of the target attribute from the document, using the table schema for context. Copy the value as it appears in the document. If the document does not state it, answer None.

Format:
- Input: { "Document", "Schema", "Target Attribute" }
- Output: { "Value": <Extracted Value or None> })";

const char* const kConsolidateSystem = R"(You are a database expert consolidating one table cell whose value was extracted from several chunks of the same document, and the chunks disagree. Pick the single candidate that the documents support best. Answer with one of the candidates verbatim.

Format:
- Input: { "Table", "Target Attribute", "Candidates", "Documents" }
- Output: { "Value": <one candidate> })";

const std::array<PromptTemplate, 7>& all_templates() {
  static const std::array<PromptTemplate, 7> kTemplates = {{
      {TemplateId::kPhase1, kPhase1System, {"Document", "Record of Schema"},
       {"Reasoning", "Updated Record of Schema", "Assignment"}},
      {TemplateId::kPhase2, kPhase2System,
       {"Document", "Query", "Record of Query-specific Schema", "General Schema"},
       {"Reasoning", "Updated Record of Query-specific Schema", "Assignment"}},
      {TemplateId::kRepair, kRepairSystem, {"Query", "Schema"}, {"Reasoning", "Sufficient", "Missing"}},
      {TemplateId::kTableResolver, kResolverSystem, {"Document", "Schema"}, {"Table Assignment"}},
      // The extractor's single output field is named after the target attribute.
      {TemplateId::kAttributeExtractor, kExtractorSystem, {"Document", "Schema", "Target Attribute"}, {}},
      {TemplateId::kCommitteeJudge, kJudgeSystem, {"Document", "Schema", "Target Attribute"}, {"Value"}},
      {TemplateId::kConsolidate, kConsolidateSystem, {"Table", "Target Attribute", "Candidates", "Documents"},
       {"Value"}},
  }};
  return kTemplates;
}

}  // namespace

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::kPhase1: return "phase1";
    case TemplateId::kPhase2: return "phase2";
    case TemplateId::kRepair: return "repair";
    case TemplateId::kTableResolver: return "table_resolver";
    case TemplateId::kAttributeExtractor: return "attribute_extractor";
    case TemplateId::kCommitteeJudge: return "committee_judge";
    case TemplateId::kConsolidate: return "consolidate";
  }
  return "unknown";
}

TemplateId template_id_from_string(std::string_view s) {
  for (const auto& t : all_templates()) {
    if (to_string(t.id) == s) return t.id;
  }
  throw ParseError(fmt::format("unknown template id '{}'", s));
}

const PromptTemplate& prompt_template(TemplateId id) {
  for (const auto& t : all_templates()) {
    if (t.id == id) return t;
  }
  throw Error("prompt template table is incomplete");
}

std::vector<ChatMessage> render_prompt(TemplateId id, const std::map<std::string, std::string>& variables) {
  const auto& tpl = prompt_template(id);
  std::set<std::string> expected(tpl.inputs.begin(), tpl.inputs.end());
  for (const auto& [name, _] : variables) {
    if (!expected.contains(name) && name != kFeedbackVar) {
      throw ValidationError(fmt::format("template {} has no placeholder '{}'", to_string(id), name));
    }
  }

  // Preserve the template's input order in the rendered object.
  nlohmann::ordered_json input = nlohmann::ordered_json::object();
  for (const auto& name : tpl.inputs) {
    auto it = variables.find(name);
    if (it == variables.end()) {
      throw ValidationError(fmt::format("template {}: placeholder '{}' is unbound", to_string(id), name));
    }
    auto structured = nlohmann::ordered_json::parse(it->second, nullptr, /*allow_exceptions=*/false);
    if (!structured.is_discarded() && (structured.is_object() || structured.is_array())) {
      input[name] = std::move(structured);
    } else {
      input[name] = it->second;
    }
  }

  std::string user = "Input:\n" + input.dump(2);
  if (auto fb = variables.find(std::string(kFeedbackVar)); fb != variables.end() && !fb->second.empty()) {
    user += "\n\n" + fb->second;
  }
  return {{"system", tpl.system}, {"user", std::move(user)}};
}

}  // namespace cellguard
