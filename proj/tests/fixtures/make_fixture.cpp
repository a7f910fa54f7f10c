// Regenerates tests/fixtures/e2e.
//
// A scripted model answers chat-completion requests on a loopback HTTP stub;
// the CLI runs discover/populate/label against it in record mode, which
// writes the transcripts. Hidden-state dumps are then synthesized from the
// resulting labels, the full pipeline is replayed offline, the reviewer's
// answers are filled in from the truth tables, and every output is frozen
// under golden/.
//
// Usage: cellguard_make_fixture [fixture_dir]

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cellguard/corpus.hpp"
#include "cellguard/features.hpp"
#include "cellguard/io.hpp"
#include "cellguard/labeling.hpp"
#include "cellguard/population.hpp"
#include "cellguard/prompts.hpp"
#include "cellguard/review.hpp"
#include "e2e_fixture.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cellguard;

namespace {

using Cells = std::map<std::string, std::optional<std::string>>;

struct ChunkSpec {
  std::string id;
  std::string general_table;   // Phase I table; empty = unassigned
  std::string resolved_table;  // what the population model resolves to; empty = irrelevant
  std::string text;
  Cells truth;        // empty for chunks outside the truth tables
  Cells model;        // population model answers that differ from truth
  Cells committee;    // committee answers that differ from truth (all members)
  Cells dissent;      // committee-c answers that differ from the others
};


Cells hospital(const char* name, const char* city, const char* beds) {
  return {{"hospital_name", name}, {"city", city}, {"bed_count", beds}};
}

Cells treatment(const char* name, const char* disease, const char* how, const char* cost, const char* days) {
  return {{"hospital_name", name}, {"disease", disease}, {"treatment", how}, {"cost", cost}, {"duration_days", days}};
}

std::vector<ChunkSpec> chunks() {
  const char* smc = "St. Mary's Medical Center";
  const char* rgh = "Riverside General Hospital";
  const char* lch = "Lakeview Community Hospital";
  const char* nrh = "Northgate Regional Hospital";
  const char* hvc = "Harbor View Clinic";
  const char* pmh = "Pinecrest Memorial Hospital";
  const char* svh = "Summit Valley Hospital";
  const char* bch = "Bayside Children's Hospital";
  const char* ouh = "Oakridge University Hospital";
  const char* cfg = "Cedar Falls General";
  const std::nullopt_t none = std::nullopt;
  return {
      {"h01", "Hospitals", "Hospitals",
       "St. Mary's Medical Center is a 412-bed teaching hospital in Boston, Massachusetts. Founded in 1868, it "
       "operates a level I trauma center and a regional burn unit.",
       hospital(smc, "Boston", "412"), {}, {}, {}},
      {"t01", "Treatments", "Treatments",
       "At St. Mary's Medical Center, adults admitted with community-acquired pneumonia receive intravenous "
       "antibiotics. A typical course lasts 7 days and is billed at $4,200.",
       treatment(smc, "pneumonia", "intravenous antibiotics", "$4,200", "7"), {}, {}, {{"duration_days", "5"}}},
      {"t02", "Treatments", "Treatments",
       "Hip fracture patients at St. Mary's Medical Center undergo surgical repair within 24 hours of arrival. The "
       "average stay is 5 days at a cost of $18,500.",
       treatment(smc, "hip fracture", "surgical repair", "$18,500", "5"), {{"cost", "$1,850"}}, {}, {}},
      {"h02", "Hospitals", "Hospitals",
       "Riverside General Hospital serves the greater Portland area from its campus on the east bank of the "
       "Willamette River. The hospital has 268 licensed beds and a cardiac catheterization lab.",
       hospital(rgh, "Portland", "268"), {}, {}, {}},
      {"t03", "Treatments", "Treatments",
       "Riverside General Hospital treats heart attack patients with emergency angioplasty in its catheterization "
       "lab. Patients usually go home after 4 days; the procedure costs $27,300.",
       treatment(rgh, "heart attack", "angioplasty", "$27,300", "4"), {}, {}, {}},
      {"t04", "Treatments", "Treatments",
       "For asthma exacerbations, Riverside General Hospital prescribes inhaled corticosteroids and discharges most "
       "patients within 2 days. Treatment runs about $650, and follow-up is scheduled 12 days later.",
       treatment(rgh, "asthma", "inhaled corticosteroids", "$650", "2"), {{"duration_days", "12"}}, {}, {}},
      {"p01", "Patients", "",
       "Patient profile: a 67-year-old retired teacher with a history of hypertension and type 2 diabetes, managed "
       "with metformin and lisinopril. She lives alone and reports daily walks.",
       {}, {}, {}, {}},
      {"h03", "Hospitals", "Hospitals",
       "Lakeview Community Hospital is a 150-bed nonprofit hospital in Madison, Wisconsin, about 80 miles west of "
       "Milwaukee. It is known for its maternity ward.",
       hospital(lch, "Madison", "150"), {{"city", "Milwaukee"}}, {}, {}},
      {"t05", "Treatments", "Treatments",
       "Lakeview Community Hospital performs cesarean sections for high-risk childbirth; uncomplicated vaginal "
       "deliveries are handled by the midwife unit. A cesarean stay is 3 days and costs $11,400.",
       treatment(lch, "childbirth", "cesarean section", "$11,400", "3"), {{"treatment", "vaginal delivery"}}, {}, {}},
      {"h04", "Hospitals", "Hospitals",
       "With 530 beds, Northgate Regional Hospital is the largest facility in Denver's northern suburbs and houses "
       "a dedicated stroke center.",
       hospital(nrh, "Denver", "530"), {}, {}, {}},
      {"t06", "Treatments", "Treatments",
       "Northgate Regional Hospital's stroke center delivers thrombolysis to eligible stroke patients within the "
       "first hours. Inpatient care averages 6 days and $15,800.",
       treatment(nrh, "stroke", "thrombolysis", "$15,800", "6"), {}, {}, {}},
      {"t07", "Treatments", "Treatments",
       "Kidney stones at Northgate Regional Hospital are usually managed with shock-wave lithotripsy as a same-day "
       "procedure, with a 1-day observation stay. The hospital quotes $3,900 for the procedure.",
       treatment(nrh, "kidney stones", "shock-wave lithotripsy", "$3,900", "1"), {{"cost", none}}, {}, {}},
      {"h05", "Hospitals", "Hospitals",
       "Harbor View Clinic, a 96-bed facility overlooking Elliott Bay in Seattle, focuses on outpatient surgery and "
       "sports medicine. Its orthopedic wing opened in 2019.",
       hospital(hvc, "Seattle", "96"), {{"bed_count", "69"}}, {}, {}},
      {"t08", "Treatments", "Treatments",
       "Harbor View Clinic repairs torn ACLs with arthroscopic reconstruction. Patients are discharged after 1 day, "
       "and the surgery costs $9,750.",
       treatment(hvc, "torn ACL", "arthroscopic reconstruction", "$9,750", "1"), {{"treatment", "ACL repair"}}, {},
       {}},
      {"p02", "Staff", "Treatments",
       "Staff news: Dr. Elena Ruiz has been appointed chief of cardiology after twelve years on the faculty. She "
       "will oversee the expansion of the heart failure clinic.",
       {},
       {{"hospital_name", none}, {"disease", "heart failure"}, {"treatment", none}, {"cost", none},
        {"duration_days", none}},
       {{"hospital_name", none}, {"disease", "heart failure"}, {"treatment", none}, {"cost", none},
        {"duration_days", none}},
       {}},
      {"h06", "Hospitals", "Hospitals",
       "Pinecrest Memorial Hospital in Asheville, North Carolina, maintains 214 inpatient beds and a mountain "
       "rescue helicopter service.",
       hospital(pmh, "Asheville", "214"), {}, {}, {{"bed_count", "241"}}},
      {"t09", "Treatments", "Treatments",
       "Pinecrest Memorial Hospital treats acute appendicitis with laparoscopic appendectomy. Most patients stay 2 "
       "days; the hospital lists the cost at $13,200, three times the clinic price.",
       treatment(pmh, "appendicitis", "laparoscopic appendectomy", "$13,200", "2"), {{"duration_days", "3"}}, {},
       {}},
      {"h07", "Hospitals", "Hospitals",
       "Summit Valley Hospital opened in Boise in 1972 and has since grown to 180 beds. It runs the state's only "
       "pediatric oncology program.",
       hospital(svh, "Boise", "180"), {}, {}, {}},
      {"t10", "Treatments", "Treatments",
       "Summit Valley Hospital's pediatric oncology program treats childhood leukemia with induction chemotherapy. "
       "The induction phase lasts 28 days and costs roughly $42,000.",
       treatment(svh, "leukemia", "induction chemotherapy", "$42,000", "28"), {}, {}, {{"cost", "$24,000"}}},
      {"t11", "Treatments", "Treatments",
       "Children with mild pneumonia at Summit Valley Hospital are given oral antibiotics and observed for 3 days. "
       "Families are charged $2,100; intravenous antibiotics are reserved for severe cases.",
       treatment(svh, "pneumonia", "oral antibiotics", "$2,100", "3"), {{"treatment", "intravenous antibiotics"}},
       {}, {}},
      {"p03", "", "",
       "Visitor notice: the north parking garage will close for resurfacing from March 3 to March 14. Visitors "
       "should use the surface lot on Elm Street.",
       {}, {}, {}, {}},
      {"h08", "Hospitals", "Hospitals",
       "Bayside Children's Hospital is a pediatric hospital in Tampa with 122 beds, including a 40-bed neonatal "
       "intensive care unit.",
       hospital(bch, "Tampa", "122"), {{"bed_count", none}}, {}, {}},
      {"t12", "Treatments", "Treatments",
       "Bayside Children's Hospital admits infants with bronchiolitis for supportive oxygen therapy. Stays average "
       "4 days at a cost of $5,600.",
       treatment(bch, "bronchiolitis", "oxygen therapy", "$5,600", "4"), {{"duration_days", "40"}}, {}, {}},
      {"t13", "Treatments", "Treatments",
       "Premature infants at Bayside Children's Hospital receive neonatal intensive care for about 30 days. The "
       "average bill for this care is $76,000.",
       treatment(bch, "premature birth", "neonatal intensive care", "$76,000", "30"), {{"cost", "$7,600"}}, {}, {}},
      {"h09", "Hospitals", "Hospitals",
       "Oakridge University Hospital, the academic medical center of Oakridge University in Columbus, Ohio, has 640 "
       "beds and trains over 300 residents a year.",
       hospital(ouh, "Columbus", "640"), {}, {}, {}},
      {"t14", "Treatments", "Treatments",
       "Oakridge University Hospital delivers radiation therapy for early breast cancer in daily sessions, 5 days a "
       "week, over 35 days. A full course costs $31,500.",
       treatment(ouh, "breast cancer", "radiation therapy", "$31,500", "35"), {{"duration_days", "5"}}, {}, {}},
      {"t15", "Treatments", "Treatments",
       "Patients hospitalized for heart failure at Oakridge University Hospital receive intravenous diuretic "
       "therapy and stay about 5 days. The typical charge is $8,900.",
       treatment(ouh, "heart failure", "intravenous diuretic therapy", "$8,900", "5"), {{"treatment", none}}, {},
       {}},
      {"h10", "Hospitals", "Hospitals",
       "Cedar Falls General is an 88-bed community hospital in Cedar Falls, Iowa, roughly 60 miles north of Cedar "
       "Rapids.",
       hospital(cfg, "Cedar Falls", "88"), {{"city", "Cedar Rapids"}}, {}, {}},
      {"t16", "Treatments", "Treatments",
       "Cedar Falls General performs open appendectomy for appendicitis when laparoscopy is unavailable. Patients "
       "stay 2 days and pay $9,800 on average.",
       treatment(cfg, "appendicitis", "open appendectomy", "$9,800", "2"), {{"cost", "$9,100"}}, {}, {}},
      {"p04", "", "",
       "Cafeteria menu for the week of June 9: Monday features lentil soup, Tuesday grilled salmon, and Friday a "
       "build-your-own taco bar.",
       {}, {}, {}, {}},
  };
}

const char* kQuery = "What is the average treatment cost for each disease, broken down by the city of the hospital?";

json attr(const std::string& name, const std::string& description) {
  return {{"name", name}, {"description", description}};
}

// General-schema definitions the Phase I model converges to.
json general_table(const std::string& name) {
  if (name == "Hospitals") {
    return {{"name", name},
            {"description", "Hospitals and their basic facility data"},
            {"attributes",
             {attr("hospital_name", "Name of the hospital; joins to Treatments"), attr("city", "City of the hospital"),
              attr("bed_count", "Number of licensed inpatient beds"),
              attr("specialty", "Notable specialty unit or program")}}};
  }
  if (name == "Treatments") {
    return {{"name", name},
            {"description", "Treatment offered by a hospital for a disease, with duration and cost"},
            {"attributes",
             {attr("hospital_name", "Hospital providing the treatment"), attr("disease", "Condition treated"),
              attr("treatment", "Treatment or procedure applied"), attr("cost", "Typical cost of the treatment"),
              attr("duration_days", "Typical length of treatment or stay in days")}}};
  }
  if (name == "Patients") {
    return {{"name", name},
            {"description", "Individual patient profiles"},
            {"attributes",
             {attr("age", "Age in years"), attr("conditions", "Chronic conditions"),
              attr("medications", "Current medications")}}};
  }
  return {{"name", name},
          {"description", "Hospital staff appointments"},
          {"attributes", {attr("staff_name", "Name of the staff member"), attr("role", "Position held")}}};
}

// Query-specific definitions: Hospitals starts without city until repair asks for it.
json query_table(const std::string& name, bool with_city) {
  if (name == "Hospitals") {
    json attrs = {attr("hospital_name", "Name of the hospital; joins to Treatments")};
    if (with_city) attrs.push_back(attr("city", "City of the hospital; the grouping key of the query"));
    attrs.push_back(attr("bed_count", "Number of licensed inpatient beds"));
    return {{"name", name}, {"description", "Hospitals referenced by treatments"}, {"attributes", attrs}};
  }
  return {{"name", name},
          {"description", "Treatment offered by a hospital for a disease, with duration and cost"},
          {"attributes",
           {attr("hospital_name", "Hospital providing the treatment; joins to Hospitals"),
            attr("disease", "Condition treated"), attr("treatment", "Treatment or procedure applied"),
            attr("cost", "Typical cost of the treatment"),
            attr("duration_days", "Typical length of treatment or stay in days")}}};
}

json find_or_null(const json& tables, const std::string& name) {
  for (const auto& t : tables) {
    if (t.at("name") == name) return t;
  }
  return nullptr;
}

json to_cell(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

class ScriptedModel {
 public:
  ScriptedModel() : chunks_(chunks()) {
    for (const auto& c : chunks_) by_text_[c.text] = &c;
  }

  std::string answer(TemplateId id, const std::string& model, const json& in, const std::string& feedback) {
    switch (id) {
      case TemplateId::kPhase1: return phase1(in);
      case TemplateId::kPhase2: return phase2(in, feedback);
      case TemplateId::kRepair: return repair(in);
      case TemplateId::kTableResolver: return resolve(in);
      case TemplateId::kAttributeExtractor: return extract(in);
      case TemplateId::kCommitteeJudge: return judge(in, model);
      case TemplateId::kConsolidate: break;
    }
    throw std::runtime_error("unexpected template");
  }

 private:
  const ChunkSpec& chunk(const json& in) const { return *by_text_.at(in.at("Document").get<std::string>()); }

  static std::string reply(const std::string& reasoning, json fields) {
    fields["Reasoning"] = reasoning;
    return "Here is my analysis.\n" + fields.dump(2);
  }

  std::string phase1(const json& in) const {
    const auto& c = chunk(in);
    json tables = in.at("Record of Schema");
    if (c.general_table.empty()) {
      return reply("The document does not describe a recurring entity.",
                   {{"Updated Record of Schema", tables}, {"Assignment", nullptr}});
    }
    if (find_or_null(tables, c.general_table).is_null()) tables.push_back(general_table(c.general_table));
    return reply(fmt::format("The document describes an instance of {}.", c.general_table),
                 {{"Updated Record of Schema", tables}, {"Assignment", c.general_table}});
  }

  std::string phase2(const json& in, const std::string& feedback) const {
    const auto& c = chunk(in);
    json tables = in.at("Record of Query-specific Schema");
    const bool query_relevant = c.general_table == "Hospitals" || c.general_table == "Treatments";
    if (!query_relevant) {
      return reply("The document does not help answer the query.",
                   {{"Updated Record of Query-specific Schema", tables}, {"Assignment", nullptr}});
    }
    const auto& name = c.general_table;
    const bool city_requested = feedback.find("city") != std::string::npos;
    auto existing = find_or_null(tables, name);
    if (existing.is_null()) {
      tables.push_back(query_table(name, city_requested));
    } else if (name == "Hospitals" && city_requested) {
      for (auto& t : tables) {
        if (t.at("name") == name) t = query_table(name, true);
      }
    }
    return reply(fmt::format("The document contributes a row to {}.", name),
                 {{"Updated Record of Query-specific Schema", tables}, {"Assignment", name}});
  }

  static std::string repair(const json& in) {
    const auto hospitals = find_or_null(in.at("Schema"), "Hospitals");
    bool has_city = false;
    if (!hospitals.is_null()) {
      for (const auto& a : hospitals.at("attributes")) has_city = has_city || a.at("name") == "city";
    }
    if (has_city) return reply("Costs, diseases and hospital cities are all present.", {{"Sufficient", "yes"}, {"Missing", nullptr}});
    return reply("The query groups by city but no table records where a hospital is.",
                 {{"Sufficient", "no"}, {"Missing", "the city of each hospital (Hospitals.city)"}});
  }

  std::string resolve(const json& in) const {
    const auto& c = chunk(in);
    if (c.resolved_table.empty()) return reply("Nothing in the document fits the schema.", {{"Table Assignment", nullptr}});
    return reply("The document matches the table description.", {{"Table Assignment", json::array({c.resolved_table})}});
  }

  static std::optional<std::string> pick(const ChunkSpec& c, const Cells& override_cells, const std::string& a) {
    if (auto it = override_cells.find(a); it != override_cells.end()) return it->second;
    if (auto it = c.truth.find(a); it != c.truth.end()) return it->second;
    return std::nullopt;
  }

  std::string extract(const json& in) const {
    const auto& c = chunk(in);
    const auto a = in.at("Target Attribute").get<std::string>();
    return reply("Read directly from the document.", {{a, to_cell(pick(c, c.model, a))}});
  }

  std::string judge(const json& in, const std::string& model) const {
    const auto& c = chunk(in);
    const auto a = in.at("Target Attribute").get<std::string>();
    auto v = pick(c, c.committee, a);
    if (model == "committee-c") {
      if (auto it = c.dissent.find(a); it != c.dissent.end()) v = it->second;
    }
    return reply("Independent extraction.", {{"Value", to_cell(v)}});
  }

  std::vector<ChunkSpec> chunks_;
  std::map<std::string, const ChunkSpec*> by_text_;
};

TemplateId template_of(const std::string& system) {
  for (auto id : {TemplateId::kPhase1, TemplateId::kPhase2, TemplateId::kRepair, TemplateId::kTableResolver,
                  TemplateId::kAttributeExtractor, TemplateId::kCommitteeJudge, TemplateId::kConsolidate}) {
    if (prompt_template(id).system == system) return id;
  }
  throw std::runtime_error("unknown system prompt");
}

void write_inputs(const fs::path& f) {
  ChunkCorpus corpus;
  TableSet truth = {{"Hospitals", {}}, {"Treatments", {}}};
  std::string human;
  for (const auto& c : chunks()) {
    corpus.push_back({"doc-" + c.id, c.id, c.text});
    if (!c.truth.empty()) {
      ExtractedRow row{c.id, {c.id}, {}};
      for (const auto& [k, v] : c.truth) row.cells[k] = v;
      find_table(truth, c.general_table)->rows.push_back(std::move(row));
    }
    if (!c.resolved_table.empty()) {
      const int label = c.resolved_table == c.general_table ? 0 : 1;
      human += json{{"extraction_id", c.id + ":" + c.resolved_table}, {"label", label}}.dump() + "\n";
    }
  }
  io::write_file(f / "corpus.jsonl", serialize_chunk_corpus(corpus));
  io::write_file(f / "query.json", io::to_document({{"query_id", "avg-cost-by-city"}, {"text", kQuery}}));
  io::write_file(f / "truth.jsonl", serialize_tables(truth));
  io::write_file(f / "keys.json",
                 io::to_document({{"Hospitals", {"hospital_name"}}, {"Treatments", {"hospital_name", "disease"}}}));
  io::write_file(f / "human_labels.jsonl", human);
}

// Per-layer class offsets along a fixed random direction, scaled by layer.
void write_dumps(const fs::path& f, const fs::path& work) {
  constexpr std::size_t kLayers = 4;
  constexpr std::size_t kDim = 8;
  const double separation[kLayers] = {0.8, 1.6, 2.2, 1.2};
  std::mt19937_64 rng(20240611);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> direction(kLayers, std::vector<double>(kDim));
  for (auto& d : direction) {
    double norm = 0.0;
    for (auto& x : d) norm += (x = normal(rng)) * x;
    for (auto& x : d) x /= std::sqrt(norm);
  }
  const auto labels = load_labels(work / "labels.jsonl");
  DumpSet set;
  set.dim = kDim;
  set.header = json{{"producer", "synthetic fixture generator"}, {"layers", {4, 12, 20, 28}}, {"d", kDim},
                    {"capture_point", "post-block residual stream"}};
  for (const auto& rec : load_records(work / "records.jsonl")) {
    const int y = labels.at(rec.extraction_id).label;
    const double sign = y == 1 ? 1.0 : -1.0;
    const double item_shift = 0.6 * normal(rng);  // shared across layers
    for (std::size_t l = 0; l < kLayers; ++l) {
      HiddenDump d{rec.extraction_id, static_cast<int>(l), rec.token_span.size(), kDim, {}};
      for (std::size_t t = 0; t < d.tokens; ++t) {
        for (std::size_t j = 0; j < kDim; ++j) {
          const double v = (sign * separation[l] + item_shift) * direction[l][j] + 0.7 * normal(rng);
          d.values.push_back(static_cast<float>(std::round(v * 1e4) / 1e4));
        }
      }
      set.dumps.push_back(std::move(d));
    }
  }
  io::write_file(f / "dumps.jsonl", serialize_hidden_dumps(set));
}

void write_reviewed_queue(const fs::path& f, const fs::path& work) {
  const auto truth = load_tables(f / "truth.jsonl");
  auto items = parse_queue(io::read_file(work / "queue.jsonl"));
  for (auto& item : items) {
    const auto* table = find_table(truth, item.table_name);
    const auto* row = table ? table->find_row(item.row_id) : nullptr;
    if (!item.attribute_name) {
      // Confirm genuine assignments; delete the row of a spurious one.
      item.corrected_value = row ? CellValue{item.table_name} : CellValue{};
    } else if (row) {
      item.corrected_value = row->cells.at(*item.attribute_name);
    }
    // Cells of a spurious row stay open: the row is deleted.
  }
  io::write_file(f / "reviewed_queue.jsonl", serialize_queue(items));
}

int fail(const testing::PipelineRun& run) {
  for (const auto& m : run.failures) std::cerr << m << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path f = argc > 1 ? fs::path(argv[1]) : testing::e2e_fixture_dir();
  for (const char* stale : {"transcripts", "golden", "dumps.jsonl", "reviewed_queue.jsonl"}) fs::remove_all(f / stale);
  fs::create_directories(f);
  write_inputs(f);

  ScriptedModel model;
  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = json::parse(req.body);
      const auto& messages = body.at("messages");
      const auto id = template_of(messages.at(0).at("content").get<std::string>());
      const auto user = messages.at(1).at("content").get<std::string>();
      const auto end = user.find("\n}");
      const auto input = json::parse(user.substr(7, end + 2 - 7));  // after "Input:\n"
      const auto feedback = user.substr(end + 2);
      const auto content = model.answer(id, body.at("model").get<std::string>(), input, feedback);
      res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(),
                      "application/json");
    } catch (const std::exception& e) {
      std::cerr << "stub: " << e.what() << "\n";
      res.status = 500;
    }
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  testing::TempDir record_dir;
  const auto recorded = testing::run_stage1(
      f, record_dir.path(),
      {"--base-url", fmt::format("http://127.0.0.1:{}/v1", port), "--record", (f / "transcripts").string()});
  server.stop();
  listener.join();
  if (!recorded.ok()) return fail(recorded);
  write_dumps(f, record_dir.path());

  testing::TempDir work;
  if (auto run = testing::run_stage1(f, work.path()); !run.ok()) return fail(run);
  write_reviewed_queue(f, work.path());
  if (auto run = testing::run_stage2(f, work.path()); !run.ok()) return fail(run);

  for (const auto& rel : testing::golden_files()) {
    fs::create_directories((f / "golden" / rel).parent_path());
    fs::copy_file(work / rel, f / "golden" / rel, fs::copy_options::overwrite_existing);
  }
  std::cout << testing::slurp(work / "report.json");
  return 0;
}
