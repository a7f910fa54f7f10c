#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cellguard {

enum class TemplateId {
  kPhase1,
  kPhase2,
  kRepair,
  kTableResolver,
  kAttributeExtractor,
  kCommitteeJudge,
  kConsolidate,
};

std::string_view to_string(TemplateId id);
TemplateId template_id_from_string(std::string_view s);

// Optional variable every template accepts; set only on re-prompts.
inline constexpr std::string_view kFeedbackVar = "Feedback";

struct PromptTemplate {
  TemplateId id;
  std::string system;                // role + instructions + output contract
  std::vector<std::string> inputs;   // variable names, in presentation order
  std::vector<std::string> outputs;  // labeled fields the reply must contain
};

const PromptTemplate& prompt_template(TemplateId id);

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

// Renders the system message and a user message holding the bound inputs as
// one JSON object. Variables whose value is itself a JSON object or array are
// embedded structurally. Throws ValidationError on unbound or unknown names.
std::vector<ChatMessage> render_prompt(TemplateId id, const std::map<std::string, std::string>& variables);

}  // namespace cellguard
