#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "stagevqa/error.hpp"

namespace stagevqa {

enum class OutputGrammar { entity_lists, status_word, attribute_pairs, tagged_answer, free_sentence };

/// Prompt body with positional slots {0}, {1}, ... Any other brace text is
/// literal.
struct PromptTemplate {
  std::string id;
  std::string body;
  std::size_t arity = 0;
  OutputGrammar grammar = OutputGrammar::free_sentence;
};

namespace detail {

/// Calls f(begin, end, index) for every well-formed {N} slot.
template <class F>
void for_each_slot(std::string_view body, F f) {
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] != '{') continue;
    std::size_t j = i + 1;
    std::size_t n = 0;
    while (j < body.size() && body[j] >= '0' && body[j] <= '9') {
      n = n * 10 + static_cast<std::size_t>(body[j] - '0');
      ++j;
    }
    if (j == i + 1 || j >= body.size() || body[j] != '}') continue;
    f(i, j + 1, n);
    i = j;
  }
}

}  // namespace detail

/// Largest slot index + 1, or 0 when the body has no slots.
inline std::size_t slot_count(std::string_view body) {
  std::size_t n = 0;
  detail::for_each_slot(body, [&](std::size_t, std::size_t, std::size_t k) { n = std::max(n, k + 1); });
  return n;
}

inline PromptTemplate make_template(std::string id, std::string body, std::size_t arity,
                                    OutputGrammar grammar) {
  if (slot_count(body) > arity)
    throw DataError("prompt '" + id + "' uses slot {" + std::to_string(slot_count(body) - 1) +
                    "} beyond its arity " + std::to_string(arity));
  return PromptTemplate{std::move(id), std::move(body), arity, grammar};
}

inline std::string render_prompt(const PromptTemplate& t, const std::vector<std::string>& args) {
  if (args.size() < t.arity)
    throw DataError("prompt '" + t.id + "' is missing argument {" + std::to_string(args.size()) +
                    "}");
  std::string out;
  out.reserve(t.body.size() + 64);
  std::size_t last = 0;
  detail::for_each_slot(t.body, [&](std::size_t b, std::size_t e, std::size_t k) {
    if (k >= args.size())
      throw DataError("prompt '" + t.id + "' is missing argument {" + std::to_string(k) + "}");
    out.append(t.body, last, b - last);
    out.append(args[k]);
    last = e;
  });
  out.append(t.body, last, std::string::npos);
  return out;
}

// ---------------------------------------------------------------------------
// Built-in catalog

namespace prompt_id {
inline constexpr std::string_view entities = "entity_extraction";
inline constexpr std::string_view presence = "presence";
inline constexpr std::string_view location = "location";
inline constexpr std::string_view severity = "severity";
inline constexpr std::string_view trend = "trend";
inline constexpr std::string_view trait = "trait";
inline constexpr std::string_view description = "description";
inline constexpr std::string_view merge_location = "merge_location";
inline constexpr std::string_view merge_trait = "merge_trait";
inline constexpr std::string_view merge_severity = "merge_severity";
inline constexpr std::string_view merge_trend = "merge_trend";
inline constexpr std::string_view merge_description = "merge_description";
inline constexpr std::string_view relationships = "relationships";
inline constexpr std::string_view quality_issue = "quality_issue";
inline constexpr std::string_view recommendation = "recommendation";
}  // namespace prompt_id

namespace detail {

inline constexpr std::string_view kEntityPrompt = R"(Your task is to extract the abnormality and foreign body entities from the provided X-ray report.
- Report: "{0}"

Here are the initial entities for reference, but prioritize the definitions and rules below:
- Initial Abnormalities: {1}
- Initial Foreign Bodies: {2}

**Definitions:**
- **Abnormalities**: Specific medical conditions, diseases, injuries, abnormal shapes, opacities and increased densities, or signs of abnormality in the X-ray, excluding normal anatomical terms.
- **Foreign Bodies**: Objects or markers not naturally part of the body, such as medical devices or post-operation markers.

**Extraction Rules:**
1. **Match**: Entities must match the abnormalities and foreign bodies described in the X-ray report.
2. **Exclude Descriptors and Anatomy**: Do not include size, degree, location, numerical measurements, or anatomy unless they are part of a specific abnormality term.
3. **No Inference**: Only include entities explicitly mentioned in the report.

First, output the analysis in the following format:
**Analysis**: [Output analysis of all possible abnormalities and foreign bodies descriptions based on the definitions and rules; if not found, state that clearly in short.]

Second, output all valid entities in the following format, using semicolons (;) to separate entities, and output "None" if no valid entities are found:
**Abnormalities**: [entity_1]; [entity_2]; ...
**Foreign Bodies**: [entity_1]; [entity_2]; ...

Stop immediately after listing the entities.
)";

inline constexpr std::string_view kPresencePrompt = R"(Based on the chest X-ray report: "{0}", do you think that "{1}" is present or absent in the patient's body?

**Definitions:**
- **Present:**
  - **Possible present**: Terms such as positive possible, likely, represents, consistent, indicative, or compatible with in relation to the entity.
  - **Absolutely present**:
    - Terms such as present, no change, remains unchanged, inserted, or placed in relation to the entity.
    - If an entity is described in a declarative sentence without any related terms, it is considered Absolutely Present by default.
- **Absent:**
  - **Possible absent**: Terms such as less likely, negative possible, or not likely in relation to the entity.
  - **Absolutely absent**: Terms such as absent, removed, cleared, denied, excluded, healed, resolved, ruled out, or not present in relation to the entity.

First, output the analysis based on the definitions in the following format:
**Analysis**: [Output the analysis focusing on the "{1}" entity with evidence from definitions clearly and concisely.]

Second, output is limited to a word, present or absent.
**The status of "{1}":** [present or absent]

Stop immediately after outputting the results.
)";

inline constexpr std::string_view kLocationPrompt = R"(Please answer the following question as an X-ray assistant without referencing the report or mentioning itself:
**Question**: "What is the detailed location of {0}?"
**Answer**: One sentence or None.

Check the chest X-ray report: "{1}"
Here are some location keywords for reference: "{2}" but prioritize the rules below.

**Rules:**
1. Location is not part of the entity name ("{0}").
2. Do not infer an answer that is not explicitly mentioned in the report.
3. Location must be detailed and complete with anatomy, location, and other direction and distance information if possible.

**Location**: None
)";

inline std::string attribute_pair_prompt(std::string_view name, std::string_view title) {
  std::string body = R"(Your task is to extract the @ information for entities from the chest X-ray report and output the @ based on the provided @ list.

The chest X-ray report: "{0}"
The entity list: {1}
The @ list is as follows: {2}

**Rules:**
1. Do not infer @ information from the report if it is not explicitly mentioned.
2. The @ must be from the provided @ list.
3. The @ must directly link to the entity in the report.
4. Connection words such as "and", "or" can transfer the @ information.

First, you need to analyze the @ information for each entity:
**Analysis**: [Output the analysis of the @ information for each entity in one sentence, strictly using the report's language. If no @ is mentioned, clearly state this.]

Second, you need to output the @ information for each entity in the following format, using semicolons (;) to separate entities and a vertical line (|) to separate entities and @ information, leave it empty if no valid entities are found:
**#**: [entity1|@1; entity2|@2; ...]

Stop immediately after outputting the result.
)";
  std::string out;
  for (char c : body) {
    if (c == '@') {
      out.append(name);
    } else if (c == '#') {
      out.append(title);
    } else {
      out.push_back(c);
    }
  }
  return out;
}

inline constexpr std::string_view kDescriptionPrompt = R"(Please answer the following question based on the report without referencing the report or mentioning itself:
**Question**: "What is the detailed description of {0}?"
**Answer**: One sentence or None.

The chest X-ray report: "{1}"

**Rules:**
1. Only focus on {0}'s description, exclude the information of other abnormalities and foreign bodies.
2. Do not infer the information from the report if it is not explicitly mentioned.
3. The description must be detailed and complete, including the shape, size, density, and other characteristics if possible.

**Description**: [Answer one sentence about the detailed and complete description of {0} using the report's language]

Stop immediately after outputting the results without any additional information.
)";

inline constexpr std::string_view kMergeLocationPrompt = R"(You are a medical AI assistant. Your task is to refine and polish the location information of {0}.

The focus target is: "{0}".
The extracted location information is: "{1}".
The chest X-ray radiological fact states: "{2}".

**Rules:**
1. Correct the error or conflict information.
2. Polish the unspecific location.
3. If there are no valid and correct location specified, state that clearly.
4. Focus on the location of {0} only.
5. If the location can be merged, please summarize them into one word or a sentence, such as left and right should be merged.

**Output in the following format with <answer> and <think> tags:**
<think>
Thinking process to analyze and refine the content in one sentence; If no valid and correct location specified, clearly state this.
</think>
<answer>
Output the detailed location-only information using the report's language from the view of diagnosis without mentioning the fact itself in one sentence or few words: [Location]; If no valid and correct location specified, output "None".
</answer>

Stop immediately after outputting the results.
)";

inline constexpr std::string_view kMergeTraitPrompt = R"(You are a medical AI assistant. Your task is to refine and polish the traits information of {0}.
Traits are the characteristics/features/attributes of the {0}.

The focus target is: "{0}".
The extracted traits information is: "{1}".
The chest X-ray radiological fact states: "{2}".

**Rules:**
1. Correct the error or conflicting traits to find the suitable traits.
2. Polish the unspecific traits with more specific located information.
3. If there are no valid traits specified, state that clearly.
4. Focus on the traits of {0} only.
5. Merge the traits with the same location information into a combined word.

**Output in the following format with <answer> and <think> tags:**
<think>
Thinking process to analyze and refine the content in one concise and short sentence; If no valid and correct traits specified, clearly state this.
</think>
<answer>
Output the traits information separated by semicolon (;) from the view of diagnosis without mentioning the fact itself [Trait-1 with specific information-1; Trait-2 with specific information-2; ...]; If no valid and correct traits specified, output "None".
</answer>

Stop immediately after outputting the results.
)";

/// Severity and trend merge prompts share one shape.
inline std::string merge_scalar_prompt(std::string_view name, std::string_view title) {
  std::string body = R"(You are a medical AI assistant. Your task is to refine and polish the @ information of {0}.

The focus target is: "{0}".
The extracted @ information is: "{1}".
The chest X-ray radiological fact states: "{2}".

**Rules:**
1. Correct the error or conflicting @ to find the suitable @.
2. Polish the unspecific @ with more specific located information.
3. Focus on the @ of {0} only.
4. Merge the @ with the same location information into a combined word.

**Output in the following format with <answer> and <think> tags:**
<think>
Thinking process to analyze and refine the content in one concise and short sentence; If no valid and correct @ specified, clearly state this.
</think>
<answer>
Output the @ information separated by semicolon (;) from the view of diagnosis without mentioning the fact itself [#-1 with specific information-1; #-2 with specific information-2; ...]; If no valid and correct @ specified, output "None".
</answer>

Stop immediately after outputting the results.
)";
  std::string out;
  for (char c : body) {
    if (c == '@') {
      out.append(name);
    } else if (c == '#') {
      out.append(title);
    } else {
      out.push_back(c);
    }
  }
  return out;
}

inline constexpr std::string_view kMergeDescriptionPrompt = R"(You are a medical AI assistant. Your task is to refine and polish the description of {0}.

The focus target is: "{0}".
The extracted description is: "{1}".
The chest X-ray radiological fact states: "{2}".

**Rules:**
1. Correct the error or conflicting description to find the suitable description.
2. Polish or ignore the unspecific description.
3. Focus on the description of {0} only.

**Output in the following format with <answer> and <think> tags:**
<think>
Thinking process to analyze and refine the content in one concise and short sentence; If no valid and correct description specified, clearly state this.
</think>
<answer>
Write the description in one sentence or paragraph from the view of diagnosis without mentioning the fact itself [Description]; If no valid and correct description specified, output "None".
</answer>

Stop immediately after outputting the results.
)";

inline constexpr std::string_view kRelationshipsPrompt = R"(Please answer the following question as an X-ray assistant diagnosis with image, without referencing the report or mentioning yourself:
**Question**: "What are the pathological relationships among the findings?"

The chest X-ray report: "{0}"
Relationship words: "{1}"
Findings: "{2}"

**Rules:**
1. Exclude entities without relationships or only with relationships to itself.
2. Do not change the facts or infer relationships from context.
3. Only the direct relationships between the findings are considered.

**Output in the following format:**
<think> Analysis adhering to the rules and report in one sentence; If no relationships mentioned, explicitly state this. </think>

<answer>
Strictly using the report's language and detailed relationship words while summarizing the relationships among findings into one continuous and concise paragraph without listing and semicolon enumeration. If no relationships mentioned, please output "None".
</answer>

Stop immediately after outputting the results.
)";

inline constexpr std::string_view kQualityPrompt = R"(Please answer the following question as an X-ray assistant without referencing the report or mentioning itself:
**Question**: "What are the X-ray issues regarding assessment difficulty, patient posture, image quality, and technical issues?"
Provide a one-sentence response based on your interpretation of the X-ray, or respond with "None" if no quality issues are mentioned.

The chest X-ray report: "{0}"

**Rules:**
1. Exclude any information about "{1}".
2. Only include information related to assessment difficulty, patient posture, image quality, and technical issues.
3. Do not infer issues from the report or change the facts if they are not explicitly mentioned.

**Output in the following format:**
<think> Analysis adhering to the rules and report in one sentence; If no quality issues mentioned, explicitly state this. </think>

<answer>
A simple sentence that fully details the quality issue using the report's language, without duplication. If no quality issues mentioned, please output "None".
</answer>

Stop immediately after outputting the result.
)";

inline constexpr std::string_view kRecommendationPrompt = R"(Please answer the following question as an X-ray assistant without referencing the report or mentioning itself:
**Question**: "What are the recommendations for further CT/MR/X-ray imaging, clinical correlation, requirements, follow-up, uncertain diagnosis examination, or treatment in this study?"
Provide a one-sentence response based on your interpretation of the X-ray, or respond with "None" if no recommendations are mentioned.

The chest X-ray report: "{0}"

**Rules:**
1. Focus on the recommendation information for further CT/MR/X-ray imaging, clinical correlation, requirements, follow-up, uncertain diagnosis examination, or treatment.
2. If a CT/MR is mentioned in the report, it implies a CT/MR is recommended.
3. Do not infer if it is not explicitly mentioned.

**Output in the following format:**
<think> Analysis adhering to the rules and report in one sentence; If no recommendations mentioned, explicitly state this. </think>

<answer>
A simple sentence that fully details the recommendations using the report's language, without duplication. If no recommendations mentioned, please output "None".
</answer>

Stop immediately after outputting the result.
)";

struct TemplateSpec {
  std::string_view id;
  std::size_t arity;
  OutputGrammar grammar;
};

inline constexpr TemplateSpec kTemplateSpecs[] = {
    {prompt_id::entities, 3, OutputGrammar::entity_lists},
    {prompt_id::presence, 2, OutputGrammar::status_word},
    {prompt_id::location, 3, OutputGrammar::free_sentence},
    {prompt_id::severity, 3, OutputGrammar::attribute_pairs},
    {prompt_id::trend, 3, OutputGrammar::attribute_pairs},
    {prompt_id::trait, 3, OutputGrammar::attribute_pairs},
    {prompt_id::description, 2, OutputGrammar::free_sentence},
    {prompt_id::merge_location, 3, OutputGrammar::tagged_answer},
    {prompt_id::merge_trait, 3, OutputGrammar::tagged_answer},
    {prompt_id::merge_severity, 3, OutputGrammar::tagged_answer},
    {prompt_id::merge_trend, 3, OutputGrammar::tagged_answer},
    {prompt_id::merge_description, 3, OutputGrammar::tagged_answer},
    {prompt_id::relationships, 3, OutputGrammar::tagged_answer},
    {prompt_id::quality_issue, 2, OutputGrammar::tagged_answer},
    {prompt_id::recommendation, 1, OutputGrammar::tagged_answer},
};

inline const TemplateSpec* find_spec(std::string_view id) {
  for (const auto& s : kTemplateSpecs)
    if (s.id == id) return &s;
  return nullptr;
}

}  // namespace detail

/// Prompt id -> template. Starts from the built-in set; a directory of
/// `<id>.txt` files overrides individual entries.
class PromptCatalog {
 public:
  static PromptCatalog builtin() {
    PromptCatalog c;
    using namespace detail;
    const auto put = [&](std::string_view id, std::string body) {
      const auto* spec = find_spec(id);
      c.templates_[std::string(id)] =
          make_template(std::string(id), std::move(body), spec->arity, spec->grammar);
    };
    put(prompt_id::entities, std::string(kEntityPrompt));
    put(prompt_id::presence, std::string(kPresencePrompt));
    put(prompt_id::location, std::string(kLocationPrompt));
    put(prompt_id::severity, attribute_pair_prompt("severity", "Severity"));
    put(prompt_id::trend, attribute_pair_prompt("trend", "Trend"));
    put(prompt_id::trait, attribute_pair_prompt("trait", "Trait"));
    put(prompt_id::description, std::string(kDescriptionPrompt));
    put(prompt_id::merge_location, std::string(kMergeLocationPrompt));
    put(prompt_id::merge_trait, std::string(kMergeTraitPrompt));
    put(prompt_id::merge_severity, merge_scalar_prompt("severity", "Severity"));
    put(prompt_id::merge_trend, merge_scalar_prompt("trend", "Trend"));
    put(prompt_id::merge_description, std::string(kMergeDescriptionPrompt));
    put(prompt_id::relationships, std::string(kRelationshipsPrompt));
    put(prompt_id::quality_issue, std::string(kQualityPrompt));
    put(prompt_id::recommendation, std::string(kRecommendationPrompt));
    return c;
  }

  /// Unknown file names are rejected so a typo cannot silently fall back
  /// to the built-in body.
  static PromptCatalog from_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("template directory not found: " + dir);
    PromptCatalog c = builtin();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      const std::string id = p.stem().string();
      const auto* spec = detail::find_spec(id);
      if (!spec) throw DataError("unknown prompt id '" + id + "' in " + dir);
      std::ifstream in(p, std::ios::binary);
      std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      c.templates_[id] = make_template(id, std::move(body), spec->arity, spec->grammar);
    }
    return c;
  }

  const PromptTemplate& at(std::string_view id) const {
    const auto it = templates_.find(std::string(id));
    if (it == templates_.end()) throw DataError("no prompt template '" + std::string(id) + "'");
    return it->second;
  }

  const std::map<std::string, PromptTemplate>& all() const noexcept { return templates_; }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace stagevqa
