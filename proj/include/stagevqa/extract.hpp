#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "stagevqa/backend.hpp"
#include "stagevqa/corpus.hpp"
#include "stagevqa/error.hpp"
#include "stagevqa/lexicon.hpp"
#include "stagevqa/prompts.hpp"
#include "stagevqa/text.hpp"

namespace stagevqa {

enum class EntityKind { abnormality, foreign_body };
enum class Presence { present, absent };
enum class Attribute { location, severity, trend, trait, description };
enum class ReportLevel { relationships, quality_issue, recommendation };

inline std::string_view to_string(Presence p) { return p == Presence::present ? "present" : "absent"; }

inline Presence parse_presence(std::string_view s) {
  const std::string w = fold(trim(s));
  if (w == "present") return Presence::present;
  if (w == "absent") return Presence::absent;
  throw ParseError("presence must be 'present' or 'absent', got '" + std::string(s) + "'");
}

inline std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::location: return "location";
    case Attribute::severity: return "severity";
    case Attribute::trend: return "trend";
    case Attribute::trait: return "trait";
    case Attribute::description: return "description";
  }
  return "location";
}

inline Attribute parse_attribute(std::string_view s) {
  for (Attribute a : {Attribute::location, Attribute::severity, Attribute::trend, Attribute::trait,
                      Attribute::description})
    if (to_string(a) == s) return a;
  throw UsageError("unknown attribute '" + std::string(s) + "'");
}

inline bool attribute_allowed(EntityKind kind, Attribute a) {
  return kind == EntityKind::abnormality || (a != Attribute::severity && a != Attribute::trend);
}

struct SentenceRef {
  std::string report_id;
  std::size_t index = 0;

  friend bool operator==(const SentenceRef&, const SentenceRef&) = default;
  friend auto operator<=>(const SentenceRef&, const SentenceRef&) = default;
};

struct ExtractedEntity {
  std::string name;
  EntityKind kind = EntityKind::abnormality;
  Presence presence = Presence::present;
  std::vector<std::string> location;
  std::vector<std::string> severity;
  std::vector<std::string> trend;
  std::vector<std::string> trait;
  std::vector<std::string> description;
  std::vector<std::string> rel_to_other;
  std::vector<SentenceRef> source_sentences;

  std::vector<std::string>& values(Attribute a) {
    switch (a) {
      case Attribute::location: return location;
      case Attribute::severity: return severity;
      case Attribute::trend: return trend;
      case Attribute::trait: return trait;
      case Attribute::description: return description;
    }
    return location;
  }
  const std::vector<std::string>& values(Attribute a) const {
    return const_cast<ExtractedEntity*>(this)->values(a);
  }

  friend bool operator==(const ExtractedEntity&, const ExtractedEntity&) = default;
};

struct ExtractionRecord {
  std::string report_id;
  std::vector<ExtractedEntity> abnormalities;
  std::vector<ExtractedEntity> foreign_bodies;
  std::vector<std::string> relationships;
  std::vector<std::string> quality_issue;
  std::vector<std::string> recommendation;

  friend bool operator==(const ExtractionRecord&, const ExtractionRecord&) = default;
};

// ---------------------------------------------------------------------------
// Output parsing

namespace detail {

inline std::string strip_bold(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '*' && i + 1 < s.size() && s[i + 1] == '*') {
      ++i;
      continue;
    }
    out.push_back(s[i]);
  }
  return out;
}

/// Drops list bullets, wrapping brackets and quotes.
inline std::string_view strip_item(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.front() == '-' || s.front() == '*') &&
         (s.size() == 1 || s[1] == ' ' || s[1] == '\t'))
    s = trim(s.substr(1));
  bool changed = true;
  while (changed && s.size() >= 1) {
    changed = false;
    if (s.front() == '[' || s.front() == '"') {
      s = trim(s.substr(1));
      changed = true;
    }
    if (!s.empty() && (s.back() == ']' || s.back() == '"')) {
      s = trim(s.substr(0, s.size() - 1));
      changed = true;
    }
  }
  return s;
}

inline bool is_none(std::string_view s) {
  s = strip_item(s);
  while (!s.empty() && s.back() == '.') s.remove_suffix(1);
  return iequals(trim(s), "none");
}

/// Text after `header:` on the last line that starts with the header.
inline std::optional<std::string> header_value(std::string_view text, std::string_view header) {
  const std::string plain = strip_bold(text);
  std::optional<std::string> found;
  for (const auto& raw : split(plain, '\n')) {
    std::string_view line = trim(raw);
    while (!line.empty() && (line.front() == '-' || line.front() == '#')) line = trim(line.substr(1));
    if (line.size() < header.size() || !iequals(line.substr(0, header.size()), header)) continue;
    std::string_view rest = trim(line.substr(header.size()));
    if (rest.empty() || rest.front() != ':') continue;
    found = std::string(trim(rest.substr(1)));
  }
  return found;
}

inline std::vector<std::string> split_list(std::string_view content) {
  std::vector<std::string> out;
  if (is_none(content)) return out;
  for (const auto& part : split(content, ';')) {
    std::string_view item = strip_item(part);
    while (!item.empty() && item.back() == '.') item = trim(item.substr(0, item.size() - 1));
    if (item.empty() || is_none(item)) continue;
    out.emplace_back(item);
  }
  return out;
}

}  // namespace detail

struct EntityLists {
  std::vector<std::string> abnormalities;
  std::vector<std::string> foreign_bodies;

  friend bool operator==(const EntityLists&, const EntityLists&) = default;
};

inline EntityLists parse_entity_lists(std::string_view text) {
  const auto abn = detail::header_value(text, "Abnormalities");
  const auto fb = detail::header_value(text, "Foreign Bodies");
  if (!abn && !fb) throw ParseError("no 'Abnormalities:' or 'Foreign Bodies:' line in output");
  EntityLists out;
  if (abn) out.abnormalities = detail::split_list(*abn);
  if (fb) out.foreign_bodies = detail::split_list(*fb);
  return out;
}

inline std::string format_entity_lists(const EntityLists& lists) {
  const auto side = [](const std::vector<std::string>& v) {
    return v.empty() ? std::string("None") : join(v, "; ");
  };
  return "Abnormalities: " + side(lists.abnormalities) + "\nForeign Bodies: " +
         side(lists.foreign_bodies) + "\n";
}

/// Reads the final `The status of "X": word` line.
inline Presence parse_presence_status(std::string_view text) {
  const std::string plain = detail::strip_bold(text);
  const auto lines = split(plain, '\n');
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    const std::size_t at = ifind(*it, "the status of");
    if (at == std::string::npos) continue;
    const std::size_t colon = it->find(':', at);
    if (colon == std::string::npos) continue;
    std::string_view word = detail::strip_item(std::string_view(*it).substr(colon + 1));
    while (!word.empty() && word.back() == '.') word.remove_suffix(1);
    return parse_presence(word);
  }
  throw ParseError("no status line in presence output");
}

/// `entity|value` pairs after the header, in output order.
inline std::vector<std::pair<std::string, std::string>> parse_attribute_pairs(
    std::string_view text, std::string_view header) {
  const auto content = detail::header_value(text, header);
  if (!content) throw ParseError("no '" + std::string(header) + ":' line in output");
  std::vector<std::pair<std::string, std::string>> out;
  if (detail::is_none(*content)) return out;
  for (const auto& part : split(*content, ';')) {
    const std::string_view item = detail::strip_item(part);
    if (item.empty() || detail::is_none(item)) continue;
    const std::size_t bar = item.find('|');
    if (bar == std::string::npos || item.find('|', bar + 1) != std::string::npos)
      throw ParseError("malformed pair '" + std::string(item) + "'");
    const std::string_view entity = detail::strip_item(item.substr(0, bar));
    std::string_view value = detail::strip_item(item.substr(bar + 1));
    while (!value.empty() && value.back() == '.') value.remove_suffix(1);
    if (entity.empty()) throw ParseError("pair without entity '" + std::string(item) + "'");
    if (value.empty() || detail::is_none(value)) continue;
    out.emplace_back(std::string(entity), std::string(value));
  }
  return out;
}

/// Values paired with `entity`, compared case-folded.
inline std::vector<std::string> values_for(
    const std::vector<std::pair<std::string, std::string>>& pairs, std::string_view entity) {
  std::vector<std::string> out;
  const std::string key = canonical_surface(entity);
  for (const auto& [e, v] : pairs)
    if (canonical_surface(e) == key) out.push_back(v);
  return out;
}

/// Single-sentence answer after `header:`. A completion without the header
/// is accepted when it is one line.
inline std::vector<std::string> parse_sentence_answer(std::string_view text,
                                                      std::string_view header) {
  auto content = detail::header_value(text, header);
  if (!content) {
    const std::string plain = std::string(trim(detail::strip_bold(text)));
    if (plain.empty() || plain.find('\n') != std::string::npos)
      throw ParseError("no '" + std::string(header) + ":' line in output");
    content = plain;
  }
  const std::string_view v = detail::strip_item(*content);
  if (v.empty() || detail::is_none(v)) return {};
  return {std::string(v)};
}

/// Content of the last <answer>...</answer> pair; think blocks are ignored.
inline std::string parse_answer_tag(std::string_view text) {
  const std::size_t open = [&] {
    std::size_t at = std::string::npos;
    for (std::size_t p = ifind(text, "<answer>"); p != std::string::npos;
         p = ifind(text, "<answer>", p + 1))
      at = p;
    return at;
  }();
  if (open == std::string::npos) throw ParseError("no <answer> tag in output");
  const std::size_t body = open + 8;
  const std::size_t close = ifind(text, "</answer>", body);
  if (close == std::string::npos) throw ParseError("unterminated <answer> tag in output");
  return std::string(trim(text.substr(body, close - body)));
}

/// Answer-tag content as a list: empty for "None", one element otherwise.
inline std::vector<std::string> parse_tagged_answer(std::string_view text) {
  const std::string a = parse_answer_tag(text);
  if (a.empty() || detail::is_none(a)) return {};
  return {a};
}

// ---------------------------------------------------------------------------
// Extraction drivers

struct GenerationOptions {
  int max_tokens = 512;
  double temperature = 0.0;
};

struct Extractor {
  GenerationBackend& backend;
  const Lexicon& lexicon;
  const PromptCatalog& prompts;
  GenerationOptions options{};

  template <class Parse>
  auto ask(std::string_view prompt_id, const std::vector<std::string>& args, Parse parse) const {
    GenerationRequest req;
    req.prompt = render_prompt(prompts.at(prompt_id), args);
    req.max_tokens = options.max_tokens;
    req.temperature = options.temperature;
    return generate_parsed(backend, req, parse);
  }
};

namespace detail {

inline std::string joined_or_none(const std::vector<std::string>& v, std::string_view sep) {
  return v.empty() ? std::string("None") : join(v, sep);
}

inline std::vector<std::string> hint_terms(const Lexicon& lexicon, std::string_view text,
                                           Category c) {
  std::vector<std::string> out;
  for (const auto& m : match_terms(lexicon, text)) {
    const auto* t = lexicon.find(m.term);
    if (t && t->category == c && std::find(out.begin(), out.end(), m.term) == out.end())
      out.push_back(m.term);
  }
  return out;
}

inline std::string_view attribute_prompt(Attribute a) {
  switch (a) {
    case Attribute::location: return prompt_id::location;
    case Attribute::severity: return prompt_id::severity;
    case Attribute::trend: return prompt_id::trend;
    case Attribute::trait: return prompt_id::trait;
    case Attribute::description: return prompt_id::description;
  }
  return prompt_id::location;
}

inline std::string_view attribute_header(Attribute a) {
  switch (a) {
    case Attribute::location: return "Location";
    case Attribute::severity: return "Severity";
    case Attribute::trend: return "Trend";
    case Attribute::trait: return "Trait";
    case Attribute::description: return "Description";
  }
  return "Location";
}

inline Category attribute_category(Attribute a) {
  switch (a) {
    case Attribute::severity: return Category::severity;
    case Attribute::trend: return Category::trend;
    default: return Category::trait;
  }
}

[[noreturn]] inline void rethrow_with(const Error& e, const std::string& where) {
  const std::string msg = where + ": " + e.what();
  switch (e.kind()) {
    case ErrorKind::usage: throw UsageError(msg);
    case ErrorKind::backend: throw BackendError(msg);
    case ErrorKind::data: break;
  }
  throw DataError(msg);
}

}  // namespace detail

/// Candidates sharing at least half their tokens with the vocabulary, order
/// kept. Candidates without tokens are dropped.
inline std::vector<std::string> filter_entities(const std::vector<std::string>& candidates,
                                                const Lexicon& lexicon) {
  std::vector<std::string> out;
  for (const auto& c : candidates) {
    if (token_texts(c).empty()) continue;
    if (token_overlap_fraction(lexicon, c) >= 0.5) out.push_back(c);
  }
  return out;
}

inline EntityLists extract_entities(const Extractor& x, std::string_view sentence) {
  const auto abn = detail::hint_terms(x.lexicon, sentence, Category::abnormalities);
  const auto fb = detail::hint_terms(x.lexicon, sentence, Category::foreign_bodies);
  return x.ask(prompt_id::entities,
               {std::string(sentence), detail::joined_or_none(abn, "; "),
                detail::joined_or_none(fb, "; ")},
               [](const std::string& t) { return parse_entity_lists(t); });
}

inline Presence classify_presence(const Extractor& x, std::string_view report_text,
                                  std::string_view entity) {
  if (trim(entity).empty()) throw DataError("presence query for an empty entity");
  return x.ask(prompt_id::presence, {std::string(report_text), std::string(entity)},
               [](const std::string& t) { return parse_presence_status(t); });
}

/// One pair-list call for several entities; values keyed by entity as given.
inline std::map<std::string, std::vector<std::string>> extract_attribute_pairs(
    const Extractor& x, std::string_view sentence, const std::vector<std::string>& entities,
    Attribute a) {
  if (a == Attribute::location || a == Attribute::description)
    throw UsageError("attribute '" + std::string(to_string(a)) + "' has no pair-list prompt");
  std::map<std::string, std::vector<std::string>> out;
  if (entities.empty()) return out;
  const auto terms = x.lexicon.surfaces(detail::attribute_category(a));
  const auto pairs =
      x.ask(detail::attribute_prompt(a),
            {std::string(sentence), join(entities, "; "), join(terms, ", ")},
            [&](const std::string& t) { return parse_attribute_pairs(t, detail::attribute_header(a)); });
  for (const auto& e : entities) out[e] = values_for(pairs, e);
  return out;
}

inline std::vector<std::string> extract_attributes(const Extractor& x, std::string_view sentence,
                                                   std::string_view entity, Attribute a,
                                                   EntityKind kind = EntityKind::abnormality) {
  if (!attribute_allowed(kind, a))
    throw UsageError("attribute '" + std::string(to_string(a)) + "' does not apply to foreign bodies");
  switch (a) {
    case Attribute::location: {
      auto terms = x.lexicon.surfaces(Category::anatomy);
      const auto dirs = x.lexicon.surfaces(Category::direction);
      terms.insert(terms.end(), dirs.begin(), dirs.end());
      return x.ask(prompt_id::location,
                   {std::string(entity), std::string(sentence), join(terms, ", ")},
                   [](const std::string& t) { return parse_sentence_answer(t, "Location"); });
    }
    case Attribute::description:
      return x.ask(prompt_id::description, {std::string(entity), std::string(sentence)},
                   [](const std::string& t) { return parse_sentence_answer(t, "Description"); });
    default: {
      auto m = extract_attribute_pairs(x, sentence, {std::string(entity)}, a);
      return std::move(m[std::string(entity)]);
    }
  }
}

inline std::vector<std::string> extract_report_level(const Extractor& x, const Report& report,
                                                     ReportLevel kind,
                                                     const std::vector<std::string>& findings = {}) {
  const std::string text = report_text(report);
  switch (kind) {
    case ReportLevel::relationships:
      return x.ask(prompt_id::relationships,
                   {text, join(x.lexicon.surfaces(Category::relation_terms), ", "),
                    detail::joined_or_none(findings, "; ")},
                   [](const std::string& t) { return parse_tagged_answer(t); });
    case ReportLevel::quality_issue:
      return x.ask(prompt_id::quality_issue, {text, detail::joined_or_none(findings, "; ")},
                   [](const std::string& t) { return parse_tagged_answer(t); });
    case ReportLevel::recommendation:
      return x.ask(prompt_id::recommendation, {text},
                   [](const std::string& t) { return parse_tagged_answer(t); });
  }
  return {};
}

/// Pre-merge record: one entity per (sentence, mention).
inline ExtractionRecord extract_report(const Extractor& x, const Report& report) {
  ExtractionRecord rec;
  rec.report_id = report.study_id;
  const auto sentences = segment_sentences(report);
  if (sentences.empty()) return rec;

  std::vector<std::string> names;
  for (const auto& s : sentences) {
    try {
      const EntityLists raw = extract_entities(x, s.text);
      const auto dedupe = [](std::vector<std::string> v) {
        std::vector<std::string> out;
        std::set<std::string> seen;
        for (auto& e : v) {
          std::string c = canonical_surface(e);
          if (seen.insert(c).second) out.push_back(std::move(c));
        }
        return out;
      };
      const auto abn = dedupe(filter_entities(raw.abnormalities, x.lexicon));
      const auto fb = dedupe(filter_entities(raw.foreign_bodies, x.lexicon));
      if (abn.empty() && fb.empty()) continue;

      std::vector<std::string> all = abn;
      all.insert(all.end(), fb.begin(), fb.end());
      const auto severity = extract_attribute_pairs(x, s.text, abn, Attribute::severity);
      const auto trend = extract_attribute_pairs(x, s.text, abn, Attribute::trend);
      const auto trait = extract_attribute_pairs(x, s.text, all, Attribute::trait);

      const auto build = [&](const std::string& name, EntityKind kind) {
        ExtractedEntity e;
        e.name = name;
        e.kind = kind;
        e.presence = classify_presence(x, s.text, name);
        e.location = extract_attributes(x, s.text, name, Attribute::location, kind);
        if (kind == EntityKind::abnormality) {
          e.severity = severity.at(name);
          e.trend = trend.at(name);
        }
        e.trait = trait.at(name);
        e.description = extract_attributes(x, s.text, name, Attribute::description, kind);
        e.source_sentences.push_back(SentenceRef{report.study_id, s.index});
        return e;
      };
      for (const auto& n : abn) rec.abnormalities.push_back(build(n, EntityKind::abnormality));
      for (const auto& n : fb) rec.foreign_bodies.push_back(build(n, EntityKind::foreign_body));
      for (const auto& n : all)
        if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    } catch (const Error& e) {
      detail::rethrow_with(e, "report " + report.study_id + " sentence " + std::to_string(s.index));
    }
  }

  try {
    rec.relationships = extract_report_level(x, report, ReportLevel::relationships, names);
    rec.quality_issue = extract_report_level(x, report, ReportLevel::quality_issue, names);
    rec.recommendation = extract_report_level(x, report, ReportLevel::recommendation, names);
  } catch (const Error& e) {
    detail::rethrow_with(e, "report " + report.study_id);
  }
  for (auto* list : {&rec.abnormalities, &rec.foreign_bodies})
    for (auto& e : *list)
      for (const auto& r : rec.relationships)
        if (ifind(r, e.name) != std::string::npos) e.rel_to_other.push_back(r);
  return rec;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const ExtractedEntity& e) {
  nlohmann::ordered_json j;
  j["Name"] = e.name;
  j["Pre_or_Absent"] = std::string(to_string(e.presence));
  j["Location"] = e.location;
  if (e.kind == EntityKind::abnormality) {
    j["Severity"] = e.severity;
    j["Trend"] = e.trend;
  }
  j["Trait"] = e.trait;
  j["Rel_to_Other"] = e.rel_to_other;
  j["Description"] = e.description;
  auto src = nlohmann::ordered_json::array();
  for (const auto& s : e.source_sentences) src.push_back({{"report_id", s.report_id}, {"index", s.index}});
  j["Source_Sentences"] = std::move(src);
  return j;
}

inline nlohmann::ordered_json to_json(const ExtractionRecord& r) {
  nlohmann::ordered_json j;
  j["report_id"] = r.report_id;
  j["abnormalities"] = nlohmann::ordered_json::array();
  for (const auto& e : r.abnormalities) j["abnormalities"].push_back(to_json(e));
  j["foreign_bodies"] = nlohmann::ordered_json::array();
  for (const auto& e : r.foreign_bodies) j["foreign_bodies"].push_back(to_json(e));
  j["relationships"] = r.relationships;
  j["quality_issue"] = r.quality_issue;
  j["recommendation"] = r.recommendation;
  return j;
}

inline ExtractedEntity entity_from_json(const nlohmann::json& j, EntityKind kind) {
  ExtractedEntity e;
  e.kind = kind;
  e.name = j.at("Name").get<std::string>();
  e.presence = parse_presence(j.at("Pre_or_Absent").get<std::string>());
  const auto list = [&](const char* key) {
    return j.contains(key) ? j.at(key).get<std::vector<std::string>>() : std::vector<std::string>{};
  };
  e.location = list("Location");
  if (kind == EntityKind::abnormality) {
    e.severity = list("Severity");
    e.trend = list("Trend");
  } else if (!list("Severity").empty() || !list("Trend").empty()) {
    throw DataError("foreign body '" + e.name + "' carries severity or trend");
  }
  e.trait = list("Trait");
  e.rel_to_other = list("Rel_to_Other");
  e.description = list("Description");
  if (j.contains("Source_Sentences"))
    for (const auto& s : j.at("Source_Sentences"))
      e.source_sentences.push_back(
          SentenceRef{s.at("report_id").get<std::string>(), s.at("index").get<std::size_t>()});
  return e;
}

inline ExtractionRecord record_from_json(const nlohmann::json& j) {
  try {
    ExtractionRecord r;
    r.report_id = j.at("report_id").get<std::string>();
    for (const auto& e : j.at("abnormalities"))
      r.abnormalities.push_back(entity_from_json(e, EntityKind::abnormality));
    for (const auto& e : j.at("foreign_bodies"))
      r.foreign_bodies.push_back(entity_from_json(e, EntityKind::foreign_body));
    r.relationships = j.at("relationships").get<std::vector<std::string>>();
    r.quality_issue = j.at("quality_issue").get<std::vector<std::string>>();
    r.recommendation = j.at("recommendation").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed extraction record: ") + e.what());
  }
}

inline std::vector<ExtractionRecord> load_records(const std::string& path) {
  std::vector<ExtractionRecord> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) { out.push_back(record_from_json(j)); });
  return out;
}

}  // namespace stagevqa
