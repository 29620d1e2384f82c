#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "stagevqa/corpus.hpp"
#include "stagevqa/extract.hpp"
#include "stagevqa/synonyms.hpp"

namespace stagevqa {

struct MergePolicy {
  bool use_llm_fallback = false;
  std::array<Attribute, 5> attribute_order{Attribute::location, Attribute::trait,
                                           Attribute::severity, Attribute::trend,
                                           Attribute::description};

  static MergePolicy for_build() { return MergePolicy{true}; }
  static MergePolicy for_test() { return MergePolicy{false}; }
};

namespace detail {

inline std::string class_key(const SynonymIndex& index, std::string_view term) {
  return canonical_surface(index.canonicalize(term));
}

/// First occurrence per canonical class, original spelling kept.
inline std::vector<std::string> dedupe_values(const SynonymIndex& index,
                                              const std::vector<std::string>& values) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& v : values)
    if (seen.insert(class_key(index, v)).second) out.push_back(v);
  return out;
}

inline std::vector<ExtractedEntity> collapse_list(const std::vector<ExtractedEntity>& in,
                                                  const SynonymIndex& index) {
  std::map<std::string, std::vector<const ExtractedEntity*>> groups;
  for (const auto& e : in) groups[class_key(index, e.name)].push_back(&e);

  std::vector<ExtractedEntity> out;
  for (auto& [key, members] : groups) {
    // A fixed mention order makes the result independent of input order.
    std::vector<std::pair<std::string, const ExtractedEntity*>> keyed;
    for (const auto* m : members) keyed.emplace_back(to_json(*m).dump(), m);
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
      const auto first = [](const ExtractedEntity* e) {
        return e->source_sentences.empty()
                   ? SentenceRef{}
                   : *std::min_element(e->source_sentences.begin(), e->source_sentences.end());
      };
      return std::forward_as_tuple(first(a.second), a.second->name, a.first) <
             std::forward_as_tuple(first(b.second), b.second->name, b.first);
    });

    ExtractedEntity merged;
    merged.name = key;
    merged.kind = keyed.front().second->kind;
    merged.presence = Presence::absent;
    std::set<SentenceRef> sources;
    std::vector<std::string> rel;
    for (const auto& [_, m] : keyed) {
      if (m->presence == Presence::present) merged.presence = Presence::present;
      for (Attribute a : {Attribute::location, Attribute::severity, Attribute::trend,
                          Attribute::trait, Attribute::description}) {
        auto& dst = merged.values(a);
        const auto& src = m->values(a);
        dst.insert(dst.end(), src.begin(), src.end());
      }
      rel.insert(rel.end(), m->rel_to_other.begin(), m->rel_to_other.end());
      sources.insert(m->source_sentences.begin(), m->source_sentences.end());
    }
    for (Attribute a : {Attribute::location, Attribute::severity, Attribute::trend,
                        Attribute::trait, Attribute::description})
      merged.values(a) = dedupe_values(index, merged.values(a));
    if (merged.kind == EntityKind::foreign_body) {
      merged.severity.clear();
      merged.trend.clear();
    }
    for (auto& r : rel)
      if (std::find(merged.rel_to_other.begin(), merged.rel_to_other.end(), r) ==
          merged.rel_to_other.end())
        merged.rel_to_other.push_back(std::move(r));
    merged.source_sentences.assign(sources.begin(), sources.end());
    out.push_back(std::move(merged));
  }
  return out;  // std::map iteration: sorted by canonical name
}

inline std::string_view merge_prompt(Attribute a) {
  switch (a) {
    case Attribute::location: return prompt_id::merge_location;
    case Attribute::severity: return prompt_id::merge_severity;
    case Attribute::trend: return prompt_id::merge_trend;
    case Attribute::trait: return prompt_id::merge_trait;
    case Attribute::description: return prompt_id::merge_description;
  }
  return prompt_id::merge_location;
}

}  // namespace detail

/// Unions entities of the same synonym class within each list. The merged
/// entity takes the class representative as its name; present wins.
inline ExtractionRecord collapse_entities(const ExtractionRecord& record,
                                          const SynonymIndex& index) {
  ExtractionRecord out = record;
  out.abnormalities = detail::collapse_list(record.abnormalities, index);
  out.foreign_bodies = detail::collapse_list(record.foreign_bodies, index);
  return out;
}

/// Asks the backend to consolidate several mentions of one attribute. With
/// fewer than two mentions and no conflict the mentions come back as-is.
inline std::vector<std::string> merge_attribute(const Extractor& x, std::string_view entity,
                                                Attribute attribute,
                                                const std::vector<std::string>& mentions,
                                                std::string_view fact_text, bool conflict = false) {
  if (mentions.size() < 2 && !conflict) return mentions;
  const auto answer = x.ask(detail::merge_prompt(attribute),
                            {std::string(entity), join(mentions, "; "), std::string(fact_text)},
                            [](const std::string& t) { return parse_tagged_answer(t); });
  if (answer.empty()) return {};
  if (attribute == Attribute::location || attribute == Attribute::description) return answer;
  return detail::split_list(answer.front());
}

/// Source sentence texts of an entity, in index order.
inline std::string fact_text(const ExtractedEntity& e, const std::vector<Sentence>& sentences) {
  std::vector<std::string> parts;
  for (const auto& ref : e.source_sentences)
    for (const auto& s : sentences)
      if (s.report_id == ref.report_id && s.index == ref.index) parts.push_back(s.text);
  return join(parts, " ");
}

/// Synonym collapse, then one merge call per attribute that still holds
/// several values. `x` may be null when the policy disables the fallback.
inline ExtractionRecord merge_record(const Extractor* x, const ExtractionRecord& record,
                                     const SynonymIndex& index, const MergePolicy& policy,
                                     const std::vector<Sentence>& sentences) {
  ExtractionRecord out = collapse_entities(record, index);
  if (!policy.use_llm_fallback) return out;
  if (!x) throw UsageError("merge fallback enabled without a backend");
  for (auto* list : {&out.abnormalities, &out.foreign_bodies}) {
    for (auto& e : *list) {
      const std::string fact = fact_text(e, sentences);
      for (Attribute a : policy.attribute_order) {
        if (!attribute_allowed(e.kind, a)) continue;
        auto& v = e.values(a);
        if (v.size() < 2) continue;
        try {
          v = detail::dedupe_values(index, merge_attribute(*x, e.name, a, v, fact));
        } catch (const Error& err) {
          detail::rethrow_with(err, "merging " + std::string(to_string(a)) + " of '" + e.name +
                                        "' in report " + record.report_id);
        }
      }
    }
  }
  return out;
}

}  // namespace stagevqa
