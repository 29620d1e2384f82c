#pragma once

#include <algorithm>
#include <atomic>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "stagevqa/backend.hpp"
#include "stagevqa/corpus.hpp"
#include "stagevqa/lexicon.hpp"
#include "stagevqa/text.hpp"

namespace stagevqa {

/// Deterministic stand-in for the extraction model. It recognises each
/// built-in prompt by its wording, pulls the quoted inputs back out, and
/// answers with lexicon lookups and a few cue-word rules.
class RuleBackend final : public GenerationBackend {
 public:
  explicit RuleBackend(const Lexicon& lexicon) : lexicon_(lexicon) {}

  Completion generate(const GenerationRequest& request) override {
    ++calls_;
    return Completion{answer(request.prompt), std::nullopt};
  }

  std::size_t max_in_flight() const override { return 64; }
  std::size_t calls() const noexcept { return calls_.load(); }

  std::string answer(std::string_view p) const {
    if (has(p, "extract the abnormality and foreign body entities"))
      return entities(between(p, "- Report: \"", "\"\n\nHere are"));
    if (has(p, "do you think that \""))
      return presence(between(p, "Based on the chest X-ray report: \"", "\", do you think that \""),
                      between(p, "\", do you think that \"", "\" is present or absent"));
    if (has(p, "What is the detailed location of "))
      return location(between(p, "What is the detailed location of ", "?\""),
                      between(p, "Check the chest X-ray report: \"", "\"\nHere are some location"));
    if (has(p, "What is the detailed description of "))
      return description(between(p, "What is the detailed description of ", "?\""),
                         between(p, "The chest X-ray report: \"", "\"\n\n"));
    for (const auto& [name, title, cat] :
         {std::tuple{"severity", "Severity", Category::severity},
          std::tuple{"trend", "Trend", Category::trend},
          std::tuple{"trait", "Trait", Category::trait}}) {
      if (has(p, std::string("Your task is to extract the ") + name + " information"))
        return pairs(title, cat, between(p, "The chest X-ray report: \"", "\"\nThe entity list: "),
                     between(p, "\"\nThe entity list: ", "\nThe "));
    }
    if (has(p, "Your task is to refine and polish the")) return merge(p);
    if (has(p, "pathological relationships among the findings"))
      return relationships(between(p, "The chest X-ray report: \"", "\"\nRelationship words"),
                           between(p, "Findings: \"", "\"\n"));
    if (has(p, "What are the X-ray issues regarding"))
      return tagged(keyword_sentences(between(p, "The chest X-ray report: \"", "\"\n\n"),
                                      kQualityCues));
    if (has(p, "What are the recommendations for further"))
      return tagged(keyword_sentences(between(p, "The chest X-ray report: \"", "\"\n\n"),
                                      kAdviceCues));
    throw BackendError("rule backend does not recognise the prompt");
  }

 private:
  static constexpr std::string_view kNegations[] = {"no",      "not",   "without", "absent",
                                                    "negative", "free", "denied",  "excluded"};
  static constexpr std::string_view kResolved[] = {"resolved", "removed", "cleared", "absent",
                                                   "excluded", "healed",  "resolution"};
  static constexpr std::string_view kQualityCues[] = {
      "rotated", "rotation", "limited", "underpenetrated", "overexposed", "motion",
      "suboptimal", "technique", "positioning", "artifact", "supine", "portable"};
  static constexpr std::string_view kAdviceCues[] = {
      "recommend", "recommended", "suggest", "suggested", "follow", "correlation", "ct", "mri",
      "advised", "consider"};

  static bool has(std::string_view p, std::string_view needle) {
    return p.find(needle) != std::string_view::npos;
  }

  static std::string between(std::string_view p, std::string_view open, std::string_view close) {
    const std::size_t b = p.find(open);
    if (b == std::string_view::npos) throw BackendError("rule backend: prompt lacks expected field");
    const std::size_t s = b + open.size();
    const std::size_t e = p.find(close, s);
    if (e == std::string_view::npos) throw BackendError("rule backend: prompt lacks expected field");
    return std::string(p.substr(s, e - s));
  }

  static std::string tagged(const std::string& body) {
    return "<think>\nRule-based reading of the report.\n</think>\n<answer>\n" +
           (body.empty() ? std::string("None") : body) + "\n</answer>\n";
  }

  /// Byte range of the clause holding [b, e): bounded by , ; : and "but".
  static std::pair<std::size_t, std::size_t> clause_of(std::string_view s, std::size_t b,
                                                       std::size_t e) {
    const auto is_stop = [&](std::size_t i) {
      if (s[i] == ',' || s[i] == ';' || s[i] == ':') return true;
      return false;
    };
    std::size_t lo = b;
    while (lo > 0 && !is_stop(lo - 1)) --lo;
    std::size_t hi = e;
    while (hi < s.size() && !is_stop(hi)) ++hi;
    const std::string low = fold(s);
    const std::size_t but = low.rfind(" but ", b);
    if (but != std::string::npos && but >= lo) lo = but + 5;
    return {lo, hi};
  }

  std::optional<TermMatch> locate(std::string_view sentence, std::string_view entity) const {
    const auto want = token_texts(entity);
    const auto toks = tokenize(sentence);
    for (std::size_t i = 0; i + want.size() <= toks.size(); ++i) {
      bool ok = !want.empty();
      for (std::size_t k = 0; ok && k < want.size(); ++k) ok = toks[i + k].text == want[k];
      if (ok) return TermMatch{std::string(entity), toks[i].begin, toks[i + want.size() - 1].end};
    }
    return std::nullopt;
  }

  std::string entities(const std::string& sentence) const {
    std::vector<std::string> abn, fb;
    for (const auto& m : match_terms(lexicon_, sentence)) {
      const auto* t = lexicon_.find(m.term);
      auto* dst = t->category == Category::abnormalities    ? &abn
                  : t->category == Category::foreign_bodies ? &fb
                                                            : nullptr;
      if (dst && std::find(dst->begin(), dst->end(), m.term) == dst->end()) dst->push_back(m.term);
    }
    const auto side = [](const std::vector<std::string>& v) {
      return v.empty() ? std::string("None") : join(v, "; ");
    };
    return "**Analysis**: Entities matched against the vocabulary.\n**Abnormalities**: " +
           side(abn) + "\n**Foreign Bodies**: " + side(fb) + "\n";
  }

  std::string presence(const std::string& text, const std::string& entity) const {
    std::string status = "present";
    if (const auto at = locate(text, entity)) {
      const auto [lo, hi] = clause_of(text, at->begin, at->end);
      const auto before = tokenize(std::string_view(text).substr(lo, at->begin - lo));
      const auto after = tokenize(std::string_view(text).substr(at->end, hi - at->end));
      for (std::size_t i = 0; i < before.size(); ++i) {
        const auto& w = before[i].text;
        const bool no_change = w == "no" && i + 1 < before.size() &&
                               (before[i + 1].text == "change" || before[i + 1].text == "interval");
        if (no_change) continue;
        for (auto cue : kNegations)
          if (w == cue) status = "absent";
      }
      for (const auto& t : after)
        for (auto cue : kResolved)
          if (t.text == cue) status = "absent";
    }
    return "**Analysis**: Cue words around \"" + entity + "\" were checked.\n**The status of \"" +
           entity + "\":** " + status + "\n";
  }

  std::vector<TermMatch> in_category(std::string_view text, std::initializer_list<Category> cats) const {
    std::vector<TermMatch> out;
    for (auto& m : match_terms(lexicon_, text)) {
      const auto* t = lexicon_.find(m.term);
      if (std::find(cats.begin(), cats.end(), t->category) != cats.end()) out.push_back(std::move(m));
    }
    return out;
  }

  std::string location(const std::string& entity, const std::string& sentence) const {
    std::vector<std::string> words;
    if (const auto at = locate(sentence, entity)) {
      const auto [lo, hi] = clause_of(sentence, at->begin, at->end);
      for (const auto& m : in_category(sentence, {Category::anatomy, Category::direction}))
        if (m.begin >= lo && m.end <= hi &&
            std::find(words.begin(), words.end(), m.term) == words.end())
          words.push_back(m.term);
    }
    return "**Location**: " + (words.empty() ? std::string("None") : join(words, " ")) + "\n";
  }

  std::string description(const std::string& entity, const std::string& sentence) const {
    std::string out = "None";
    if (const auto at = locate(sentence, entity)) {
      const auto [lo, hi] = clause_of(sentence, at->begin, at->end);
      for (const auto& m : in_category(sentence, {Category::trait}))
        if (m.begin >= lo && m.end <= hi) {
          out = std::string(trim(std::string_view(sentence).substr(lo, hi - lo)));
          break;
        }
    }
    return "**Description**: " + out + "\n";
  }

  std::string pairs(std::string_view title, Category cat, const std::string& sentence,
                    const std::string& entity_list) const {
    std::vector<TermMatch> ents;
    for (const auto& e : split(entity_list, ';')) {
      const std::string name(trim(e));
      if (name.empty()) continue;
      if (auto at = locate(sentence, name)) ents.push_back(*at);
    }
    std::vector<std::string> out;
    if (!ents.empty()) {
      for (const auto& m : in_category(sentence, {cat})) {
        // Modifiers usually precede their noun: take the next entity in the
        // clause, else the nearest one.
        const auto hi = clause_of(sentence, m.begin, m.end).second;
        const TermMatch* best = nullptr;
        for (const auto& e : ents)
          if (e.begin >= m.end && e.end <= hi && (!best || e.begin < best->begin)) best = &e;
        if (!best) {
          std::size_t best_d = 0;
          for (const auto& e : ents) {
            const std::size_t d = m.end <= e.begin ? e.begin - m.end
                                  : e.end <= m.begin ? m.begin - e.end
                                                     : 0;
            if (!best || d < best_d) best = &e, best_d = d;
          }
        }
        out.push_back(best->term + "|" + m.term);
      }
    }
    return "**Analysis**: Terms paired with the nearest entity.\n**" + std::string(title) +
           "**: " + (out.empty() ? std::string("None") : join(out, "; ")) + "\n";
  }

  std::string merge(std::string_view p) const {
    const std::size_t ex = p.find("The extracted ");
    if (ex == std::string_view::npos) throw BackendError("rule backend: prompt lacks expected field");
    const std::string mentions = between(p.substr(ex), "is: \"", "\".\nThe chest X-ray");
    std::vector<std::string> items;
    for (const auto& m : split(mentions, ';'))
      if (!trim(m).empty() && std::find(items.begin(), items.end(), std::string(trim(m))) == items.end())
        items.emplace_back(trim(m));
    if (items.empty()) return tagged("");
    if (has(p, "polish the location information")) {
      std::vector<std::string> rest;
      bool left = false, right = false;
      for (const auto& it : items)
        for (const auto& t : token_texts(it)) {
          if (t == "left") {
            left = true;
          } else if (t == "right") {
            right = true;
          } else if (std::find(rest.begin(), rest.end(), t) == rest.end()) {
            rest.push_back(t);
          }
        }
      if (left && right) return tagged(join(rest, " ").empty() ? "bilateral" : "bilateral " + join(rest, " "));
      return tagged(join(items, " and "));
    }
    if (has(p, "polish the description of")) return tagged(join(items, " "));
    return tagged(join(items, "; "));
  }

  std::string relationships(const std::string& report, const std::string& findings) const {
    std::vector<std::string> names;
    for (const auto& f : split(findings, ';'))
      if (!trim(f).empty() && !iequals(trim(f), "none")) names.emplace_back(trim(f));
    std::vector<std::string> out;
    for (const auto& s : detail::split_section(report)) {
      if (in_category(s, {Category::relation_terms}).empty()) continue;
      std::size_t hits = 0;
      for (const auto& n : names) hits += locate(s, n) ? 1 : 0;
      if (hits >= 1) out.push_back(s);
    }
    return tagged(join(out, " "));
  }

  template <std::size_t N>
  static std::string keyword_sentences(const std::string& report,
                                       const std::string_view (&cues)[N]) {
    std::vector<std::string> out;
    for (const auto& s : detail::split_section(report)) {
      bool hit = false;
      for (const auto& t : token_texts(s))
        for (auto c : cues) hit = hit || t == c;
      if (hit) out.push_back(s);
    }
    return join(out, " ");
  }

  const Lexicon& lexicon_;
  mutable std::atomic<std::size_t> calls_{0};
};

}  // namespace stagevqa
