#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "stagevqa/corpus.hpp"
#include "stagevqa/error.hpp"
#include "stagevqa/text.hpp"
#include "stagevqa/trie.hpp"

namespace stagevqa {

enum class Category {
  relation_terms,
  abnormalities,
  foreign_bodies,
  anatomy,
  direction,
  trend,
  severity,
  trait,
  other,
};

inline constexpr std::array<Category, 9> kAllCategories = {
    Category::relation_terms, Category::abnormalities, Category::foreign_bodies,
    Category::anatomy,        Category::direction,     Category::trend,
    Category::severity,       Category::trait,         Category::other};

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::relation_terms: return "relation_terms";
    case Category::abnormalities: return "abnormalities";
    case Category::foreign_bodies: return "foreign_bodies";
    case Category::anatomy: return "anatomy";
    case Category::direction: return "direction";
    case Category::trend: return "trend";
    case Category::severity: return "severity";
    case Category::trait: return "trait";
    case Category::other: return "other";
  }
  return "other";
}

inline Category parse_category(std::string_view s) {
  for (Category c : kAllCategories)
    if (to_string(c) == s) return c;
  throw DataError("unknown term category '" + std::string(s) + "'");
}

/// Lowercase, whitespace-normalized form used for every vocabulary surface.
inline std::string canonical_surface(std::string_view s) { return fold(normalize_text(s)); }

struct VocabularyTerm {
  std::string surface;
  Category category = Category::other;
  std::int64_t corpus_frequency = 0;
  bool curated = false;  // exempt from the frequency cutoff

  friend bool operator==(const VocabularyTerm&, const VocabularyTerm&) = default;
};

struct TermMatch {
  std::string term;
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const TermMatch&, const TermMatch&) = default;
};

/// Categorized vocabulary with a token-sequence trie. Immutable once built.
class Lexicon {
 public:
  Lexicon() = default;

  /// Terms must have distinct, non-empty canonical surfaces. Terms whose token
  /// sequences collide resolve trie lookups to the smallest surface.
  Lexicon(std::vector<VocabularyTerm> terms, std::int64_t min_frequency)
      : min_frequency_(min_frequency) {
    for (auto& t : terms) {
      t.surface = canonical_surface(t.surface);
      if (t.surface.empty() || token_texts(t.surface).empty())
        throw DataError("vocabulary term has no tokens");
    }
    std::sort(terms.begin(), terms.end(),
              [](const auto& a, const auto& b) { return a.surface < b.surface; });
    for (std::size_t i = 1; i < terms.size(); ++i)
      if (terms[i].surface == terms[i - 1].surface)
        throw DataError("duplicate vocabulary term '" + terms[i].surface + "'");
    terms_ = std::move(terms);
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      const auto toks = token_texts(terms_[i].surface);
      trie_.insert(toks, i);
      for (const auto& tok : toks) tokens_.insert(tok);
      by_surface_.emplace(terms_[i].surface, i);
    }
  }

  const std::vector<VocabularyTerm>& terms() const noexcept { return terms_; }
  std::int64_t min_frequency() const noexcept { return min_frequency_; }
  bool empty() const noexcept { return terms_.empty(); }
  std::size_t size() const noexcept { return terms_.size(); }

  const VocabularyTerm* find(std::string_view surface) const {
    const auto it = by_surface_.find(canonical_surface(surface));
    return it == by_surface_.end() ? nullptr : &terms_[it->second];
  }

  /// Sorted surfaces of one category.
  std::vector<std::string> surfaces(Category c) const {
    std::vector<std::string> out;
    for (const auto& t : terms_)
      if (t.category == c) out.push_back(t.surface);
    return out;
  }

  bool has_token(std::string_view folded) const { return tokens_.count(std::string(folded)) != 0; }

  const TokenTrie<std::size_t>& trie() const noexcept { return trie_; }

 private:
  std::vector<VocabularyTerm> terms_;
  std::int64_t min_frequency_ = 0;
  TokenTrie<std::size_t> trie_;
  std::unordered_set<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> by_surface_;
};

namespace detail {

/// Greedy left-to-right longest matches over pre-tokenized text.
template <class Visit>
void scan_longest(const TokenTrie<std::size_t>& trie, const std::vector<Token>& toks,
                  Visit visit) {
  std::size_t i = 0;
  while (i < toks.size()) {
    const auto m = trie.longest_match(toks, i, [](const Token& t) -> const std::string& { return t.text; });
    if (!m) {
      ++i;
      continue;
    }
    visit(*m->value, toks[i].begin, toks[i + m->length - 1].end);
    i += m->length;
  }
}

}  // namespace detail

/// Non-overlapping longest matches at token boundaries, left to right. Spans
/// are byte offsets into `text`.
inline std::vector<TermMatch> match_terms(const Lexicon& lexicon, std::string_view text) {
  std::vector<TermMatch> out;
  detail::scan_longest(lexicon.trie(), tokenize(text),
                       [&](std::size_t term, std::size_t b, std::size_t e) {
                         out.push_back(TermMatch{lexicon.terms()[term].surface, b, e});
                       });
  return out;
}

/// Share of the entity's tokens that occur as a token of some vocabulary term.
inline double token_overlap_fraction(const Lexicon& lexicon, std::string_view entity) {
  const auto toks = token_texts(entity);
  if (toks.empty()) throw DataError("entity '" + std::string(entity) + "' has no tokens");
  std::size_t known = 0;
  for (const auto& t : toks) known += lexicon.has_token(t) ? 1 : 0;
  return static_cast<double>(known) / static_cast<double>(toks.size());
}

/// Counts every seed term over all report sections by longest-match trie
/// scanning, keeps terms seen at least `min_frequency` times, and keeps
/// curated seeds regardless of count.
inline Lexicon mine_vocabulary(const std::vector<Report>& corpus,
                               const std::vector<VocabularyTerm>& seed_terms,
                               std::int64_t min_frequency) {
  if (seed_terms.empty()) throw DataError("seed vocabulary is empty");
  if (min_frequency < 0) throw UsageError("min_frequency must be >= 0");
  // Deduplicate on the canonical surface; curated wins, categories must agree.
  std::map<std::string, VocabularyTerm> seeds;
  for (const auto& s : seed_terms) {
    VocabularyTerm t = s;
    t.surface = canonical_surface(s.surface);
    t.corpus_frequency = 0;
    if (t.surface.empty()) throw DataError("seed term with empty surface");
    auto [it, inserted] = seeds.emplace(t.surface, t);
    if (!inserted) {
      if (it->second.category != t.category)
        throw DataError("seed term '" + t.surface + "' listed under two categories");
      it->second.curated = it->second.curated || t.curated;
    }
  }
  const Lexicon all([&] {
    std::vector<VocabularyTerm> v;
    for (auto& [_, t] : seeds) v.push_back(t);
    return v;
  }(), 0);

  std::vector<std::int64_t> counts(all.size(), 0);
  for (const auto& r : corpus)
    for (const std::string* section : {&r.findings_text, &r.impression_text})
      detail::scan_longest(all.trie(), tokenize(*section),
                           [&](std::size_t term, std::size_t, std::size_t) { ++counts[term]; });

  std::vector<VocabularyTerm> kept;
  for (std::size_t i = 0; i < all.size(); ++i) {
    VocabularyTerm t = all.terms()[i];
    t.corpus_frequency = counts[i];
    if (t.curated || t.corpus_frequency >= min_frequency) kept.push_back(std::move(t));
  }
  return Lexicon(std::move(kept), min_frequency);
}

// ---------------------------------------------------------------------------
// Files

namespace detail {

template <class F>
void for_each_jsonl(const std::string& path, F f) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

}  // namespace detail

/// Seed file: JSONL of {surface, category[, curated]}.
inline std::vector<VocabularyTerm> load_seed_terms(const std::string& path) {
  std::vector<VocabularyTerm> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) {
    VocabularyTerm t;
    t.surface = j.at("surface").get<std::string>();
    t.category = parse_category(j.at("category").get<std::string>());
    t.curated = j.value("curated", false);
    out.push_back(std::move(t));
  });
  return out;
}

/// Export: JSONL of {surface, category, frequency}, sorted by surface.
inline std::string lexicon_to_jsonl(const Lexicon& lexicon) {
  std::string out;
  for (const auto& t : lexicon.terms()) {
    nlohmann::ordered_json j;
    j["surface"] = t.surface;
    j["category"] = std::string(to_string(t.category));
    j["frequency"] = t.corpus_frequency;
    out += j.dump() + "\n";
  }
  return out;
}

/// Reads an export back; every listed term is kept as-is.
inline Lexicon load_lexicon(const std::string& path) {
  std::vector<VocabularyTerm> terms;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) {
    VocabularyTerm t;
    t.surface = j.at("surface").get<std::string>();
    t.category = parse_category(j.at("category").get<std::string>());
    t.corpus_frequency = j.value("frequency", std::int64_t{0});
    t.curated = true;
    terms.push_back(std::move(t));
  });
  return Lexicon(std::move(terms), 0);
}

}  // namespace stagevqa
