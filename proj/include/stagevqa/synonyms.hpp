#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "stagevqa/error.hpp"
#include "stagevqa/lexicon.hpp"
#include "stagevqa/similarity.hpp"

namespace stagevqa {

struct TermPair {
  std::string a;
  std::string b;
};

/// Disjoint-set forest over dense ids.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<unsigned> rank_;
};

/// Synonym equivalence classes. Every known term maps to the
/// lexicographically smallest member of its class.
class SynonymIndex {
 public:
  SynonymIndex() = default;

  SynonymIndex(std::set<std::pair<std::string, std::string>> pairs,
               std::map<std::string, std::string> canonical, double threshold)
      : pairs_(std::move(pairs)), canonical_(std::move(canonical)), threshold_(threshold) {}

  /// Class representative for known terms, the input unchanged otherwise.
  std::string canonicalize(std::string_view term) const {
    const auto it = canonical_.find(canonical_surface(term));
    return it == canonical_.end() ? std::string(term) : it->second;
  }

  bool contains(std::string_view term) const {
    return canonical_.count(canonical_surface(term)) != 0;
  }

  bool equivalent(std::string_view a, std::string_view b) const {
    return canonical_surface(canonicalize(a)) == canonical_surface(canonicalize(b));
  }

  /// Unordered pairs stored with first < second.
  const std::set<std::pair<std::string, std::string>>& pairs() const noexcept { return pairs_; }
  const std::map<std::string, std::string>& canonical() const noexcept { return canonical_; }
  double similarity_threshold() const noexcept { return threshold_; }
  bool empty() const noexcept { return canonical_.empty(); }

  /// representative -> sorted members.
  std::map<std::string, std::vector<std::string>> classes() const {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [term, rep] : canonical_) out[rep].push_back(term);
    return out;
  }

 private:
  std::set<std::pair<std::string, std::string>> pairs_;
  std::map<std::string, std::string> canonical_;
  double threshold_ = 0.90;
};

/// Unions the identifier pairs with every candidate pair whose similarity
/// exceeds `threshold`, then elects the smallest member of each component.
inline SynonymIndex build_synonym_index(const std::vector<TermPair>& cui_pairs,
                                        const std::vector<std::string>& candidate_terms,
                                        double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw UsageError("similarity threshold must lie in (0, 1]");

  std::set<std::pair<std::string, std::string>> pairs;
  std::set<std::string> terms;
  const auto add_pair = [&](std::string a, std::string b) {
    if (a.empty() || b.empty() || a == b) return;
    if (b < a) std::swap(a, b);
    pairs.emplace(std::move(a), std::move(b));
  };
  for (const auto& p : cui_pairs) {
    std::string a = canonical_surface(p.a);
    std::string b = canonical_surface(p.b);
    if (!a.empty()) terms.insert(a);
    if (!b.empty()) terms.insert(b);
    add_pair(std::move(a), std::move(b));
  }

  std::vector<std::u32string> cand;
  std::vector<std::string> cand_utf8;
  {
    std::set<std::string> uniq;
    for (const auto& c : candidate_terms) {
      auto s = canonical_surface(c);
      if (!s.empty()) uniq.insert(std::move(s));
    }
    for (const auto& s : uniq) {
      terms.insert(s);
      cand_utf8.push_back(s);
      cand.push_back(decode_utf8(s));
    }
  }
  // Sorted by length so the 2*min/(la+lb) bound prunes the inner loop.
  std::vector<std::size_t> order(cand.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return cand[x].size() < cand[y].size(); });
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const auto& x = cand[order[oi]];
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const auto& y = cand[order[oj]];
      const double bound = 2.0 * static_cast<double>(x.size()) /
                           static_cast<double>(x.size() + y.size());
      if (bound <= threshold) break;
      if (quick_ratio_bound(x, y) <= threshold) continue;
      const auto& xs = cand_utf8[order[oi]];
      const auto& ys = cand_utf8[order[oj]];
      const double r = xs < ys ? gestalt_ratio(x, y) : gestalt_ratio(y, x);
      if (r > threshold) add_pair(xs, ys);
    }
  }

  const std::vector<std::string> ids(terms.begin(), terms.end());
  std::map<std::string, std::size_t> id_of;
  for (std::size_t i = 0; i < ids.size(); ++i) id_of.emplace(ids[i], i);
  UnionFind uf(ids.size());
  for (const auto& [a, b] : pairs) uf.unite(id_of.at(a), id_of.at(b));

  // ids are sorted, so the first member seen per root is the smallest.
  std::map<std::size_t, std::string> rep_of_root;
  std::map<std::string, std::string> canonical;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto root = uf.find(i);
    auto it = rep_of_root.emplace(root, ids[i]).first;
    canonical.emplace(ids[i], it->second);
  }
  return SynonymIndex(std::move(pairs), std::move(canonical), threshold);
}

// ---------------------------------------------------------------------------
// Files: JSONL of {a, b}.

inline std::vector<TermPair> load_term_pairs(const std::string& path) {
  std::vector<TermPair> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) {
    out.push_back(TermPair{j.at("a").get<std::string>(), j.at("b").get<std::string>()});
  });
  return out;
}

inline std::string synonym_pairs_to_jsonl(const SynonymIndex& index) {
  std::string out;
  for (const auto& [a, b] : index.pairs()) {
    nlohmann::ordered_json j;
    j["a"] = a;
    j["b"] = b;
    out += j.dump() + "\n";
  }
  return out;
}

inline SynonymIndex load_synonym_index(const std::string& path, double threshold = 0.90) {
  return build_synonym_index(load_term_pairs(path), {}, threshold);
}

}  // namespace stagevqa
