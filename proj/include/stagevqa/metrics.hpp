#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "stagevqa/error.hpp"
#include "stagevqa/qagen.hpp"
#include "stagevqa/text.hpp"
#include "stagevqa/trek.hpp"

namespace stagevqa {

enum class Polarity { yes, no };

inline std::string_view to_string(Polarity p) { return p == Polarity::yes ? "yes" : "no"; }

struct PolarityCues {
  std::vector<std::string> negation{"no",       "not",       "without", "absent",
                                    "negative", "denies",    "ruled out", "free of"};
  std::vector<std::string> affirmation{"yes", "present", "there is", "there are", "evidence of",
                                       "positive"};
  // Affirmative lead-ins that a later negation in the same clause overrides
  // ("there is no ...", "evidence of no ...").
  std::vector<std::string> lead_ins{"there is", "there are", "evidence of"};

  static PolarityCues from_json(const nlohmann::json& j) {
    PolarityCues c;
    if (j.contains("negation")) c.negation = j.at("negation").get<std::vector<std::string>>();
    if (j.contains("affirmation")) c.affirmation = j.at("affirmation").get<std::vector<std::string>>();
    if (j.contains("lead_ins")) c.lead_ins = j.at("lead_ins").get<std::vector<std::string>>();
    return c;
  }
};

namespace detail {

inline std::string first_clause(std::string_view s) {
  const std::size_t end = s.find_first_of(",;.!?:\n");
  return std::string(s.substr(0, end));
}

/// Token positions at which the cue's tokens occur.
inline std::vector<std::size_t> cue_positions(const std::vector<std::string>& toks, std::string_view cue) {
  const auto want = token_texts(cue);
  std::vector<std::size_t> out;
  if (want.empty()) return out;
  for (std::size_t i = 0; i + want.size() <= toks.size(); ++i)
    if (std::equal(want.begin(), want.end(), toks.begin() + static_cast<std::ptrdiff_t>(i)))
      out.push_back(i);
  return out;
}

}  // namespace detail

/// Yes/no reading of a free-text answer from cue words in its first clause.
/// The cue nearest the clause start decides; with no cue the answer counts
/// as affirmative.
inline Polarity polarity(std::string_view answer, const PolarityCues& cues = {}) {
  if (trim(answer).empty()) throw DataError("cannot read polarity of an empty answer");
  const auto toks = token_texts(detail::first_clause(trim(answer)));
  std::optional<std::size_t> first_neg;
  for (const auto& c : cues.negation)
    for (auto p : detail::cue_positions(toks, c))
      if (!first_neg || p < *first_neg) first_neg = p;
  std::optional<std::size_t> first_aff;
  for (const auto& c : cues.affirmation) {
    const bool lead = std::find(cues.lead_ins.begin(), cues.lead_ins.end(), c) != cues.lead_ins.end();
    for (auto p : detail::cue_positions(toks, c)) {
      if (lead && first_neg && *first_neg > p) continue;
      if (!first_aff || p < *first_aff) first_aff = p;
    }
  }
  if (first_neg && (!first_aff || *first_neg < *first_aff)) return Polarity::no;
  return Polarity::yes;
}

/// Selected option index. Letter references such as "(B)", "B." or a bare
/// trailing letter win over option text; among either kind the earliest
/// match counts, and at one position the longer option.
inline std::size_t parse_choice(std::string_view answer, const std::vector<std::string>& options) {
  if (options.empty()) throw UsageError("parse_choice needs options");
  const std::size_t n = std::min<std::size_t>(options.size(), 6);
  const auto letter_at = [&](std::size_t i) -> std::optional<std::size_t> {
    const char c = answer[i];
    if (c < 'A' || c >= static_cast<char>('A' + n)) return std::nullopt;
    const auto alnum = [](char ch) {
      return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9');
    };
    if (i > 0 && alnum(answer[i - 1])) return std::nullopt;
    const bool paren = i > 0 && answer[i - 1] == '(' && i + 1 < answer.size() && answer[i + 1] == ')';
    const bool punct = i + 1 < answer.size() &&
                       (answer[i + 1] == '.' || answer[i + 1] == ')' || answer[i + 1] == ':' ||
                        answer[i + 1] == ',');
    const bool last = trim(answer.substr(i + 1)).empty();
    if (paren || punct || last) return static_cast<std::size_t>(c - 'A');
    return std::nullopt;
  };
  for (std::size_t i = 0; i < answer.size(); ++i)
    if (auto k = letter_at(i)) return *k;

  const std::string hay = fold(answer);
  std::optional<std::pair<std::size_t, std::size_t>> best;  // (position, -length) order
  std::size_t best_idx = 0;
  for (std::size_t k = 0; k < options.size(); ++k) {
    const std::string needle = fold(trim(options[k]));
    if (needle.empty()) continue;
    const std::size_t at = hay.find(needle);
    if (at == std::string::npos) continue;
    const std::pair<std::size_t, std::size_t> key{at, std::numeric_limits<std::size_t>::max() - needle.size()};
    if (!best || key < *best) best = key, best_idx = k;
  }
  if (!best) throw DataError("no option identifiable in answer");
  return best_idx;
}

/// Unweighted mean of per-class F1 over the classes that occur in gold, ×100.
template <class Label>
double macro_f1(const std::vector<Label>& gold, const std::vector<Label>& pred) {
  if (gold.size() != pred.size()) throw DataError("macro_f1: gold and prediction lengths differ");
  if (gold.empty()) throw DataError("macro_f1: no items");
  std::set<Label> classes(gold.begin(), gold.end());
  double total = 0;
  for (const auto& c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i] == c, p = pred[i] == c;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
    if (tp == 0) continue;
    total += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
  return 100.0 * total / static_cast<double>(classes.size());
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  if (!a.valid() || !b.valid()) throw DataError("iou on an invalid box");
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0 || h <= 0) return 0.0;
  const double inter = w * h;
  return inter / (a.area() + b.area() - inter);
}

/// Greedy one-to-one box assignment by descending IoU; mean of each gold
/// box's matched IoU (0 when unmatched).
inline double question_iou(const std::vector<BoundingBox>& gold, const std::vector<BoundingBox>& pred) {
  if (gold.empty()) return pred.empty() ? 1.0 : 0.0;
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t g = 0; g < gold.size(); ++g)
    for (std::size_t p = 0; p < pred.size(); ++p) cand.emplace_back(iou(gold[g], pred[p]), g, p);
  std::sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    return std::tie(std::get<1>(x), std::get<2>(x)) < std::tie(std::get<1>(y), std::get<2>(y));
  });
  std::vector<bool> gu(gold.size()), pu(pred.size());
  double sum = 0;
  for (const auto& [v, g, p] : cand) {
    if (gu[g] || pu[p]) continue;
    gu[g] = pu[p] = true;
    sum += v;
  }
  return sum / static_cast<double>(gold.size());
}

inline double m_iou(const std::vector<std::vector<BoundingBox>>& golds,
                    const std::vector<std::vector<BoundingBox>>& preds) {
  if (golds.size() != preds.size()) throw DataError("m_iou: gold and prediction lengths differ");
  if (golds.empty()) throw DataError("m_iou: no questions");
  double sum = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) sum += question_iou(golds[i], preds[i]);
  return 100.0 * sum / static_cast<double>(golds.size());
}

/// Multiset token F1 over folded tokens, ×100.
inline double lexical_score(std::string_view candidate, std::string_view reference) {
  auto c = token_texts(candidate);
  auto r = token_texts(reference);
  if (c.empty() && r.empty()) return 100.0;
  if (c.empty() || r.empty()) return 0.0;
  std::map<std::string, std::size_t> rc;
  for (auto& t : r) ++rc[t];
  std::size_t common = 0;
  for (auto& t : c) {
    auto it = rc.find(t);
    if (it != rc.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(c.size());
  const double q = static_cast<double>(common) / static_cast<double>(r.size());
  return 100.0 * 2 * p * q / (p + q);
}

struct SemanticScorer {
  std::string name = "lexical_f1";
  std::function<double(const std::string& candidate, const std::string& reference)> score =
      [](const std::string& c, const std::string& r) { return lexical_score(c, r); };
};

inline std::string_view metric_name(QAFormat f, const SemanticScorer& s) {
  switch (f) {
    case QAFormat::open: return s.name;
    case QAFormat::closed:
    case QAFormat::choice: return "macro_f1";
    case QAFormat::detection: return "miou";
  }
  return s.name;
}

struct ScoreCell {
  int stage = 0;
  QAFormat format = QAFormat::open;
  std::string metric;
  double value = 0;
  std::size_t items = 0;
};

struct StageScores {
  std::vector<ScoreCell> cells;  // sorted by (stage, format)
  double average = 0;

  std::optional<double> cell(int stage, QAFormat f) const {
    for (const auto& c : cells)
      if (c.stage == stage && c.format == f) return c.value;
    return std::nullopt;
  }
};

/// Pools items per (stage, format) across samples, then scores each cell.
class ScoreAccumulator {
 public:
  explicit ScoreAccumulator(SemanticScorer scorer = {}, PolarityCues cues = {})
      : scorer_(std::move(scorer)), cues_(std::move(cues)) {}

  void add(const Transcript& t, const Sample& s) {
    if (t.sample_id != s.sample_id)
      throw DataError("transcript " + t.sample_id + " does not belong to sample " + s.sample_id);
    if (t.error) throw DataError("transcript " + t.sample_id + " is incomplete: " + *t.error);
    if (t.entries.size() != s.qa_sequence.size())
      throw DataError("transcript " + t.sample_id + " has " + std::to_string(t.entries.size()) +
                      " entries for " + std::to_string(s.qa_sequence.size()) + " questions");
    for (std::size_t i = 0; i < t.entries.size(); ++i) {
      const auto& q = s.qa_sequence[i];
      const auto& e = t.entries[i];
      if (e.qa_id != q.qa_id)
        throw DataError("transcript entry " + e.qa_id + " is not aligned with " + q.qa_id);
      auto& cell = cells_[{q.stage, q.format}];
      switch (q.format) {
        case QAFormat::open: cell.open.push_back(scorer_.score(e.prediction, q.answer)); break;
        case QAFormat::closed:
          cell.gold.push_back(label_polarity(q.answer));
          cell.pred.push_back(label_polarity(e.prediction));
          break;
        case QAFormat::choice: {
          const auto& opts = q.options.value();
          const auto g = std::find(opts.begin(), opts.end(), q.answer) - opts.begin();
          cell.gold.push_back(option_letter(static_cast<std::size_t>(g)));
          try {
            cell.pred.push_back(option_letter(parse_choice(e.prediction, opts)));
          } catch (const DataError&) {
            cell.pred.push_back("?");
          }
          break;
        }
        case QAFormat::detection:
          cell.gold_boxes.push_back(q.boxes.value());
          cell.pred_boxes.push_back(parse_boxes(e.prediction));
          break;
      }
    }
  }

  StageScores finish() const {
    StageScores out;
    if (cells_.empty()) throw DataError("nothing to score");
    double sum = 0;
    for (const auto& [key, c] : cells_) {
      ScoreCell sc;
      sc.stage = key.first;
      sc.format = key.second;
      sc.metric = std::string(metric_name(sc.format, scorer_));
      switch (sc.format) {
        case QAFormat::open: {
          double s = 0;
          for (double v : c.open) s += v;
          sc.value = s / static_cast<double>(c.open.size());
          sc.items = c.open.size();
          break;
        }
        case QAFormat::closed:
        case QAFormat::choice:
          sc.value = macro_f1(c.gold, c.pred);
          sc.items = c.gold.size();
          break;
        case QAFormat::detection:
          sc.value = m_iou(c.gold_boxes, c.pred_boxes);
          sc.items = c.gold_boxes.size();
          break;
      }
      sc.value = std::clamp(sc.value, 0.0, 100.0);
      sum += sc.value;
      out.cells.push_back(std::move(sc));
    }
    out.average = sum / static_cast<double>(out.cells.size());
    return out;
  }

 private:
  struct Cell {
    std::vector<double> open;
    std::vector<std::string> gold, pred;
    std::vector<std::vector<BoundingBox>> gold_boxes, pred_boxes;
  };

  std::string label_polarity(std::string_view s) const {
    if (trim(s).empty()) return "none";
    return std::string(to_string(polarity(s, cues_)));
  }

  SemanticScorer scorer_;
  PolarityCues cues_;
  std::map<std::pair<int, QAFormat>, Cell> cells_;
};

inline StageScores score_transcript(const Transcript& t, const Sample& s, const SemanticScorer& scorer = {}) {
  ScoreAccumulator acc(scorer);
  acc.add(t, s);
  return acc.finish();
}

inline nlohmann::ordered_json to_json(const StageScores& s) {
  nlohmann::ordered_json j;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : s.cells)
    j["cells"].push_back({{"stage", c.stage},
                          {"format", std::string(to_string(c.format))},
                          {"metric", c.metric},
                          {"value", c.value}});
  j["average"] = s.average;
  return j;
}

}  // namespace stagevqa
