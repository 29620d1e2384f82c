#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "stagevqa/backend.hpp"
#include "stagevqa/error.hpp"
#include "stagevqa/lexicon.hpp"
#include "stagevqa/qagen.hpp"
#include "stagevqa/text.hpp"

namespace stagevqa {

struct Turn {
  std::string question;
  std::string answer;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Context {
  std::vector<Turn> turns;

  friend bool operator==(const Context&, const Context&) = default;
};

enum class Strategy { joint, multi_stage, teacher_forced };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::joint: return "joint";
    case Strategy::multi_stage: return "multi_stage";
    case Strategy::teacher_forced: return "teacher_forced";
  }
  return "joint";
}

inline Strategy parse_strategy(std::string_view s) {
  for (Strategy v : {Strategy::joint, Strategy::multi_stage, Strategy::teacher_forced})
    if (to_string(v) == s) return v;
  throw UsageError("unknown strategy '" + std::string(s) + "' (joint, multi_stage, teacher_forced)");
}

inline constexpr int kDefaultTokenBudget = 8192;

struct TranscriptEntry {
  std::string qa_id;
  std::string rendered_input;
  std::string prediction;

  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

struct Transcript {
  std::string sample_id;
  Strategy strategy = Strategy::multi_stage;
  std::vector<TranscriptEntry> entries;
  std::optional<std::string> error;

  friend bool operator==(const Transcript&, const Transcript&) = default;
};

/// The turns before question `i` (1-based).
inline Context build_context(const std::vector<Turn>& history, std::size_t i) {
  if (i < 1 || i - 1 > history.size())
    throw UsageError("context index " + std::to_string(i) + " out of range for " +
                     std::to_string(history.size()) + " turns");
  return Context{{history.begin(), history.begin() + static_cast<std::ptrdiff_t>(i - 1)}};
}

inline std::string serialize_turn(const Turn& t) { return "Q: " + t.question + "\nA: " + t.answer + "\n"; }

/// Turns then the live question. Oldest turns are dropped whole until the
/// whitespace-token count fits the budget. Images travel separately.
inline std::string render_input(const Context& context, std::string_view question, int token_budget) {
  if (token_budget <= 0) throw UsageError("token budget must be positive");
  const std::string live = "Q: " + std::string(question) + "\nA:";
  const std::size_t budget = static_cast<std::size_t>(token_budget);
  std::size_t used = whitespace_token_count(live);
  if (used > budget)
    throw DataError("question alone needs " + std::to_string(used) + " tokens, budget is " +
                    std::to_string(budget));
  std::deque<std::string> kept;
  for (auto it = context.turns.rbegin(); it != context.turns.rend(); ++it) {
    std::string s = serialize_turn(*it);
    const std::size_t n = whitespace_token_count(s);
    if (used + n > budget) break;
    used += n;
    kept.push_front(std::move(s));
  }
  std::string out;
  for (const auto& s : kept) out += s;
  return out + live;
}

inline std::string option_letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

/// The question as shown to the model: choice questions list their options.
inline std::string displayed_question(const QAPair& q) {
  if (!q.options) return q.question;
  std::string s = q.question + " Options:";
  for (std::size_t i = 0; i < q.options->size(); ++i)
    s += " (" + option_letter(i) + ") " + (*q.options)[i];
  return s;
}

/// Runs the sample's questions in order. A backend failure stops the run and
/// returns what was answered so far, with the error recorded.
inline Transcript run_sample(GenerationBackend& backend, const Sample& sample, Strategy strategy,
                             int token_budget = kDefaultTokenBudget,
                             const GenerationOptions& options = {}) {
  Transcript t;
  t.sample_id = sample.sample_id;
  t.strategy = strategy;
  std::vector<Turn> history;
  for (std::size_t i = 0; i < sample.qa_sequence.size(); ++i) {
    const QAPair& q = sample.qa_sequence[i];
    const std::string shown = displayed_question(q);
    try {
      const Context ctx = strategy == Strategy::joint ? Context{} : build_context(history, i + 1);
      GenerationRequest req;
      req.prompt = render_input(ctx, shown, token_budget);
      req.max_tokens = options.max_tokens;
      req.temperature = options.temperature;
      req.attachments = sample.image_refs;
      if (q.stage == 5)
        req.attachments.insert(req.attachments.end(), sample.prior_image_refs.begin(),
                               sample.prior_image_refs.end());
      Completion c = backend.generate(req);
      std::string pred(trim(c.text));
      history.push_back({shown, strategy == Strategy::teacher_forced ? q.answer : pred});
      t.entries.push_back({q.qa_id, std::move(req.prompt), std::move(pred)});
    } catch (const Error& e) {
      t.error = q.qa_id + ": " + e.what();
      break;
    }
  }
  return t;
}

/// Replies with the gold answers of one sample, in question order.
class GoldBackend final : public GenerationBackend {
 public:
  explicit GoldBackend(const Sample& sample) {
    for (const auto& q : sample.qa_sequence) answers_.push_back(q.answer);
  }

  Completion generate(const GenerationRequest&) override {
    std::lock_guard lock(mu_);
    if (next_ >= answers_.size()) throw BackendError("gold backend: more questions than answers");
    return Completion{answers_[next_++], std::nullopt};
  }

 private:
  std::mutex mu_;
  std::vector<std::string> answers_;
  std::size_t next_ = 0;
};

namespace detail {

/// Neumaier's compensated sum.
inline double compensated_sum(const std::vector<double>& v) {
  double s = 0, c = 0;
  for (double x : v) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

}  // namespace detail

/// Negative log-likelihood of one answer from its per-token log-probabilities.
inline double stage_loss(const std::vector<double>& logprobs) {
  if (logprobs.empty()) throw DataError("stage loss needs at least one token");
  for (double v : logprobs) {
    if (!std::isfinite(v)) throw DataError("token log-probability is not finite");
    if (v > 0) throw DataError("token log-probability is positive");
  }
  const double s = -detail::compensated_sum(logprobs);
  return s == 0 ? 0.0 : s;  // no negative zero
}

/// Mean of the per-stage losses.
inline double overall_loss(const std::vector<double>& losses) {
  if (losses.empty()) throw DataError("overall loss needs at least one stage");
  for (double v : losses)
    if (!std::isfinite(v)) throw DataError("stage loss is not finite");
  const double mean = detail::compensated_sum(losses) / static_cast<double>(losses.size());
  const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
  return std::clamp(mean, *lo, *hi);
}

// ---------------------------------------------------------------------------
// Transcript files

inline nlohmann::ordered_json to_json(const Transcript& t) {
  nlohmann::ordered_json j;
  j["sample_id"] = t.sample_id;
  j["strategy"] = std::string(to_string(t.strategy));
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : t.entries)
    j["entries"].push_back(
        {{"qa_id", e.qa_id}, {"rendered_input", e.rendered_input}, {"prediction", e.prediction}});
  if (t.error) j["error"] = *t.error;
  return j;
}

inline Transcript transcript_from_json(const nlohmann::json& j) {
  try {
    Transcript t;
    t.sample_id = j.at("sample_id").get<std::string>();
    t.strategy = parse_strategy(j.at("strategy").get<std::string>());
    for (const auto& e : j.at("entries"))
      t.entries.push_back({e.at("qa_id").get<std::string>(), e.at("rendered_input").get<std::string>(),
                           e.at("prediction").get<std::string>()});
    if (j.contains("error")) t.error = j.at("error").get<std::string>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed transcript: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("malformed transcript: ") + e.what());
  }
}

inline std::vector<Transcript> load_transcripts(const std::string& path) {
  std::vector<Transcript> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) { out.push_back(transcript_from_json(j)); });
  return out;
}

}  // namespace stagevqa
