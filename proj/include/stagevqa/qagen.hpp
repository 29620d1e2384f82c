#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "stagevqa/corpus.hpp"
#include "stagevqa/error.hpp"
#include "stagevqa/extract.hpp"
#include "stagevqa/lexicon.hpp"
#include "stagevqa/rng.hpp"
#include "stagevqa/synonyms.hpp"

namespace stagevqa {

enum class QAFormat { open, closed, choice, detection };

inline std::string_view to_string(QAFormat f) {
  switch (f) {
    case QAFormat::open: return "open";
    case QAFormat::closed: return "closed";
    case QAFormat::choice: return "choice";
    case QAFormat::detection: return "detection";
  }
  return "open";
}

inline QAFormat parse_format(std::string_view s) {
  for (QAFormat f : {QAFormat::open, QAFormat::closed, QAFormat::choice, QAFormat::detection})
    if (to_string(f) == s) return f;
  throw DataError("unknown question format '" + std::string(s) + "'");
}

/// Percent-of-image box.
struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           0 <= x1 && x1 < x2 && x2 <= 100 && 0 <= y1 && y1 < y2 && y2 <= 100;
  }
  double area() const { return (x2 - x1) * (y2 - y1); }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline constexpr std::string_view kYes = "Yes";
inline constexpr std::string_view kNo = "No";
inline constexpr std::string_view kNoQualityIssue = "No quality issues are noted.";
inline constexpr std::string_view kNoFindings = "No abnormalities or foreign objects are found.";
inline constexpr std::string_view kNoChange = "No significant change.";
inline constexpr std::string_view kNoChangeExpected = "No significant change is expected.";
inline constexpr std::string_view kNoAdvice = "No further diagnostic action is advised.";

struct QAPair {
  std::string qa_id;
  int stage = 1;
  QAFormat format = QAFormat::open;
  std::string question;
  std::string answer;
  std::optional<std::vector<std::string>> options;
  std::optional<std::vector<BoundingBox>> boxes;
  std::vector<std::string> depends_on;
  // Generation bookkeeping, not serialized.
  std::string task;
  std::string subject;

  friend bool operator==(const QAPair&, const QAPair&) = default;
};

struct Sample {
  std::string sample_id;
  std::string study_id;
  std::vector<std::string> image_refs;
  std::vector<std::string> prior_image_refs;
  std::vector<QAPair> qa_sequence;

  friend bool operator==(const Sample&, const Sample&) = default;
};

// ---------------------------------------------------------------------------
// Question templates

namespace task {
inline constexpr std::string_view view_open = "view_open";
inline constexpr std::string_view view_choice = "view_choice";
inline constexpr std::string_view quality_open = "quality_open";
inline constexpr std::string_view findings_open = "findings_open";
inline constexpr std::string_view presence_closed = "presence_closed";
inline constexpr std::string_view findings_choice = "findings_choice";
inline constexpr std::string_view severity_open = "severity_open";
inline constexpr std::string_view location_open = "location_open";
inline constexpr std::string_view trait_open = "trait_open";
inline constexpr std::string_view description_open = "description_open";
inline constexpr std::string_view severity_closed = "severity_closed";
inline constexpr std::string_view severity_choice = "severity_choice";
inline constexpr std::string_view trait_closed = "trait_closed";
inline constexpr std::string_view trait_choice = "trait_choice";
inline constexpr std::string_view detection = "detection";
inline constexpr std::string_view relationships_open = "relationships_open";
inline constexpr std::string_view relation_entity_open = "relation_entity_open";
inline constexpr std::string_view difference_open = "difference_open";
inline constexpr std::string_view change_open = "change_open";
inline constexpr std::string_view risk_open = "risk_open";
inline constexpr std::string_view course_open = "course_open";
inline constexpr std::string_view advice_open = "advice_open";
inline constexpr std::string_view report_open = "report_open";
inline constexpr std::string_view findings_section_open = "findings_section_open";
inline constexpr std::string_view impression_section_open = "impression_section_open";
}  // namespace task

struct TaskInfo {
  std::string_view id;
  int stage;
  std::vector<std::string_view> slots;  // slots a template may use
};

inline const std::vector<TaskInfo>& task_table() {
  static const std::vector<TaskInfo> t = {
      {task::view_open, 1, {}},
      {task::view_choice, 1, {}},
      {task::quality_open, 1, {}},
      {task::findings_open, 2, {}},
      {task::presence_closed, 2, {"object"}},
      {task::findings_choice, 2, {}},
      {task::severity_open, 3, {"object"}},
      {task::location_open, 3, {"object"}},
      {task::trait_open, 3, {"object"}},
      {task::description_open, 3, {"object"}},
      {task::severity_closed, 3, {"object", "phrase"}},
      {task::severity_choice, 3, {"object"}},
      {task::trait_closed, 3, {"object", "phrase"}},
      {task::trait_choice, 3, {"object"}},
      {task::detection, 3, {"object", "phrase"}},
      {task::relationships_open, 4, {"object"}},
      {task::relation_entity_open, 4, {"object"}},
      {task::difference_open, 5, {}},
      {task::change_open, 5, {"object"}},
      {task::risk_open, 6, {}},
      {task::course_open, 6, {"object"}},
      {task::advice_open, 7, {}},
      {task::report_open, 8, {}},
      {task::findings_section_open, 8, {}},
      {task::impression_section_open, 8, {}},
  };
  return t;
}

inline const TaskInfo& task_info(std::string_view id) {
  for (const auto& t : task_table())
    if (t.id == id) return t;
  throw DataError("unknown question task '" + std::string(id) + "'");
}

/// Question pools per task. Slots: {object}, {object2}, {phrase}.
class QuestionTemplateSet {
 public:
  static QuestionTemplateSet builtin() {
    QuestionTemplateSet s;
    s.pools_ = {
        {std::string(task::view_open),
         {"Describe the orientation of this X-ray view.", "What is the view of this chest X-ray?",
          "In what plane was this image taken?", "Which projection was used for this radiograph?"}},
        {std::string(task::view_choice),
         {"Which view is this chest X-ray?", "What is the projection of this image?",
          "In which view was this X-ray acquired?"}},
        {std::string(task::quality_open),
         {"How is the quality of the image?",
          "Are there any technical or positioning issues with this X-ray?",
          "Describe any limitations in the quality of this radiograph."}},
        {std::string(task::findings_open),
         {"What abnormalities or foreign objects can be found in the X-ray(s)?",
          "Are there any abnormalities in this image?",
          "List the abnormal findings and devices seen in this X-ray."}},
        {std::string(task::presence_closed),
         {"Is there any {object}?", "Is there any {object} in this X-ray?",
          "Is there any {object} visible in the image?"}},
        {std::string(task::findings_choice),
         {"Which of the following findings is present in this X-ray?",
          "Which of these findings can be seen in the image?"}},
        {std::string(task::severity_open),
         {"How severe is {object}?", "What is the severity of the {object}?"}},
        {std::string(task::location_open),
         {"Where is the location of {object}?", "Where is the {object} located?"}},
        {std::string(task::trait_open),
         {"What type is the {object}?", "What are the characteristics of the {object}?"}},
        {std::string(task::description_open),
         {"How would you describe the {object}?", "Describe the {object} in detail."}},
        {std::string(task::severity_closed),
         {"Is the {object} {phrase}?", "Would you grade the {object} as {phrase}?"}},
        {std::string(task::severity_choice),
         {"What is the degree of the {object}?", "Which severity best fits the {object}?"}},
        {std::string(task::trait_closed),
         {"Is the {object} {phrase}?", "Does the {object} appear {phrase}?"}},
        {std::string(task::trait_choice),
         {"Which feature describes the {object}?", "Which trait fits the {object}?"}},
        {std::string(task::detection),
         {"Draw the bounding box of {object}.", "Locate bounding box(es) for the phrase: {phrase}.",
          "Locate the area for the phrase: {phrase}."}},
        {std::string(task::relationships_open),
         {"Describe the relationships among {object} in the X-ray image.",
          "How are {object} related to each other in this X-ray?"}},
        {std::string(task::relation_entity_open),
         {"How does {object} relate to the other findings in the X-ray image?",
          "What is the relationship between {object} and the other findings?"}},
        {std::string(task::difference_open),
         {"What differences can be observed in the findings between the current and previous images?",
          "How have the findings changed since the previous study?"}},
        {std::string(task::change_open),
         {"How has the {object} changed compared with the previous image?",
          "What is the change in {object} since the prior study?"}},
        {std::string(task::risk_open),
         {"What are the trends and potential risks of the abnormalities in the current X-ray image?",
          "How are the current findings likely to evolve?"}},
        {std::string(task::course_open),
         {"What is the expected course of the {object}?",
          "How is the {object} likely to progress?"}},
        {std::string(task::advice_open),
         {"What diagnostic advice would you provide to the referring physician based on the X-ray findings?",
          "What follow-up would you recommend based on this X-ray?"}},
        {std::string(task::report_open),
         {"Please provide a report for this X-ray scan as detailed as possible",
          "Describe the given chest x-ray image in detail",
          "Describe the given chest X-ray image in as much detail as possible",
          "Generate a report for this study based on the X-ray image",
          "How would you describe the X-ray image of this patient",
          "Please write the findings and the impression from the X-ray image",
          "Please generate a chest X-ray image report as an X-ray export",
          "Describe this image in detail",
          "Take a look at this image and describe what you notice",
          "Please provide a detailed description of the picture."}},
        {std::string(task::findings_section_open),
         {"Write the findings section based on the X-ray image.", "Write its Findings section."}},
        {std::string(task::impression_section_open),
         {"Write the impression section based on the X-ray image.",
          "Write its Impression section."}},
    };
    s.validate();
    return s;
  }

  /// JSON object {task: [template, ...]}; listed tasks replace the built-in pools.
  static QuestionTemplateSet from_json(const nlohmann::json& j) {
    QuestionTemplateSet s = builtin();
    if (!j.is_object()) throw DataError("question templates must be a JSON object");
    for (const auto& [k, v] : j.items()) {
      task_info(k);
      s.pools_[k] = v.get<std::vector<std::string>>();
    }
    s.validate();
    return s;
  }

  const std::vector<std::string>& pool(std::string_view t) const {
    const auto it = pools_.find(std::string(t));
    if (it == pools_.end()) throw DataError("no templates for task '" + std::string(t) + "'");
    return it->second;
  }

  void validate() const {
    std::set<int> stages;
    for (const auto& info : task_table()) {
      const auto it = pools_.find(std::string(info.id));
      if (it == pools_.end() || it->second.empty())
        throw DataError("no templates for task '" + std::string(info.id) + "'");
      stages.insert(info.stage);
      for (const auto& tpl : it->second)
        for (std::string_view slot : {"object", "object2", "phrase"})
          if (tpl.find("{" + std::string(slot) + "}") != std::string::npos &&
              std::find(info.slots.begin(), info.slots.end(), slot) == info.slots.end())
            throw DataError("template '" + tpl + "' uses {" + std::string(slot) +
                            "} which task '" + std::string(info.id) + "' cannot fill");
    }
    if (stages.size() != 8) throw DataError("question templates must cover stages 1..8");
  }

 private:
  std::map<std::string, std::vector<std::string>> pools_;
};

inline std::string fill_slots(std::string tpl, const std::map<std::string, std::string>& slots) {
  for (const auto& [k, v] : slots) {
    const std::string key = "{" + k + "}";
    for (std::size_t at = tpl.find(key); at != std::string::npos; at = tpl.find(key, at + v.size()))
      tpl.replace(at, key.size(), v);
  }
  return tpl;
}

// ---------------------------------------------------------------------------
// Boxes

inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_box(const BoundingBox& b) {
  return "[" + format_number(b.x1) + ", " + format_number(b.y1) + ", " + format_number(b.x2) +
         ", " + format_number(b.y2) + "]";
}

inline std::string format_boxes(const std::vector<BoundingBox>& boxes) {
  std::vector<std::string> parts;
  for (const auto& b : boxes) parts.push_back(format_box(b));
  return join(parts, "; ");
}

/// Every run of four numbers is one box; leftovers are ignored. Groups that
/// do not form a valid box are dropped.
inline std::vector<BoundingBox> parse_boxes(std::string_view text) {
  std::vector<double> nums;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    const bool starts = (c >= '0' && c <= '9') ||
                        ((c == '-' || c == '+' || c == '.') && i + 1 < text.size() &&
                         ((text[i + 1] >= '0' && text[i + 1] <= '9') || text[i + 1] == '.'));
    if (!starts) {
      ++i;
      continue;
    }
    std::size_t j = i;
    if (text[j] == '+' || text[j] == '-') ++j;
    while (j < text.size() && ((text[j] >= '0' && text[j] <= '9') || text[j] == '.')) ++j;
    if (j + 1 < text.size() && (text[j] == 'e' || text[j] == 'E') &&
        ((text[j + 1] >= '0' && text[j + 1] <= '9') || text[j + 1] == '-' || text[j + 1] == '+')) {
      std::size_t k = j + 1;
      if (text[k] == '-' || text[k] == '+') ++k;
      if (k < text.size() && text[k] >= '0' && text[k] <= '9') {
        j = k;
        while (j < text.size() && text[j] >= '0' && text[j] <= '9') ++j;
      }
    }
    std::string_view tok = text.substr(i, j - i);
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec == std::errc() && r.ptr != tok.data()) nums.push_back(v);
    i = j > i ? j : i + 1;
  }
  std::vector<BoundingBox> out;
  for (std::size_t k = 0; k + 4 <= nums.size(); k += 4) {
    const BoundingBox b{nums[k], nums[k + 1], nums[k + 2], nums[k + 3]};
    if (b.valid()) out.push_back(b);
  }
  return out;
}

struct DetectionAnnotation {
  std::string study_id;
  std::string label;
  std::array<double, 4> box_pixels{};
  std::array<double, 2> image_size{};
};

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

/// Pixel box to percent of image size, two decimals.
inline BoundingBox to_percent_box(const DetectionAnnotation& a) {
  const auto [w, h] = a.image_size;
  const auto [x1, y1, x2, y2] = a.box_pixels;
  if (!(w > 0 && h > 0)) throw DataError("annotation for " + a.study_id + " has a non-positive image size");
  if (!(0 <= x1 && x1 < x2 && x2 <= w && 0 <= y1 && y1 < y2 && y2 <= h))
    throw DataError("annotation box for '" + a.label + "' in " + a.study_id +
                    " lies outside the image bounds");
  BoundingBox b{round2(x1 * 100.0 / w), round2(y1 * 100.0 / h), round2(x2 * 100.0 / w),
                round2(y2 * 100.0 / h)};
  if (!b.valid()) throw DataError("annotation box for '" + a.label + "' collapses after scaling");
  return b;
}

inline std::vector<DetectionAnnotation> load_annotations(const std::string& path) {
  std::vector<DetectionAnnotation> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) {
    DetectionAnnotation a;
    a.study_id = j.at("study_id").get<std::string>();
    a.label = j.at("label").get<std::string>();
    const auto box = j.at("box_pixels").get<std::vector<double>>();
    const auto size = j.at("image_size").get<std::vector<double>>();
    if (box.size() != 4 || size.size() != 2) throw DataError("box_pixels needs 4 numbers, image_size 2");
    a.box_pixels = {box[0], box[1], box[2], box[3]};
    a.image_size = {size[0], size[1]};
    out.push_back(std::move(a));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Generation context

/// Everything the stage generators read besides the record itself.
struct QAContext {
  const QuestionTemplateSet& templates;
  const Lexicon& lexicon;
  const SynonymIndex& synonyms;
  std::uint64_t seed = 0;
};

namespace detail {

inline QAPair make_pair(int stage, QAFormat f, std::string_view task_id, std::string question,
                        std::string answer, std::string subject = {}) {
  QAPair q;
  q.stage = stage;
  q.format = f;
  q.task = std::string(task_id);
  q.question = std::move(question);
  q.answer = std::move(answer);
  q.subject = std::move(subject);
  return q;
}

inline std::string ask(Rng& rng, const QuestionTemplateSet& t, std::string_view task_id,
                       const std::map<std::string, std::string>& slots = {}) {
  const auto& pool = t.pool(task_id);
  return fill_slots(pool[rng.below(pool.size())], slots);
}

inline std::vector<const ExtractedEntity*> present_entities(const ExtractionRecord& r) {
  std::vector<const ExtractedEntity*> out;
  for (const auto* list : {&r.abnormalities, &r.foreign_bodies})
    for (const auto& e : *list)
      if (e.presence == Presence::present) out.push_back(&e);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) {
    return std::tie(a->name, a->kind) < std::tie(b->name, b->kind);
  });
  return out;
}

inline std::vector<std::string> present_names(const ExtractionRecord& r) {
  std::set<std::string> s;
  for (const auto* e : present_entities(r)) s.insert(e->name);
  return {s.begin(), s.end()};
}

/// True when one token sequence occurs inside the other.
inline bool token_contained(std::string_view a, std::string_view b) {
  const auto x = token_texts(a);
  const auto y = token_texts(b);
  const auto inside = [](const std::vector<std::string>& small, const std::vector<std::string>& big) {
    if (small.empty() || small.size() > big.size()) return false;
    for (std::size_t i = 0; i + small.size() <= big.size(); ++i)
      if (std::equal(small.begin(), small.end(), big.begin() + static_cast<std::ptrdiff_t>(i)))
        return true;
    return false;
  };
  return inside(x, y) || inside(y, x);
}

/// A statement about `term` could contradict one about `other`.
inline bool clashes(const SynonymIndex& idx, std::string_view term, std::string_view other) {
  return idx.equivalent(term, other) || token_contained(term, other);
}

/// Sorted lexicon terms of the categories that clash with none of `avoid`.
inline std::vector<std::string> distractor_pool(const QAContext& ctx,
                                                std::initializer_list<Category> cats,
                                                const std::vector<std::string>& avoid) {
  std::vector<std::string> out;
  for (Category c : cats)
    for (const auto& t : ctx.lexicon.surfaces(c)) {
      bool ok = true;
      for (const auto& a : avoid) ok = ok && !clashes(ctx.synonyms, t, a);
      if (ok) out.push_back(t);
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<std::string> draw(Rng& rng, const std::vector<std::string>& pool, std::size_t k) {
  std::vector<std::string> out;
  for (std::size_t i : rng.sample(pool.size(), k)) out.push_back(pool[i]);
  return out;
}

/// Shuffled options holding `answer` and up to `want - 1` distractors, or
/// nothing when fewer than two options would result.
inline std::optional<std::vector<std::string>> choice_options(Rng& rng, const std::string& answer,
                                                              const std::vector<std::string>& pool,
                                                              std::size_t want = 4) {
  std::vector<std::string> opts{answer};
  for (auto& d : draw(rng, pool, want - 1))
    if (d != answer) opts.push_back(std::move(d));
  if (opts.size() < 2) return std::nullopt;
  rng.shuffle(opts);
  return opts;
}

inline std::string stream_name(int stage, std::string_view study) {
  return "qagen/stage" + std::to_string(stage) + "/" + std::string(study);
}

inline constexpr std::string_view kSeverityScale[] = {"none", "minimal", "mild", "moderate",
                                                      "severe"};

/// Highest ordinal severity word among the values, -1 when none is known.
inline int severity_rank(const std::vector<std::string>& values) {
  int best = -1;
  for (const auto& v : values)
    for (const auto& t : token_texts(v))
      for (int k = 0; k < 5; ++k)
        if (t == kSeverityScale[k]) best = std::max(best, k);
  return best;
}

inline const ExtractedEntity* find_present(const ExtractionRecord& r, std::string_view name) {
  for (const auto* e : present_entities(r))
    if (e->name == name) return e;
  return nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage generators

inline std::vector<QAPair> gen_stage1(const Report& report, const ExtractionRecord& record,
                                      const QAContext& ctx) {
  Rng rng(ctx.seed, detail::stream_name(1, report.study_id));
  std::vector<QAPair> out;
  const std::string view(to_string(report.view));
  out.push_back(detail::make_pair(1, QAFormat::open, task::view_open,
                                  detail::ask(rng, ctx.templates, task::view_open), view));
  if (report.view == View::pa || report.view == View::ap || report.view == View::lateral) {
    auto q = detail::make_pair(1, QAFormat::choice, task::view_choice,
                               detail::ask(rng, ctx.templates, task::view_choice), view);
    std::vector<std::string> opts{"PA", "AP", "lateral"};
    rng.shuffle(opts);
    q.options = std::move(opts);
    out.push_back(std::move(q));
  }
  out.push_back(detail::make_pair(
      1, QAFormat::open, task::quality_open, detail::ask(rng, ctx.templates, task::quality_open),
      record.quality_issue.empty() ? std::string(kNoQualityIssue) : join(record.quality_issue, " ")));
  return out;
}

inline std::vector<QAPair> gen_stage2(const ExtractionRecord& record, const QAContext& ctx) {
  Rng rng(ctx.seed, detail::stream_name(2, record.report_id));
  std::vector<QAPair> out;
  const auto present = detail::present_names(record);
  out.push_back(detail::make_pair(2, QAFormat::open, task::findings_open,
                                  detail::ask(rng, ctx.templates, task::findings_open),
                                  present.empty() ? std::string(kNoFindings) : join(present, "; ")));

  for (const auto& name : present)
    out.push_back(detail::make_pair(2, QAFormat::closed, task::presence_closed,
                                    detail::ask(rng, ctx.templates, task::presence_closed,
                                                {{"object", name}}),
                                    std::string(kYes), name));

  // Negatives: absent mentions first, then sampled vocabulary distractors.
  std::vector<std::string> negatives;
  for (const auto* list : {&record.abnormalities, &record.foreign_bodies})
    for (const auto& e : *list) {
      if (e.presence != Presence::absent) continue;
      bool ok = std::find(negatives.begin(), negatives.end(), e.name) == negatives.end();
      for (const auto& p : present) ok = ok && !detail::clashes(ctx.synonyms, e.name, p);
      if (ok) negatives.push_back(e.name);
    }
  std::sort(negatives.begin(), negatives.end());
  std::vector<std::string> avoid = present;
  avoid.insert(avoid.end(), negatives.begin(), negatives.end());
  const auto pool =
      detail::distractor_pool(ctx, {Category::abnormalities, Category::foreign_bodies}, avoid);
  const std::size_t k = std::clamp<std::size_t>(present.size(), 1, 3);
  for (auto& d : detail::draw(rng, pool, k)) negatives.push_back(std::move(d));
  for (const auto& name : negatives)
    out.push_back(detail::make_pair(2, QAFormat::closed, task::presence_closed,
                                    detail::ask(rng, ctx.templates, task::presence_closed,
                                                {{"object", name}}),
                                    std::string(kNo), name));

  if (!present.empty()) {
    const std::string& right = present[rng.below(present.size())];
    const auto choice_pool = detail::distractor_pool(
        ctx, {Category::abnormalities, Category::foreign_bodies}, present);
    if (auto opts = detail::choice_options(rng, right, choice_pool)) {
      auto q = detail::make_pair(2, QAFormat::choice, task::findings_choice,
                                 detail::ask(rng, ctx.templates, task::findings_choice), right, right);
      q.options = std::move(opts);
      out.push_back(std::move(q));
    }
  }
  return out;
}

inline std::vector<QAPair> gen_stage3(const ExtractionRecord& record,
                                      const std::vector<DetectionAnnotation>& annotations,
                                      const QAContext& ctx) {
  Rng rng(ctx.seed, detail::stream_name(3, record.report_id));
  std::vector<QAPair> out;
  for (const auto* e : detail::present_entities(record)) {
    const std::map<std::string, std::string> obj{{"object", e->name}};
    const auto open = [&](std::string_view t, const std::vector<std::string>& v, std::string_view sep) {
      if (v.empty()) return;
      out.push_back(detail::make_pair(3, QAFormat::open, t, detail::ask(rng, ctx.templates, t, obj),
                                      join(v, sep), e->name));
    };
    open(task::severity_open, e->severity, "; ");
    open(task::location_open, e->location, "; ");
    open(task::trait_open, e->trait, "; ");
    open(task::description_open, e->description, " ");

    const auto graded = [&](const std::vector<std::string>& values, Category cat,
                            std::string_view closed_task, std::string_view choice_task) {
      if (values.empty()) return;
      std::vector<std::string> avoid = values;
      avoid.push_back(e->name);
      const auto pool = detail::distractor_pool(ctx, {cat}, avoid);
      out.push_back(detail::make_pair(
          3, QAFormat::closed, closed_task,
          detail::ask(rng, ctx.templates, closed_task, {{"object", e->name}, {"phrase", values[0]}}),
          std::string(kYes), e->name));
      if (pool.empty()) return;
      const std::string wrong = pool[rng.below(pool.size())];
      out.push_back(detail::make_pair(
          3, QAFormat::closed, closed_task,
          detail::ask(rng, ctx.templates, closed_task, {{"object", e->name}, {"phrase", wrong}}),
          std::string(kNo), e->name));
      if (auto opts = detail::choice_options(rng, values[0], pool)) {
        auto q = detail::make_pair(3, QAFormat::choice, choice_task,
                                   detail::ask(rng, ctx.templates, choice_task, obj), values[0],
                                   e->name);
        q.options = std::move(opts);
        out.push_back(std::move(q));
      }
    };
    graded(e->severity, Category::severity, task::severity_closed, task::severity_choice);
    graded(e->trait, Category::trait, task::trait_closed, task::trait_choice);
  }

  std::map<std::string, std::vector<BoundingBox>> by_label;
  for (const auto& a : annotations)
    if (a.study_id == record.report_id)
      by_label[ctx.synonyms.canonicalize(canonical_surface(a.label))].push_back(to_percent_box(a));
  for (const auto& [label, boxes] : by_label) {
    auto q = detail::make_pair(
        3, QAFormat::detection, task::detection,
        detail::ask(rng, ctx.templates, task::detection, {{"object", label}, {"phrase", label}}),
        format_boxes(boxes), label);
    q.boxes = boxes;
    out.push_back(std::move(q));
  }
  return out;
}

inline std::vector<QAPair> gen_stage4(const ExtractionRecord& record, const QAContext& ctx) {
  std::vector<QAPair> out;
  if (record.relationships.empty()) return out;
  Rng rng(ctx.seed, detail::stream_name(4, record.report_id));
  const auto present = detail::present_names(record);
  const std::string all = present.empty() ? std::string("the findings") : join(present, ", ");
  out.push_back(detail::make_pair(4, QAFormat::open, task::relationships_open,
                                  detail::ask(rng, ctx.templates, task::relationships_open,
                                              {{"object", all}}),
                                  join(record.relationships, " ")));
  for (const auto* e : detail::present_entities(record))
    if (!e->rel_to_other.empty())
      out.push_back(detail::make_pair(4, QAFormat::open, task::relation_entity_open,
                                      detail::ask(rng, ctx.templates, task::relation_entity_open,
                                                  {{"object", e->name}}),
                                      join(e->rel_to_other, " "), e->name));
  return out;
}

enum class Change { new_finding, resolved, improved, worsened, unchanged };

inline std::string_view to_string(Change c) {
  switch (c) {
    case Change::new_finding: return "new";
    case Change::resolved: return "resolved";
    case Change::improved: return "improved";
    case Change::worsened: return "worsened";
    case Change::unchanged: return "unchanged";
  }
  return "unchanged";
}

/// Per-finding change from `before` to `after`, keyed by canonical name.
inline std::map<std::string, Change> diff_findings(const ExtractionRecord& before,
                                                   const ExtractionRecord& after) {
  std::map<std::string, Change> out;
  const auto b = detail::present_names(before);
  const auto a = detail::present_names(after);
  for (const auto& n : a)
    if (!std::binary_search(b.begin(), b.end(), n)) out[n] = Change::new_finding;
  for (const auto& n : b) {
    if (!std::binary_search(a.begin(), a.end(), n)) {
      out[n] = Change::resolved;
      continue;
    }
    const int rb = detail::severity_rank(detail::find_present(before, n)->severity);
    const int ra = detail::severity_rank(detail::find_present(after, n)->severity);
    out[n] = (rb < 0 || ra < 0 || ra == rb) ? Change::unchanged
             : ra < rb                      ? Change::improved
                                            : Change::worsened;
  }
  return out;
}

inline std::string summarize_changes(const std::map<std::string, Change>& diff) {
  std::vector<std::string> parts;
  for (Change kind : {Change::new_finding, Change::resolved, Change::improved, Change::worsened})
    for (const auto& [name, c] : diff)
      if (c == kind) {
        const std::string label = kind == Change::new_finding ? "new" : std::string(to_string(kind));
        parts.push_back(label + " finding: " + name);
      }
  return parts.empty() ? std::string(kNoChange) : join(parts, "; ");
}

inline std::vector<QAPair> gen_stage5(const ExtractionRecord& current,
                                      const ExtractionRecord& previous, const QAContext& ctx) {
  Rng rng(ctx.seed, detail::stream_name(5, current.report_id));
  const auto diff = diff_findings(previous, current);
  std::vector<QAPair> out;
  out.push_back(detail::make_pair(5, QAFormat::open, task::difference_open,
                                  detail::ask(rng, ctx.templates, task::difference_open),
                                  summarize_changes(diff)));
  for (const auto& [name, c] : diff)
    out.push_back(detail::make_pair(5, QAFormat::open, task::change_open,
                                    detail::ask(rng, ctx.templates, task::change_open,
                                                {{"object", name}}),
                                    std::string(to_string(c)), name));
  return out;
}

inline std::vector<QAPair> gen_stage6(const ExtractionRecord& current,
                                      const std::optional<ExtractionRecord>& next,
                                      const QAContext& ctx) {
  std::vector<QAPair> out;
  if (!next) return out;
  Rng rng(ctx.seed, detail::stream_name(6, current.report_id));
  const auto diff = diff_findings(current, *next);
  std::vector<std::string> parts;
  for (const auto& [name, c] : diff) {
    switch (c) {
      case Change::resolved: parts.push_back(name + " is expected to resolve"); break;
      case Change::improved: parts.push_back(name + " is expected to improve"); break;
      case Change::worsened: parts.push_back(name + " is expected to worsen"); break;
      case Change::unchanged: parts.push_back(name + " is expected to remain unchanged"); break;
      case Change::new_finding: parts.push_back("risk of developing " + name); break;
    }
  }
  out.push_back(detail::make_pair(6, QAFormat::open, task::risk_open,
                                  detail::ask(rng, ctx.templates, task::risk_open),
                                  parts.empty() ? std::string(kNoChangeExpected) : join(parts, "; ")));
  for (const auto& [name, c] : diff)
    if (c != Change::new_finding)
      out.push_back(detail::make_pair(6, QAFormat::open, task::course_open,
                                      detail::ask(rng, ctx.templates, task::course_open,
                                                  {{"object", name}}),
                                      std::string(to_string(c)), name));
  return out;
}

inline std::vector<QAPair> gen_stage7(const ExtractionRecord& record, const QAContext& ctx) {
  Rng rng(ctx.seed, detail::stream_name(7, record.report_id));
  return {detail::make_pair(
      7, QAFormat::open, task::advice_open, detail::ask(rng, ctx.templates, task::advice_open),
      record.recommendation.empty() ? std::string(kNoAdvice) : join(record.recommendation, " "))};
}

inline std::vector<QAPair> gen_stage8(const Report& report, const QAContext& ctx) {
  Rng rng(ctx.seed, detail::stream_name(8, report.study_id));
  std::vector<QAPair> out;
  out.push_back(detail::make_pair(8, QAFormat::open, task::report_open,
                                  detail::ask(rng, ctx.templates, task::report_open),
                                  report_text(report)));
  out.push_back(detail::make_pair(8, QAFormat::open, task::findings_section_open,
                                  detail::ask(rng, ctx.templates, task::findings_section_open),
                                  report.findings_text));
  if (!trim(report.impression_text).empty())
    out.push_back(detail::make_pair(8, QAFormat::open, task::impression_section_open,
                                    detail::ask(rng, ctx.templates, task::impression_section_open),
                                    report.impression_text));
  return out;
}

// ---------------------------------------------------------------------------
// Assembly and checks

/// Positions of dependency targets must precede their sources; returns a
/// description of the first violation, empty when the graph is a DAG in
/// sequence order.
inline std::string check_dag(const std::vector<QAPair>& qa) {
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < qa.size(); ++i)
    if (!pos.emplace(qa[i].qa_id, i).second) return "duplicate qa_id " + qa[i].qa_id;
  std::vector<std::vector<std::size_t>> out(qa.size());
  std::vector<std::size_t> indeg(qa.size(), 0);
  for (std::size_t i = 0; i < qa.size(); ++i)
    for (const auto& d : qa[i].depends_on) {
      const auto it = pos.find(d);
      if (it == pos.end()) return qa[i].qa_id + " depends on unknown " + d;
      const auto& t = qa[it->second];
      if (!(t.stage < qa[i].stage || (t.stage == qa[i].stage && it->second < i)))
        return qa[i].qa_id + " depends on " + d + " which does not precede it";
      out[it->second].push_back(i);
      ++indeg[i];
    }
  std::queue<std::size_t> ready;
  for (std::size_t i = 0; i < qa.size(); ++i)
    if (indeg[i] == 0) ready.push(i);
  std::size_t seen = 0;
  while (!ready.empty()) {
    const auto n = ready.front();
    ready.pop();
    ++seen;
    for (auto m : out[n])
      if (--indeg[m] == 0) ready.push(m);
  }
  return seen == qa.size() ? std::string() : std::string("dependency cycle");
}

/// Concatenates stage outputs, assigns ids and wires dependencies.
inline Sample assemble_sample(const Report& report, std::vector<std::vector<QAPair>> stage_outputs,
                              std::vector<std::string> prior_image_refs = {}) {
  Sample s;
  s.sample_id = report.study_id;
  s.study_id = report.study_id;
  s.image_refs = report.image_refs;
  s.prior_image_refs = std::move(prior_image_refs);

  std::vector<QAPair> qa;
  for (auto& out : stage_outputs)
    for (auto& q : out) {
      if (q.stage < 1 || q.stage > 8) throw DataError("stage out of range in " + report.study_id);
      qa.push_back(std::move(q));
    }
  std::stable_sort(qa.begin(), qa.end(), [](const auto& a, const auto& b) { return a.stage < b.stage; });
  std::map<int, int> counter;
  for (auto& q : qa) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d", ++counter[q.stage]);
    q.qa_id = report.study_id + "/s" + std::to_string(q.stage) + "/" + buf;
    q.depends_on.clear();
  }

  const QAPair* findings = nullptr;
  std::map<std::string, const QAPair*> yes_closed;
  std::map<int, const QAPair*> last_of_stage;
  for (const auto& q : qa) {
    if (q.task == task::findings_open && !findings) findings = &q;
    if (q.task == task::presence_closed && q.answer == kYes) yes_closed.emplace(q.subject, &q);
    last_of_stage[q.stage] = &q;
  }
  std::vector<std::vector<std::string>> deps(qa.size());
  for (std::size_t i = 0; i < qa.size(); ++i) {
    auto& q = qa[i];
    auto& d = deps[i];
    if (q.stage >= 3 && findings) d.push_back(findings->qa_id);
    if (q.stage == 3 && !q.subject.empty()) {
      const auto it = yes_closed.find(q.subject);
      if (it != yes_closed.end()) d.push_back(it->second->qa_id);
    }
    if (q.stage == 8)
      for (const auto& [k, last] : last_of_stage)
        if (k < 8) d.push_back(last->qa_id);
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
  }
  for (std::size_t i = 0; i < qa.size(); ++i) qa[i].depends_on = std::move(deps[i]);
  if (const auto err = check_dag(qa); !err.empty())
    throw DataError("sample " + report.study_id + ": " + err);
  s.qa_sequence = std::move(qa);
  return s;
}

/// All structural rules a sample must meet; empty when valid.
inline std::vector<std::string> validate_sample(const Sample& s) {
  std::vector<std::string> bad;
  const auto fail = [&](const QAPair& q, const std::string& why) { bad.push_back(q.qa_id + ": " + why); };
  if (const auto err = check_dag(s.qa_sequence); !err.empty()) bad.push_back(err);
  for (std::size_t i = 1; i < s.qa_sequence.size(); ++i)
    if (s.qa_sequence[i].stage < s.qa_sequence[i - 1].stage) fail(s.qa_sequence[i], "out of stage order");
  for (const auto& q : s.qa_sequence) {
    if (q.stage < 1 || q.stage > 8) fail(q, "stage out of range");
    if (q.question.empty()) fail(q, "empty question");
    if (q.options.has_value() != (q.format == QAFormat::choice)) fail(q, "options iff choice violated");
    if (q.boxes.has_value() != (q.format == QAFormat::detection)) fail(q, "boxes iff detection violated");
    if (q.options) {
      const auto n = std::count(q.options->begin(), q.options->end(), q.answer);
      if (q.options->size() < 2 || q.options->size() > 6) fail(q, "choice needs 2..6 options");
      if (n != 1) fail(q, "answer must appear exactly once among options");
    }
    if (q.boxes) {
      if (q.boxes->empty()) fail(q, "detection without boxes");
      for (const auto& b : *q.boxes)
        if (!b.valid()) fail(q, "box outside [0,100] or degenerate");
    }
    if (q.format == QAFormat::closed && q.answer != kYes && q.answer != kNo)
      fail(q, "closed answer must be Yes or No");
    if (q.stage == 5 && s.prior_image_refs.empty()) fail(q, "stage 5 without prior images");
  }
  return bad;
}

struct LintIssue {
  std::string sample_id;
  std::string qa_id;
  std::string kind;
  std::string message;
};

/// Label-consistency checks against a synonym index that may be richer than
/// the one used for generation.
inline std::vector<LintIssue> lint_sample(const Sample& s, const SynonymIndex& index) {
  std::vector<LintIssue> out;
  std::vector<const QAPair*> yes, no;
  for (const auto& q : s.qa_sequence)
    if (q.stage == 2 && q.format == QAFormat::closed && !q.subject.empty())
      (q.answer == kYes ? yes : no).push_back(&q);
  for (const auto* n : no)
    for (const auto* y : yes)
      if (detail::clashes(index, n->subject, y->subject)) {
        out.push_back({s.sample_id, n->qa_id, "contradiction",
                       "'" + n->question + "' answers No while '" + y->subject + "' is present"});
        break;
      }
  for (std::size_t i = 0; i < yes.size(); ++i) {
    const std::string rep = index.canonicalize(yes[i]->subject);
    if (canonical_surface(rep) != canonical_surface(yes[i]->subject))
      out.push_back({s.sample_id, yes[i]->qa_id, "uncollapsed_synonym",
                     "present finding '" + yes[i]->subject + "' is a synonym of '" + rep + "'"});
    for (std::size_t j = 0; j < i; ++j)
      if (index.equivalent(yes[i]->subject, yes[j]->subject))
        out.push_back({s.sample_id, yes[i]->qa_id, "duplicate_finding",
                       "'" + yes[i]->subject + "' and '" + yes[j]->subject + "' are one finding"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-study generation

struct StudyInputs {
  const Report& report;
  const ExtractionRecord& record;
  const Report* prior = nullptr;
  const ExtractionRecord* prior_record = nullptr;
  const ExtractionRecord* next_record = nullptr;
  const std::vector<DetectionAnnotation>* annotations = nullptr;
};

inline Sample generate_sample(const StudyInputs& in, const QAContext& ctx) {
  static const std::vector<DetectionAnnotation> none;
  std::vector<std::vector<QAPair>> stages;
  stages.push_back(gen_stage1(in.report, in.record, ctx));
  stages.push_back(gen_stage2(in.record, ctx));
  stages.push_back(gen_stage3(in.record, in.annotations ? *in.annotations : none, ctx));
  stages.push_back(gen_stage4(in.record, ctx));
  std::vector<std::string> prior_images;
  if (in.prior && in.prior_record && !in.prior->image_refs.empty()) {
    stages.push_back(gen_stage5(in.record, *in.prior_record, ctx));
    prior_images = in.prior->image_refs;
  }
  if (in.next_record)
    stages.push_back(gen_stage6(in.record, std::optional<ExtractionRecord>(*in.next_record), ctx));
  stages.push_back(gen_stage7(in.record, ctx));
  stages.push_back(gen_stage8(in.report, ctx));
  return assemble_sample(in.report, std::move(stages), std::move(prior_images));
}

// ---------------------------------------------------------------------------
// Dataset files

inline nlohmann::ordered_json to_json(const QAPair& q) {
  nlohmann::ordered_json j;
  j["qa_id"] = q.qa_id;
  j["stage"] = q.stage;
  j["format"] = std::string(to_string(q.format));
  j["question"] = q.question;
  j["answer"] = q.answer;
  if (q.options) j["options"] = *q.options;
  if (q.boxes) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : *q.boxes) arr.push_back({b.x1, b.y1, b.x2, b.y2});
    j["boxes"] = std::move(arr);
  }
  j["depends_on"] = q.depends_on;
  return j;
}

inline nlohmann::ordered_json to_json(const Sample& s) {
  nlohmann::ordered_json j;
  j["sample_id"] = s.sample_id;
  j["study_id"] = s.study_id;
  j["images"] = s.image_refs;
  j["prior_images"] = s.prior_image_refs;
  j["qa"] = nlohmann::ordered_json::array();
  for (const auto& q : s.qa_sequence) j["qa"].push_back(to_json(q));
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  try {
    Sample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.study_id = j.at("study_id").get<std::string>();
    s.image_refs = j.at("images").get<std::vector<std::string>>();
    s.prior_image_refs = j.value("prior_images", std::vector<std::string>{});
    for (const auto& x : j.at("qa")) {
      QAPair q;
      q.qa_id = x.at("qa_id").get<std::string>();
      q.stage = x.at("stage").get<int>();
      q.format = parse_format(x.at("format").get<std::string>());
      q.question = x.at("question").get<std::string>();
      q.answer = x.at("answer").get<std::string>();
      if (x.contains("options")) q.options = x.at("options").get<std::vector<std::string>>();
      if (x.contains("boxes")) {
        std::vector<BoundingBox> boxes;
        for (const auto& b : x.at("boxes")) {
          const auto v = b.get<std::vector<double>>();
          if (v.size() != 4) throw DataError("box needs 4 numbers");
          boxes.push_back({v[0], v[1], v[2], v[3]});
        }
        q.boxes = std::move(boxes);
      }
      q.depends_on = x.value("depends_on", std::vector<std::string>{});
      s.qa_sequence.push_back(std::move(q));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sample: ") + e.what());
  }
}

inline std::string dataset_to_jsonl(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) out += to_json(s).dump() + "\n";
  return out;
}

inline void emit_dataset(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << dataset_to_jsonl(samples);
  if (!f) throw DataError("write failed: " + path);
}

inline std::vector<Sample> load_dataset(const std::string& path) {
  std::vector<Sample> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) { out.push_back(sample_from_json(j)); });
  return out;
}

}  // namespace stagevqa
