#pragma once

// The fixture corpus pushed through vocabulary, mock extraction and merge,
// computed once per test binary.

#include "helpers.hpp"
#include "stagevqa.hpp"
#include "stagevqa/commands.hpp"

namespace testutil {

struct Pipeline {
  std::vector<stagevqa::Report> corpus;
  stagevqa::Lexicon lexicon;
  stagevqa::SynonymIndex synonyms;
  std::vector<stagevqa::ExtractionRecord> records;
  std::vector<stagevqa::DetectionAnnotation> annotations;
  stagevqa::QuestionTemplateSet templates = stagevqa::QuestionTemplateSet::builtin();

  const stagevqa::ExtractionRecord& record(std::string_view id) const {
    for (const auto& r : records)
      if (r.report_id == id) return r;
    throw std::out_of_range(std::string(id));
  }
  const stagevqa::Report& report(std::string_view id) const {
    for (const auto& r : corpus)
      if (r.study_id == id) return r;
    throw std::out_of_range(std::string(id));
  }
};

inline Pipeline build_pipeline(bool use_synonyms = true) {
  using namespace stagevqa;
  Pipeline p;
  p.corpus = load_corpus(data("corpus.jsonl"));
  p.lexicon = mine_vocabulary(p.corpus, load_seed_terms(data("seeds.jsonl")), 10);
  std::vector<std::string> cands;
  for (const auto& t : p.lexicon.terms()) cands.push_back(t.surface);
  p.synonyms = build_synonym_index(load_term_pairs(data("pairs.jsonl")), cands, 0.9);
  p.annotations = load_annotations(data("annotations.jsonl"));
  const PromptCatalog prompts = PromptCatalog::builtin();
  RuleBackend mock(p.lexicon);
  const Extractor x{mock, p.lexicon, prompts};
  const SynonymIndex none;
  for (const auto& r : p.corpus)
    p.records.push_back(merge_record(&x, extract_report(x, r), use_synonyms ? p.synonyms : none,
                                     MergePolicy::for_build(), segment_sentences(r)));
  return p;
}

inline const Pipeline& pipeline() {
  static const Pipeline p = build_pipeline();
  return p;
}

/// Hand-built sample: one question per stage 1, 2, 2, 3, 8.
inline stagevqa::Sample five_question_sample() {
  using namespace stagevqa;
  Sample s;
  s.sample_id = s.study_id = "five";
  s.image_refs = {"img/five.jpg"};
  const auto q = [](int stage, QAFormat f, std::string question, std::string answer) {
    QAPair p;
    p.stage = stage;
    p.format = f;
    p.question = std::move(question);
    p.answer = std::move(answer);
    return p;
  };
  auto choice = q(2, QAFormat::choice, "Which finding is present?", "nodule");
  choice.options = std::vector<std::string>{"edema", "nodule", "pacemaker"};
  Report r;
  r.study_id = "five";
  r.image_refs = s.image_refs;
  return assemble_sample(r, {{q(1, QAFormat::open, "What is the view of this chest X-ray?", "PA"),
                              q(2, QAFormat::open, "Are there any abnormalities in this image?", "nodule"),
                              choice,
                              q(3, QAFormat::open, "Where is the nodule located?", "right upper lobe"),
                              q(8, QAFormat::open, "Write the findings section.", "Small nodule.")}});
}

inline stagevqa::GenQaResult fixture_dataset(std::uint64_t seed = 42) {
  const auto& p = pipeline();
  stagevqa::GlobalOptions g;
  g.seed = seed;
  g.jobs = 2;
  return stagevqa::generate_dataset(p.corpus, p.records, p.lexicon, p.synonyms, p.synonyms,
                                    p.annotations, p.templates, g, true);
}

}  // namespace testutil
