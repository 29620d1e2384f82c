// Builds a tiny lexicon, extracts one report with the rule backend, turns the
// record into a staged sample, answers it with the echo backend and scores it.

#include <iostream>

#include "stagevqa.hpp"

int main() {
  using namespace stagevqa;

  Report r;
  r.study_id = "demo-1";
  r.patient_id = "demo";
  r.view = View::pa;
  r.findings_text = "Heart enlarged. Small left effusion. No pneumothorax.";
  r.impression_text = "Cardiomegaly. Recommend follow-up radiograph.";
  r.image_refs = {"demo-1.jpg"};

  const Lexicon lex({{"heart enlarged", Category::abnormalities},
                     {"cardiomegaly", Category::abnormalities},
                     {"effusion", Category::abnormalities},
                     {"pneumothorax", Category::abnormalities},
                     {"left", Category::direction},
                     {"small", Category::severity},
                     {"mild", Category::severity}},
                    0);
  const SynonymIndex syn = build_synonym_index({{"heart enlarged", "cardiomegaly"}}, {}, 0.9);

  RuleBackend backend(lex);
  const PromptCatalog prompts = PromptCatalog::builtin();
  const Extractor x{backend, lex, prompts};
  const ExtractionRecord rec =
      merge_record(&x, extract_report(x, r), syn, MergePolicy::for_build(), segment_sentences(r));
  std::cout << to_json(rec).dump(2) << "\n\n";

  const QuestionTemplateSet templates = QuestionTemplateSet::builtin();
  const Sample s = generate_sample({r, rec}, {templates, lex, syn, 42});
  for (const auto& q : s.qa_sequence)
    std::cout << q.qa_id << " [" << to_string(q.format) << "] " << q.question << " -> " << q.answer << "\n";

  EchoBackend echo;
  const Transcript t = run_sample(echo, s, Strategy::multi_stage);
  std::cout << "\nlast rendered input:\n" << t.entries.back().rendered_input << "\n\n";
  std::cout << to_json(score_transcript(t, s)).dump(2) << "\n";
}
