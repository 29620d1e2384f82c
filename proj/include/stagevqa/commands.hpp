#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "stagevqa/backend.hpp"
#include "stagevqa/corpus.hpp"
#include "stagevqa/error.hpp"
#include "stagevqa/extract.hpp"
#include "stagevqa/http_backend.hpp"
#include "stagevqa/lexicon.hpp"
#include "stagevqa/merge.hpp"
#include "stagevqa/metrics.hpp"
#include "stagevqa/mock_backend.hpp"
#include "stagevqa/parallel.hpp"
#include "stagevqa/prompts.hpp"
#include "stagevqa/qagen.hpp"
#include "stagevqa/synonyms.hpp"
#include "stagevqa/trek.hpp"

namespace stagevqa {

enum class Profile { test, build };

inline Profile parse_profile(std::string_view s) {
  if (s == "test") return Profile::test;
  if (s == "build") return Profile::build;
  throw UsageError("unknown profile '" + std::string(s) + "' (test, build)");
}

struct GlobalOptions {
  std::uint64_t seed = 42;
  std::size_t jobs = default_jobs();
  Profile profile = Profile::build;
  std::ostream* log = &std::cerr;
};

namespace detail {

inline void require_file(const std::string& path, std::string_view what) {
  if (path.empty()) throw UsageError(std::string(what) + " path is required");
  if (!std::filesystem::is_regular_file(path))
    throw DataError(std::string(what) + " not found: " + path);
}

inline void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) throw UsageError("output path is required");
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << text;
  f.close();
  if (!f) throw DataError("write failed: " + path);
}

inline std::size_t effective_jobs(const GlobalOptions& g, const GenerationBackend& b) {
  return std::max<std::size_t>(1, std::min(g.jobs, b.max_in_flight()));
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct BuildVocabOptions {
  std::string corpus;
  std::string seeds;
  std::string pairs;  // identifier-linked synonym pairs, optional
  std::int64_t min_frequency = 10;
  double similarity_threshold = 0.90;
  std::string out_lexicon;
  std::string out_synonyms;
};

inline int cmd_build_vocab(const BuildVocabOptions& o, const GlobalOptions& g) {
  detail::require_file(o.corpus, "corpus");
  detail::require_file(o.seeds, "seed vocabulary");
  if (!o.pairs.empty()) detail::require_file(o.pairs, "synonym pairs");
  if (!(o.similarity_threshold > 0 && o.similarity_threshold <= 1))
    throw UsageError("similarity threshold must lie in (0, 1]");
  const auto corpus = load_corpus(o.corpus);
  const Lexicon lex = mine_vocabulary(corpus, load_seed_terms(o.seeds), o.min_frequency);
  std::vector<std::string> candidates;
  for (const auto& t : lex.terms()) candidates.push_back(t.surface);
  const auto pairs = o.pairs.empty() ? std::vector<TermPair>{} : load_term_pairs(o.pairs);
  const SynonymIndex idx = build_synonym_index(pairs, candidates, o.similarity_threshold);
  detail::write_text(o.out_lexicon, lexicon_to_jsonl(lex));
  if (!o.out_synonyms.empty()) detail::write_text(o.out_synonyms, synonym_pairs_to_jsonl(idx));
  *g.log << "lexicon: " << lex.size() << " terms, " << idx.pairs().size() << " synonym pairs\n";
  return 0;
}

// ---------------------------------------------------------------------------

/// "mock", "echo" or an http:// endpoint.
inline std::unique_ptr<GenerationBackend> make_backend(const std::string& spec, const Lexicon* lexicon,
                                                       const HttpOptions& http = {}) {
  if (spec == "mock") {
    if (!lexicon) throw UsageError("the mock backend needs a lexicon");
    return std::make_unique<RuleBackend>(*lexicon);
  }
  if (spec == "echo") return std::make_unique<EchoBackend>();
  if (spec.rfind("http://", 0) == 0) return std::make_unique<HttpBackend>(spec, http);
  throw UsageError("unknown backend '" + spec + "'");
}

struct ExtractOptions {
  std::string corpus;
  std::string lexicon;
  std::string synonyms;
  std::string templates_dir;
  std::string backend = "mock";
  std::string out;
  bool resume = false;
  bool no_synonyms = false;
  int max_tokens = 512;
  double temperature = 0.0;
};

inline int cmd_extract(const ExtractOptions& o, const GlobalOptions& g) {
  detail::require_file(o.corpus, "corpus");
  detail::require_file(o.lexicon, "lexicon");
  if (!o.synonyms.empty()) detail::require_file(o.synonyms, "synonym index");
  if (o.out.empty()) throw UsageError("output path is required");
  const auto corpus = load_corpus(o.corpus);
  const Lexicon lex = load_lexicon(o.lexicon);
  const SynonymIndex idx = (o.synonyms.empty() || o.no_synonyms) ? SynonymIndex{}
                                                                 : load_synonym_index(o.synonyms);
  const PromptCatalog prompts =
      o.templates_dir.empty() ? PromptCatalog::builtin() : PromptCatalog::from_directory(o.templates_dir);
  const auto backend = make_backend(o.backend, &lex);
  const Extractor x{*backend, lex, prompts, {o.max_tokens, o.temperature}};
  const MergePolicy policy = g.profile == Profile::build ? MergePolicy::for_build() : MergePolicy::for_test();

  std::set<std::string> done;
  if (o.resume && std::filesystem::exists(o.out)) {
    // Keep only complete lines; a torn final line is rewritten.
    std::ifstream in(o.out, std::ios::binary);
    std::string kept, line;
    while (std::getline(in, line)) {
      if (in.eof()) break;
      if (trim(line).empty()) continue;
      try {
        const auto r = record_from_json(nlohmann::json::parse(line));
        if (done.insert(r.report_id).second) kept += line + "\n";
      } catch (const std::exception&) {
        break;
      }
    }
    in.close();
    detail::write_text(o.out, kept);
  } else {
    detail::write_text(o.out, "");
  }

  std::vector<const Report*> todo;
  for (const auto& r : corpus)
    if (!done.count(r.study_id)) todo.push_back(&r);

  std::ofstream out(o.out, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot write " + o.out);
  const std::size_t jobs = detail::effective_jobs(g, *backend);
  const std::size_t chunk = std::max<std::size_t>(jobs * 4, 1);
  for (std::size_t start = 0; start < todo.size(); start += chunk) {
    const std::size_t n = std::min(chunk, todo.size() - start);
    const auto lines = parallel_map<std::string>(n, jobs, [&](std::size_t i) {
      const Report& r = *todo[start + i];
      const auto rec = extract_report(x, r);
      return to_json(merge_record(&x, rec, idx, policy, segment_sentences(r))).dump() + "\n";
    });
    for (const auto& l : lines) out << l;
    out.flush();
    if (!out) throw DataError("write failed: " + o.out);
  }
  *g.log << "extracted " << todo.size() << " reports (" << done.size() << " resumed)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct GenQaOptions {
  std::string corpus;
  std::string records;
  std::string lexicon;
  std::string synonyms;
  std::string annotations;
  std::string question_templates;
  std::string out;
  std::string lint;  // lint report path; empty disables
  bool no_synonyms = false;
};

struct GenQaResult {
  std::vector<Sample> samples;
  std::array<std::size_t, 9> stage_counts{};
  std::vector<LintIssue> lint;
};

inline nlohmann::ordered_json to_json(const LintIssue& i) {
  nlohmann::ordered_json j;
  j["sample_id"] = i.sample_id;
  j["qa_id"] = i.qa_id;
  j["kind"] = i.kind;
  j["message"] = i.message;
  return j;
}

/// In-memory core of gen-qa.
inline GenQaResult generate_dataset(const std::vector<Report>& corpus,
                                    const std::vector<ExtractionRecord>& records, const Lexicon& lex,
                                    const SynonymIndex& generation_index, const SynonymIndex& lint_index,
                                    const std::vector<DetectionAnnotation>& annotations,
                                    const QuestionTemplateSet& templates, const GlobalOptions& g,
                                    bool lint) {
  std::map<std::string, const ExtractionRecord*> by_id;
  for (const auto& r : records)
    if (!by_id.emplace(r.report_id, &r).second) throw DataError("duplicate record for " + r.report_id);
  const CorpusIndex cidx(corpus);
  std::vector<const Report*> todo;
  for (const auto& r : corpus)
    if (by_id.count(r.study_id)) todo.push_back(&r);
  for (const auto& [id, _] : by_id)
    if (!cidx.find(id)) throw DataError("record " + id + " has no report in the corpus");

  const QAContext ctx{templates, lex, generation_index, g.seed};
  const auto find_rec = [&](const std::optional<std::string>& id) -> const ExtractionRecord* {
    if (!id) return nullptr;
    const auto it = by_id.find(*id);
    return it == by_id.end() ? nullptr : it->second;
  };
  GenQaResult res;
  res.samples = parallel_map<Sample>(todo.size(), g.jobs, [&](std::size_t i) {
    const Report& r = *todo[i];
    StudyInputs in{r, *by_id.at(r.study_id)};
    in.prior = r.prior_study_id ? cidx.find(*r.prior_study_id) : nullptr;
    in.prior_record = find_rec(r.prior_study_id);
    in.next_record = find_rec(r.next_study_id);
    in.annotations = &annotations;
    return generate_sample(in, ctx);
  });
  for (const auto& s : res.samples) {
    if (const auto bad = validate_sample(s); !bad.empty())
      throw DataError("generated sample " + s.sample_id + " is invalid: " + bad.front());
    for (const auto& q : s.qa_sequence) ++res.stage_counts[static_cast<std::size_t>(q.stage)];
    if (lint)
      for (auto& issue : lint_sample(s, lint_index)) res.lint.push_back(std::move(issue));
  }
  return res;
}

inline int cmd_gen_qa(const GenQaOptions& o, const GlobalOptions& g, std::ostream& out = std::cout) {
  detail::require_file(o.corpus, "corpus");
  detail::require_file(o.records, "records");
  detail::require_file(o.lexicon, "lexicon");
  if (!o.synonyms.empty()) detail::require_file(o.synonyms, "synonym index");
  if (!o.annotations.empty()) detail::require_file(o.annotations, "annotations");
  if (!o.question_templates.empty()) detail::require_file(o.question_templates, "question templates");
  const auto corpus = load_corpus(o.corpus);
  const auto records = load_records(o.records);
  const Lexicon lex = load_lexicon(o.lexicon);
  const SynonymIndex full = o.synonyms.empty() ? SynonymIndex{} : load_synonym_index(o.synonyms);
  const SynonymIndex none;
  const auto annotations = o.annotations.empty() ? std::vector<DetectionAnnotation>{}
                                                 : load_annotations(o.annotations);
  const QuestionTemplateSet templates =
      o.question_templates.empty()
          ? QuestionTemplateSet::builtin()
          : QuestionTemplateSet::from_json(nlohmann::json::parse(detail::read_file(o.question_templates)));
  auto res = generate_dataset(corpus, records, lex, o.no_synonyms ? none : full, full, annotations,
                              templates, g, !o.lint.empty());
  emit_dataset(res.samples, o.out);
  for (int k = 1; k <= 8; ++k) out << "stage " << k << ": " << res.stage_counts[k] << "\n";
  if (!o.lint.empty()) {
    std::string text;
    for (const auto& i : res.lint) text += to_json(i).dump() + "\n";
    detail::write_text(o.lint, text);
    out << "lint: " << res.lint.size() << " issue(s)\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct RunOptions {
  std::string dataset;
  std::string backend = "echo";  // echo, gold or an http:// endpoint
  Strategy strategy = Strategy::multi_stage;
  int token_budget = kDefaultTokenBudget;
  std::string out;
};

inline std::vector<Transcript> run_dataset(const std::vector<Sample>& samples, const std::string& spec,
                                           Strategy strategy, int token_budget, const GlobalOptions& g) {
  if (token_budget <= 0) throw UsageError("token budget must be positive");
  if (spec == "gold")
    return parallel_map<Transcript>(samples.size(), g.jobs, [&](std::size_t i) {
      GoldBackend gold(samples[i]);
      return run_sample(gold, samples[i], strategy, token_budget);
    });
  const auto backend = make_backend(spec, nullptr);
  return parallel_map<Transcript>(samples.size(), detail::effective_jobs(g, *backend), [&](std::size_t i) {
    return run_sample(*backend, samples[i], strategy, token_budget);
  });
}

inline int cmd_run(const RunOptions& o, const GlobalOptions& g) {
  detail::require_file(o.dataset, "dataset");
  const auto samples = load_dataset(o.dataset);
  const auto ts = run_dataset(samples, o.backend, o.strategy, o.token_budget, g);
  std::string text;
  std::size_t failed = 0;
  for (const auto& t : ts) {
    text += to_json(t).dump() + "\n";
    failed += t.error.has_value();
  }
  detail::write_text(o.out, text);
  *g.log << "ran " << ts.size() << " samples (" << failed << " with errors)\n";
  if (failed) throw BackendError(std::to_string(failed) + " sample run(s) failed; see " + o.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct ScoreOptions {
  std::string dataset;
  std::string transcripts;
  std::string out;
  std::string scorer;          // http:// endpoint of a semantic scorer; empty = lexical
  std::string polarity_cues;   // JSON file overriding the cue lists
};

inline StageScores score_dataset(const std::vector<Sample>& samples, const std::vector<Transcript>& ts,
                                 const SemanticScorer& scorer, const PolarityCues& cues = {}) {
  if (samples.size() != ts.size())
    throw DataError("dataset has " + std::to_string(samples.size()) + " samples, transcripts " +
                    std::to_string(ts.size()));
  ScoreAccumulator acc(scorer, cues);
  for (std::size_t i = 0; i < samples.size(); ++i) acc.add(ts[i], samples[i]);
  return acc.finish();
}

inline int cmd_score(const ScoreOptions& o, const GlobalOptions& g, std::ostream& out = std::cout) {
  (void)g;
  detail::require_file(o.dataset, "dataset");
  detail::require_file(o.transcripts, "transcripts");
  if (!o.polarity_cues.empty()) detail::require_file(o.polarity_cues, "polarity cues");
  const auto samples = load_dataset(o.dataset);
  const auto ts = load_transcripts(o.transcripts);
  const SemanticScorer scorer = o.scorer.empty() ? SemanticScorer{} : http_scorer(o.scorer);
  const PolarityCues cues = o.polarity_cues.empty()
                                ? PolarityCues{}
                                : PolarityCues::from_json(nlohmann::json::parse(detail::read_file(o.polarity_cues)));
  const auto scores = score_dataset(samples, ts, scorer, cues);
  detail::write_text(o.out, to_json(scores).dump(2) + "\n");
  for (const auto& c : scores.cells) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "stage %d %-9s %-10s %7.2f\n", c.stage,
                  std::string(to_string(c.format)).c_str(), c.metric.c_str(), c.value);
    out << buf;
  }
  char avg[64];
  std::snprintf(avg, sizeof avg, "average %.2f\n", scores.average);
  out << avg;
  return 0;
}

}  // namespace stagevqa
