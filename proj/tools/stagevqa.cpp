// stagevqa: build vocabularies, extract records, generate Q&A, run and score.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "stagevqa/commands.hpp"

namespace {

// --config file: a JSON object whose keys are long option names; nested
// objects keyed by subcommand name configure that subcommand.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    walk(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void walk(const nlohmann::json& obj, const std::vector<std::string>& parents,
                   std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, v] : obj.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(key);
        walk(v, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (v.is_array()) {
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(v));
      }
      items.push_back(std::move(item));
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  using namespace stagevqa;
  CLI::App app{"Multi-stage chest X-ray VQA dataset builder and evaluation harness"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");

  GlobalOptions g;
  std::string profile = "build";
  app.add_option("--seed", g.seed, "Seed for every random substream")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--profile", profile, "build (merge fallback on) or test (off)")
      ->check(CLI::IsMember({"test", "build"}))
      ->capture_default_str();

  BuildVocabOptions bv;
  auto* c_bv = app.add_subcommand("build-vocab", "Mine the vocabulary and synonym index");
  c_bv->add_option("--corpus", bv.corpus, "Report corpus (.jsonl or .csv)")->required();
  c_bv->add_option("--seeds", bv.seeds, "Seed terms JSONL {surface, category[, curated]}")->required();
  c_bv->add_option("--pairs", bv.pairs, "Identifier-linked synonym pairs JSONL {a, b}");
  c_bv->add_option("--min-frequency", bv.min_frequency, "Corpus frequency cutoff")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  c_bv->add_option("--threshold", bv.similarity_threshold, "Similarity threshold for synonym candidates")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  c_bv->add_option("--out", bv.out_lexicon, "Lexicon output JSONL")->required();
  c_bv->add_option("--out-synonyms", bv.out_synonyms, "Synonym pairs output JSONL");

  ExtractOptions ex;
  auto* c_ex = app.add_subcommand("extract", "Extract and merge per-report records");
  c_ex->add_option("--corpus", ex.corpus, "Report corpus")->required();
  c_ex->add_option("--lexicon", ex.lexicon, "Lexicon JSONL from build-vocab")->required();
  c_ex->add_option("--synonyms", ex.synonyms, "Synonym pairs JSONL from build-vocab");
  c_ex->add_option("--templates-dir", ex.templates_dir, "Directory of <prompt_id>.txt overrides");
  c_ex->add_option("--backend", ex.backend, "mock or http://host:port/path")->capture_default_str();
  c_ex->add_option("--max-tokens", ex.max_tokens)->check(CLI::PositiveNumber)->capture_default_str();
  c_ex->add_option("--temperature", ex.temperature)->check(CLI::NonNegativeNumber)->capture_default_str();
  c_ex->add_option("--out", ex.out, "Records output JSONL")->required();
  c_ex->add_flag("--resume", ex.resume, "Skip reports already in the output");
  c_ex->add_flag("--no-synonyms", ex.no_synonyms, "Do not collapse synonyms");

  GenQaOptions gq;
  auto* c_gq = app.add_subcommand("gen-qa", "Generate the staged Q&A dataset");
  c_gq->add_option("--corpus", gq.corpus, "Report corpus")->required();
  c_gq->add_option("--records", gq.records, "Records JSONL from extract")->required();
  c_gq->add_option("--lexicon", gq.lexicon, "Lexicon JSONL")->required();
  c_gq->add_option("--synonyms", gq.synonyms, "Synonym pairs JSONL");
  c_gq->add_option("--annotations", gq.annotations, "Detection annotations JSONL");
  c_gq->add_option("--question-templates", gq.question_templates, "JSON {task: [template, ...]}");
  c_gq->add_option("--out", gq.out, "Dataset output JSONL")->required();
  c_gq->add_option("--lint", gq.lint, "Write a label-consistency report here");
  c_gq->add_flag("--no-synonyms", gq.no_synonyms, "Generate without the synonym index");

  RunOptions rn;
  std::string strategy = "multi_stage";
  auto* c_rn = app.add_subcommand("run", "Answer every sample with a backend");
  c_rn->add_option("--dataset", rn.dataset, "Dataset JSONL")->required();
  c_rn->add_option("--backend", rn.backend, "echo, gold or http://host:port/path")->capture_default_str();
  c_rn->add_option("--strategy", strategy, "joint, multi_stage or teacher_forced")
      ->check(CLI::IsMember({"joint", "multi_stage", "teacher_forced"}))
      ->capture_default_str();
  c_rn->add_option("--token-budget", rn.token_budget)->check(CLI::PositiveNumber)->capture_default_str();
  c_rn->add_option("--out", rn.out, "Transcripts output JSONL")->required();

  ScoreOptions sc;
  auto* c_sc = app.add_subcommand("score", "Score transcripts against the dataset");
  c_sc->add_option("--dataset", sc.dataset, "Dataset JSONL")->required();
  c_sc->add_option("--transcripts", sc.transcripts, "Transcripts JSONL")->required();
  c_sc->add_option("--out", sc.out, "Score report JSON")->required();
  c_sc->add_option("--scorer", sc.scorer, "http:// semantic scorer for open answers");
  c_sc->add_option("--polarity-cues", sc.polarity_cues, "JSON {negation, affirmation, lead_ins}");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::usage);
  }

  try {
    g.profile = parse_profile(profile);
    rn.strategy = parse_strategy(strategy);
    if (c_bv->parsed()) return cmd_build_vocab(bv, g);
    if (c_ex->parsed()) return cmd_extract(ex, g);
    if (c_gq->parsed()) return cmd_gen_qa(gq, g);
    if (c_rn->parsed()) return cmd_run(rn, g);
    if (c_sc->parsed()) return cmd_score(sc, g);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
  return static_cast<int>(ErrorKind::usage);
}
