#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "stagevqa/merge.hpp"
#include "stagevqa/mock_backend.hpp"

using namespace stagevqa;

namespace {

SynonymIndex fixture_index() {
  return build_synonym_index(load_term_pairs(testutil::data("pairs.jsonl")), {}, 0.9);
}

ExtractedEntity mention(std::string name, Presence p, std::size_t sentence,
                        std::vector<std::string> location = {}, std::vector<std::string> severity = {}) {
  ExtractedEntity e;
  e.name = std::move(name);
  e.presence = p;
  e.location = std::move(location);
  e.severity = std::move(severity);
  e.source_sentences.push_back({"r", sentence});
  return e;
}

ExtractionRecord sample_record() {
  ExtractionRecord r;
  r.report_id = "r";
  r.abnormalities = {
      mention("heart enlarged", Presence::present, 0, {}, {"mild"}),
      mention("cardiomegaly", Presence::absent, 2, {}, {"Mild", "moderate"}),
      mention("pulmonary edema", Presence::absent, 1, {"bilateral"}),
      mention("edema", Presence::absent, 3, {"bilateral", "left"}),
      mention("nodule", Presence::present, 1, {"right upper lobe"}),
  };
  ExtractedEntity tube;
  tube.name = "endotracheal tube";
  tube.kind = EntityKind::foreign_body;
  tube.source_sentences.push_back({"r", 4});
  r.foreign_bodies = {tube};
  return r;
}

}  // namespace

TEST(Collapse, SynonymsMergeAndPresentWins) {
  const auto out = collapse_entities(sample_record(), fixture_index());
  ASSERT_EQ(out.abnormalities.size(), 3u);
  EXPECT_EQ(out.abnormalities[0].name, "cardiomegaly");
  EXPECT_EQ(out.abnormalities[0].presence, Presence::present);
  EXPECT_EQ(out.abnormalities[0].severity, (std::vector<std::string>{"mild", "moderate"}));
  EXPECT_EQ(out.abnormalities[0].source_sentences, (std::vector<SentenceRef>{{"r", 0}, {"r", 2}}));
  EXPECT_EQ(out.abnormalities[1].name, "edema");
  EXPECT_EQ(out.abnormalities[1].presence, Presence::absent);
  EXPECT_EQ(out.abnormalities[1].location, (std::vector<std::string>{"bilateral", "left"}));
  EXPECT_EQ(out.abnormalities[2].name, "nodule");
  EXPECT_EQ(out.foreign_bodies.size(), 1u);
}

TEST(Collapse, IndependentOfMentionOrder) {
  const auto index = fixture_index();
  auto rec = sample_record();
  const auto want = collapse_entities(rec, index);
  std::mt19937 rng(3);
  for (int i = 0; i < 50; ++i) {
    std::shuffle(rec.abnormalities.begin(), rec.abnormalities.end(), rng);
    EXPECT_EQ(collapse_entities(rec, index), want);
  }
  EXPECT_EQ(collapse_entities(want, index), want);
}

TEST(Collapse, EmptyIndexKeepsDistinctNames) {
  const auto out = collapse_entities(sample_record(), SynonymIndex{});
  EXPECT_EQ(out.abnormalities.size(), 5u);
}

TEST(MergeRecord, TestPolicyMakesNoCalls) {
  PromptCatalog prompts = PromptCatalog::builtin();
  ScriptedBackend none;
  Lexicon lex;
  Extractor x{none, lex, prompts};
  const auto out = merge_record(&x, sample_record(), fixture_index(), MergePolicy::for_test(), {});
  EXPECT_EQ(none.calls(), 0u);
  EXPECT_EQ(out, collapse_entities(sample_record(), fixture_index()));
  EXPECT_NO_THROW(merge_record(nullptr, sample_record(), fixture_index(), MergePolicy::for_test(), {}));
  EXPECT_THROW(merge_record(nullptr, sample_record(), fixture_index(), MergePolicy::for_build(), {}),
               UsageError);
}

TEST(MergeRecord, FallbackOnlyForMultiValuedAttributes) {
  PromptCatalog prompts = PromptCatalog::builtin();
  ScriptedBackend b;
  b.on("location information of edema", "<answer>bilateral lower lobes</answer>");
  b.on("Severity", "<answer>mild; moderate</answer>");
  Lexicon lex;
  Extractor x{b, lex, prompts};
  std::vector<Sentence> sentences;
  for (std::size_t i = 0; i < 5; ++i) sentences.push_back({"r", i, "Sentence " + std::to_string(i) + "."});
  const auto out = merge_record(&x, sample_record(), fixture_index(), MergePolicy::for_build(), sentences);
  EXPECT_EQ(b.calls(), 2u);
  EXPECT_EQ(out.abnormalities[1].location, std::vector<std::string>{"bilateral lower lobes"});
  EXPECT_EQ(out.abnormalities[0].severity, (std::vector<std::string>{"mild", "moderate"}));
  const auto prompts_sent = b.prompts();
  const bool has_fact = std::any_of(prompts_sent.begin(), prompts_sent.end(), [](const std::string& p) {
    return p.find("Sentence 1. Sentence 3.") != std::string::npos;
  });
  EXPECT_TRUE(has_fact);
}

TEST(MergeAttribute, SingleMentionPassesThrough) {
  PromptCatalog prompts = PromptCatalog::builtin();
  ScriptedBackend none;
  Lexicon lex;
  Extractor x{none, lex, prompts};
  EXPECT_EQ(merge_attribute(x, "e", Attribute::trend, {"improved"}, "fact"),
            std::vector<std::string>{"improved"});
  EXPECT_EQ(none.calls(), 0u);
}

TEST(FactText, JoinsSourceSentencesInOrder) {
  auto e = mention("x", Presence::present, 2);
  e.source_sentences.push_back({"r", 0});
  std::sort(e.source_sentences.begin(), e.source_sentences.end());
  const std::vector<Sentence> s{{"r", 0, "A."}, {"r", 1, "B."}, {"r", 2, "C."}};
  EXPECT_EQ(fact_text(e, s), "A. C.");
}
