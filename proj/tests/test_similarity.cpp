#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "oracles/oracles.hpp"
#include "stagevqa/lexicon.hpp"
#include "stagevqa/similarity.hpp"
#include "stagevqa/synonyms.hpp"

using namespace stagevqa;

namespace {

std::string random_string(std::mt19937& rng, std::string_view alphabet, int max_len) {
  std::string s;
  const int n = std::uniform_int_distribution<int>(0, max_len)(rng);
  for (int i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
  return s;
}

}  // namespace

TEST(Similarity, MatchesDifflibGolden) {
  std::size_t rows = 0;
  detail::for_each_jsonl(testutil::data("golden_similarity.jsonl"), [&](const nlohmann::json& j) {
    const auto a = j.at("a").get<std::string>(), b = j.at("b").get<std::string>();
    EXPECT_NEAR(similarity(a, b), j.at("ratio").get<double>(), 1e-12) << a << " | " << b;
    ++rows;
  });
  EXPECT_EQ(rows, 300u);
}

TEST(Similarity, KnownValues) {
  EXPECT_DOUBLE_EQ(similarity("", ""), 1.0);
  EXPECT_DOUBLE_EQ(similarity("abc", ""), 0.0);
  EXPECT_DOUBLE_EQ(similarity("Cardiomegaly", "cardiomegaly"), 1.0);
  EXPECT_DOUBLE_EQ(similarity("pleural  effusion", "pleural effusion"), 1.0);
  EXPECT_NEAR(similarity("cardiomegally", "cardiomegaly"), 24.0 / 25.0, 1e-15);
}

TEST(Similarity, SymmetricWithSelfIdentityOnRandomPairs) {
  std::mt19937 rng(5);
  for (int n = 0; n < 10000; ++n) {
    const auto a = random_string(rng, "abcab  dE", 16);
    const auto b = random_string(rng, "abcab  dE", 16);
    const double s = similarity(a, b);
    ASSERT_EQ(s, similarity(b, a)) << a << " | " << b;
    ASSERT_GE(s, 0.0);
    ASSERT_LE(s, 1.0);
    ASSERT_EQ(similarity(a, a), 1.0) << a;
    ASSERT_LE(gestalt_ratio(decode_utf8(a), decode_utf8(b)),
              quick_ratio_bound(decode_utf8(a), decode_utf8(b)) + 1e-15);
  }
}

TEST(SynonymIndex, ComponentsEqualOracleOnFixtureTerms) {
  const auto pairs = load_term_pairs(testutil::data("pairs.jsonl"));
  std::vector<std::string> cands;
  for (const auto& s : load_seed_terms(testutil::data("seeds.jsonl"))) cands.push_back(s.surface);
  for (const char* extra : {"cardiomegally", "pleural effusions", "rib fractured", "pulmonary oedema"})
    cands.emplace_back(extra);

  for (double thr : {0.5, 0.8, 0.9, 1.0}) {
    const auto index = build_synonym_index(pairs, cands, thr);
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& p : pairs) edges.emplace_back(canonical_surface(p.a), canonical_surface(p.b));
    for (std::size_t i = 0; i < cands.size(); ++i) {
      edges.emplace_back(cands[i], cands[i]);
      for (std::size_t j = i + 1; j < cands.size(); ++j)
        if (similarity(cands[i], cands[j]) > thr) edges.emplace_back(cands[i], cands[j]);
    }
    std::set<std::set<std::string>> got;
    for (const auto& [rep, members] : index.classes()) {
      got.insert(std::set<std::string>(members.begin(), members.end()));
      EXPECT_EQ(rep, members.front());
    }
    EXPECT_EQ(got, oracle::components(edges)) << thr;
  }
}

TEST(SynonymIndex, FixtureClassesAndCanonicalize) {
  const auto index = build_synonym_index(load_term_pairs(testutil::data("pairs.jsonl")),
                                         {"cardiomegaly", "cardiomegally", "nodule"}, 0.9);
  // The misspelling joins by similarity and, sorting first, represents the class.
  EXPECT_EQ(index.canonicalize("Heart enlarged"), "cardiomegally");
  EXPECT_EQ(index.canonicalize("cardiomegaly"), "cardiomegally");
  EXPECT_EQ(index.canonicalize("pulmonary edema"), "edema");
  EXPECT_EQ(index.canonicalize("nodule"), "nodule");
  EXPECT_EQ(index.canonicalize("Unknown Thing"), "Unknown Thing");
  EXPECT_TRUE(index.equivalent("heart enlarged", "CARDIOMEGALY"));
  EXPECT_FALSE(index.equivalent("nodule", "edema"));
}

TEST(SynonymIndex, CanonicalizeIsIdempotent) {
  std::mt19937 rng(9);
  std::vector<std::string> cands;
  for (int i = 0; i < 300; ++i) cands.push_back(random_string(rng, "aabbc", 6));
  const auto index = build_synonym_index({{"x", "y"}, {"y", "z"}}, cands, 0.75);
  for (const auto& [term, rep] : index.canonical()) {
    EXPECT_EQ(index.canonicalize(rep), rep);
    EXPECT_EQ(index.canonicalize(index.canonicalize(term)), index.canonicalize(term));
  }
  EXPECT_EQ(index.canonicalize("z"), "x");
}

TEST(SynonymIndex, ThresholdOutsideUnitIntervalIsUsageError) {
  EXPECT_THROW(build_synonym_index({}, {}, 0.0), UsageError);
  EXPECT_THROW(build_synonym_index({}, {}, 1.5), UsageError);
  EXPECT_THROW(build_synonym_index({}, {}, -0.1), UsageError);
  EXPECT_NO_THROW(build_synonym_index({}, {}, 1.0));
}

TEST(SynonymIndex, PairsFileRoundTrips) {
  const auto index = build_synonym_index(load_term_pairs(testutil::data("pairs.jsonl")),
                                         {"cardiomegaly", "cardiomegally"}, 0.9);
  const auto dir = testutil::scratch("synonyms");
  testutil::write(dir / "syn.jsonl", synonym_pairs_to_jsonl(index));
  const auto back = load_synonym_index((dir / "syn.jsonl").string());
  EXPECT_EQ(back.canonical(), index.canonical());
  EXPECT_EQ(back.pairs(), index.pairs());
}
