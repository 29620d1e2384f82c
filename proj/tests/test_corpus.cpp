#include <gtest/gtest.h>

#include <map>
#include <random>

#include "helpers.hpp"
#include "stagevqa/corpus.hpp"

using namespace stagevqa;

namespace {

std::string line(const std::string& id, const std::string& patient, int order, const std::string& extra = "") {
  return R"({"study_id":")" + id + R"(","patient_id":")" + patient + R"(","acquisition_order":)" +
         std::to_string(order) + R"(,"findings":"No pneumothorax.")" + extra + "}\n";
}

Report report(std::string findings, std::string impression = "") {
  Report r;
  r.study_id = "r";
  r.findings_text = normalize_text(findings);
  r.impression_text = normalize_text(impression);
  return r;
}

}  // namespace

TEST(NormalizeText, CollapsesWhitespaceRuns) {
  EXPECT_EQ(normalize_text("a\t\tb"), "a b");
  EXPECT_EQ(normalize_text(""), "");
  EXPECT_EQ(normalize_text("  lead  and trail  "), "lead and trail");
}

TEST(NormalizeText, CrlfNbspAndControlBytes) {
  // CR LF, NBSP (C2 A0), an ideographic space (E3 80 80) and a BEL byte.
  EXPECT_EQ(normalize_text("Mild\r\nedema.\xC2\xA0Stable\xE3\x80\x80heart\x07 size."),
            "Mild edema. Stable heart size.");
}

TEST(NormalizeText, PreservesCase) { EXPECT_EQ(normalize_text("Heart  ENLARGED"), "Heart ENLARGED"); }

TEST(NormalizeText, RejectsInvalidUtf8) {
  EXPECT_THROW(normalize_text("bad \xC3"), DataError);
  EXPECT_THROW(normalize_text("\xC0\xAF"), DataError);       // overlong
  EXPECT_THROW(normalize_text("\xED\xA0\x80"), DataError);   // surrogate
}

TEST(NormalizeText, IdempotentOnRandomInput) {
  std::mt19937 rng(3);
  const std::string alphabet[] = {"a", "B", " ", "\t", "\n", "\r", "\xC2\xA0", ".", "\x01", "\xC3\xA9"};
  for (int n = 0; n < 2000; ++n) {
    std::string s;
    for (int k = std::uniform_int_distribution<int>(0, 20)(rng); k > 0; --k)
      s += alphabet[std::uniform_int_distribution<int>(0, 9)(rng)];
    const auto once = normalize_text(s);
    EXPECT_EQ(normalize_text(once), once);
  }
}

TEST(Segment, TwoTerminalPeriods) {
  const auto s = segment_sentences(report("No pneumothorax. Heart size normal."));
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].text, "No pneumothorax.");
  EXPECT_EQ(s[1].text, "Heart size normal.");
  EXPECT_EQ(s[1].index, 1u);
}

TEST(Segment, TrailingFragment) {
  const auto s = segment_sentences(report("Mild edema"));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].text, "Mild edema");
}

TEST(Segment, AbbreviationDoesNotSplit) {
  const auto s = segment_sentences(report("Dr. Smith notes opacity."));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].text, "Dr. Smith notes opacity.");
}

TEST(Segment, LowercaseAfterPeriodDoesNotSplit) {
  EXPECT_EQ(segment_sentences(report("Size is approx. 2 cm. Stable.")).size(), 2u);
  EXPECT_EQ(segment_sentences(report("Value 2.5 cm. Done.")).size(), 2u);
}

TEST(Segment, ImpressionFollowsFindingsWithDenseIndices) {
  const auto s = segment_sentences(report("A is seen. B is seen.", "Impression here!"));
  ASSERT_EQ(s.size(), 3u);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i].index, i);
  EXPECT_EQ(s[2].text, "Impression here!");
  EXPECT_TRUE(segment_sentences(report("x", "")).size() == 1u);
}

TEST(Segment, SentencesReconstructReportText) {
  for (const auto& r : load_corpus(testutil::data("corpus.jsonl"))) {
    std::vector<std::string> parts;
    for (const auto& s : segment_sentences(r)) {
      EXPECT_FALSE(s.text.empty());
      parts.push_back(s.text);
    }
    EXPECT_EQ(join(parts, " "), report_text(r)) << r.study_id;
    EXPECT_EQ(segment_sentences(r).size(), parts.size());
  }
}

TEST(LoadCorpus, SingleLine) {
  const auto dir = testutil::scratch("corpus-one");
  testutil::write(dir / "c.jsonl", line("s1", "p", 0));
  const auto c = load_corpus((dir / "c.jsonl").string());
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].view, View::unknown);
  EXPECT_EQ(c[0].findings_text, "No pneumothorax.");
}

TEST(LoadCorpus, DanglingPriorIsRejected) {
  const auto dir = testutil::scratch("corpus-dangling");
  testutil::write(dir / "c.jsonl", line("s1", "p", 1, R"(,"prior":"s0")"));
  try {
    load_corpus((dir / "c.jsonl").string());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("dangling"), std::string::npos);
  }
}

TEST(LoadCorpus, RejectsDuplicatesOrderAndPatientMismatch) {
  const auto dir = testutil::scratch("corpus-bad");
  testutil::write(dir / "dup.jsonl", line("s1", "p", 0) + line("s1", "p", 1));
  EXPECT_THROW(load_corpus((dir / "dup.jsonl").string()), DataError);
  testutil::write(dir / "order.jsonl", line("s0", "p", 2) + line("s1", "p", 1, R"(,"prior":"s0")"));
  EXPECT_THROW(load_corpus((dir / "order.jsonl").string()), DataError);
  testutil::write(dir / "pat.jsonl", line("s0", "q", 0) + line("s1", "p", 1, R"(,"prior":"s0")"));
  EXPECT_THROW(load_corpus((dir / "pat.jsonl").string()), DataError);
}

TEST(LoadCorpus, MalformedLineReportsLineNumber) {
  const auto dir = testutil::scratch("corpus-malformed");
  testutil::write(dir / "c.jsonl", line("s1", "p", 0) + "\n{not json}\n");
  try {
    load_corpus((dir / "c.jsonl").string());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  testutil::write(dir / "empty.jsonl", R"({"study_id":"a","patient_id":"p","acquisition_order":0,"findings":"  "})");
  EXPECT_THROW(load_corpus((dir / "empty.jsonl").string()), DataError);
}

TEST(LoadCorpus, FixtureHasFourTimelines) {
  const auto c = load_corpus(testutil::data("corpus.jsonl"));
  ASSERT_EQ(c.size(), 25u);
  std::map<std::string, int> per_patient;
  for (const auto& r : c) ++per_patient[r.patient_id];
  EXPECT_EQ(per_patient, (std::map<std::string, int>{{"p1", 8}, {"p2", 7}, {"p3", 6}, {"p4", 4}}));
  const CorpusIndex idx(c);
  // Walking next links from each timeline start visits the whole timeline once.
  for (const auto& r : c) {
    if (r.prior_study_id) continue;
    int steps = 1;
    for (const Report* cur = &r; cur->next_study_id; ++steps) {
      const Report* nxt = idx.find(*cur->next_study_id);
      ASSERT_NE(nxt, nullptr);
      EXPECT_LT(cur->acquisition_order, nxt->acquisition_order);
      EXPECT_EQ(nxt->prior_study_id, cur->study_id);
      cur = nxt;
      ASSERT_LE(steps, 25);
    }
    EXPECT_EQ(steps, per_patient[r.patient_id]);
  }
  EXPECT_EQ(idx.find("p3-s4")->view, View::other);
  EXPECT_EQ(idx.find("p4-s3")->view, View::unknown);
  EXPECT_TRUE(idx.find("p4-s1")->impression_text.empty());
}

TEST(LoadCorpus, CsvMatchesJsonl) {
  const auto dir = testutil::scratch("corpus-csv");
  testutil::write(dir / "c.csv",
                  "study_id,patient_id,acquisition_order,view,findings,impression,images,prior,next\n"
                  "a,p,0,PA,\"Heart enlarged, stable.\",,x.jpg;y.jpg,,b\n"
                  "b,p,1,lat,\"Quoted \"\"word\"\".\nSecond line.\",Fine.,,a,\n");
  const auto c = load_corpus((dir / "c.csv").string());
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].findings_text, "Heart enlarged, stable.");
  EXPECT_EQ(c[0].image_refs, (std::vector<std::string>{"x.jpg", "y.jpg"}));
  EXPECT_EQ(c[0].next_study_id, "b");
  EXPECT_EQ(c[1].findings_text, "Quoted \"word\". Second line.");
  EXPECT_EQ(c[1].view, View::lateral);
  EXPECT_EQ(c[1].prior_study_id, "a");
  testutil::write(dir / "bad.csv", "study_id,patient_id\na,p\n");
  EXPECT_THROW(load_corpus((dir / "bad.csv").string()), DataError);
}

TEST(ParseView, MapsUnknownValuesToOther) {
  EXPECT_EQ(parse_view("PA"), View::pa);
  EXPECT_EQ(parse_view("ap"), View::ap);
  EXPECT_EQ(parse_view("oblique"), View::other);
  EXPECT_EQ(parse_view(""), View::unknown);
}
