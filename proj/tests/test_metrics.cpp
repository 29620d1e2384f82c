#include <gtest/gtest.h>

#include <random>

#include "fixture.hpp"
#include "oracles/oracles.hpp"

using namespace stagevqa;

namespace {

BoundingBox random_box(std::mt19937& rng) {
  std::uniform_int_distribution<int> d(0, 100);
  for (;;) {
    int a = d(rng), b = d(rng), c = d(rng), e = d(rng);
    if (a == b || c == e) continue;
    return {static_cast<double>(std::min(a, b)), static_cast<double>(std::min(c, e)),
            static_cast<double>(std::max(a, b)), static_cast<double>(std::max(c, e))};
  }
}

std::array<double, 4> arr(const BoundingBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }

}  // namespace

TEST(Polarity, HandAnnotatedSheet) {
  const std::vector<std::pair<std::string, Polarity>> sheet = {
      {"Yes, there is a pleural effusion.", Polarity::yes},
      {"No evidence of pneumothorax.", Polarity::no},
      {"There is no pneumothorax.", Polarity::no},
      {"Pleural effusion is present.", Polarity::yes},
      {"Cardiomegaly is absent.", Polarity::no},
      {"Not seen.", Polarity::no},
      {"The lungs are free of consolidation.", Polarity::no},
      {"Negative for pneumonia.", Polarity::no},
      {"Positive for edema.", Polarity::yes},
      {"Without focal consolidation.", Polarity::no},
      {"Pneumothorax has been ruled out.", Polarity::no},
      {"Mild cardiomegaly.", Polarity::yes},
      {"YES", Polarity::yes},
      {"no", Polarity::no},
      {"There are bilateral effusions.", Polarity::yes},
      {"Evidence of pulmonary edema.", Polarity::yes},
      {"Present, but no effusion.", Polarity::yes},
      {"No, although edema is present.", Polarity::no},
      {"The patient denies chest pain.", Polarity::no},
      {"Yes.", Polarity::yes},
      {"Effusion is not present.", Polarity::no},
      {"Present and not worsening.", Polarity::yes},
      {"There is evidence of no pneumothorax.", Polarity::no},
      {"No evidence of absence of effusion.", Polarity::no},
      {"Nodular opacity noted.", Polarity::yes},
      {"Knot-like density in the apex.", Polarity::yes},
      {"Absent.", Polarity::no},
      {"The heart is enlarged: no effusion.", Polarity::yes},
      {"  no acute findings  ", Polarity::no},
      {"There is a small effusion; no pneumothorax.", Polarity::yes},
  };
  ASSERT_EQ(sheet.size(), 30u);
  for (const auto& [text, want] : sheet) EXPECT_EQ(polarity(text), want) << text;
  EXPECT_THROW(polarity("   "), DataError);
}

TEST(Polarity, CuesAreConfigurable) {
  const auto cues = PolarityCues::from_json(nlohmann::json::parse(R"({"negation": ["nein"]})"));
  EXPECT_EQ(polarity("Nein.", cues), Polarity::no);
  EXPECT_EQ(polarity("No.", cues), Polarity::yes);
}

TEST(ParseChoice, LettersBeatText) {
  const std::vector<std::string> opts{"edema", "nodule", "cardiomegaly", "pacemaker"};
  EXPECT_EQ(parse_choice("The answer is (B).", opts), 1u);
  EXPECT_EQ(parse_choice("cardiomegaly", opts), 2u);
  EXPECT_EQ(parse_choice("A and B are both wrong; C.", opts), 2u);
  EXPECT_EQ(parse_choice("D", opts), 3u);
  EXPECT_EQ(parse_choice("B: nodule", opts), 1u);
  EXPECT_EQ(parse_choice("I think it is Nodule, not edema", opts), 1u);
  EXPECT_EQ(parse_choice("E. none of these, edema", opts), 0u);  // E is out of range
  EXPECT_THROW(parse_choice("pneumothorax", opts), DataError);
  EXPECT_THROW(parse_choice("x", {}), UsageError);
  EXPECT_EQ(parse_choice("pleural effusion", {"effusion", "pleural effusion"}), 1u);
}

TEST(MacroF1, HandComputedThreeClass) {
  const std::vector<std::string> gold{"a", "a", "a", "b", "b", "c", "c", "c", "c"};
  const std::vector<std::string> pred{"a", "b", "a", "b", "c", "c", "c", "a", "b"};
  const double hand = 100.0 * (2.0 / 3.0 + 0.4 + 4.0 / 7.0) / 3.0;
  EXPECT_NEAR(macro_f1(gold, pred), hand, 1e-12);
  EXPECT_NEAR(macro_f1(gold, pred), oracle::macro_f1(gold, pred), 1e-12);
  EXPECT_EQ(macro_f1(gold, gold), 100.0);
  EXPECT_EQ(macro_f1<std::string>({"yes", "no"}, {"no", "yes"}), 0.0);
  EXPECT_THROW(macro_f1<std::string>({"a"}, {}), DataError);
  EXPECT_THROW(macro_f1<std::string>({}, {}), DataError);
}

TEST(MacroF1, OracleAgreementAndRenamingInvariance) {
  std::mt19937 rng(23);
  const std::map<int, int> rename{{0, 7}, {1, 3}, {2, 5}, {3, 1}};
  for (int n = 0; n < 500; ++n) {
    const std::size_t len = 1 + rng() % 30;
    std::vector<int> g(len), p(len), g2(len), p2(len);
    for (std::size_t i = 0; i < len; ++i) {
      g[i] = static_cast<int>(rng() % 4);
      p[i] = static_cast<int>(rng() % 4);
      g2[i] = rename.at(g[i]);
      p2[i] = rename.at(p[i]);
    }
    const double v = macro_f1(g, p);
    ASSERT_NEAR(v, oracle::macro_f1(g, p), 1e-9);
    ASSERT_NEAR(v, macro_f1(g2, p2), 1e-9);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 100.0);
  }
}

TEST(Iou, AnalyticAndGridOracle) {
  const BoundingBox a{0, 0, 50, 50}, b{25, 25, 75, 75};
  EXPECT_EQ(iou(a, b), 625.0 / 4375.0);
  EXPECT_NEAR(iou(a, b), oracle::grid_iou(arr(a), arr(b), 0.25), 1e-3);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, {60, 60, 70, 70}), 0.0);
  EXPECT_EQ(iou(a, {50, 0, 60, 50}), 0.0);  // touching edges
  EXPECT_THROW(iou(a, {10, 10, 10, 20}), DataError);
}

TEST(Iou, PropertiesOnRandomBoxes) {
  std::mt19937 rng(31);
  for (int n = 0; n < 300; ++n) {
    const auto a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    ASSERT_EQ(v, iou(b, a));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    if (n < 40) {
      ASSERT_NEAR(v, oracle::grid_iou(arr(a), arr(b), 0.5), 1e-9);
    }
  }
}

TEST(MIou, GreedyOnCrossingFixtureEqualsExhaustive) {
  const std::vector<BoundingBox> gold{{0, 0, 40, 40}, {30, 30, 70, 70}};
  const std::vector<BoundingBox> pred{{32, 28, 72, 68}, {2, 4, 42, 44}};
  std::vector<std::vector<double>> m(2, std::vector<double>(2));
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t p = 0; p < 2; ++p) m[g][p] = iou(gold[g], pred[p]);
  EXPECT_NEAR(question_iou(gold, pred), oracle::best_assignment(m), 1e-15);
  EXPECT_NEAR(m_iou({gold}, {pred}), 100.0 * oracle::best_assignment(m), 1e-12);
  EXPECT_EQ(m_iou({gold}, {gold}), 100.0);
  EXPECT_EQ(m_iou({gold}, {{}}), 0.0);
  EXPECT_THROW(m_iou({gold}, {}), DataError);
}

TEST(MIou, GreedyNeverBeatsExhaustive) {
  std::mt19937 rng(41);
  for (int n = 0; n < 200; ++n) {
    std::vector<BoundingBox> gold(1 + rng() % 3), pred(rng() % 4);
    for (auto& b : gold) b = random_box(rng);
    for (auto& b : pred) b = random_box(rng);
    std::vector<std::vector<double>> m(gold.size(), std::vector<double>(pred.size()));
    for (std::size_t g = 0; g < gold.size(); ++g)
      for (std::size_t p = 0; p < pred.size(); ++p) m[g][p] = iou(gold[g], pred[p]);
    ASSERT_LE(question_iou(gold, pred), oracle::best_assignment(m) + 1e-12);
  }
}

TEST(Lexical, MultisetF1) {
  EXPECT_NEAR(lexical_score("mild pleural effusion", "pleural effusion"), 80.0, 1e-12);
  EXPECT_EQ(lexical_score("Pleural effusion.", "pleural effusion"), 100.0);
  EXPECT_EQ(lexical_score("edema", "nodule"), 0.0);
  EXPECT_EQ(lexical_score("", ""), 100.0);
  std::mt19937 rng(2);
  const char* words[] = {"left", "right", "lobe", "mild", "effusion", "edema"};
  for (int n = 0; n < 300; ++n) {
    std::string a, b;
    for (int k = rng() % 6; k > 0; --k) a += std::string(words[rng() % 6]) + " ";
    for (int k = rng() % 6; k > 0; --k) b += std::string(words[rng() % 6]) + " ";
    ASSERT_NEAR(lexical_score(a, b), oracle::multiset_f1(a, b), 1e-9) << a << "|" << b;
    ASSERT_NEAR(lexical_score(a, b), lexical_score(b, a), 1e-12);
    if (!oracle::words(a).empty()) {
      ASSERT_EQ(lexical_score(a, a), 100.0);
    }
  }
}

TEST(ScoreTranscript, GoldAnswersScoreHundredEverywhere) {
  const auto res = testutil::fixture_dataset();
  ScoreAccumulator acc;
  for (const auto& s : res.samples) {
    GoldBackend gold(s);
    acc.add(run_sample(gold, s, Strategy::multi_stage), s);
  }
  const auto scores = acc.finish();
  EXPECT_GE(scores.cells.size(), 10u);
  for (const auto& c : scores.cells) EXPECT_EQ(c.value, 100.0) << c.stage << " " << to_string(c.format);
  EXPECT_EQ(scores.average, 100.0);
  EXPECT_TRUE(scores.cell(3, QAFormat::detection).has_value());
}

TEST(ScoreTranscript, KnownPerCellValues) {
  Sample s;
  s.sample_id = "k";
  const auto add = [&](int stage, QAFormat f, std::string answer) {
    QAPair q;
    q.qa_id = "k/" + std::to_string(s.qa_sequence.size());
    q.stage = stage;
    q.format = f;
    q.question = "q";
    q.answer = std::move(answer);
    s.qa_sequence.push_back(q);
  };
  add(1, QAFormat::open, "pleural effusion");
  add(2, QAFormat::closed, "Yes");
  add(2, QAFormat::closed, "No");
  add(2, QAFormat::closed, "Yes");
  add(3, QAFormat::detection, "[0, 0, 50, 50]");
  s.qa_sequence.back().boxes = std::vector<BoundingBox>{{0, 0, 50, 50}};
  Transcript t;
  t.sample_id = "k";
  const std::vector<std::string> preds{"mild pleural effusion", "Yes, it is there.", "There is none; no.",
                                       "No.", "The box is 25, 25, 75, 75"};
  for (std::size_t i = 0; i < preds.size(); ++i) t.entries.push_back({s.qa_sequence[i].qa_id, "", preds[i]});
  const auto sc = score_transcript(t, s);
  ASSERT_EQ(sc.cells.size(), 3u);
  EXPECT_NEAR(*sc.cell(1, QAFormat::open), 80.0, 1e-12);
  // gold yes,no,yes vs pred yes,yes,no: yes F1 = 1/2, no F1 = 0.
  EXPECT_NEAR(*sc.cell(2, QAFormat::closed), 25.0, 1e-12);
  EXPECT_NEAR(*sc.cell(3, QAFormat::detection), 100.0 / 7.0, 1e-12);
  EXPECT_NEAR(sc.average, (80.0 + 25.0 + 100.0 / 7.0) / 3.0, 1e-12);
  EXPECT_EQ(to_json(sc)["cells"][1]["metric"], "macro_f1");
}

TEST(ScoreTranscript, MisalignmentAndEmptyAreErrors) {
  auto s = testutil::five_question_sample();
  EchoBackend echo;
  auto t = run_sample(echo, s, Strategy::joint);
  Transcript empty;
  empty.sample_id = s.sample_id;
  EXPECT_THROW(score_transcript(empty, s), DataError);
  Sample none;
  none.sample_id = "n";
  Transcript tn;
  tn.sample_id = "n";
  EXPECT_THROW(score_transcript(tn, none), DataError);
  t.entries[1].qa_id = "wrong";
  EXPECT_THROW(score_transcript(t, s), DataError);
  t.sample_id = "other";
  EXPECT_THROW(score_transcript(t, s), DataError);
}

TEST(ScoreTranscript, UnparseableAnswersScoreZeroNotError) {
  auto s = testutil::five_question_sample();
  FunctionBackend junk([](const GenerationRequest&) { return Completion{"zzz", std::nullopt}; });
  const auto sc = score_transcript(run_sample(junk, s, Strategy::joint), s);
  EXPECT_EQ(*sc.cell(2, QAFormat::choice), 0.0);
  double lo = 100, hi = 0;
  for (const auto& c : sc.cells) lo = std::min(lo, c.value), hi = std::max(hi, c.value);
  EXPECT_GE(sc.average, lo);
  EXPECT_LE(sc.average, hi);
}
