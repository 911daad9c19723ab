#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "test_util.hpp"

using namespace ssud;

namespace {

// Tags by lexicon lookup; unknown forms are X.
class LexiconTagger : public UposTagger {
 public:
  std::map<std::string, std::string> tags{
      {"just", "ADV"},  {"thought", "VERB"}, {"you", "PRON"},   {"'d", "AUX"},     {"like", "VERB"},
      {"to", "PART"},   {"know", "VERB"},    {".", "PUNCT"},    {"figured", "VERB"}, {"knew", "VERB"},
      {"think", "VERB"}, {"quickly", "ADV"}, {"only", "ADV"},   {"really", "ADV"}, {"love", "VERB"},
      {"want", "VERB"}, {"see", "VERB"},     {"learn", "VERB"}, {"the", "DET"},    {"cat", "NOUN"},
      {"sleeps", "VERB"}, {"dog", "NOUN"},   {"a", "DET"},      {"Thought", "VERB"}};
  std::size_t calls = 0;

  std::vector<std::string> tag(std::span<const std::string> words) override {
    ++calls;
    std::vector<std::string> out;
    for (const auto& w : words) {
      auto it = tags.find(w);
      out.push_back(it == tags.end() ? "X" : it->second);
    }
    return out;
  }
};

// Returns a fixed prediction list per masked position.
class ScriptedOracle : public FillMaskOracle {
 public:
  std::map<std::size_t, std::vector<MaskPrediction>> script;
  std::vector<std::size_t> requested_top_k;

  std::vector<MaskPrediction> fill_mask(std::span<const std::string>, std::size_t position,
                                        std::size_t top_k) override {
    requested_top_k.push_back(top_k);
    auto out = script[position];
    if (out.size() > top_k) out.resize(top_k);
    return out;
  }
};

const std::vector<std::string> kKnowSentence{"just", "thought", "you", "'d", "like", "to", "know", "."};

WordMatrix rows(std::vector<std::vector<double>> r) { return WordMatrix::from_rows(r); }

}  // namespace

TEST(SubstitutablePositions, KnowSentence) {
  LexiconTagger tagger;
  auto tags = tagger.tag(kKnowSentence);
  EXPECT_EQ(substitutable_positions(tags, SsudConfig{}), (std::set<std::size_t>{0, 1, 4, 6}));
}

TEST(SubstitutablePositions, TrivialCases) {
  EXPECT_TRUE(substitutable_positions(std::vector<std::string>{"PRON", "PUNCT"}, SsudConfig{}).empty());
  SsudConfig nouns;
  nouns.categories = {"NOUN"};
  EXPECT_EQ(substitutable_positions(std::vector<std::string>{"DET", "NOUN", "VERB"}, nouns),
            (std::set<std::size_t>{1}));
}

TEST(GenerateSubstitutions, FiltersInOrder) {
  LexiconTagger tagger;
  ScriptedOracle oracle;
  oracle.script[1] = {{"thought", -0.1}, {"##ed", -0.2}, {"figured", -0.3}, {"quickly", -0.4},
                      {"Figured", -0.5}, {"knew", -0.6},  {"it's", -0.7},    {"think", -0.8}, {"love", -0.9}};
  SsudConfig c;
  c.k = 3;
  auto r = generate_substitutions(kKnowSentence, 1, "VERB", c, oracle, tagger);
  std::vector<std::string> forms;
  for (const auto& cand : r.candidates) forms.push_back(cand.form);
  EXPECT_EQ(forms, (std::vector<std::string>{"figured", "knew", "think"}));
  EXPECT_EQ(r.shortfall, 0u);
  EXPECT_EQ(oracle.requested_top_k, (std::vector<std::size_t>{60}));
  EXPECT_DOUBLE_EQ(r.candidates[0].mlm_score, -0.3);
  EXPECT_EQ(r.candidates[0].upos_in_context, "VERB");
}

TEST(GenerateSubstitutions, AllRejectedGivesShortfall) {
  LexiconTagger tagger;
  ScriptedOracle oracle;
  oracle.script[1] = {{"thought", -0.1}, {".", -0.2}, {"##s", -0.3}};
  SsudConfig c;
  c.k = 2;
  auto r = generate_substitutions(kKnowSentence, 1, "VERB", c, oracle, tagger);
  EXPECT_TRUE(r.candidates.empty());
  EXPECT_EQ(r.shortfall, 2u);
}

TEST(GenerateSubstitutions, KZeroAsksNothing) {
  LexiconTagger tagger;
  ScriptedOracle oracle;
  SsudConfig c;
  c.k = 0;
  EXPECT_TRUE(generate_substitutions(kKnowSentence, 1, "VERB", c, oracle, tagger).candidates.empty());
  EXPECT_TRUE(oracle.requested_top_k.empty());
}

TEST(IsWholeWord, Cases) {
  EXPECT_TRUE(is_whole_word("figured"));
  EXPECT_TRUE(is_whole_word("Café"));
  EXPECT_FALSE(is_whole_word("##ed"));
  EXPECT_FALSE(is_whole_word("it's"));
  EXPECT_FALSE(is_whole_word(""));
  EXPECT_FALSE(is_whole_word("42"));
}

TEST(BuildSsudMatrix, HandAveragedExample) {
  auto target = rows({{0.6, 0.4}, {0.5, 0.5}});
  auto sub = rows({{0.8, 0.2}, {0.9, 0.1}});
  auto out = build_ssud_matrix(target, {{0, {sub}}});
  EXPECT_NEAR(out(0, 0), 0.7, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.3, 1e-15);
  EXPECT_EQ(out(1, 0), 0.5);
  EXPECT_EQ(out(1, 1), 0.5);
}

TEST(BuildSsudMatrix, EmptySubstitutionsAreBitIdentical) {
  std::mt19937_64 rng(5);
  auto t = testutil::random_word_matrix(rng, 6);
  EXPECT_EQ(build_ssud_matrix(t, {}), t);
  EXPECT_EQ(build_ssud_matrix(t, {{2, {}}}), t);
}

TEST(BuildSsudMatrix, IdenticalSubstitutesLeaveTarget) {
  std::mt19937_64 rng(6);
  auto t = testutil::random_word_matrix(rng, 4);
  std::map<std::size_t, std::vector<WordMatrix>> subs;
  for (std::size_t i = 0; i < 4; ++i) subs[i] = {t, t};
  auto out = build_ssud_matrix(t, subs);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out(i, j), t(i, j), 1e-15);
}

TEST(BuildSsudMatrix, DimensionMismatch) {
  WordMatrix t(3), s(2);
  EXPECT_THROW(build_ssud_matrix(t, {{0, {s}}}), DimensionError);
  EXPECT_THROW(build_ssud_matrix(t, {{3, {t}}}), DimensionError);
}

TEST(BuildSsudMatrixProperties, OrderInvariantAndRowStochastic) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 6;
    auto t = testutil::random_word_matrix(rng, n);
    std::map<std::size_t, std::vector<WordMatrix>> subs;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t v = 0; v < (i + trial) % 4; ++v) subs[i].push_back(testutil::random_word_matrix(rng, n));
    auto a = build_ssud_matrix(t, subs);
    for (auto& [pos, mats] : subs) std::shuffle(mats.begin(), mats.end(), rng);
    auto b = build_ssud_matrix(t, subs);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(a.is_row_stochastic());
    // independent mean over the row multiset
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double sum = t(i, j);
        std::size_t count = 1;
        if (subs.count(i))
          for (const auto& m : subs[i]) sum += m(i, j), ++count;
        EXPECT_NEAR(a(i, j), sum / count, 1e-14);
      }
  }
}

TEST(SubstitutionSet, TruncatedKeepsPrefixAndRecomputesShortfall) {
  SubstitutionSet s;
  s.k = 3;
  s.per_position[1] = {{"a", -1, "VERB"}, {"b", -2, "VERB"}, {"c", -3, "VERB"}};
  s.per_position[4] = {{"d", -1, "VERB"}};
  s.shortfalls[4] = 2;
  auto t = s.truncated(2);
  EXPECT_EQ(t.per_position[1].size(), 2u);
  EXPECT_EQ(t.per_position[1][1].form, "b");
  EXPECT_EQ(t.shortfalls, (std::map<std::size_t, std::size_t>{{4, 1}}));
  EXPECT_EQ(t.total_shortfall(), 1u);
}

TEST(SubstitutionCache, RecordsRoundTripAndLaterRecordsWin) {
  testutil::TempDir dir("subcache");
  const auto path = dir.path() / "nested" / "subs.jsonl";
  {
    SubstitutionCache cache(path);
    SubstitutionRecord r;
    r.sentence_id = "s1";
    r.position = 1;
    r.original = "thought";
    r.upos = "VERB";
    r.eligible = true;
    r.k = 1;
    r.top_k = 20;
    r.candidates = {{"knew", -0.5, "VERB"}};
    cache.put(r);
    r.k = 2;
    r.candidates.push_back({"think", -0.7, "VERB"});
    cache.put(r);
    EXPECT_EQ(cache.size(), 1u);
  }
  SubstitutionCache again(path);
  ASSERT_EQ(again.size(), 1u);
  auto r = again.find("s1", 1);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->k, 2u);
  EXPECT_EQ(r->candidates.size(), 2u);
  EXPECT_EQ(r->candidates[1].form, "think");
  EXPECT_TRUE(again.lookup("s1", 1, 2));
  EXPECT_FALSE(again.lookup("s1", 1, 3));
  EXPECT_FALSE(again.lookup("s1", 0, 1));
}

TEST(SubstitutionCache, CorruptLineNamesFileAndLine) {
  testutil::TempDir dir("subcache-bad");
  const auto path = dir.path() / "subs.jsonl";
  std::ofstream(path) << "{\"sentence_id\":\"a\",\"position\":0,\"eligible\":false,\"candidates\":[]}\n{oops\n";
  try {
    SubstitutionCache cache(path);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string() + ":2"), std::string::npos);
  }
}

TEST(SubstitutionProvider, LiveThenCachedThenOffline) {
  testutil::TempDir dir("provider");
  LexiconTagger tagger;
  ScriptedOracle oracle;
  oracle.script[0] = {{"only", -1}, {"really", -2}};
  oracle.script[1] = {{"figured", -1}, {"knew", -2}};
  oracle.script[4] = {{"love", -1}, {"want", -2}};
  oracle.script[6] = {{"see", -1}};  // shortfall of 1 at k=2
  SsudConfig c;
  c.k = 2;

  SubstitutionCache cache(dir.path() / "subs.jsonl");
  SubstitutionProvider live(cache, &oracle, &tagger, false);
  auto first = live.get("know", kKnowSentence, c);
  EXPECT_EQ(first.substitutable, (std::set<std::size_t>{0, 1, 4, 6}));
  EXPECT_EQ(first.per_position.at(1).size(), 2u);
  EXPECT_EQ(first.shortfalls, (std::map<std::size_t, std::size_t>{{6, 1}}));
  EXPECT_EQ(live.stats().new_records, kKnowSentence.size());
  EXPECT_EQ(oracle.requested_top_k.size(), 4u);

  SubstitutionCache reloaded(dir.path() / "subs.jsonl");
  SubstitutionProvider offline(reloaded, nullptr, nullptr, true);
  auto second = offline.get("know", kKnowSentence, c);
  EXPECT_EQ(second.per_position, first.per_position);
  EXPECT_EQ(second.shortfalls, first.shortfalls);
  EXPECT_EQ(offline.stats().new_records, 0u);
  EXPECT_EQ(offline.stats().cache_hits, kKnowSentence.size());

  c.k = 1;
  auto smaller = offline.get("know", kKnowSentence, c);
  EXPECT_EQ(smaller.per_position.at(1).size(), 1u);
  EXPECT_TRUE(smaller.shortfalls.empty());

  c.k = 3;
  EXPECT_THROW(offline.get("know", kKnowSentence, c), CacheMissError);
  EXPECT_THROW(offline.get("unseen", kKnowSentence, c), CacheMissError);
}

TEST(SubstitutionProvider, KZeroNeedsNoCache) {
  SubstitutionCache cache;
  SubstitutionProvider p(cache, nullptr, nullptr, true);
  SsudConfig c;
  c.k = 0;
  auto s = p.get("x", kKnowSentence, c);
  EXPECT_TRUE(s.per_position.empty());
  EXPECT_TRUE(s.substitutable.empty());
}
