#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "test_util.hpp"

using namespace ssud;

namespace {

TokenAttention single_head(const std::vector<std::vector<float>>& rows) {
  std::vector<float> values;
  for (const auto& r : rows) values.insert(values.end(), r.begin(), r.end());
  return TokenAttention({1, 1, rows.size()}, values);
}

// Contiguous spans for the given word sizes, optionally framed by one
// special token on each side.
SubwordAlignment spans_for(const std::vector<std::size_t>& sizes, bool framed) {
  SubwordAlignment a;
  std::size_t t = framed ? 1 : 0;
  if (framed) a.special_tokens.push_back(0);
  for (auto s : sizes) {
    a.spans.push_back({t, t + s});
    t += s;
  }
  if (framed) a.special_tokens.push_back(t);
  return a;
}

}  // namespace

TEST(WordLevelMatrix, IdentityAlignmentReturnsInputSlice) {
  auto att = single_head({{0.1f, 0.9f}, {0.75f, 0.25f}});
  auto m = word_level_matrix(att, SubwordAlignment::identity(2), 0);
  EXPECT_NEAR(m(0, 0), 0.1, 1e-7);
  EXPECT_NEAR(m(0, 1), 0.9, 1e-7);
  EXPECT_NEAR(m(1, 0), 0.75, 1e-7);
  EXPECT_NEAR(m(1, 1), 0.25, 1e-7);
}

TEST(WordLevelMatrix, ThreeTokensTwoWordsHandComputed) {
  auto att = single_head({{0.2f, 0.3f, 0.5f}, {0.1f, 0.4f, 0.5f}, {0.6f, 0.2f, 0.2f}});
  SubwordAlignment align;
  align.spans = {{0, 2}, {2, 3}};
  auto m = word_level_matrix(att, align, 0);
  // f32 inputs carry ~1e-8 representation error; the exact check on double
  // inputs lives in the acceptance suite.
  EXPECT_NEAR(m(0, 0), 0.5, 1e-7);
  EXPECT_NEAR(m(0, 1), 0.5, 1e-7);
  EXPECT_NEAR(m(1, 0), 0.8, 1e-7);
  EXPECT_NEAR(m(1, 1), 0.2, 1e-7);
}

TEST(WordLevelMatrix, AllHeadsOfIdenticalHeadsEqualsOneHead) {
  std::vector<float> one{0.3f, 0.7f, 0.6f, 0.4f};
  std::vector<float> two = one;
  two.insert(two.end(), one.begin(), one.end());
  TokenAttention a1({1, 1, 2}, one), a2({1, 2, 2}, two);
  EXPECT_EQ(word_level_matrix(a1, SubwordAlignment::identity(2), 0),
            word_level_matrix(a2, SubwordAlignment::identity(2), 0));
}

TEST(WordLevelMatrix, SpecialTokensDroppedBeforeRenormalizing) {
  // [CLS] a b [SEP]; word rows lose their special-token mass
  auto att = single_head({{0.25f, 0.25f, 0.25f, 0.25f},
                          {0.5f, 0.1f, 0.3f, 0.1f},
                          {0.2f, 0.2f, 0.2f, 0.4f},
                          {0.25f, 0.25f, 0.25f, 0.25f}});
  auto m = word_level_matrix(att, spans_for({1, 1}, true), 0);
  EXPECT_NEAR(m(0, 0), 0.25, 1e-7);
  EXPECT_NEAR(m(0, 1), 0.75, 1e-7);
  EXPECT_NEAR(m(1, 0), 0.5, 1e-7);
  EXPECT_NEAR(m(1, 1), 0.5, 1e-7);
}

TEST(WordLevelMatrix, Errors) {
  auto att = single_head({{0.5f, 0.5f}, {0.5f, 0.5f}});
  EXPECT_THROW(word_level_matrix(att, SubwordAlignment::identity(2), 1), IndexError);
  EXPECT_THROW(word_level_matrix(att, SubwordAlignment::identity(2), 0, HeadSelection::only({1})), IndexError);
  SubwordAlignment empty_span;
  empty_span.spans = {{0, 0}, {0, 2}};
  EXPECT_THROW(word_level_matrix(att, empty_span, 0), Error);
  SubwordAlignment gap;
  gap.spans = {{0, 1}};
  EXPECT_THROW(word_level_matrix(att, gap, 0), Error);

  // word 0 sends everything to the special token
  auto degenerate = single_head({{1.0f, 0.0f, 0.0f}, {0.0f, 1.0f, 0.0f}, {0.0f, 0.5f, 0.5f}});
  SubwordAlignment framed;
  framed.spans = {{1, 2}, {2, 3}};
  framed.special_tokens = {0};
  auto d2 = single_head({{1.0f, 0.0f, 0.0f}, {1.0f, 0.0f, 0.0f}, {0.0f, 0.5f, 0.5f}});
  try {
    word_level_matrix(d2, framed, 0);
    FAIL() << "expected a degenerate row";
  } catch (const DegenerateRowError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate attention row"), std::string::npos);
  }
  EXPECT_NO_THROW(word_level_matrix(degenerate, framed, 0));
}

TEST(HeadSlice, MatchesSingleHeadSelection) {
  std::mt19937_64 rng(7);
  auto att = testutil::random_attention(rng, 3, 6, 5);
  auto align = spans_for({2, 1}, true);
  auto sliced = head_slice(att, 2, 5);
  EXPECT_EQ(sliced.dims(), (TensorDims{1, 1, 5}));
  EXPECT_EQ(word_level_matrix(sliced, align, 0), word_level_matrix(att, align, 2, HeadSelection::only({5})));
  EXPECT_THROW(head_slice(att, 3, 0), IndexError);
  EXPECT_THROW(head_slice(att, 0, 6), IndexError);

  TokenAttention tiny({1, 1, 2}, {0.5f, 0.5f, 0.2f, 0.8f});
  EXPECT_EQ(head_slice(tiny, 0, 0).values(), tiny.values());
}

TEST(TokenAttention, RejectsBadShapes) {
  EXPECT_THROW(TokenAttention({0, 1, 1}, {}), DimensionError);
  EXPECT_THROW(TokenAttention({1, 1, 2}, {1.0f}), DimensionError);
  EXPECT_THROW(TokenAttention({1, 1, 1}, {1.0f}, {"a", "b"}), DimensionError);
}

TEST(WordLevelMatrixProperties, RandomTensorsGiveRowStochasticOutput) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::size_t> words(1, 6), width(1, 3);
    std::vector<std::size_t> sizes(words(rng));
    for (auto& s : sizes) s = width(rng);
    const bool framed = trial % 2 == 0;
    const std::size_t T = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) + (framed ? 2 : 0);
    auto att = testutil::random_attention(rng, 2, 3, T);
    auto m = word_level_matrix(att, spans_for(sizes, framed), trial % 2);
    EXPECT_TRUE(m.is_row_stochastic()) << "trial " << trial;
  }
}

TEST(WordLevelMatrixProperties, MergingAdjacentWordsSumsTheirColumns) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto att = testutil::random_attention(rng, 1, 2, 5);
    auto split = word_level_matrix(att, SubwordAlignment::identity(5), 0);
    SubwordAlignment merged;
    merged.spans = {{0, 1}, {1, 3}, {3, 4}, {4, 5}};
    auto m = word_level_matrix(att, merged, 0);
    for (std::size_t w : {0u, 2u, 3u}) {
      const std::size_t src = w == 0 ? 0 : w + 1;
      EXPECT_NEAR(m(w, 1), split(src, 1) + split(src, 2), 1e-12);
    }
  }
}

TEST(WordLevelMatrixProperties, PermutingWordsPermutesOutput) {
  std::mt19937_64 rng(13);
  const std::vector<std::size_t> sizes{2, 1, 3, 1};
  for (int trial = 0; trial < 30; ++trial) {
    auto att = testutil::random_attention(rng, 1, 1, 7);
    std::vector<std::size_t> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    // new word p holds old word perm[p]; rebuild the token axis accordingly
    auto old_align = spans_for(sizes, false);
    std::vector<std::size_t> new_sizes, token_map;
    for (auto w : perm) {
      new_sizes.push_back(sizes[w]);
      for (std::size_t t = old_align.spans[w].begin; t < old_align.spans[w].end; ++t) token_map.push_back(t);
    }
    std::vector<float> values(49);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) values[i * 7 + j] = att.at(0, 0, token_map[i], token_map[j]);
    TokenAttention permuted({1, 1, 7}, values);
    auto a = word_level_matrix(att, old_align, 0);
    auto b = word_level_matrix(permuted, spans_for(new_sizes, false), 0);
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t q = 0; q < 4; ++q) EXPECT_NEAR(b(p, q), a(perm[p], perm[q]), 1e-12);
  }
}

TEST(AttentionFixtureIo, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  AttentionFixture f;
  f.sentence_id = "rt-1";
  f.attention = TokenAttention({2, 2, 5}, testutil::random_attention(rng, 2, 2, 5).values(),
                               {"[CLS]", "ca", "##t", "sat", "[SEP]"});
  f.alignment = spans_for({2, 1}, true);
  std::stringstream buf;
  write_attention_fixture(buf, f);
  const auto bytes = buf.str();
  auto back = read_attention_fixture(buf);
  EXPECT_EQ(back.sentence_id, "rt-1");
  EXPECT_EQ(back.attention.values(), f.attention.values());
  EXPECT_EQ(back.attention.token_strings(), f.attention.token_strings());
  EXPECT_EQ(back.alignment.spans, f.alignment.spans);
  std::stringstream again;
  write_attention_fixture(again, back);
  EXPECT_EQ(again.str(), bytes);
}

TEST(AttentionFixtureIo, CorpusFilesRewriteByteForByte) {
  std::size_t checked = 0;
  for (const auto& entry : std::filesystem::directory_iterator(testutil::kCorpus / "attention" / "fixture-bert")) {
    const auto original = testutil::read_bytes(entry.path());
    auto f = read_attention_fixture_file(entry.path());
    std::stringstream out;
    write_attention_fixture(out, f);
    ASSERT_EQ(out.str(), original) << entry.path();
    if (++checked == 25) break;
  }
  EXPECT_EQ(checked, 25u);
}

TEST(AttentionFixtureIo, CorruptInputsAreNamedErrors) {
  EXPECT_THROW(
      {
        std::stringstream in("{not json\n");
        read_attention_fixture(in);
      },
      ParseError);

  AttentionFixture f;
  f.attention = TokenAttention({1, 1, 2}, {0.5f, 0.5f, 0.5f, 0.5f});
  f.alignment = SubwordAlignment::identity(2);
  std::stringstream buf;
  write_attention_fixture(buf, f);
  auto truncated = buf.str().substr(0, buf.str().size() - 3);
  std::stringstream t(truncated);
  EXPECT_THROW(read_attention_fixture(t), ParseError);
  std::stringstream trailing(buf.str() + "x");
  EXPECT_THROW(read_attention_fixture(trailing), ParseError);

  testutil::TempDir dir("fixture-io");
  const auto path = dir.path() / "broken.att";
  {
    std::ofstream out(path, std::ios::binary);
    out << "{\"dims\":[1,1,2,2]}\n";
  }
  try {
    read_attention_fixture_file(path);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
}

TEST(AttentionFixtureIo, HeaderFieldsAreChecked) {
  nlohmann::json h{{"dims", {1, 1, 2, 2}},   {"dtype", "f16"},         {"spans", {{0, 1}, {1, 2}}},
                   {"special_tokens", nlohmann::json::array()}, {"token_strings", {"a", "b"}}};
  EXPECT_THROW(fixture_from_header(h, {0.5f, 0.5f, 0.5f, 0.5f}), ParseError);
  h["dtype"] = "f32";
  EXPECT_NO_THROW(fixture_from_header(h, {0.5f, 0.5f, 0.5f, 0.5f}));
  h["spans"] = {{0, 1}};
  EXPECT_THROW(fixture_from_header(h, {0.5f, 0.5f, 0.5f, 0.5f}), ParseError);
}
