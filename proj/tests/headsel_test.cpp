#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace ssud;

namespace {

double arborescence_weight(const std::vector<std::vector<double>>& s, const std::vector<std::size_t>& head) {
  double w = 0.0;
  for (std::size_t d = 1; d < head.size(); ++d) w += s[head[d]][d];
  return w;
}

// Best weight over every head vector (any number of root children).
double brute_force_arborescence(const std::vector<std::vector<double>>& s) {
  const std::size_t n = s.size() - 1;
  std::vector<std::size_t> heads(n, 0);
  double best = -1e300;
  while (true) {
    DirectedTree t{heads, {}};
    if (t.is_arborescence()) {
      std::vector<std::size_t> full{0};
      full.insert(full.end(), heads.begin(), heads.end());
      best = std::max(best, arborescence_weight(s, full));
    }
    std::size_t i = 0;
    while (i < n && ++heads[i] == n + 1) heads[i++] = 0;
    if (i == n) break;
  }
  return best;
}

std::vector<std::vector<double>> random_arc_scores(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::vector<double>> s(n + 1, std::vector<double>(n + 1, 0.0));
  for (auto& row : s)
    for (auto& v : row) v = u(rng);
  return s;
}

// One head whose every dependent row puts its mass on the gold parent.
SentenceHeadMatrices perfect_head(const GoldSentence& g) {
  const std::size_t n = g.size();
  WordMatrix m(n);
  for (const auto& t : g.tokens) {
    const std::size_t d = t.index - 1;
    for (std::size_t j = 0; j < n; ++j) m(d, j) = 0.1 / n;
    if (t.gold_head != 0) m(d, t.gold_head - 1) += 0.9;
    else m(d, d) += 0.9;
  }
  return {1, 1, {m}};
}

}  // namespace

TEST(NormalizeRelation, SubtypesAndSubjects) {
  EXPECT_EQ(normalize_relation("nsubj"), "subj");
  EXPECT_EQ(normalize_relation("nsubj:pass"), "subj");
  EXPECT_EQ(normalize_relation("acl:relcl"), "acl");
  EXPECT_EQ(normalize_relation("obj"), "obj");
  EXPECT_EQ(default_relation_inventory().size(), 17u);
  EXPECT_EQ(parse_direction("p2d"), Direction::parent_to_dep);
  EXPECT_THROW(parse_direction("sideways"), ParseError);
}

TEST(RowArgmax, SkipsDiagonalAndTakesFirstMaximum) {
  auto m = WordMatrix::from_rows({{0.9, 0.05, 0.05}, {0.4, 0.2, 0.4}, {0.3, 0.3, 0.4}});
  EXPECT_EQ(row_argmax(m, 0), 1u);
  EXPECT_EQ(row_argmax(m, 1), 0u);
  EXPECT_EQ(row_argmax(m, 2), 0u);
}

TEST(HeadRetrievalAccuracy, PerfectHeadScoresOne) {
  auto g = testutil::sentence({"1 the DET 2 det", "2 cat NOUN 3 nsubj", "3 sleeps VERB 0 root"});
  auto m = perfect_head(g).matrices;
  std::vector<GoldSentence> gold{g};
  EXPECT_EQ(head_retrieval_accuracy(m, gold, "det", Direction::dep_to_parent), 1.0);
  EXPECT_EQ(head_retrieval_accuracy(m, gold, "subj", Direction::dep_to_parent), 1.0);
  EXPECT_FALSE(head_retrieval_accuracy(m, gold, "obj", Direction::dep_to_parent).has_value());
}

TEST(HeadRetrievalAccuracyProperties, UniformAttentionMatchesTieBreakEnumeration) {
  std::mt19937_64 rng(51);
  auto corpus = testutil::fixture_corpus();
  std::vector<WordMatrix> uniform;
  for (const auto& s : corpus) {
    WordMatrix m(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j) m(i, j) = 1.0 / s.size();
    uniform.push_back(m);
  }
  for (const auto& rel : default_relation_inventory())
    for (auto dir : {Direction::dep_to_parent, Direction::parent_to_dep}) {
      std::size_t hit = 0, total = 0;
      for (const auto& s : corpus)
        for (const auto& t : s.tokens) {
          if (t.gold_head == 0 || normalize_relation(t.deprel) != rel) continue;
          const std::size_t dep = t.index - 1, parent = t.gold_head - 1;
          const std::size_t src = dir == Direction::dep_to_parent ? dep : parent;
          const std::size_t dst = dir == Direction::dep_to_parent ? parent : dep;
          // first off-diagonal index
          hit += (src == 0 ? 1u : 0u) == dst;
          ++total;
        }
      auto acc = head_retrieval_accuracy(uniform, corpus, rel, dir);
      if (total == 0) {
        EXPECT_FALSE(acc.has_value()) << rel;
      } else {
        EXPECT_DOUBLE_EQ(*acc, static_cast<double>(hit) / total) << rel;
      }
    }
}

TEST(SelectHeads, ExamplesAndTieBreak) {
  std::map<std::pair<std::string, Direction>, std::vector<ScoredHead>> acc;
  acc[{"det", Direction::dep_to_parent}] = {{0, 0, 0.3}, {0, 1, 0.9}};
  acc[{"obj", Direction::parent_to_dep}] = {{1, 1, 0.5}, {0, 1, 0.5}, {1, 0, 0.5}};
  auto e = select_heads(acc, 1);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].heads, (std::vector<ScoredHead>{{0, 1, 0.9}}));
  EXPECT_EQ(e[1].heads, (std::vector<ScoredHead>{{0, 1, 0.5}}));

  std::map<std::pair<std::string, Direction>, std::vector<ScoredHead>> single;
  single[{"det", Direction::dep_to_parent}] = {{0, 0, 0.2}};
  single[{"amod", Direction::dep_to_parent}] = {{0, 0, 0.7}};
  for (const auto& ens : select_heads(single, 4)) EXPECT_EQ(ens.heads.size(), 1u);
}

TEST(SelectHeadsProperties, IndependentOfInputOrder) {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::pair<std::string, Direction>, std::vector<ScoredHead>> acc;
    for (const auto* rel : {"det", "obj", "case"}) {
      auto& list = acc[{rel, Direction::dep_to_parent}];
      for (std::size_t l = 0; l < 3; ++l)
        for (std::size_t h = 0; h < 4; ++h) list.push_back({l, h, static_cast<double>(rng() % 4) / 4.0});
    }
    auto a = select_heads(acc, 3);
    for (auto& [key, list] : acc) std::shuffle(list.begin(), list.end(), rng);
    EXPECT_EQ(select_heads(acc, 3), a);
    for (const auto& ens : a)
      for (std::size_t i = 1; i < ens.heads.size(); ++i) EXPECT_GE(ens.heads[i - 1].accuracy, ens.heads[i].accuracy);
  }
}

TEST(MaxArborescence, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + trial % 5;
    auto s = random_arc_scores(rng, n);
    auto head = max_arborescence(s);
    DirectedTree t{std::vector<std::size_t>(head.begin() + 1, head.end()), {}};
    ASSERT_TRUE(t.is_arborescence()) << "trial " << trial;
    EXPECT_NEAR(arborescence_weight(s, head), brute_force_arborescence(s), 1e-12) << "trial " << trial;
  }
}

TEST(DecodeSingleRoot, MatchesExhaustiveSingleRootSearch) {
  std::mt19937_64 rng(54);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 5;
    DirectedArcScores arcs;
    arcs.n = n;
    arcs.score = random_arc_scores(rng, n);
    arcs.label.assign(n + 1, std::vector<std::string>(n + 1, "dep"));
    auto tree = decode_single_root(arcs);
    ASSERT_TRUE(tree.is_arborescence());
    ASSERT_EQ(std::count(tree.heads.begin(), tree.heads.end(), 0u), 1);
    double best = -1e300;
    for (const auto& heads : testutil::all_single_root_trees(n)) {
      std::vector<std::size_t> full{0};
      full.insert(full.end(), heads.begin(), heads.end());
      best = std::max(best, arborescence_weight(arcs.score, full));
    }
    std::vector<std::size_t> full{0};
    full.insert(full.end(), tree.heads.begin(), tree.heads.end());
    EXPECT_NEAR(arborescence_weight(arcs.score, full), best, 1e-12) << "trial " << trial;
  }
}

TEST(InduceDirectedLabeledTree, PerfectHeadRecoversGold) {
  auto g = testutil::sentence({"1 the DET 2 dep", "2 cat NOUN 3 dep", "3 sleeps VERB 0 root", "4 on ADP 5 dep",
                               "5 mats NOUN 3 dep", "6 . PUNCT 3 dep"});
  std::vector<RelationEnsemble> ensembles{{"dep", Direction::dep_to_parent, {{0, 0, 1.0}}}};
  auto tree = induce_directed_labeled_tree(perfect_head(g), ensembles);
  auto c = attachment_scores(tree, g, {false, normalize_relation});
  EXPECT_EQ(c.uas(), 1.0);
  EXPECT_EQ(c.las(), 1.0);
  EXPECT_EQ(tree.labels[2], "root");
}

TEST(InduceDirectedLabeledTree, LabelComesFromBestRelation) {
  // two words; "det" sees 1 -> 2 strongly, "amod" weakly
  WordMatrix strong = WordMatrix::from_rows({{0.1, 0.9}, {0.5, 0.5}});
  WordMatrix weak = WordMatrix::from_rows({{0.6, 0.4}, {0.5, 0.5}});
  SentenceHeadMatrices m{1, 2, {strong, weak}};
  std::vector<RelationEnsemble> e{{"det", Direction::dep_to_parent, {{0, 0, 1.0}}},
                                  {"amod", Direction::dep_to_parent, {{0, 1, 1.0}}}};
  auto t = induce_directed_labeled_tree(m, e);
  EXPECT_EQ(t.heads, (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(t.labels, (std::vector<std::string>{"det", "root"}));
  EXPECT_THROW(induce_directed_labeled_tree(m, {}), Error);
  std::vector<RelationEnsemble> outside{{"det", Direction::dep_to_parent, {{3, 0, 1.0}}}};
  EXPECT_THROW(induce_directed_labeled_tree(m, outside), IndexError);
}

TEST(HeadselPipeline, KZeroSubstitutionsAreIdenticalToTargetOnly) {
  testutil::SyntheticAttention source(2, 3);
  auto corpus = testutil::fixture_corpus();
  HeadselPipeline target;
  target.config.top_n = 2;
  target.attention = &source;
  auto ssud0 = apply_ssud_everywhere(target, [](const GoldSentence& s) {
    SubstitutionSet set;
    set.words = s.words();
    return set;
  });
  auto a = run_headsel(target, corpus, corpus);
  auto b = run_headsel(ssud0, corpus, corpus);
  EXPECT_EQ(a.ensembles, b.ensembles);
  EXPECT_EQ(to_json(a.report), to_json(b.report));
  for (std::size_t i = 0; i < a.trees.size(); ++i) {
    EXPECT_EQ(a.trees[i].heads, b.trees[i].heads);
    EXPECT_EQ(a.trees[i].labels, b.trees[i].labels);
    EXPECT_TRUE(a.trees[i].is_arborescence());
  }
}

TEST(HeadselPipeline, SubstitutionsChangeEveryConsumedMatrix) {
  testutil::SyntheticAttention source(1, 2);
  auto g = testutil::sentence({"1 the DET 2 det", "2 cat NOUN 3 nsubj", "3 sleeps VERB 0 root"});
  HeadselPipeline p;
  p.attention = &source;
  SubstitutionSet set;
  set.words = g.words();
  set.per_position[1] = {{"dog", -1.0, "NOUN"}};
  auto ssud = apply_ssud_everywhere(p, std::map<std::string, SubstitutionSet>{{"s", set}});
  auto plain = p.matrices(g);
  auto averaged = ssud.matrices(g);
  for (std::size_t h = 0; h < 2; ++h) {
    SentenceAttention sa;
    sa.target = source.fetch("s", g.words());
    sa.variants[1] = {source.fetch("s", {"the", "dog", "sleeps"})};
    EXPECT_EQ(averaged.at(0, h), sentence_matrix(sa, 0, HeadSelection::only({h})));
    EXPECT_EQ(averaged.at(0, h).row(0)[0], plain.at(0, h).row(0)[0]);
    EXPECT_NE(averaged.at(0, h), plain.at(0, h));
  }
}

TEST(HeadselPipeline, SequentialRunMatchesParallelExperiment) {
  testutil::TempDir dir("headsel");
  auto c = testutil::fixture_config(dir.path());
  c.mode = RunMode::ssud;
  c.k = 2;
  Runtime rt(c);
  auto parallel = run_headsel_experiment(c, rt);
  const auto corpus = testutil::fixture_corpus();
  auto sequential = run_headsel(make_headsel_pipeline(c, rt), corpus, corpus);
  EXPECT_EQ(parallel.ensembles, sequential.ensembles);
  EXPECT_EQ(to_json(parallel.report), to_json(sequential.report));
  ASSERT_EQ(parallel.trees.size(), sequential.trees.size());
  for (std::size_t i = 0; i < parallel.trees.size(); ++i) EXPECT_EQ(parallel.trees[i].heads, sequential.trees[i].heads);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "headsel_trees.conllu"));

  // saved ensembles reproduce the evaluation
  auto reuse = c;
  reuse.ensembles = dir.path() / "ensembles.json";
  reuse.out = dir.path() / "reuse";
  auto again = run_headsel_experiment(reuse, rt);
  EXPECT_EQ(again.ensembles, parallel.ensembles);
  EXPECT_EQ(to_json(again.report), to_json(parallel.report));
}

TEST(EnsembleJson, RoundTrip) {
  std::vector<RelationEnsemble> e{{"det", Direction::dep_to_parent, {{10, 1, 0.75}, {9, 0, 0.5}}},
                                  {"subj", Direction::parent_to_dep, {}}};
  EXPECT_EQ(ensembles_from_json(nlohmann::json::parse(to_json(e).dump())), e);
}
