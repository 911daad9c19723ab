#pragma once

// Supervised head selection and directed labeled tree induction.
//
// Heads are ranked per (relation, direction) by how often the row argmax of
// the source word lands on the other endpoint of a gold arc. The top heads
// of each ensemble are averaged, both directions are combined into an arc
// score per relation, and a maximum spanning arborescence is decoded. The
// SSUD variant swaps every word matrix for its substitution-averaged form
// and changes nothing else.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ssud/attention_source.hpp"
#include "ssud/error.hpp"
#include "ssud/evaluation.hpp"
#include "ssud/induction.hpp"
#include "ssud/substitution.hpp"
#include "ssud/treebank.hpp"

namespace ssud {

enum class Direction { dep_to_parent, parent_to_dep };

inline std::string to_string(Direction d) { return d == Direction::dep_to_parent ? "dep_to_parent" : "parent_to_dep"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "dep_to_parent" || s == "d2p") return Direction::dep_to_parent;
  if (s == "parent_to_dep" || s == "p2d") return Direction::parent_to_dep;
  throw ParseError("unknown direction '" + s + "'");
}

struct HeadKey {
  std::size_t layer = 0;
  std::size_t head = 0;
  Direction direction = Direction::dep_to_parent;

  auto operator<=>(const HeadKey&) const = default;
};

struct ScoredHead {
  std::size_t layer = 0;
  std::size_t head = 0;
  double accuracy = 0.0;

  bool operator==(const ScoredHead&) const = default;
};

struct RelationEnsemble {
  std::string relation;
  Direction direction = Direction::dep_to_parent;
  std::vector<ScoredHead> heads;  // descending accuracy

  bool operator==(const RelationEnsemble&) const = default;
};

inline const std::vector<std::string>& default_relation_inventory() {
  static const std::vector<std::string> rels{"acl",  "advcl",    "cc",   "csubj", "parataxis", "amod",
                                             "advmod", "aux",    "compound", "conj", "det",  "nmod",
                                             "nummod", "obj",    "subj", "case",  "mark"};
  return rels;
}

// Maps a UD deprel onto the head-selection inventory: subtypes are dropped
// and nominal subjects fold into "subj".
inline std::string normalize_relation(const std::string& deprel) {
  auto base = deprel.substr(0, deprel.find(':'));
  if (base == "nsubj") return "subj";
  return base;
}

struct HeadselConfig {
  std::size_t top_n = 4;
  double root_score = 0.0;
  std::vector<std::string> relations = default_relation_inventory();
  bool exclude_punct = false;
};

// All L*H word matrices of one sentence, indexed layer * heads + head.
struct SentenceHeadMatrices {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<WordMatrix> matrices;

  const WordMatrix& at(std::size_t layer, std::size_t head) const { return matrices[layer * heads + head]; }
};

inline SentenceHeadMatrices head_matrices(const SentenceAttention& sa) {
  SentenceHeadMatrices out;
  out.layers = sa.target.attention.dims().layers;
  out.heads = sa.target.attention.dims().heads;
  out.matrices.reserve(out.layers * out.heads);
  for (std::size_t l = 0; l < out.layers; ++l)
    for (std::size_t h = 0; h < out.heads; ++h) out.matrices.push_back(sentence_matrix(sa, l, HeadSelection::only({h})));
  return out;
}

// Off-diagonal argmax of row `source`, first maximum wins.
inline std::size_t row_argmax(const WordMatrix& m, std::size_t source) {
  std::size_t best = m.size();
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (j == source) continue;
    if (best == m.size() || m(source, j) > m(source, best)) best = j;
  }
  return best;
}

// Hit counts for one head over one sentence.
inline void count_head_hits(const WordMatrix& m, const GoldSentence& gold, const std::string& relation,
                            Direction direction, HitCount& out) {
  if (m.size() != gold.size()) throw DimensionError("head accuracy: matrix does not match sentence length");
  for (const auto& t : gold.tokens) {
    if (t.gold_head == 0 || normalize_relation(t.deprel) != relation) continue;
    const std::size_t dep = t.index - 1;
    const std::size_t parent = t.gold_head - 1;
    const bool d2p = direction == Direction::dep_to_parent;
    ++out.total;
    out.hit += row_argmax(m, d2p ? dep : parent) == (d2p ? parent : dep) ? 1 : 0;
  }
}

// Fraction of gold arcs of `relation` retrieved by one head across
// sentences; matrices[s] is that head's matrix for gold[s]. nullopt when the
// relation never occurs.
inline std::optional<double> head_retrieval_accuracy(std::span<const WordMatrix> matrices,
                                                     std::span<const GoldSentence> gold, const std::string& relation,
                                                     Direction direction) {
  if (matrices.size() != gold.size()) throw DimensionError("head accuracy: one matrix per sentence is required");
  HitCount c;
  for (std::size_t s = 0; s < gold.size(); ++s) count_head_hits(matrices[s], gold[s], relation, direction, c);
  return c.rate();
}

// Running hit counts for every (relation, direction) x (layer, head).
class HeadAccuracyTable {
 public:
  HeadAccuracyTable(std::vector<std::string> relations, std::size_t layers, std::size_t heads)
      : relations_(std::move(relations)), layers_(layers), heads_(heads) {
    for (const auto& r : relations_)
      for (auto d : {Direction::dep_to_parent, Direction::parent_to_dep})
        counts_[{r, d}] = std::vector<HitCount>(layers * heads);
  }

  void add(const SentenceHeadMatrices& m, const GoldSentence& gold) {
    if (m.layers != layers_ || m.heads != heads_) throw DimensionError("head accuracy: model dims changed");
    for (auto& [key, counts] : counts_)
      for (std::size_t l = 0; l < layers_; ++l)
        for (std::size_t h = 0; h < heads_; ++h)
          count_head_hits(m.at(l, h), gold, key.first, key.second, counts[l * heads_ + h]);
  }

  void merge(const HeadAccuracyTable& o) {
    for (auto& [key, counts] : counts_) {
      const auto& other = o.counts_.at(key);
      for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other[i];
    }
  }

  std::optional<double> accuracy(const std::string& relation, const HeadKey& key) const {
    return counts_.at({relation, key.direction})[key.layer * heads_ + key.head].rate();
  }

  // Relations with no instances are absent.
  std::map<std::pair<std::string, Direction>, std::vector<ScoredHead>> scored() const {
    std::map<std::pair<std::string, Direction>, std::vector<ScoredHead>> out;
    for (const auto& [key, counts] : counts_) {
      if (counts.empty() || counts[0].total == 0) continue;
      auto& list = out[key];
      for (std::size_t l = 0; l < layers_; ++l)
        for (std::size_t h = 0; h < heads_; ++h) list.push_back({l, h, *counts[l * heads_ + h].rate()});
    }
    return out;
  }

  std::size_t layers() const { return layers_; }
  std::size_t heads() const { return heads_; }

 private:
  std::vector<std::string> relations_;
  std::size_t layers_;
  std::size_t heads_;
  std::map<std::pair<std::string, Direction>, std::vector<HitCount>> counts_;
};

// Top-n heads per (relation, direction); ties go to the lower (layer, head).
inline std::vector<RelationEnsemble> select_heads(
    const std::map<std::pair<std::string, Direction>, std::vector<ScoredHead>>& accuracies, std::size_t top_n) {
  std::vector<RelationEnsemble> out;
  for (const auto& [key, heads] : accuracies) {
    auto ranked = heads;
    std::sort(ranked.begin(), ranked.end(), [](const ScoredHead& a, const ScoredHead& b) {
      if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
      return std::tie(a.layer, a.head) < std::tie(b.layer, b.head);
    });
    if (ranked.size() > top_n) ranked.resize(top_n);
    out.push_back({key.first, key.second, std::move(ranked)});
  }
  return out;
}

// Maximum spanning arborescence rooted at node 0 (Chu-Liu-Edmonds).
// scores[h][d] is the weight of arc h -> d; the diagonal and arcs into node 0
// are ignored. Returns head[d] for every node (head[0] is 0).
inline std::vector<std::size_t> max_arborescence(const std::vector<std::vector<double>>& scores) {
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  const std::size_t N = scores.size();
  std::vector<std::size_t> head(N, 0);
  if (N <= 1) return head;
  auto w = [&](std::size_t h, std::size_t d) { return (h == d || d == 0) ? kNone : scores[h][d]; };

  for (std::size_t d = 1; d < N; ++d) {
    std::size_t best = N;
    for (std::size_t h = 0; h < N; ++h) {
      if (w(h, d) == kNone) continue;
      if (best == N || w(h, d) > w(best, d)) best = h;
    }
    if (best == N) throw Error("max_arborescence: node without incoming arcs");
    head[d] = best;
  }

  // find one cycle among the greedy choices
  std::vector<int> color(N, 0);  // 0 unvisited, 1 on current path, 2 done
  std::vector<std::size_t> cycle;
  color[0] = 2;
  for (std::size_t start = 1; start < N && cycle.empty(); ++start) {
    std::size_t v = start;
    std::vector<std::size_t> path;
    while (color[v] == 0) {
      color[v] = 1;
      path.push_back(v);
      v = head[v];
    }
    if (color[v] == 1) {
      auto it = std::find(path.begin(), path.end(), v);
      cycle.assign(it, path.end());
    }
    for (auto p : path) color[p] = 2;
  }
  if (cycle.empty()) return head;

  std::vector<bool> in_cycle(N, false);
  for (auto v : cycle) in_cycle[v] = true;
  std::vector<std::size_t> new_id(N, 0);
  std::vector<std::size_t> old_id;
  for (std::size_t v = 0; v < N; ++v)
    if (!in_cycle[v]) {
      new_id[v] = old_id.size();
      old_id.push_back(v);
    }
  const std::size_t c = old_id.size();
  const std::size_t M = c + 1;
  std::vector<std::vector<double>> sub(M, std::vector<double>(M, kNone));
  std::vector<std::size_t> enter(M, N), leave(M, N);
  for (std::size_t u = 0; u < N; ++u) {
    if (in_cycle[u]) continue;
    for (std::size_t v = 0; v < N; ++v) {
      if (in_cycle[v]) {
        if (w(u, v) == kNone) continue;
        const double val = w(u, v) - w(head[v], v);
        if (enter[new_id[u]] == N || val > sub[new_id[u]][c]) {
          sub[new_id[u]][c] = val;
          enter[new_id[u]] = v;
        }
      } else if (u != v) {
        sub[new_id[u]][new_id[v]] = w(u, v);
      }
    }
  }
  for (auto v : cycle)
    for (std::size_t x = 1; x < N; ++x) {
      if (in_cycle[x] || w(v, x) == kNone) continue;
      if (leave[new_id[x]] == N || w(v, x) > sub[c][new_id[x]]) {
        sub[c][new_id[x]] = w(v, x);
        leave[new_id[x]] = v;
      }
    }

  const auto sub_head = max_arborescence(sub);
  std::vector<std::size_t> result(N, 0);
  for (std::size_t x = 1; x < N; ++x) {
    if (in_cycle[x]) continue;
    const auto h = sub_head[new_id[x]];
    result[x] = h == c ? leave[new_id[x]] : old_id[h];
  }
  for (auto v : cycle) result[v] = head[v];
  const auto entering_from = sub_head[c];
  result[enter[entering_from]] = old_id[entering_from];
  return result;
}

struct DirectedArcScores {
  std::size_t n = 0;
  // score[h][d] over nodes 0..n (0 = artificial root)
  std::vector<std::vector<double>> score;
  std::vector<std::vector<std::string>> label;
};

// Per relation, the mean of the selected heads in each direction; arc
// parent -> dep scores the mean of the available directions, and the best
// relation supplies both the arc score and its label.
inline DirectedArcScores arc_scores(const SentenceHeadMatrices& m, const std::vector<RelationEnsemble>& ensembles,
                                    double root_score) {
  if (ensembles.empty()) throw Error("induce_directed_labeled_tree: empty ensemble set");
  const std::size_t n = m.matrices.empty() ? 0 : m.matrices.front().size();
  auto mean_of = [&](const RelationEnsemble& e) {
    WordMatrix avg(n);
    for (const auto& h : e.heads) {
      if (h.layer >= m.layers || h.head >= m.heads) throw IndexError("ensemble head outside model dims");
      const auto& src = m.at(h.layer, h.head);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) avg(i, j) += src(i, j);
    }
    const double inv = 1.0 / static_cast<double>(e.heads.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) avg(i, j) *= inv;
    return avg;
  };

  std::map<std::string, std::pair<std::optional<WordMatrix>, std::optional<WordMatrix>>> by_relation;
  for (const auto& e : ensembles) {
    if (e.heads.empty()) continue;
    auto& slot = by_relation[e.relation];
    (e.direction == Direction::dep_to_parent ? slot.first : slot.second) = mean_of(e);
  }
  if (by_relation.empty()) throw Error("induce_directed_labeled_tree: every ensemble is empty");

  DirectedArcScores out;
  out.n = n;
  out.score.assign(n + 1, std::vector<double>(n + 1, -std::numeric_limits<double>::infinity()));
  out.label.assign(n + 1, std::vector<std::string>(n + 1));
  for (std::size_t d = 1; d <= n; ++d) {
    out.score[0][d] = root_score;
    out.label[0][d] = "root";
  }
  for (std::size_t p = 1; p <= n; ++p)
    for (std::size_t d = 1; d <= n; ++d) {
      if (p == d) continue;
      for (const auto& [rel, mats] : by_relation) {
        double sum = 0.0;
        int count = 0;
        if (mats.first) {
          sum += (*mats.first)(d - 1, p - 1);
          ++count;
        }
        if (mats.second) {
          sum += (*mats.second)(p - 1, d - 1);
          ++count;
        }
        const double s = sum / count;
        if (out.label[p][d].empty() || s > out.score[p][d]) {
          out.score[p][d] = s;
          out.label[p][d] = rel;
        }
      }
    }
  return out;
}

// Single-rooted maximum arborescence over arc scores: root arcs carry a
// penalty larger than any achievable score difference, so the optimum uses
// exactly one of them.
inline DirectedTree decode_single_root(const DirectedArcScores& arcs) {
  const std::size_t n = arcs.n;
  DirectedTree tree;
  if (n == 0) return tree;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t h = 0; h <= n; ++h)
    for (std::size_t d = 1; d <= n; ++d) {
      if (h == d) continue;
      lo = std::min(lo, arcs.score[h][d]);
      hi = std::max(hi, arcs.score[h][d]);
    }
  const double penalty = (hi - lo + 1.0) * static_cast<double>(n + 1);
  auto scores = arcs.score;
  for (std::size_t d = 1; d <= n; ++d) scores[0][d] -= penalty;
  const auto head = max_arborescence(scores);
  for (std::size_t d = 1; d <= n; ++d) {
    tree.heads.push_back(head[d]);
    tree.labels.push_back(arcs.label[head[d]][d]);
  }
  return tree;
}

inline DirectedTree induce_directed_labeled_tree(const SentenceHeadMatrices& m,
                                                 const std::vector<RelationEnsemble>& ensembles,
                                                 double root_score = 0.0) {
  return decode_single_root(arc_scores(m, ensembles, root_score));
}

using SubstitutionLookup = std::function<SubstitutionSet(const GoldSentence&)>;

// The head-selection pipeline over an attention source. Without a
// substitution lookup every matrix is the target sentence's own.
struct HeadselPipeline {
  HeadselConfig config;
  AttentionSource* attention = nullptr;
  SubstitutionLookup substitutions;

  SentenceHeadMatrices matrices(const GoldSentence& sentence) const {
    if (!attention) throw ConfigError("headsel pipeline: no attention source");
    SubstitutionSet subst;
    if (substitutions) subst = substitutions(sentence);
    return head_matrices(gather_attention(*attention, sentence.sentence_id, sentence.words(), subst));
  }
};

inline HeadselPipeline apply_ssud_everywhere(HeadselPipeline pipeline, SubstitutionLookup lookup) {
  pipeline.substitutions = std::move(lookup);
  return pipeline;
}

inline HeadselPipeline apply_ssud_everywhere(HeadselPipeline pipeline,
                                             std::map<std::string, SubstitutionSet> by_sentence) {
  auto shared = std::make_shared<const std::map<std::string, SubstitutionSet>>(std::move(by_sentence));
  return apply_ssud_everywhere(std::move(pipeline), [shared](const GoldSentence& s) {
    auto it = shared->find(s.sentence_id);
    return it == shared->end() ? SubstitutionSet{} : it->second;
  });
}

struct HeadselResult {
  std::vector<RelationEnsemble> ensembles;
  std::map<std::pair<std::string, Direction>, std::vector<ScoredHead>> accuracies;
  std::vector<DirectedTree> trees;
  EvalReport report;
};

inline HeadAccuracyTable score_heads(const HeadselPipeline& p, std::span<const GoldSentence> selection) {
  std::optional<HeadAccuracyTable> table;
  for (const auto& s : selection) {
    const auto m = p.matrices(s);
    if (!table) table.emplace(p.config.relations, m.layers, m.heads);
    table->add(m, s);
  }
  if (!table) throw Error("headsel: no selection sentences");
  return *table;
}

inline HeadselResult run_headsel(const HeadselPipeline& p, std::span<const GoldSentence> selection,
                                 std::span<const GoldSentence> evaluation) {
  HeadselResult result;
  result.accuracies = score_heads(p, selection).scored();
  result.ensembles = select_heads(result.accuracies, p.config.top_n);
  EvalAccumulator acc;
  AttachmentOptions opts{p.config.exclude_punct, normalize_relation};
  for (const auto& s : evaluation) {
    auto tree = induce_directed_labeled_tree(p.matrices(s), result.ensembles, p.config.root_score);
    acc.add_sentence(s, tree.undirected(), p.config.exclude_punct);
    acc.add_attachment(attachment_scores(tree, s, opts));
    result.trees.push_back(std::move(tree));
  }
  result.report = acc.report();
  return result;
}

inline nlohmann::json to_json(const std::vector<RelationEnsemble>& ensembles) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : ensembles) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : e.heads) heads.push_back({{"layer", h.layer}, {"head", h.head}, {"accuracy", h.accuracy}});
    out.push_back({{"relation", e.relation}, {"direction", to_string(e.direction)}, {"heads", heads}});
  }
  return out;
}

inline std::vector<RelationEnsemble> ensembles_from_json(const nlohmann::json& j) {
  std::vector<RelationEnsemble> out;
  for (const auto& e : j) {
    RelationEnsemble r;
    r.relation = e.at("relation").get<std::string>();
    r.direction = parse_direction(e.at("direction").get<std::string>());
    for (const auto& h : e.at("heads"))
      r.heads.push_back({h.at("layer").get<std::size_t>(), h.at("head").get<std::size_t>(),
                         h.at("accuracy").get<double>()});
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ssud
