#pragma once

// Undirected tree induction over word-level scores, plus the tree dump
// format shared with evaluation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssud/attention.hpp"
#include "ssud/error.hpp"
#include "ssud/treebank.hpp"

namespace ssud {

enum class SymmetrizeMode { mean, max };

inline SymmetrizeMode parse_symmetrize_mode(const std::string& s) {
  if (s == "mean") return SymmetrizeMode::mean;
  if (s == "max") return SymmetrizeMode::max;
  throw ConfigError("unknown symmetrize mode '" + s + "' (expected mean or max)");
}

inline std::string to_string(SymmetrizeMode m) { return m == SymmetrizeMode::mean ? "mean" : "max"; }

// Symmetric n x n score matrix. The diagonal is never an edge candidate.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  explicit ScoreMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}

  static ScoreMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    ScoreMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw DimensionError("score matrix: ragged rows");
      for (std::size_t j = 0; j < rows.size(); ++j) m.values_[i * m.n_ + j] = rows[i][j];
    }
    for (std::size_t i = 0; i < m.n_; ++i)
      for (std::size_t j = i + 1; j < m.n_; ++j)
        if (m(i, j) != m(j, i)) throw DimensionError("score matrix: input is not symmetric");
    return m;
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, double v) {
    values_[i * n_ + j] = v;
    values_[j * n_ + i] = v;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

inline ScoreMatrix symmetrize(const WordMatrix& m, SymmetrizeMode mode = SymmetrizeMode::mean) {
  const std::size_t n = m.size();
  ScoreMatrix out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.set(i, i, m(i, i));
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = mode == SymmetrizeMode::mean ? (m(i, j) + m(j, i)) / 2.0 : std::max(m(i, j), m(j, i));
      out.set(i, j, v);
    }
  }
  return out;
}

struct UndirectedTree {
  std::size_t n = 0;
  std::set<Edge> edges;

  bool contains(const Edge& e) const { return edges.count(e) > 0; }

  // n-1 edges, in range, connected.
  bool is_spanning_tree() const {
    if (n == 0) return edges.empty();
    if (edges.size() != n - 1) return false;
    detail::UnionFind uf(n);
    for (const auto& e : edges) {
      if (e.second >= n || e.first == e.second) return false;
      if (!uf.unite(e.first, e.second)) return false;
    }
    return true;
  }

  bool operator==(const UndirectedTree&) const = default;
};

inline double tree_weight(const ScoreMatrix& s, const UndirectedTree& t) {
  double total = 0.0;
  for (const auto& e : t.edges) total += s(e.first, e.second);
  return total;
}

// Maximum spanning tree by Prim's algorithm grown from word 0. Among equal
// weights the edge with the lowest (min-endpoint, max-endpoint) pair wins,
// which makes the result a total function of the scores.
inline UndirectedTree prim_mst(const ScoreMatrix& s) {
  const std::size_t n = s.size();
  UndirectedTree tree;
  tree.n = n;
  if (n <= 1) return tree;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && !std::isfinite(s(i, j))) throw Error("prim_mst: non-finite score");

  std::vector<bool> in_tree(n, false);
  // best connection of each outside vertex into the tree
  std::vector<double> best_weight(n, -std::numeric_limits<double>::infinity());
  std::vector<Edge> best_edge(n);
  auto better = [](double w, const Edge& e, double bw, const Edge& be) {
    if (w != bw) return w > bw;
    return e < be;
  };
  auto absorb = [&](std::size_t u) {
    in_tree[u] = true;
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      Edge e(u, v);
      if (best_weight[v] == -std::numeric_limits<double>::infinity() ||
          better(s(u, v), e, best_weight[v], best_edge[v])) {
        best_weight[v] = s(u, v);
        best_edge[v] = e;
      }
    }
  };
  absorb(0);
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t pick = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      if (pick == n || better(best_weight[v], best_edge[v], best_weight[pick], best_edge[pick])) pick = v;
    }
    tree.edges.insert(best_edge[pick]);
    absorb(pick);
  }
  return tree;
}

// Directed tree in CoNLL-U numbering: heads[w-1] is the head of word w
// (0 = root); labels are parallel.
struct DirectedTree {
  std::vector<std::size_t> heads;
  std::vector<std::string> labels;

  std::size_t size() const { return heads.size(); }

  bool is_arborescence() const {
    const std::size_t n = heads.size();
    std::size_t roots = 0;
    detail::UnionFind uf(n + 1);
    for (std::size_t w = 1; w <= n; ++w) {
      const auto h = heads[w - 1];
      if (h > n || h == w) return false;
      if (h == 0) ++roots;
      if (!uf.unite(h, w)) return false;
    }
    return n == 0 || roots >= 1;
  }

  UndirectedTree undirected() const {
    UndirectedTree t;
    t.n = heads.size();
    for (std::size_t w = 1; w <= heads.size(); ++w)
      if (heads[w - 1] != 0) t.edges.insert(Edge(w - 1, heads[w - 1] - 1));
    return t;
  }

  static DirectedTree from_gold(const GoldSentence& s) {
    DirectedTree t;
    for (const auto& tok : s.tokens) {
      t.heads.push_back(tok.gold_head);
      t.labels.push_back(tok.deprel);
    }
    return t;
  }
};

// Tree dump: "<sentence_id> i-j i-j ..." with 0-based word indices.
struct TreeDumpEntry {
  std::string sentence_id;
  UndirectedTree tree;
};

inline void write_tree_dump_line(std::ostream& out, const std::string& sentence_id, const UndirectedTree& tree) {
  out << sentence_id;
  for (const auto& e : tree.edges) out << ' ' << e.first << '-' << e.second;
  out << '\n';
}

// The dump carries no word count, so n is taken from `lengths` when the id is
// present there, otherwise from the largest index seen.
inline std::vector<TreeDumpEntry> read_tree_dump(std::istream& in,
                                                 const std::map<std::string, std::size_t>& lengths = {}) {
  std::vector<TreeDumpEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    TreeDumpEntry entry;
    fields >> entry.sentence_id;
    std::string item;
    std::size_t max_index = 0;
    while (fields >> item) {
      auto dash = item.find('-');
      auto a = dash == std::string::npos ? std::nullopt : detail::parse_index(std::string_view(item).substr(0, dash));
      auto b = dash == std::string::npos ? std::nullopt : detail::parse_index(std::string_view(item).substr(dash + 1));
      if (!a || !b || *a == *b)
        throw ParseError("tree dump line " + std::to_string(line_no) + ": bad edge '" + item + "'");
      entry.tree.edges.insert(Edge(*a, *b));
      max_index = std::max({max_index, *a, *b});
    }
    auto it = lengths.find(entry.sentence_id);
    entry.tree.n = it != lengths.end() ? it->second : (entry.tree.edges.empty() ? 1 : max_index + 1);
    if (!entry.tree.is_spanning_tree())
      throw ParseError("tree dump line " + std::to_string(line_no) + ": edges of " + entry.sentence_id +
                       " do not form a spanning tree over " + std::to_string(entry.tree.n) + " words");
    out.push_back(std::move(entry));
  }
  return out;
}

// Bracketed rendering rooted at `root`, children in word order:
// (thought (just) (like (you) ('d) (know (to))) (.))
inline std::string bracketed(const UndirectedTree& tree, const std::vector<std::string>& words,
                             std::size_t root = 0) {
  if (tree.n == 0) return "()";
  std::vector<std::vector<std::size_t>> adj(tree.n);
  for (const auto& e : tree.edges) {
    adj[e.first].push_back(e.second);
    adj[e.second].push_back(e.first);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  std::string out;
  auto label = [&](std::size_t i) { return i < words.size() ? words[i] : std::to_string(i); };
  auto visit = [&](auto&& self, std::size_t node, std::size_t parent) -> void {
    out += '(';
    out += label(node);
    for (auto child : adj[node]) {
      if (child == parent) continue;
      out += ' ';
      self(self, child, node);
    }
    out += ')';
  };
  visit(visit, root, tree.n);
  return out;
}

}  // namespace ssud
