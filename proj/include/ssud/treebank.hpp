#pragma once

// CoNLL-U ingestion and gold edge extraction.
//
// Word positions are 1-based inside Token/GoldSentence (CoNLL-U ids, 0 is
// the artificial root). Everything downstream of the treebank, including
// EdgeSet, works on 0-based word indices: word i of a sentence is token i+1.

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstddef>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssud/error.hpp"

namespace ssud {

inline constexpr std::string_view kPunctTag = "PUNCT";

struct Token {
  std::size_t index = 0;      // 1-based position
  std::string form;
  std::string upos;
  std::size_t gold_head = 0;  // 0 = root
  std::string deprel;

  bool operator==(const Token&) const = default;
  bool is_punct() const { return upos == kPunctTag; }
};

struct GoldSentence {
  std::string sentence_id;
  std::string text;
  std::vector<Token> tokens;

  std::size_t size() const { return tokens.size(); }

  std::vector<std::string> words() const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.form);
    return out;
  }

  std::vector<std::string> upos() const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.upos);
    return out;
  }

  // 1-based index of the root token.
  std::size_t root() const {
    for (const auto& t : tokens)
      if (t.gold_head == 0) return t.index;
    return 0;
  }
};

// Unordered pair of 0-based word indices, stored with first < second.
struct Edge {
  std::size_t first = 0;
  std::size_t second = 0;

  Edge() = default;
  Edge(std::size_t a, std::size_t b) : first(std::min(a, b)), second(std::max(a, b)) {}

  bool adjacent() const { return second - first == 1; }
  auto operator<=>(const Edge&) const = default;
};

struct EdgeSet {
  std::set<Edge> edges;
  std::map<Edge, std::string> labels;

  std::size_t size() const { return edges.size(); }
  bool empty() const { return edges.empty(); }
  bool contains(const Edge& e) const { return edges.count(e) > 0; }

  void insert(const Edge& e) {
    if (e.first == e.second) throw Error("edge set: self-loop");
    edges.insert(e);
  }
  void insert(const Edge& e, std::string label) {
    insert(e);
    labels[e] = std::move(label);
  }
};

struct SentenceRejection {
  std::string sentence_id;
  std::size_t line = 0;  // first line of the offending block
  std::string reason;
};

struct LoadResult {
  std::vector<GoldSentence> sentences;
  std::vector<SentenceRejection> rejected;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // false when a and b were already connected
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

struct RawLine {
  std::size_t line_no = 0;
  std::string text;
};

// Validates the head structure of a fully read block; returns the failure
// reason or nullopt.
inline std::optional<std::string> check_tree(const std::vector<Token>& tokens) {
  if (tokens.empty()) return "zero tokens";
  const std::size_t n = tokens.size();
  std::size_t roots = 0;
  for (const auto& t : tokens) {
    if (t.gold_head == t.index) return "self-loop head";
    if (t.gold_head > n) return "head out of range";
    if (t.gold_head == 0) ++roots;
  }
  if (roots == 0) return "cyclic heads";
  if (roots > 1) return "multiple roots";
  // node 0 is the artificial root
  UnionFind uf(n + 1);
  for (const auto& t : tokens)
    if (!uf.unite(t.gold_head, t.index)) return "cyclic heads";
  return std::nullopt;
}

}  // namespace detail

// Reads every sentence block from a CoNLL-U stream. Multiword ranges ("3-4")
// and empty nodes ("5.1") are skipped. Bad heads reject only the sentence;
// structurally broken lines (wrong column count, non-numeric ids) throw.
inline LoadResult load_conllu(std::istream& in) {
  LoadResult result;
  std::vector<std::string> comments;
  std::vector<detail::RawLine> block;
  std::size_t line_no = 0;
  std::size_t ordinal = 0;

  auto flush = [&] {
    if (block.empty() && comments.empty()) return;
    ++ordinal;
    GoldSentence sentence;
    sentence.sentence_id = "s" + std::to_string(ordinal);
    for (const auto& c : comments) {
      std::string_view v = c;
      v.remove_prefix(1);
      while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
      if (v.starts_with("sent_id")) {
        auto eq = v.find('=');
        if (eq != std::string_view::npos) {
          auto id = v.substr(eq + 1);
          while (!id.empty() && id.front() == ' ') id.remove_prefix(1);
          while (!id.empty() && id.back() == ' ') id.remove_suffix(1);
          sentence.sentence_id = std::string(id);
        }
      } else if (v.starts_with("text ") || v.starts_with("text=")) {
        auto eq = v.find('=');
        if (eq != std::string_view::npos) {
          auto text = v.substr(eq + 1);
          while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
          sentence.text = std::string(text);
        }
      }
    }
    const std::size_t first_line = block.empty() ? line_no : block.front().line_no;
    std::optional<std::string> failure;
    for (const auto& raw : block) {
      auto cols = detail::split_tabs(raw.text);
      auto id_field = cols[0];
      if (id_field.find('-') != std::string_view::npos || id_field.find('.') != std::string_view::npos)
        continue;
      Token t;
      t.index = *detail::parse_index(id_field);
      t.form = std::string(cols[1]);
      t.upos = std::string(cols[3]);
      t.deprel = std::string(cols[7]);
      auto head = detail::parse_index(cols[6]);
      if (!head) {
        failure = "malformed head field '" + std::string(cols[6]) + "' at line " + std::to_string(raw.line_no);
        break;
      }
      t.gold_head = *head;
      if (t.index != sentence.tokens.size() + 1) {
        failure = "non-sequential word id at line " + std::to_string(raw.line_no);
        break;
      }
      sentence.tokens.push_back(std::move(t));
    }
    if (!failure) failure = detail::check_tree(sentence.tokens);
    if (failure) {
      result.rejected.push_back({sentence.sentence_id, first_line, *failure});
    } else {
      if (sentence.text.empty()) {
        std::string text;
        for (const auto& t : sentence.tokens) {
          if (!text.empty()) text += ' ';
          text += t.form;
        }
        sentence.text = std::move(text);
      }
      result.sentences.push_back(std::move(sentence));
    }
    block.clear();
    comments.clear();
  };

  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = detail::trim_cr(line);
    if (view.empty()) {
      flush();
      continue;
    }
    if (view.front() == '#') {
      if (!block.empty()) throw ParseError("conllu: comment inside sentence block at line " + std::to_string(line_no));
      comments.emplace_back(view);
      continue;
    }
    auto cols = detail::split_tabs(view);
    if (cols.size() != 10)
      throw ParseError("conllu: expected 10 columns, got " + std::to_string(cols.size()) + " at line " +
                       std::to_string(line_no));
    auto id = cols[0];
    bool ok = false;
    if (auto dash = id.find('-'); dash != std::string_view::npos) {
      ok = detail::parse_index(id.substr(0, dash)) && detail::parse_index(id.substr(dash + 1));
    } else if (auto dot = id.find('.'); dot != std::string_view::npos) {
      ok = detail::parse_index(id.substr(0, dot)) && detail::parse_index(id.substr(dot + 1));
    } else {
      auto v = detail::parse_index(id);
      ok = v && *v >= 1;
    }
    if (!ok) throw ParseError("conllu: bad id field '" + std::string(id) + "' at line " + std::to_string(line_no));
    block.push_back({line_no, std::string(view)});
  }
  if (in.bad()) throw ParseError("conllu: stream read failure");
  flush();
  return result;
}

inline LoadResult load_conllu_string(const std::string& text) {
  std::istringstream in(text);
  return load_conllu(in);
}

// Writes plain word lines only; unused columns are "_".
inline void write_conllu(std::ostream& out, const std::vector<GoldSentence>& sentences) {
  for (const auto& s : sentences) {
    out << "# sent_id = " << s.sentence_id << '\n';
    out << "# text = " << s.text << '\n';
    for (const auto& t : s.tokens) {
      out << t.index << '\t' << t.form << "\t_\t" << t.upos << "\t_\t_\t" << t.gold_head << '\t' << t.deprel
          << "\t_\t_\n";
    }
    out << '\n';
  }
}

// One edge per non-root token, labelled with its deprel.
inline EdgeSet gold_undirected_edges(const GoldSentence& sentence, bool exclude_punct = true) {
  EdgeSet out;
  for (const auto& t : sentence.tokens) {
    if (t.gold_head == 0) continue;
    if (exclude_punct && t.is_punct()) continue;
    out.insert(Edge(t.index - 1, t.gold_head - 1), t.deprel);
  }
  return out;
}

inline std::size_t word_count(const GoldSentence& s, bool count_punct = true) {
  if (count_punct) return s.size();
  return static_cast<std::size_t>(
      std::count_if(s.tokens.begin(), s.tokens.end(), [](const Token& t) { return !t.is_punct(); }));
}

inline std::vector<GoldSentence> filter_by_length(const std::vector<GoldSentence>& sentences, std::size_t max_len,
                                                  bool count_punct = true) {
  if (max_len < 1) throw Error("filter_by_length: max_len must be >= 1");
  std::vector<GoldSentence> out;
  for (const auto& s : sentences)
    if (word_count(s, count_punct) <= max_len) out.push_back(s);
  return out;
}

}  // namespace ssud
