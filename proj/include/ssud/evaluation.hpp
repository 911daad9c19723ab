#pragma once

// Scoring of induced trees against gold annotations. Per-sentence results
// are accumulated into EvalAccumulator, whose merge is associative so
// sentence results can be reduced in any order.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ssud/induction.hpp"
#include "ssud/treebank.hpp"

namespace ssud {

inline constexpr int kReportVersion = 1;

struct HitCount {
  std::size_t hit = 0;
  std::size_t total = 0;

  std::optional<double> rate() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(total);
  }
  HitCount& operator+=(const HitCount& o) {
    hit += o.hit;
    total += o.total;
    return *this;
  }
  bool operator==(const HitCount&) const = default;
};

// |pred ∩ gold| / |gold|; nullopt when gold is empty.
inline std::optional<double> uuas(const UndirectedTree& pred, const EdgeSet& gold) {
  if (gold.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (const auto& e : gold.edges) hits += pred.contains(e) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

inline HitCount uuas_counts(const UndirectedTree& pred, const EdgeSet& gold) {
  HitCount c;
  c.total = gold.size();
  for (const auto& e : gold.edges) c.hit += pred.contains(e) ? 1 : 0;
  return c;
}

inline std::map<std::string, HitCount> relation_recall(const UndirectedTree& pred, const EdgeSet& gold) {
  std::map<std::string, HitCount> out;
  for (const auto& e : gold.edges) {
    auto it = gold.labels.find(e);
    if (it == gold.labels.end()) throw Error("relation_recall: gold edge without a label");
    auto& c = out[it->second];
    ++c.total;
    c.hit += pred.contains(e) ? 1 : 0;
  }
  return out;
}

struct PartitionCounts {
  std::size_t pred = 0;
  std::size_t gold = 0;
  std::size_t hit = 0;

  std::optional<double> precision() const {
    if (pred == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(pred);
  }
  std::optional<double> recall() const {
    if (gold == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(gold);
  }
  PartitionCounts& operator+=(const PartitionCounts& o) {
    pred += o.pred;
    gold += o.gold;
    hit += o.hit;
    return *this;
  }
  bool operator==(const PartitionCounts&) const = default;
};

struct AdjacencyCounts {
  PartitionCounts adjacent;
  PartitionCounts non_adjacent;

  AdjacencyCounts& operator+=(const AdjacencyCounts& o) {
    adjacent += o.adjacent;
    non_adjacent += o.non_adjacent;
    return *this;
  }
  bool operator==(const AdjacencyCounts&) const = default;
};

// Splits predicted and gold edges into adjacent (|i-j| = 1) and non-adjacent
// partitions. Predicted edges touching a word in `ignored` are not counted.
inline AdjacencyCounts adjacency_breakdown(const UndirectedTree& pred, const EdgeSet& gold,
                                           const std::set<std::size_t>& ignored = {}) {
  AdjacencyCounts c;
  for (const auto& e : pred.edges) {
    if (ignored.count(e.first) || ignored.count(e.second)) continue;
    auto& part = e.adjacent() ? c.adjacent : c.non_adjacent;
    ++part.pred;
    part.hit += gold.contains(e) ? 1 : 0;
  }
  for (const auto& e : gold.edges) ++(e.adjacent() ? c.adjacent : c.non_adjacent).gold;
  return c;
}

// Mean score over gold pairs minus mean score over the remaining
// off-diagonal pairs. Undefined below three words or without both kinds.
inline std::optional<double> score_margin(const ScoreMatrix& m, const EdgeSet& gold) {
  const std::size_t n = m.size();
  if (n < 3 || gold.empty()) return std::nullopt;
  double gold_sum = 0.0, other_sum = 0.0;
  std::size_t gold_n = 0, other_n = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (gold.contains(Edge(i, j))) {
        gold_sum += m(i, j);
        ++gold_n;
      } else {
        other_sum += m(i, j);
        ++other_n;
      }
    }
  if (gold_n == 0 || other_n == 0) return std::nullopt;
  return gold_sum / static_cast<double>(gold_n) - other_sum / static_cast<double>(other_n);
}

using LabelNormalizer = std::function<std::string(const std::string&)>;

struct AttachmentOptions {
  bool exclude_punct = false;
  LabelNormalizer normalize_gold_label;  // applied to gold deprels before LAS comparison
};

struct AttachmentCounts {
  std::size_t words = 0;
  std::size_t head_hits = 0;
  std::size_t label_hits = 0;

  std::optional<double> uas() const {
    if (words == 0) return std::nullopt;
    return static_cast<double>(head_hits) / static_cast<double>(words);
  }
  std::optional<double> las() const {
    if (words == 0) return std::nullopt;
    return static_cast<double>(label_hits) / static_cast<double>(words);
  }
  AttachmentCounts& operator+=(const AttachmentCounts& o) {
    words += o.words;
    head_hits += o.head_hits;
    label_hits += o.label_hits;
    return *this;
  }
  bool operator==(const AttachmentCounts&) const = default;
};

inline AttachmentCounts attachment_scores(const DirectedTree& pred, const GoldSentence& gold,
                                          const AttachmentOptions& opts = {}) {
  if (pred.size() != gold.size())
    throw DimensionError("attachment_scores: predicted tree has " + std::to_string(pred.size()) +
                         " words, gold has " + std::to_string(gold.size()));
  AttachmentCounts c;
  for (const auto& tok : gold.tokens) {
    if (opts.exclude_punct && tok.is_punct()) continue;
    ++c.words;
    if (pred.heads[tok.index - 1] != tok.gold_head) continue;
    ++c.head_hits;
    const auto gold_label = opts.normalize_gold_label ? opts.normalize_gold_label(tok.deprel) : tok.deprel;
    if (pred.labels.size() == pred.heads.size() && pred.labels[tok.index - 1] == gold_label) ++c.label_hits;
  }
  return c;
}

// 0-based positions of the subject determiner, subject noun, and matrix verb.
struct SubjectVerbAnnotation {
  std::size_t subj_det = 0;
  std::size_t subj_noun = 0;
  std::size_t verb = 0;
};

inline bool subject_verb_recall(const UndirectedTree& pred, const SubjectVerbAnnotation& ann) {
  return pred.contains(Edge(ann.subj_det, ann.verb)) || pred.contains(Edge(ann.subj_noun, ann.verb));
}

struct EvalReport {
  std::size_t sentences = 0;
  std::size_t skipped = 0;  // sentences with no scorable gold edge
  HitCount uuas_counts;
  std::optional<double> uuas;
  std::optional<double> uuas_macro;
  std::map<std::string, HitCount> per_relation_recall;
  AdjacencyCounts adjacency;
  std::optional<double> margin;
  std::size_t margin_sentences = 0;
  std::optional<AttachmentCounts> attachment;
  std::optional<HitCount> sv;
  std::size_t shortfall_positions = 0;
  std::size_t shortfall_missing = 0;

  std::optional<double> uas() const { return attachment ? attachment->uas() : std::nullopt; }
  std::optional<double> las() const { return attachment ? attachment->las() : std::nullopt; }
  std::optional<double> sv_recall() const { return sv ? sv->rate() : std::nullopt; }
};

class EvalAccumulator {
 public:
  // Undirected evaluation of one sentence. `scores` feeds the margin
  // diagnostic and may be null.
  void add_sentence(const GoldSentence& gold, const UndirectedTree& pred, bool exclude_punct,
                    const ScoreMatrix* scores = nullptr) {
    const auto edges = gold_undirected_edges(gold, exclude_punct);
    ++sentences_;
    if (edges.empty()) {
      ++skipped_;
      return;
    }
    const auto c = uuas_counts(pred, edges);
    uuas_ += c;
    macro_.push_back(static_cast<double>(c.hit) / static_cast<double>(c.total));
    for (const auto& [label, count] : relation_recall(pred, edges)) relations_[label] += count;
    std::set<std::size_t> ignored;
    if (exclude_punct)
      for (const auto& t : gold.tokens)
        if (t.is_punct()) ignored.insert(t.index - 1);
    adjacency_ += adjacency_breakdown(pred, edges, ignored);
    if (scores) {
      if (auto m = score_margin(*scores, edges)) margins_.push_back(*m);
    }
  }

  void add_attachment(const AttachmentCounts& c) {
    if (!attachment_) attachment_ = AttachmentCounts{};
    *attachment_ += c;
  }

  void add_subject_verb(bool hit) {
    if (!sv_) sv_ = HitCount{};
    ++sv_->total;
    sv_->hit += hit ? 1 : 0;
  }

  void add_shortfalls(std::size_t positions, std::size_t missing) {
    shortfall_positions_ += positions;
    shortfall_missing_ += missing;
  }

  void merge(const EvalAccumulator& o) {
    sentences_ += o.sentences_;
    skipped_ += o.skipped_;
    uuas_ += o.uuas_;
    macro_.insert(macro_.end(), o.macro_.begin(), o.macro_.end());
    for (const auto& [label, count] : o.relations_) relations_[label] += count;
    adjacency_ += o.adjacency_;
    margins_.insert(margins_.end(), o.margins_.begin(), o.margins_.end());
    if (o.attachment_) add_attachment(*o.attachment_);
    if (o.sv_) {
      if (!sv_) sv_ = HitCount{};
      *sv_ += *o.sv_;
    }
    shortfall_positions_ += o.shortfall_positions_;
    shortfall_missing_ += o.shortfall_missing_;
  }

  EvalReport report() const {
    EvalReport r;
    r.sentences = sentences_;
    r.skipped = skipped_;
    r.uuas_counts = uuas_;
    r.uuas = uuas_.rate();
    r.uuas_macro = mean_of(macro_);
    r.per_relation_recall = relations_;
    r.adjacency = adjacency_;
    r.margin = mean_of(margins_);
    r.margin_sentences = margins_.size();
    r.attachment = attachment_;
    r.sv = sv_;
    r.shortfall_positions = shortfall_positions_;
    r.shortfall_missing = shortfall_missing_;
    return r;
  }

 private:
  // Summed in sorted order so merge grouping cannot change the result.
  static std::optional<double> mean_of(std::vector<double> v) {
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
  }

  std::size_t sentences_ = 0;
  std::size_t skipped_ = 0;
  HitCount uuas_;
  std::vector<double> macro_;  // per-sentence uuas
  std::map<std::string, HitCount> relations_;
  AdjacencyCounts adjacency_;
  std::vector<double> margins_;
  std::optional<AttachmentCounts> attachment_;
  std::optional<HitCount> sv_;
  std::size_t shortfall_positions_ = 0;
  std::size_t shortfall_missing_ = 0;
};

namespace detail {

inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json partition_json(const PartitionCounts& p) {
  return {{"precision", opt(p.precision())}, {"recall", opt(p.recall())},
          {"pred", p.pred},                  {"gold", p.gold},
          {"hit", p.hit}};
}

inline std::string fmt_rate(const std::optional<double>& v) {
  if (!v) return "exempt";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace detail

// Stable JSON rendering. Undefined rates are null ("exempt").
inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rel = nlohmann::json::object();
  for (const auto& [label, c] : r.per_relation_recall)
    rel[label] = {{"hit", c.hit}, {"total", c.total}, {"recall", detail::opt(c.rate())}};
  nlohmann::json j;
  j["report_version"] = kReportVersion;
  j["sentences"] = r.sentences;
  j["skipped_sentences"] = r.skipped;
  j["uuas"] = detail::opt(r.uuas);
  j["uuas_hits"] = r.uuas_counts.hit;
  j["uuas_total"] = r.uuas_counts.total;
  j["uuas_macro"] = detail::opt(r.uuas_macro);
  j["per_relation_recall"] = rel;
  j["adjacency"] = {{"adjacent", detail::partition_json(r.adjacency.adjacent)},
                    {"non_adjacent", detail::partition_json(r.adjacency.non_adjacent)}};
  j["margin"] = detail::opt(r.margin);
  j["margin_sentences"] = r.margin_sentences;
  j["uas"] = detail::opt(r.uas());
  j["las"] = detail::opt(r.las());
  j["attachment_words"] = r.attachment ? r.attachment->words : 0;
  j["sv_recall"] = detail::opt(r.sv_recall());
  j["sv_hits"] = r.sv ? r.sv->hit : 0;
  j["sv_total"] = r.sv ? r.sv->total : 0;
  j["shortfalls"] = {{"positions", r.shortfall_positions}, {"missing", r.shortfall_missing}};
  return j;
}

inline void write_report_tsv(std::ostream& out, const EvalReport& r) {
  out << "metric\tvalue\n";
  out << "sentences\t" << r.sentences << '\n';
  out << "uuas\t" << detail::fmt_rate(r.uuas) << '\n';
  out << "uuas_macro\t" << detail::fmt_rate(r.uuas_macro) << '\n';
  out << "adjacent_precision\t" << detail::fmt_rate(r.adjacency.adjacent.precision()) << '\n';
  out << "adjacent_recall\t" << detail::fmt_rate(r.adjacency.adjacent.recall()) << '\n';
  out << "non_adjacent_precision\t" << detail::fmt_rate(r.adjacency.non_adjacent.precision()) << '\n';
  out << "non_adjacent_recall\t" << detail::fmt_rate(r.adjacency.non_adjacent.recall()) << '\n';
  out << "margin\t" << detail::fmt_rate(r.margin) << '\n';
  out << "uas\t" << detail::fmt_rate(r.uas()) << '\n';
  out << "las\t" << detail::fmt_rate(r.las()) << '\n';
  out << "sv_recall\t" << detail::fmt_rate(r.sv_recall()) << '\n';
  out << "shortfall_positions\t" << r.shortfall_positions << '\n';
  out << "shortfall_missing\t" << r.shortfall_missing << '\n';
  for (const auto& [label, c] : r.per_relation_recall)
    out << "recall:" << label << '\t' << detail::fmt_rate(c.rate()) << '\n';
}

inline void print_report_table(std::ostream& out, const EvalReport& r) {
  char line[160];
  auto row = [&](const char* name, const std::string& value) {
    std::snprintf(line, sizeof line, "  %-24s %s\n", name, value.c_str());
    out << line;
  };
  out << "Evaluation report\n";
  row("sentences", std::to_string(r.sentences));
  row("uuas", detail::fmt_rate(r.uuas) + " (" + std::to_string(r.uuas_counts.hit) + "/" +
                  std::to_string(r.uuas_counts.total) + ")");
  row("uuas (macro)", detail::fmt_rate(r.uuas_macro));
  row("adjacent P / R", detail::fmt_rate(r.adjacency.adjacent.precision()) + " / " +
                            detail::fmt_rate(r.adjacency.adjacent.recall()));
  row("non-adjacent P / R", detail::fmt_rate(r.adjacency.non_adjacent.precision()) + " / " +
                                detail::fmt_rate(r.adjacency.non_adjacent.recall()));
  row("score margin", detail::fmt_rate(r.margin));
  if (r.attachment) {
    row("uas", detail::fmt_rate(r.uas()));
    row("las", detail::fmt_rate(r.las()));
  }
  if (r.sv) row("subject-verb recall", detail::fmt_rate(r.sv_recall()));
  row("shortfall positions", std::to_string(r.shortfall_positions));
  if (!r.per_relation_recall.empty()) {
    out << "  per-relation recall\n";
    for (const auto& [label, c] : r.per_relation_recall) {
      std::snprintf(line, sizeof line, "    %-22s %s (%zu/%zu)\n", label.c_str(), detail::fmt_rate(c.rate()).c_str(),
                    c.hit, c.total);
      out << line;
    }
  }
}

}  // namespace ssud
