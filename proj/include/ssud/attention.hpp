#pragma once

// Subword attention tensors and their conversion to word-level matrices.
//
// Aggregation order: mean over selected heads, sum columns within a word
// (attention TO a split word), mean rows within a word (attention FROM a
// split word), drop special-token rows/columns, renormalize each row.
// Accumulation is always in double even though tensors are stored as f32.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssud/error.hpp"

namespace ssud {

inline constexpr double kTokenRowTolerance = 1e-4;
inline constexpr double kWordRowTolerance = 1e-6;

struct TensorDims {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t tokens = 0;

  std::size_t element_count() const { return layers * heads * tokens * tokens; }
  bool operator==(const TensorDims&) const = default;
};

// Raw attention in [layer][head][from][to] row-major order.
class TokenAttention {
 public:
  TokenAttention() = default;

  TokenAttention(TensorDims dims, std::vector<float> values, std::vector<std::string> token_strings = {})
      : dims_(dims), values_(std::move(values)), token_strings_(std::move(token_strings)) {
    if (dims_.layers == 0 || dims_.heads == 0 || dims_.tokens == 0)
      throw DimensionError("token attention: all dims must be >= 1");
    if (values_.size() != dims_.element_count())
      throw DimensionError("token attention: expected " + std::to_string(dims_.element_count()) + " values, got " +
                           std::to_string(values_.size()));
    if (!token_strings_.empty() && token_strings_.size() != dims_.tokens)
      throw DimensionError("token attention: token_strings length does not match T");
  }

  const TensorDims& dims() const { return dims_; }
  const std::vector<float>& values() const { return values_; }
  const std::vector<std::string>& token_strings() const { return token_strings_; }

  float at(std::size_t layer, std::size_t head, std::size_t from, std::size_t to) const {
    return values_[offset(layer, head, from) + to];
  }

  std::span<const float> row(std::size_t layer, std::size_t head, std::size_t from) const {
    return {values_.data() + offset(layer, head, from), dims_.tokens};
  }

  // Largest |row sum - 1| over every (layer, head, from) row.
  double max_row_deviation() const {
    double worst = 0.0;
    for (std::size_t l = 0; l < dims_.layers; ++l)
      for (std::size_t h = 0; h < dims_.heads; ++h)
        for (std::size_t i = 0; i < dims_.tokens; ++i) {
          double sum = 0.0;
          for (float v : row(l, h, i)) sum += v;
          worst = std::max(worst, std::abs(sum - 1.0));
        }
    return worst;
  }

  bool is_row_stochastic(double tol = kTokenRowTolerance) const { return max_row_deviation() <= tol; }

 private:
  std::size_t offset(std::size_t layer, std::size_t head, std::size_t from) const {
    return ((layer * dims_.heads + head) * dims_.tokens + from) * dims_.tokens;
  }

  TensorDims dims_;
  std::vector<float> values_;
  std::vector<std::string> token_strings_;
};

// Half-open token range [begin, end).
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool operator==(const TokenSpan&) const = default;
};

struct SubwordAlignment {
  std::vector<TokenSpan> spans;  // one per word, in word order
  std::vector<std::size_t> special_tokens;

  std::size_t word_count() const { return spans.size(); }

  static SubwordAlignment identity(std::size_t n) {
    SubwordAlignment a;
    for (std::size_t i = 0; i < n; ++i) a.spans.push_back({i, i + 1});
    return a;
  }

  // Throws unless spans are non-empty, disjoint, ordered, and together with
  // the special tokens cover [0, token_count) exactly once.
  void validate(std::size_t token_count) const {
    std::vector<int> owner(token_count, 0);
    std::size_t prev_end = 0;
    for (std::size_t w = 0; w < spans.size(); ++w) {
      const auto& s = spans[w];
      if (s.size() == 0) throw Error("alignment: word " + std::to_string(w) + " has an empty span");
      if (s.end > token_count) throw Error("alignment: span of word " + std::to_string(w) + " exceeds token count");
      if (s.begin < prev_end) throw Error("alignment: spans overlap or are out of order at word " + std::to_string(w));
      prev_end = s.end;
      for (std::size_t t = s.begin; t < s.end; ++t) ++owner[t];
    }
    for (auto t : special_tokens) {
      if (t >= token_count) throw Error("alignment: special token index out of range");
      ++owner[t];
    }
    for (std::size_t t = 0; t < token_count; ++t)
      if (owner[t] != 1) throw Error("alignment: token " + std::to_string(t) + " is not covered exactly once");
  }
};

// Dense n x n word-level matrix; row i is the distribution of word i.
class WordMatrix {
 public:
  WordMatrix() = default;
  explicit WordMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}
  WordMatrix(std::size_t n, std::vector<double> values) : n_(n), values_(std::move(values)) {
    if (values_.size() != n_ * n_) throw DimensionError("word matrix: value count is not n*n");
  }

  static WordMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    WordMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw DimensionError("word matrix: ragged rows");
      for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return values_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * n_, n_}; }
  const std::vector<double>& values() const { return values_; }

  double max_row_deviation() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double sum = 0.0;
      for (double v : row(i)) sum += v;
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
  }

  bool is_row_stochastic(double tol = kWordRowTolerance) const {
    for (double v : values_)
      if (!(v >= 0.0)) return false;
    return max_row_deviation() <= tol;
  }

  bool operator==(const WordMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

// Which heads of a layer to average. Empty optional means all heads.
class HeadSelection {
 public:
  HeadSelection() = default;
  static HeadSelection all() { return {}; }
  static HeadSelection only(std::vector<std::size_t> heads) {
    HeadSelection h;
    h.heads_ = std::move(heads);
    return h;
  }

  bool is_all() const { return !heads_.has_value(); }
  const std::vector<std::size_t>& list() const { return *heads_; }

  std::vector<std::size_t> resolve(std::size_t head_count) const {
    if (!heads_) {
      std::vector<std::size_t> out(head_count);
      for (std::size_t h = 0; h < head_count; ++h) out[h] = h;
      return out;
    }
    if (heads_->empty()) throw IndexError("head selection: empty head list");
    for (auto h : *heads_)
      if (h >= head_count) throw IndexError("head selection: head " + std::to_string(h) + " out of range");
    return *heads_;
  }

  bool operator==(const HeadSelection&) const = default;

 private:
  std::optional<std::vector<std::size_t>> heads_;
};

inline WordMatrix word_level_matrix(const TokenAttention& att, const SubwordAlignment& align, std::size_t layer,
                                    const HeadSelection& heads = HeadSelection::all()) {
  const auto& d = att.dims();
  if (layer >= d.layers)
    throw IndexError("word_level_matrix: layer " + std::to_string(layer) + " >= " + std::to_string(d.layers));
  const auto selected = heads.resolve(d.heads);
  align.validate(d.tokens);
  const std::size_t T = d.tokens;
  const std::size_t n = align.word_count();

  // head mean, T x T
  std::vector<double> mean(T * T, 0.0);
  for (auto h : selected)
    for (std::size_t i = 0; i < T; ++i) {
      auto r = att.row(layer, h, i);
      for (std::size_t j = 0; j < T; ++j) mean[i * T + j] += r[j];
    }
  const double inv_heads = 1.0 / static_cast<double>(selected.size());
  for (double& v : mean) v *= inv_heads;

  // column sums within each word span, T x n (special columns dropped)
  std::vector<double> to_words(T * n, 0.0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t w = 0; w < n; ++w) {
      double sum = 0.0;
      for (std::size_t j = align.spans[w].begin; j < align.spans[w].end; ++j) sum += mean[i * T + j];
      to_words[i * n + w] = sum;
    }

  // row means within each word span, n x n (special rows dropped)
  WordMatrix out(n);
  for (std::size_t w = 0; w < n; ++w) {
    const auto& span = align.spans[w];
    for (std::size_t v = 0; v < n; ++v) {
      double sum = 0.0;
      for (std::size_t i = span.begin; i < span.end; ++i) sum += to_words[i * n + v];
      out(w, v) = sum / static_cast<double>(span.size());
    }
  }

  for (std::size_t w = 0; w < n; ++w) {
    double total = 0.0;
    for (std::size_t v = 0; v < n; ++v) total += out(w, v);
    if (!(total > 0.0)) throw DegenerateRowError("degenerate attention row for word " + std::to_string(w));
    for (std::size_t v = 0; v < n; ++v) out(w, v) /= total;
  }
  return out;
}

inline TokenAttention head_slice(const TokenAttention& att, std::size_t layer, std::size_t head) {
  const auto& d = att.dims();
  if (layer >= d.layers || head >= d.heads)
    throw IndexError("head_slice: (" + std::to_string(layer) + ", " + std::to_string(head) + ") out of range for (" +
                     std::to_string(d.layers) + ", " + std::to_string(d.heads) + ")");
  std::vector<float> values;
  values.reserve(d.tokens * d.tokens);
  for (std::size_t i = 0; i < d.tokens; ++i) {
    auto r = att.row(layer, head, i);
    values.insert(values.end(), r.begin(), r.end());
  }
  return TokenAttention({1, 1, d.tokens}, std::move(values), att.token_strings());
}

}  // namespace ssud
