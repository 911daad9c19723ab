#pragma once

// Single-word substitution sets and the averaged (SSUD) word matrix.
//
// A substituted sentence replaces exactly one word, so every variant has the
// target's word count and is scored against the target's gold tree.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ssud/attention.hpp"
#include "ssud/error.hpp"

namespace ssud {

inline const std::set<std::string>& default_substitution_categories() {
  static const std::set<std::string> cats{"ADJ", "NOUN", "VERB", "ADV", "ADP", "DET"};
  return cats;
}

struct SsudConfig {
  std::size_t k = 1;
  std::set<std::string> categories = default_substitution_categories();
  std::size_t oversample = 20;
  std::size_t layer = 10;
  HeadSelection heads = HeadSelection::all();

  void validate() const {
    if (oversample < 1) throw ConfigError("ssud config: oversample must be >= 1");
    if (categories.empty()) throw ConfigError("ssud config: categories must be non-empty");
  }
};

struct SubstitutionCandidate {
  std::string form;
  double mlm_score = 0.0;
  std::string upos_in_context;

  bool operator==(const SubstitutionCandidate&) const = default;
};

// Raw fill-mask prediction, before filtering.
struct MaskPrediction {
  std::string form;
  double log_prob = 0.0;
};

class FillMaskOracle {
 public:
  virtual ~FillMaskOracle() = default;
  // Predictions for words[position], descending by log_prob.
  virtual std::vector<MaskPrediction> fill_mask(std::span<const std::string> words, std::size_t position,
                                                std::size_t top_k) = 0;
};

class UposTagger {
 public:
  virtual ~UposTagger() = default;
  virtual std::vector<std::string> tag(std::span<const std::string> words) = 0;
};

struct SubstitutionSet {
  std::vector<std::string> words;
  std::size_t k = 0;
  std::set<std::size_t> substitutable;
  std::map<std::size_t, std::vector<SubstitutionCandidate>> per_position;
  std::map<std::size_t, std::size_t> shortfalls;  // position -> missing candidates

  std::size_t total_shortfall() const {
    std::size_t total = 0;
    for (const auto& [pos, missing] : shortfalls) total += missing;
    return total;
  }

  // Copy keeping at most k candidates per position.
  SubstitutionSet truncated(std::size_t new_k) const {
    SubstitutionSet out = *this;
    out.k = new_k;
    out.shortfalls.clear();
    for (auto& [pos, cands] : out.per_position) {
      if (cands.size() > new_k) cands.resize(new_k);
      if (cands.size() < new_k) out.shortfalls[pos] = new_k - cands.size();
    }
    return out;
  }
};

inline std::vector<std::string> substitute(std::span<const std::string> words, std::size_t position,
                                           const std::string& form) {
  if (position >= words.size()) throw IndexError("substitute: position out of range");
  std::vector<std::string> out(words.begin(), words.end());
  out[position] = form;
  return out;
}

inline std::set<std::size_t> substitutable_positions(std::span<const std::string> upos, const SsudConfig& config) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < upos.size(); ++i)
    if (config.categories.count(upos[i])) out.insert(i);
  return out;
}

namespace detail {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// Alphabetic single word that is not a "##" continuation piece. Bytes >= 0x80
// are accepted so UTF-8 letters pass.
inline bool is_whole_word(std::string_view form) {
  if (form.empty() || form.starts_with("##")) return false;
  return std::all_of(form.begin(), form.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalpha(u);
  });
}

struct GenerationResult {
  std::vector<SubstitutionCandidate> candidates;
  std::size_t shortfall = 0;
  std::size_t examined = 0;  // raw predictions looked at
};

// Asks the oracle for k * oversample predictions at `position` and keeps the
// first k that are whole words, differ from the original (case-insensitive,
// deduplicated), and keep the original UPOS when the substituted sentence is
// re-tagged. `original_upos` is the tag of words[position] in context.
inline GenerationResult generate_substitutions(std::span<const std::string> words, std::size_t position,
                                               const std::string& original_upos, const SsudConfig& config,
                                               FillMaskOracle& oracle, UposTagger& tagger) {
  config.validate();
  if (position >= words.size()) throw IndexError("generate_substitutions: position out of range");
  GenerationResult result;
  if (config.k == 0) return result;

  const auto predictions = oracle.fill_mask(words, position, config.k * config.oversample);
  std::unordered_set<std::string> seen{detail::lowercase(words[position])};
  for (const auto& p : predictions) {
    if (result.candidates.size() >= config.k) break;
    ++result.examined;
    if (!is_whole_word(p.form)) continue;
    if (!seen.insert(detail::lowercase(p.form)).second) continue;
    const auto variant = substitute(words, position, p.form);
    const auto tags = tagger.tag(variant);
    if (tags.size() != variant.size()) throw Error("tagger returned a tag list of the wrong length");
    if (tags[position] != original_upos) continue;
    result.candidates.push_back({p.form, p.log_prob, tags[position]});
  }
  result.shortfall = config.k - result.candidates.size();
  return result;
}

// Row i of the result is the mean of the target's row i and row i of every
// matrix substituted at position i. Contributions are summed in sorted order
// so the result does not depend on the order of the variant lists.
inline WordMatrix build_ssud_matrix(const WordMatrix& target,
                                    const std::map<std::size_t, std::vector<WordMatrix>>& substituted) {
  const std::size_t n = target.size();
  for (const auto& [pos, mats] : substituted) {
    if (pos >= n) throw DimensionError("build_ssud_matrix: position " + std::to_string(pos) + " out of range");
    for (const auto& m : mats)
      if (m.size() != n)
        throw DimensionError("build_ssud_matrix: substituted matrix is " + std::to_string(m.size()) + "x" +
                             std::to_string(m.size()) + ", target is " + std::to_string(n) + "x" +
                             std::to_string(n));
  }
  WordMatrix out = target;
  std::vector<double> column;
  for (const auto& [i, mats] : substituted) {
    if (mats.empty()) continue;
    const double count = static_cast<double>(mats.size() + 1);
    for (std::size_t j = 0; j < n; ++j) {
      column.clear();
      column.push_back(target(i, j));
      for (const auto& m : mats) column.push_back(m(i, j));
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (double v : column) sum += v;
      out(i, j) = sum / count;
    }
  }
  return out;
}

}  // namespace ssud
