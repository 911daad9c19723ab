#pragma once

// Subject-verb agreement sentences across relative clauses:
//   object_rc:  The N1 that the N2 V2 V1 .
//   subject_rc: The N1 that V2 the N2 V1 .
// The subject determiner, subject noun, and matrix verb always sit at
// positions 0, 1 and 6 (second to last).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "ssud/error.hpp"
#include "ssud/evaluation.hpp"

namespace ssud {

enum class TemplateKind { object_rc, subject_rc };

inline std::string to_string(TemplateKind k) { return k == TemplateKind::object_rc ? "object_rc" : "subject_rc"; }

inline TemplateKind parse_template_kind(const std::string& s) {
  if (s == "object_rc") return TemplateKind::object_rc;
  if (s == "subject_rc") return TemplateKind::subject_rc;
  throw ParseError("unknown template kind '" + s + "'");
}

enum class Slot { det, subj_noun, comp, emb_det, emb_noun, emb_verb, matrix_verb, punct };

struct TemplateSpec {
  TemplateKind kind;
  std::vector<Slot> pattern;

  static TemplateSpec of(TemplateKind kind) {
    using S = Slot;
    if (kind == TemplateKind::object_rc)
      return {kind, {S::det, S::subj_noun, S::comp, S::emb_det, S::emb_noun, S::emb_verb, S::matrix_verb, S::punct}};
    return {kind, {S::det, S::subj_noun, S::comp, S::emb_verb, S::emb_det, S::emb_noun, S::matrix_verb, S::punct}};
  }
};

struct AgreementLexicon {
  std::vector<std::string> nouns;               // singular
  std::vector<std::string> transitive_verbs;    // 3sg, embedded clause
  std::vector<std::string> intransitive_verbs;  // 3sg, matrix clause

  void validate() const {
    static const std::set<std::string> copulas{"is", "are", "was", "were", "be", "been", "being", "am",
                                               "seems", "becomes", "remains"};
    if (nouns.size() < 2) throw Error("agreement lexicon: at least two nouns are required");
    if (transitive_verbs.empty() || intransitive_verbs.empty())
      throw Error("agreement lexicon: verb lists must be non-empty");
    for (const auto* list : {&transitive_verbs, &intransitive_verbs})
      for (const auto& v : *list)
        if (copulas.count(v)) throw Error("agreement lexicon: copular verb '" + v + "' is not allowed");
  }

  std::size_t combinations() const {
    return nouns.size() * (nouns.size() - 1) * transitive_verbs.size() * intransitive_verbs.size();
  }
};

inline AgreementLexicon agreement_lexicon_from_json(const nlohmann::json& j) {
  AgreementLexicon lex;
  lex.nouns = j.at("nouns").get<std::vector<std::string>>();
  lex.transitive_verbs = j.at("transitive_verbs").get<std::vector<std::string>>();
  lex.intransitive_verbs = j.at("intransitive_verbs").get<std::vector<std::string>>();
  return lex;
}

inline AgreementLexicon load_agreement_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open agreement lexicon " + path.string());
  try {
    return agreement_lexicon_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

struct AgreementInstance {
  TemplateKind kind = TemplateKind::object_rc;
  std::vector<std::string> words;
  std::size_t subj_det_index = 0;
  std::size_t subj_noun_index = 1;
  std::size_t matrix_verb_index = 6;

  SubjectVerbAnnotation annotation() const { return {subj_det_index, subj_noun_index, matrix_verb_index}; }
  bool operator==(const AgreementInstance&) const = default;
};

inline AgreementInstance make_agreement_instance(TemplateKind kind, const std::string& subj_noun,
                                                 const std::string& emb_noun, const std::string& emb_verb,
                                                 const std::string& matrix_verb) {
  AgreementInstance inst;
  inst.kind = kind;
  for (auto slot : TemplateSpec::of(kind).pattern) {
    switch (slot) {
      case Slot::det: inst.words.push_back("The"); break;
      case Slot::subj_noun: inst.words.push_back(subj_noun); break;
      case Slot::comp: inst.words.push_back("that"); break;
      case Slot::emb_det: inst.words.push_back("the"); break;
      case Slot::emb_noun: inst.words.push_back(emb_noun); break;
      case Slot::emb_verb: inst.words.push_back(emb_verb); break;
      case Slot::matrix_verb: inst.words.push_back(matrix_verb); break;
      case Slot::punct: inst.words.push_back("."); break;
    }
  }
  inst.subj_det_index = 0;
  inst.subj_noun_index = 1;
  inst.matrix_verb_index = inst.words.size() - 2;
  return inst;
}

namespace detail {

// Uniform integer in [0, bound) from raw 64-bit draws, identical on every
// platform (std::uniform_int_distribution is implementation-defined).
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

inline std::uint64_t kind_stream(std::uint64_t seed, TemplateKind kind) {
  return seed * 0x9E3779B97F4A7C15ull + (kind == TemplateKind::object_rc ? 1u : 2u);
}

}  // namespace detail

// n distinct instances per template kind (object_rc first), sampled uniformly
// without replacement from the lexicon's combination space.
inline std::vector<AgreementInstance> generate_agreement_set(const AgreementLexicon& lexicon, std::size_t n,
                                                             std::uint64_t seed) {
  lexicon.validate();
  const std::size_t space = lexicon.combinations();
  if (n > space)
    throw Error("agreement lexicon too small: " + std::to_string(n) + " distinct instances requested per template, " +
                "but nouns*(nouns-1)*transitive*intransitive = " + std::to_string(space));
  const std::size_t N = lexicon.nouns.size();
  const std::size_t T = lexicon.transitive_verbs.size();
  const std::size_t I = lexicon.intransitive_verbs.size();

  std::vector<AgreementInstance> out;
  out.reserve(2 * n);
  for (auto kind : {TemplateKind::object_rc, TemplateKind::subject_rc}) {
    std::mt19937_64 rng(detail::kind_stream(seed, kind));
    // partial Fisher-Yates over the combination index space
    std::vector<std::size_t> index(space);
    std::iota(index.begin(), index.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = i + static_cast<std::size_t>(detail::bounded(rng, space - i));
      std::swap(index[i], index[j]);
      std::size_t c = index[i];
      const std::size_t v1 = c % I;
      c /= I;
      const std::size_t v2 = c % T;
      c /= T;
      const std::size_t n2_offset = c % (N - 1);
      const std::size_t n1 = c / (N - 1);
      const std::size_t n2 = n2_offset >= n1 ? n2_offset + 1 : n2_offset;
      out.push_back(make_agreement_instance(kind, lexicon.nouns[n1], lexicon.nouns[n2], lexicon.transitive_verbs[v2],
                                            lexicon.intransitive_verbs[v1]));
    }
  }
  return out;
}

// Slot-wise check of an instance against its template.
inline bool matches_template(const AgreementInstance& inst, const AgreementLexicon& lexicon) {
  const auto spec = TemplateSpec::of(inst.kind);
  if (inst.words.size() != spec.pattern.size()) return false;
  auto in = [](const std::vector<std::string>& list, const std::string& w) {
    return std::find(list.begin(), list.end(), w) != list.end();
  };
  std::string subj, emb;
  for (std::size_t i = 0; i < spec.pattern.size(); ++i) {
    const auto& w = inst.words[i];
    switch (spec.pattern[i]) {
      case Slot::det: if (w != "The") return false; break;
      case Slot::comp: if (w != "that") return false; break;
      case Slot::emb_det: if (w != "the") return false; break;
      case Slot::punct: if (w != ".") return false; break;
      case Slot::subj_noun: if (!in(lexicon.nouns, w)) return false; subj = w; break;
      case Slot::emb_noun: if (!in(lexicon.nouns, w)) return false; emb = w; break;
      case Slot::emb_verb: if (!in(lexicon.transitive_verbs, w)) return false; break;
      case Slot::matrix_verb: if (!in(lexicon.intransitive_verbs, w)) return false; break;
    }
  }
  return subj != emb && inst.subj_det_index == 0 && inst.subj_noun_index == 1 &&
         inst.matrix_verb_index == inst.words.size() - 2;
}

inline nlohmann::json to_json(const AgreementInstance& inst) {
  return {{"words", inst.words},
          {"kind", to_string(inst.kind)},
          {"subj_det_index", inst.subj_det_index},
          {"subj_noun_index", inst.subj_noun_index},
          {"matrix_verb_index", inst.matrix_verb_index}};
}

inline AgreementInstance agreement_instance_from_json(const nlohmann::json& j) {
  AgreementInstance inst;
  inst.words = j.at("words").get<std::vector<std::string>>();
  inst.kind = parse_template_kind(j.at("kind").get<std::string>());
  inst.subj_det_index = j.at("subj_det_index").get<std::size_t>();
  inst.subj_noun_index = j.at("subj_noun_index").get<std::size_t>();
  inst.matrix_verb_index = j.at("matrix_verb_index").get<std::size_t>();
  return inst;
}

inline void write_agreement_jsonl(std::ostream& out, const std::vector<AgreementInstance>& set) {
  for (const auto& inst : set) out << to_json(inst).dump() << '\n';
}

inline std::vector<AgreementInstance> read_agreement_jsonl(std::istream& in) {
  std::vector<AgreementInstance> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(agreement_instance_from_json(nlohmann::json::parse(line)));
  return out;
}

inline std::string agreement_sentence_id(const AgreementInstance& inst, std::size_t ordinal) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", ordinal);
  return "agr-" + to_string(inst.kind) + "-" + buf;
}

}  // namespace ssud
