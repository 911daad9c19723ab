#pragma once

// Where word-level attention comes from: a content-addressed fixture
// directory, optionally backed by a live upstream (the model service).

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssud/attention.hpp"
#include "ssud/attention_io.hpp"
#include "ssud/error.hpp"
#include "ssud/substitution.hpp"

namespace ssud {

class AttentionSource {
 public:
  virtual ~AttentionSource() = default;
  virtual AttentionFixture fetch(const std::string& sentence_id, const std::vector<std::string>& words) = 0;
};

// FNV-1a 64 over the words joined with U+001F, as 16 lowercase hex digits.
inline std::string fixture_key(const std::vector<std::string>& words) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ull;
  };
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) feed(0x1f);
    for (unsigned char c : words[i]) feed(c);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Fixture files live at <root>/<model_id>/<fixture_key(words)>.att. Misses go
// to `upstream` unless offline, and fetched tensors are written back.
class FixtureStore : public AttentionSource {
 public:
  FixtureStore(std::filesystem::path root, std::string model_id, AttentionSource* upstream = nullptr,
               bool offline = true)
      : root_(std::move(root)), model_id_(std::move(model_id)), upstream_(upstream), offline_(offline) {}

  std::filesystem::path path_for(const std::vector<std::string>& words) const {
    return root_ / model_id_ / (fixture_key(words) + ".att");
  }

  bool contains(const std::vector<std::string>& words) const { return std::filesystem::exists(path_for(words)); }

  AttentionFixture fetch(const std::string& sentence_id, const std::vector<std::string>& words) override {
    const auto path = path_for(words);
    if (std::filesystem::exists(path)) {
      auto f = read_attention_fixture_file(path);
      check(f, words, path);
      ++hits_;
      return f;
    }
    if (offline_ || !upstream_)
      throw CacheMissError("attention fixture missing: " + path.string() + " (sentence " + sentence_id + ")");
    auto f = upstream_->fetch(sentence_id, words);
    f.sentence_id = sentence_id;
    check(f, words, path);
    {
      std::lock_guard lock(write_mutex_);
      if (!std::filesystem::exists(path)) {
        write_attention_fixture_file(path, f);
        ++written_;
      }
    }
    return f;
  }

  std::size_t hits() const { return hits_.load(); }
  std::size_t written() const { return written_.load(); }

 private:
  static void check(const AttentionFixture& f, const std::vector<std::string>& words,
                    const std::filesystem::path& path) {
    if (f.word_count() != words.size())
      throw ParseError(path.string() + ": fixture aligns " + std::to_string(f.word_count()) + " words, expected " +
                       std::to_string(words.size()));
    if (!f.attention.is_row_stochastic())
      throw ParseError(path.string() + ": attention rows do not sum to 1 within " +
                       std::to_string(kTokenRowTolerance));
  }

  std::filesystem::path root_;
  std::string model_id_;
  AttentionSource* upstream_;
  bool offline_;
  std::mutex write_mutex_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> written_{0};
};

// Target attention plus the attention of every substituted variant, keyed
// by the substituted position.
struct SentenceAttention {
  AttentionFixture target;
  std::map<std::size_t, std::vector<AttentionFixture>> variants;
};

inline SentenceAttention gather_attention(AttentionSource& source, const std::string& sentence_id,
                                          const std::vector<std::string>& words, const SubstitutionSet& subst) {
  SentenceAttention out;
  out.target = source.fetch(sentence_id, words);
  for (const auto& [pos, cands] : subst.per_position) {
    auto& list = out.variants[pos];
    for (const auto& c : cands) {
      auto variant = source.fetch(sentence_id, substitute(words, pos, c.form));
      if (variant.word_count() != words.size())
        throw DimensionError("substituted sentence of " + sentence_id + " changed the word count");
      list.push_back(std::move(variant));
    }
  }
  return out;
}

// Word matrix for one layer/head selection: the target's own matrix when
// there are no variants, otherwise the SSUD average.
inline WordMatrix sentence_matrix(const SentenceAttention& sa, std::size_t layer, const HeadSelection& heads) {
  auto target = word_level_matrix(sa.target, layer, heads);
  std::map<std::size_t, std::vector<WordMatrix>> substituted;
  for (const auto& [pos, list] : sa.variants) {
    if (list.empty()) continue;
    auto& mats = substituted[pos];
    for (const auto& v : list) mats.push_back(word_level_matrix(v, layer, heads));
  }
  if (substituted.empty()) return target;
  return build_ssud_matrix(target, substituted);
}

}  // namespace ssud
