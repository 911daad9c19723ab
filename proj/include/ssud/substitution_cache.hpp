#pragma once

// JSON-lines substitution cache: one record per (sentence_id, position),
// including ineligible positions, so runs can be replayed fully offline.

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ssud/error.hpp"
#include "ssud/substitution.hpp"

namespace ssud {

struct SubstitutionRecord {
  std::string sentence_id;
  std::size_t position = 0;
  std::string original;
  std::string upos;
  bool eligible = false;
  std::size_t k = 0;      // candidates requested when the record was made
  std::size_t top_k = 0;  // raw predictions requested from the oracle
  std::vector<SubstitutionCandidate> candidates;
  std::size_t shortfall = 0;
  nlohmann::json oracle = nlohmann::json::object();
};

inline nlohmann::json to_json(const SubstitutionRecord& r) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : r.candidates)
    cands.push_back({{"form", c.form}, {"mlm_score", c.mlm_score}, {"upos", c.upos_in_context}});
  return {{"sentence_id", r.sentence_id}, {"position", r.position}, {"original", r.original},
          {"upos", r.upos},               {"eligible", r.eligible}, {"k", r.k},
          {"top_k", r.top_k},             {"candidates", cands},    {"shortfall", r.shortfall},
          {"oracle", r.oracle}};
}

inline SubstitutionRecord substitution_record_from_json(const nlohmann::json& j) {
  SubstitutionRecord r;
  r.sentence_id = j.at("sentence_id").get<std::string>();
  r.position = j.at("position").get<std::size_t>();
  r.original = j.value("original", std::string());
  r.upos = j.value("upos", std::string());
  r.eligible = j.at("eligible").get<bool>();
  r.k = j.value("k", std::size_t{0});
  r.top_k = j.value("top_k", std::size_t{0});
  for (const auto& c : j.at("candidates"))
    r.candidates.push_back(
        {c.at("form").get<std::string>(), c.value("mlm_score", 0.0), c.value("upos", std::string())});
  r.shortfall = j.value("shortfall", std::size_t{0});
  r.oracle = j.value("oracle", nlohmann::json::object());
  return r;
}

// Single writer, many readers. Later records for the same key win.
class SubstitutionCache {
 public:
  SubstitutionCache() = default;

  explicit SubstitutionCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        auto r = substitution_record_from_json(nlohmann::json::parse(line));
        records_[{r.sentence_id, r.position}] = std::move(r);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(path_.string() + ":" + std::to_string(line_no) + ": corrupt substitution record: " +
                         e.what());
      }
    }
  }

  const std::filesystem::path& path() const { return path_; }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
  }

  std::optional<SubstitutionRecord> find(const std::string& sentence_id, std::size_t position) const {
    std::shared_lock lock(mutex_);
    auto it = records_.find({sentence_id, position});
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  // A record satisfies a request for k candidates when it was made with at
  // least k, or the position is not substitutable at all.
  std::optional<SubstitutionRecord> lookup(const std::string& sentence_id, std::size_t position,
                                           std::size_t k) const {
    auto r = find(sentence_id, position);
    if (!r) return std::nullopt;
    if (r->eligible && r->k < k) return std::nullopt;
    return r;
  }

  void put(SubstitutionRecord record) {
    std::unique_lock lock(mutex_);
    if (!path_.empty()) {
      if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
      std::ofstream out(path_, std::ios::app);
      if (!out) throw Error("substitution cache: cannot append to " + path_.string());
      out << to_json(record).dump() << '\n';
    }
    records_[{record.sentence_id, record.position}] = std::move(record);
  }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::size_t>, SubstitutionRecord> records_;
};

struct ProviderStats {
  std::size_t cache_hits = 0;
  std::size_t new_records = 0;
};

// Resolves substitution sets from the cache, falling back to the live
// oracle/tagger when they are configured and offline mode is off.
class SubstitutionProvider {
 public:
  SubstitutionProvider(SubstitutionCache& cache, FillMaskOracle* oracle, UposTagger* tagger, bool offline,
                       nlohmann::json oracle_metadata = nlohmann::json::object())
      : cache_(cache),
        oracle_(oracle),
        tagger_(tagger),
        offline_(offline),
        oracle_metadata_(std::move(oracle_metadata)) {}

  SubstitutionSet get(const std::string& sentence_id, const std::vector<std::string>& words,
                      const SsudConfig& config) {
    SubstitutionSet set;
    set.words = words;
    set.k = config.k;
    if (config.k == 0) return set;

    std::vector<std::optional<SubstitutionRecord>> records(words.size());
    bool complete = true;
    for (std::size_t i = 0; i < words.size(); ++i) {
      records[i] = cache_.lookup(sentence_id, i, config.k);
      complete = complete && records[i].has_value();
    }
    if (!complete) {
      if (offline_ || !oracle_ || !tagger_) {
        for (std::size_t i = 0; i < words.size(); ++i)
          if (!records[i])
            throw CacheMissError("substitution cache miss: sentence " + sentence_id + " position " +
                                 std::to_string(i) + " (k=" + std::to_string(config.k) + ")");
      }
      const auto tags = tagger_->tag(words);
      if (tags.size() != words.size()) throw Error("tagger returned a tag list of the wrong length");
      const auto eligible = substitutable_positions(tags, config);
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (records[i]) continue;
        SubstitutionRecord r;
        r.sentence_id = sentence_id;
        r.position = i;
        r.original = words[i];
        r.upos = tags[i];
        r.eligible = eligible.count(i) > 0;
        r.oracle = oracle_metadata_;
        if (r.eligible) {
          auto gen = generate_substitutions(words, i, tags[i], config, *oracle_, *tagger_);
          r.k = config.k;
          r.top_k = config.k * config.oversample;
          r.candidates = std::move(gen.candidates);
          r.shortfall = gen.shortfall;
        }
        cache_.put(r);
        ++new_records_;
        records[i] = std::move(r);
      }
    } else {
      cache_hits_ += words.size();
    }

    for (std::size_t i = 0; i < words.size(); ++i) {
      const auto& r = *records[i];
      if (!r.eligible || !config.categories.count(r.upos)) continue;
      set.substitutable.insert(i);
      auto cands = r.candidates;
      if (cands.size() > config.k) cands.resize(config.k);
      if (cands.size() < config.k) set.shortfalls[i] = config.k - cands.size();
      set.per_position[i] = std::move(cands);
    }
    return set;
  }

  ProviderStats stats() const { return {cache_hits_.load(), new_records_.load()}; }

 private:
  SubstitutionCache& cache_;
  FillMaskOracle* oracle_;
  UposTagger* tagger_;
  bool offline_;
  nlohmann::json oracle_metadata_;
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> new_records_{0};
};

}  // namespace ssud
