#pragma once

// End-to-end runs: dataset loading, substitution and attention acquisition,
// tree induction, evaluation, sweeps, and output files. Sentence work runs
// on a thread pool; results are always reduced in dataset order.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ssud/agreement.hpp"
#include "ssud/attention.hpp"
#include "ssud/attention_source.hpp"
#include "ssud/error.hpp"
#include "ssud/evaluation.hpp"
#include "ssud/headsel.hpp"
#include "ssud/induction.hpp"
#include "ssud/service_client.hpp"
#include "ssud/substitution.hpp"
#include "ssud/substitution_cache.hpp"
#include "ssud/treebank.hpp"

namespace ssud {

enum class RunMode { target_only, ssud };

inline std::string to_string(RunMode m) { return m == RunMode::ssud ? "ssud" : "target_only"; }

inline RunMode parse_run_mode(const std::string& s) {
  if (s == "target_only" || s == "target") return RunMode::target_only;
  if (s == "ssud") return RunMode::ssud;
  throw ConfigError("unknown mode '" + s + "' (expected target_only or ssud)");
}

inline std::optional<std::size_t> known_model_depth(const std::string& model) {
  if (model == "bert-base-uncased" || model == "bert-base-cased") return 12;
  if (model == "bert-large-uncased" || model == "bert-large-cased") return 24;
  return std::nullopt;
}

struct RunConfig {
  std::map<std::string, std::filesystem::path> datasets;  // scheme -> CoNLL-U
  std::string scheme = "ud";
  std::string model = "bert-base-uncased";
  std::size_t layer = 10;
  HeadSelection heads;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  SymmetrizeMode symmetrize = SymmetrizeMode::mean;
  bool exclude_punct = true;
  RunMode mode = RunMode::target_only;
  std::string service;  // endpoint URL; empty means fixtures only
  std::filesystem::path fixture_dir = "cache/attention";
  std::filesystem::path substitution_cache = "cache/substitutions.jsonl";
  std::filesystem::path out = "out";
  bool offline = false;
  std::optional<std::size_t> max_length;
  bool length_counts_punct = true;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::set<std::string> categories = default_substitution_categories();
  std::size_t oversample = 20;
  bool bracketed = false;
  std::vector<std::size_t> sweep_layers;
  std::vector<std::size_t> sweep_ks;
  std::filesystem::path lexicon;
  std::size_t per_template = 500;
  std::filesystem::path selection;
  std::size_t selection_size = 1000;
  std::filesystem::path ensembles;  // reuse instead of selecting when set
  HeadselConfig headsel;

  std::size_t effective_k() const { return mode == RunMode::ssud ? k : 0; }

  std::filesystem::path dataset() const {
    auto it = datasets.find(scheme);
    if (it == datasets.end()) throw ConfigError("no dataset configured for scheme '" + scheme + "'");
    return it->second;
  }

  SsudConfig ssud_config(std::size_t k_value) const {
    SsudConfig c;
    c.k = k_value;
    c.categories = categories;
    c.oversample = oversample;
    c.layer = layer;
    c.heads = heads;
    return c;
  }

  void validate() const {
    if (auto depth = known_model_depth(model); depth && layer >= *depth)
      throw ConfigError("layer " + std::to_string(layer) + " is outside " + model + " (" + std::to_string(*depth) +
                        " layers)");
    if (scheme != "ud" && scheme != "sud") throw ConfigError("scheme must be ud or sud");
    if (oversample < 1) throw ConfigError("oversample must be >= 1");
    if (categories.empty()) throw ConfigError("substitution categories must be non-empty");
    if (max_length && *max_length < 1) throw ConfigError("max_length must be >= 1");
    if (headsel.top_n < 1) throw ConfigError("headsel.top_n must be >= 1");
    if (auto depth = known_model_depth(model))
      for (auto l : sweep_layers)
        if (l >= *depth) throw ConfigError("sweep layer " + std::to_string(l) + " is outside " + model);
  }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

// Relative paths are taken relative to `base` (the config file's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  static const std::set<std::string> known{
      "dataset",      "datasets",  "scheme",     "model",        "layer",          "heads",
      "k",            "seed",      "symmetrize", "exclude_punct", "mode",          "service",
      "fixture_dir",  "substitution_cache",     "out",          "offline",        "max_length",
      "length_counts_punct",     "threads",    "categories",   "oversample",     "bracketed",
      "sweep_layers", "sweep_ks",  "lexicon",    "per_template", "selection",      "selection_size",
      "ensembles",    "headsel"};
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items())
      if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    c.scheme = j.value("scheme", c.scheme);
    if (j.contains("datasets"))
      for (const auto& [scheme, path] : j.at("datasets").items())
        c.datasets[scheme] = detail::resolve(base, path.get<std::string>());
    if (j.contains("dataset")) c.datasets[c.scheme] = detail::resolve(base, j.at("dataset").get<std::string>());
    c.model = j.value("model", c.model);
    c.layer = j.value("layer", c.layer);
    if (j.contains("heads")) {
      const auto& h = j.at("heads");
      if (h.is_string() && h.get<std::string>() == "all")
        c.heads = HeadSelection::all();
      else
        c.heads = HeadSelection::only(h.get<std::vector<std::size_t>>());
    }
    if (j.contains("k")) {
      if (j.at("k").get<long long>() < 0) throw ConfigError("k must be >= 0");
      c.k = j.at("k").get<std::size_t>();
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("symmetrize")) c.symmetrize = parse_symmetrize_mode(j.at("symmetrize").get<std::string>());
    c.exclude_punct = j.value("exclude_punct", c.exclude_punct);
    if (j.contains("mode")) c.mode = parse_run_mode(j.at("mode").get<std::string>());
    c.service = j.value("service", c.service);
    if (j.contains("fixture_dir")) c.fixture_dir = detail::resolve(base, j.at("fixture_dir").get<std::string>());
    if (j.contains("substitution_cache"))
      c.substitution_cache = detail::resolve(base, j.at("substitution_cache").get<std::string>());
    if (j.contains("out")) c.out = detail::resolve(base, j.at("out").get<std::string>());
    c.offline = j.value("offline", c.offline);
    if (j.contains("max_length") && !j.at("max_length").is_null()) c.max_length = j.at("max_length").get<std::size_t>();
    c.length_counts_punct = j.value("length_counts_punct", c.length_counts_punct);
    c.threads = j.value("threads", c.threads);
    if (j.contains("categories")) c.categories = j.at("categories").get<std::set<std::string>>();
    c.oversample = j.value("oversample", c.oversample);
    c.bracketed = j.value("bracketed", c.bracketed);
    if (j.contains("sweep_layers")) c.sweep_layers = j.at("sweep_layers").get<std::vector<std::size_t>>();
    if (j.contains("sweep_ks")) c.sweep_ks = j.at("sweep_ks").get<std::vector<std::size_t>>();
    if (j.contains("lexicon")) c.lexicon = detail::resolve(base, j.at("lexicon").get<std::string>());
    c.per_template = j.value("per_template", c.per_template);
    if (j.contains("selection")) c.selection = detail::resolve(base, j.at("selection").get<std::string>());
    c.selection_size = j.value("selection_size", c.selection_size);
    if (j.contains("ensembles")) c.ensembles = detail::resolve(base, j.at("ensembles").get<std::string>());
    if (j.contains("headsel")) {
      const auto& h = j.at("headsel");
      c.headsel.top_n = h.value("top_n", c.headsel.top_n);
      c.headsel.root_score = h.value("root_score", c.headsel.root_score);
      if (h.contains("relations")) c.headsel.relations = h.at("relations").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.headsel.exclude_punct = c.exclude_punct;
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json datasets = nlohmann::json::object();
  for (const auto& [scheme, path] : c.datasets) datasets[scheme] = path.string();
  nlohmann::json j{{"datasets", datasets},
                   {"scheme", c.scheme},
                   {"model", c.model},
                   {"layer", c.layer},
                   {"k", c.k},
                   {"seed", c.seed},
                   {"symmetrize", to_string(c.symmetrize)},
                   {"exclude_punct", c.exclude_punct},
                   {"mode", to_string(c.mode)},
                   {"service", c.service},
                   {"fixture_dir", c.fixture_dir.string()},
                   {"substitution_cache", c.substitution_cache.string()},
                   {"out", c.out.string()},
                   {"offline", c.offline},
                   {"max_length", c.max_length ? nlohmann::json(*c.max_length) : nlohmann::json()},
                   {"length_counts_punct", c.length_counts_punct},
                   {"threads", c.threads},
                   {"categories", c.categories},
                   {"oversample", c.oversample},
                   {"bracketed", c.bracketed},
                   {"sweep_layers", c.sweep_layers},
                   {"sweep_ks", c.sweep_ks},
                   {"lexicon", c.lexicon.string()},
                   {"per_template", c.per_template},
                   {"selection", c.selection.string()},
                   {"selection_size", c.selection_size},
                   {"ensembles", c.ensembles.string()},
                   {"headsel",
                    {{"top_n", c.headsel.top_n},
                     {"root_score", c.headsel.root_score},
                     {"relations", c.headsel.relations}}}};
  j["heads"] = c.heads.is_all() ? nlohmann::json("all") : nlohmann::json(c.heads.list());
  return j;
}

// Attention and substitution sources for a run. Either built from the
// config (fixture store, optional live service) or injected.
class Runtime {
 public:
  explicit Runtime(const RunConfig& c) {
    const bool live = !c.service.empty() && !c.offline;
    if (live) {
      ServiceOptions opts;
      opts.endpoint = c.service;
      opts.model_id = c.model;
      client_ = std::make_unique<ServiceClient>(opts);
    }
    store_ = std::make_unique<FixtureStore>(c.fixture_dir, c.model, client_.get(), !live);
    cache_ = std::make_unique<SubstitutionCache>(c.substitution_cache);
    provider_owned_ = std::make_unique<SubstitutionProvider>(
        *cache_, client_.get(), client_.get(), !live, client_ ? client_->metadata() : nlohmann::json::object());
    attention_ = store_.get();
    provider_ = provider_owned_.get();
  }

  Runtime(AttentionSource& attention, SubstitutionProvider* provider) : attention_(&attention), provider_(provider) {}

  AttentionSource& attention() { return *attention_; }
  SubstitutionProvider* substitutions() { return provider_; }
  FixtureStore* store() { return store_.get(); }
  ServiceClient* client() { return client_.get(); }

  SubstitutionSet substitutions_for(const std::string& sentence_id, const std::vector<std::string>& words,
                                    const RunConfig& c, std::size_t k) {
    if (k == 0) return {};
    if (!provider_) throw ConfigError("ssud mode needs a substitution source");
    return provider_->get(sentence_id, words, c.ssud_config(k));
  }

 private:
  std::unique_ptr<ServiceClient> client_;
  std::unique_ptr<FixtureStore> store_;
  std::unique_ptr<SubstitutionCache> cache_;
  std::unique_ptr<SubstitutionProvider> provider_owned_;
  AttentionSource* attention_ = nullptr;
  SubstitutionProvider* provider_ = nullptr;
};

// Runs f(i) for i in [0, n) on up to `threads` workers. The exception of the
// lowest failing index is rethrown after all workers finish.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = n;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (i < error_index) {
            error_index = i;
            error = std::current_exception();
          }
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::vector<GoldSentence> load_treebank_file(const std::filesystem::path& path, std::ostream* log = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open treebank " + path.string());
  LoadResult loaded;
  try {
    loaded = load_conllu(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (log)
    for (const auto& r : loaded.rejected)
      *log << path.string() << ":" << r.line << ": skipped sentence " << r.sentence_id << ": " << r.reason << '\n';
  return std::move(loaded.sentences);
}

inline std::vector<GoldSentence> load_dataset(const RunConfig& c, std::ostream* log = nullptr) {
  auto sentences = load_treebank_file(c.dataset(), log);
  if (c.max_length) sentences = filter_by_length(sentences, *c.max_length, c.length_counts_punct);
  return sentences;
}

// Keeps the first k variants per position; k = 0 leaves only the target.
inline SentenceAttention limit_variants(const SentenceAttention& sa, std::size_t k) {
  SentenceAttention out;
  out.target = sa.target;
  if (k == 0) return out;
  for (const auto& [pos, list] : sa.variants) {
    auto& dst = out.variants[pos];
    dst.assign(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(std::min(k, list.size())));
  }
  return out;
}

struct SentenceParse {
  std::string sentence_id;
  UndirectedTree tree;
  ScoreMatrix scores;
  std::size_t shortfall_positions = 0;
  std::size_t shortfall_missing = 0;
};

inline SentenceParse parse_from_attention(const SentenceAttention& sa, std::size_t layer, const HeadSelection& heads,
                                          SymmetrizeMode mode) {
  SentenceParse p;
  p.sentence_id = sa.target.sentence_id;
  p.scores = symmetrize(sentence_matrix(sa, layer, heads), mode);
  p.tree = prim_mst(p.scores);
  return p;
}

inline void note_shortfalls(SentenceParse& p, const SubstitutionSet& subst) {
  p.shortfall_positions = subst.shortfalls.size();
  p.shortfall_missing = subst.total_shortfall();
}

inline EvalReport evaluate_parses(const std::vector<GoldSentence>& gold, const std::vector<SentenceParse>& parses,
                                  bool exclude_punct) {
  if (gold.size() != parses.size()) throw DimensionError("evaluate_parses: one parse per sentence is required");
  EvalAccumulator acc;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    acc.add_sentence(gold[i], parses[i].tree, exclude_punct, &parses[i].scores);
    acc.add_shortfalls(parses[i].shortfall_positions, parses[i].shortfall_missing);
  }
  return acc.report();
}

struct ParseRun {
  std::vector<SentenceParse> parses;
  EvalReport report;
};

inline ParseRun parse_corpus(const std::vector<GoldSentence>& sentences, Runtime& rt, const RunConfig& c) {
  ParseRun run;
  run.parses.resize(sentences.size());
  const std::size_t k = c.effective_k();
  parallel_for(sentences.size(), c.threads, [&](std::size_t i) {
    const auto& s = sentences[i];
    const auto words = s.words();
    const auto subst = rt.substitutions_for(s.sentence_id, words, c, k);
    auto sa = gather_attention(rt.attention(), s.sentence_id, words, subst);
    auto p = parse_from_attention(sa, c.layer, c.heads, c.symmetrize);
    p.sentence_id = s.sentence_id;
    note_shortfalls(p, subst);
    run.parses[i] = std::move(p);
  });
  run.report = evaluate_parses(sentences, run.parses, c.exclude_punct);
  return run;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

}  // namespace detail

inline void write_parse_outputs(const std::filesystem::path& dir, const std::vector<GoldSentence>& sentences,
                                const ParseRun& run, const RunConfig& c) {
  detail::write_json_file(dir / "report.json", to_json(run.report));
  {
    auto out = detail::open_output(dir / "report.tsv");
    write_report_tsv(out, run.report);
  }
  {
    auto out = detail::open_output(dir / "trees.txt");
    for (const auto& p : run.parses) write_tree_dump_line(out, p.sentence_id, p.tree);
  }
  if (c.bracketed) {
    auto out = detail::open_output(dir / "trees.bracketed.txt");
    for (std::size_t i = 0; i < sentences.size(); ++i)
      out << run.parses[i].sentence_id << '\t' << bracketed(run.parses[i].tree, sentences[i].words()) << '\n';
  }
  detail::write_json_file(dir / "run_config.json", to_json(c));
}

inline ParseRun run_parse_eval(const RunConfig& c, Runtime& rt, std::ostream* log = nullptr) {
  c.validate();
  const auto sentences = load_dataset(c, log);
  auto run = parse_corpus(sentences, rt, c);
  write_parse_outputs(c.out, sentences, run, c);
  return run;
}

struct LayerSweepRow {
  std::size_t layer = 0;
  EvalReport target;
  EvalReport ssud;

  std::optional<double> delta() const {
    if (!target.uuas || !ssud.uuas) return std::nullopt;
    return *ssud.uuas - *target.uuas;
  }
};

struct LayerSweep {
  std::size_t k = 1;
  std::vector<LayerSweepRow> rows;

  // Largest delta; ties go to the lower layer.
  std::optional<std::size_t> best_layer() const {
    std::optional<std::size_t> best;
    std::optional<double> best_delta;
    for (const auto& r : rows) {
      auto d = r.delta();
      if (d && (!best_delta || *d > *best_delta)) {
        best_delta = d;
        best = r.layer;
      }
    }
    return best;
  }
};

// Target vs SSUD UUAS per layer. k is the configured k, or 1 when unset.
inline LayerSweep run_layer_sweep(const RunConfig& c, Runtime& rt, const std::vector<std::size_t>& layers,
                                  std::ostream* log = nullptr) {
  c.validate();
  if (layers.empty()) throw ConfigError("layer sweep: no layers given");
  if (auto depth = known_model_depth(c.model))
    for (auto l : layers)
      if (l >= *depth) throw ConfigError("sweep layer " + std::to_string(l) + " is outside " + c.model);
  const auto sentences = load_dataset(c, log);
  LayerSweep sweep;
  sweep.k = c.k > 0 ? c.k : 1;
  std::vector<std::vector<SentenceParse>> target(layers.size(), std::vector<SentenceParse>(sentences.size()));
  auto ssud = target;
  parallel_for(sentences.size(), c.threads, [&](std::size_t i) {
    const auto& s = sentences[i];
    const auto words = s.words();
    const auto subst = rt.substitutions_for(s.sentence_id, words, c, sweep.k);
    const auto full = gather_attention(rt.attention(), s.sentence_id, words, subst);
    const auto bare = limit_variants(full, 0);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      target[li][i] = parse_from_attention(bare, layers[li], c.heads, c.symmetrize);
      ssud[li][i] = parse_from_attention(full, layers[li], c.heads, c.symmetrize);
      note_shortfalls(ssud[li][i], subst);
    }
  });
  for (std::size_t li = 0; li < layers.size(); ++li)
    sweep.rows.push_back({layers[li], evaluate_parses(sentences, target[li], c.exclude_punct),
                          evaluate_parses(sentences, ssud[li], c.exclude_punct)});
  return sweep;
}

struct KSweepRow {
  std::size_t k = 0;  // 0 is the target-only column
  EvalReport report;
};

// One report per k. Substitutions are fetched once at the largest k and
// truncated, which selects the same candidates a run at each k would.
inline std::vector<KSweepRow> run_k_sweep(const RunConfig& c, Runtime& rt, const std::vector<std::size_t>& ks,
                                          std::ostream* log = nullptr) {
  c.validate();
  if (ks.empty()) throw ConfigError("k sweep: no k values given");
  const auto sentences = load_dataset(c, log);
  const std::size_t k_max = *std::max_element(ks.begin(), ks.end());
  std::vector<std::vector<SentenceParse>> parses(ks.size(), std::vector<SentenceParse>(sentences.size()));
  parallel_for(sentences.size(), c.threads, [&](std::size_t i) {
    const auto& s = sentences[i];
    const auto words = s.words();
    const auto subst = rt.substitutions_for(s.sentence_id, words, c, k_max);
    const auto full = gather_attention(rt.attention(), s.sentence_id, words, subst);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      auto p = parse_from_attention(limit_variants(full, ks[ki]), c.layer, c.heads, c.symmetrize);
      p.sentence_id = s.sentence_id;
      if (ks[ki] > 0) note_shortfalls(p, subst.truncated(ks[ki]));
      parses[ki][i] = std::move(p);
    }
  });
  std::vector<KSweepRow> rows;
  for (std::size_t ki = 0; ki < ks.size(); ++ki)
    rows.push_back({ks[ki], evaluate_parses(sentences, parses[ki], c.exclude_punct)});
  return rows;
}

inline nlohmann::json to_json(const LayerSweep& sweep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : sweep.rows)
    rows.push_back({{"layer", r.layer},
                    {"target_uuas", detail::opt(r.target.uuas)},
                    {"ssud_uuas", detail::opt(r.ssud.uuas)},
                    {"delta", detail::opt(r.delta())}});
  auto best = sweep.best_layer();
  return {{"k", sweep.k}, {"rows", rows}, {"best_layer", best ? nlohmann::json(*best) : nlohmann::json()}};
}

inline nlohmann::json to_json(const std::vector<KSweepRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back({{"k", r.k}, {"report", to_json(r.report)}});
  return out;
}

struct AgreementRun {
  std::vector<AgreementInstance> instances;
  std::vector<SentenceParse> parses;
  std::map<TemplateKind, HitCount> recall;
};

inline AgreementRun run_agreement(const RunConfig& c, Runtime& rt, const AgreementLexicon& lexicon) {
  c.validate();
  AgreementRun run;
  run.instances = generate_agreement_set(lexicon, c.per_template, c.seed);
  run.parses.resize(run.instances.size());
  const std::size_t k = c.effective_k();
  parallel_for(run.instances.size(), c.threads, [&](std::size_t i) {
    const auto& inst = run.instances[i];
    const auto sid = agreement_sentence_id(inst, i);
    const auto subst = rt.substitutions_for(sid, inst.words, c, k);
    auto p = parse_from_attention(gather_attention(rt.attention(), sid, inst.words, subst), c.layer, c.heads,
                                  c.symmetrize);
    p.sentence_id = sid;
    note_shortfalls(p, subst);
    run.parses[i] = std::move(p);
  });
  for (auto kind : {TemplateKind::object_rc, TemplateKind::subject_rc}) run.recall[kind] = {};
  for (std::size_t i = 0; i < run.instances.size(); ++i) {
    auto& r = run.recall[run.instances[i].kind];
    ++r.total;
    r.hit += subject_verb_recall(run.parses[i].tree, run.instances[i].annotation()) ? 1 : 0;
  }
  return run;
}

inline nlohmann::json to_json(const AgreementRun& run) {
  nlohmann::json j{{"report_version", kReportVersion}};
  for (const auto& [kind, c] : run.recall)
    j[to_string(kind)] = {{"sv_recall", detail::opt(c.rate())}, {"sv_hits", c.hit}, {"sv_total", c.total}};
  return j;
}

inline void write_agreement_outputs(const std::filesystem::path& dir, const AgreementRun& run) {
  {
    auto out = detail::open_output(dir / "agreement_set.jsonl");
    write_agreement_jsonl(out, run.instances);
  }
  detail::write_json_file(dir / "agreement_report.json", to_json(run));
  auto out = detail::open_output(dir / "agreement_trees.txt");
  for (const auto& p : run.parses) write_tree_dump_line(out, p.sentence_id, p.tree);
}

inline HeadselPipeline make_headsel_pipeline(const RunConfig& c, Runtime& rt) {
  HeadselPipeline p;
  p.config = c.headsel;
  p.config.exclude_punct = c.exclude_punct;
  p.attention = &rt.attention();
  if (c.effective_k() > 0) {
    const std::size_t k = c.effective_k();
    p = apply_ssud_everywhere(std::move(p), [&rt, &c, k](const GoldSentence& s) {
      return rt.substitutions_for(s.sentence_id, s.words(), c, k);
    });
  }
  return p;
}

// Parallel version of run_headsel: head accuracies are integer counts, so
// per-thread tables merge to the same result in any order.
inline HeadselResult run_headsel_experiment(const RunConfig& c, Runtime& rt, std::ostream* log = nullptr) {
  c.validate();
  auto evaluation = load_dataset(c, log);
  const auto pipeline = make_headsel_pipeline(c, rt);
  HeadselResult result;
  if (!c.ensembles.empty()) {
    std::ifstream in(c.ensembles);
    if (!in) throw ConfigError("cannot open ensembles " + c.ensembles.string());
    result.ensembles = ensembles_from_json(nlohmann::json::parse(in));
  } else {
    if (c.selection.empty()) throw ConfigError("headsel needs a selection treebank or an ensemble file");
    auto selection = load_treebank_file(c.selection, log);
    if (selection.size() > c.selection_size) selection.resize(c.selection_size);
    std::vector<std::optional<HeadAccuracyTable>> partial(selection.size());
    parallel_for(selection.size(), c.threads, [&](std::size_t i) {
      const auto m = pipeline.matrices(selection[i]);
      HeadAccuracyTable t(pipeline.config.relations, m.layers, m.heads);
      t.add(m, selection[i]);
      partial[i] = std::move(t);
    });
    if (partial.empty()) throw Error("headsel: no selection sentences");
    auto table = *partial.front();
    for (std::size_t i = 1; i < partial.size(); ++i) table.merge(*partial[i]);
    result.accuracies = table.scored();
    result.ensembles = select_heads(result.accuracies, pipeline.config.top_n);
  }
  result.trees.resize(evaluation.size());
  parallel_for(evaluation.size(), c.threads, [&](std::size_t i) {
    result.trees[i] =
        induce_directed_labeled_tree(pipeline.matrices(evaluation[i]), result.ensembles, pipeline.config.root_score);
  });
  EvalAccumulator acc;
  AttachmentOptions opts{c.exclude_punct, normalize_relation};
  for (std::size_t i = 0; i < evaluation.size(); ++i) {
    acc.add_sentence(evaluation[i], result.trees[i].undirected(), c.exclude_punct);
    acc.add_attachment(attachment_scores(result.trees[i], evaluation[i], opts));
  }
  result.report = acc.report();

  detail::write_json_file(c.out / "ensembles.json", to_json(result.ensembles));
  detail::write_json_file(c.out / "headsel_report.json", to_json(result.report));
  auto predicted = evaluation;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (auto& tok : predicted[i].tokens) {
      tok.gold_head = result.trees[i].heads[tok.index - 1];
      tok.deprel = result.trees[i].labels[tok.index - 1];
    }
  auto out = detail::open_output(c.out / "headsel_trees.conllu");
  write_conllu(out, predicted);
  detail::write_json_file(c.out / "run_config.json", to_json(c));
  return result;
}

// Scores an existing tree dump against gold (e.g. SUD rescoring of trees
// induced on UD input).
inline EvalReport rescore_tree_dump(const std::vector<GoldSentence>& gold, std::istream& dump, bool exclude_punct) {
  std::map<std::string, std::size_t> lengths;
  for (const auto& s : gold) lengths[s.sentence_id] = s.size();
  std::map<std::string, UndirectedTree> trees;
  for (auto& e : read_tree_dump(dump, lengths)) trees[e.sentence_id] = std::move(e.tree);
  EvalAccumulator acc;
  for (const auto& s : gold) {
    auto it = trees.find(s.sentence_id);
    if (it == trees.end()) throw Error("tree dump has no parse for sentence " + s.sentence_id);
    acc.add_sentence(s, it->second, exclude_punct);
  }
  return acc.report();
}

struct CacheStats {
  std::size_t sentences = 0;
  std::size_t attention_written = 0;
  std::size_t attention_hits = 0;
  std::size_t substitution_new = 0;
  std::size_t substitution_hits = 0;
};

inline nlohmann::json to_json(const CacheStats& s) {
  return {{"sentences", s.sentences},
          {"attention_written", s.attention_written},
          {"attention_hits", s.attention_hits},
          {"substitution_new", s.substitution_new},
          {"substitution_hits", s.substitution_hits}};
}

// Fetches everything a later offline run of this config needs: the dataset,
// the selection treebank and the agreement set when configured, at the
// largest k any configured run uses.
inline CacheStats cache_warm(const RunConfig& c, Runtime& rt, std::ostream* log = nullptr) {
  c.validate();
  if (!rt.client()) throw ConfigError("cache-warm needs a reachable service (set service and do not pass --offline)");
  std::size_t k = c.k;
  for (auto kk : c.sweep_ks) k = std::max(k, kk);
  if (!c.sweep_layers.empty()) k = std::max<std::size_t>(k, 1);

  std::vector<std::pair<std::string, std::vector<std::string>>> work;
  for (const auto& s : load_dataset(c, log)) work.emplace_back(s.sentence_id, s.words());
  if (!c.selection.empty()) {
    auto selection = load_treebank_file(c.selection, log);
    if (selection.size() > c.selection_size) selection.resize(c.selection_size);
    for (const auto& s : selection) work.emplace_back(s.sentence_id, s.words());
  }
  if (!c.lexicon.empty()) {
    const auto set = generate_agreement_set(load_agreement_lexicon(c.lexicon), c.per_template, c.seed);
    for (std::size_t i = 0; i < set.size(); ++i) work.emplace_back(agreement_sentence_id(set[i], i), set[i].words);
  }

  const auto sub_before = rt.substitutions() ? rt.substitutions()->stats() : ProviderStats{};
  const auto att_hits_before = rt.store() ? rt.store()->hits() : 0;
  const auto att_written_before = rt.store() ? rt.store()->written() : 0;
  parallel_for(work.size(), c.threads, [&](std::size_t i) {
    const auto& [sid, words] = work[i];
    gather_attention(rt.attention(), sid, words, rt.substitutions_for(sid, words, c, k));
  });
  CacheStats stats;
  stats.sentences = work.size();
  if (rt.store()) {
    stats.attention_hits = rt.store()->hits() - att_hits_before;
    stats.attention_written = rt.store()->written() - att_written_before;
  }
  if (rt.substitutions()) {
    const auto after = rt.substitutions()->stats();
    stats.substitution_new = after.new_records - sub_before.new_records;
    stats.substitution_hits = after.cache_hits - sub_before.cache_hits;
  }
  return stats;
}

}  // namespace ssud
