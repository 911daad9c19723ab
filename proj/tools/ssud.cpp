// ssud: unsupervised dependency parsing from attention over substituted
// sentences. See README.md for the subcommands and config keys.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssud.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string mode, model, scheme, out, service, dataset;
  std::size_t k = 0, layer = 0, threads = 0;
  std::uint64_t seed = 0;
  bool offline = false;
  std::vector<CLI::Option*> set_k, set_layer, set_seed, set_threads;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run config")->check(CLI::ExistingFile);
  app->add_option("--mode", o.mode, "target_only or ssud");
  o.set_k.push_back(app->add_option("--k", o.k, "substitutions per position"));
  o.set_layer.push_back(app->add_option("--layer", o.layer, "attention layer (0-based)"));
  app->add_option("--model", o.model, "model id");
  app->add_option("--scheme", o.scheme, "annotation scheme: ud or sud");
  app->add_flag("--offline", o.offline, "never contact the model service");
  app->add_option("--out", o.out, "output directory");
  o.set_seed.push_back(app->add_option("--seed", o.seed, "sampling seed"));
  app->add_option("--service", o.service, "model service endpoint, e.g. http://127.0.0.1:8000");
  app->add_option("--dataset", o.dataset, "CoNLL-U file for the selected scheme");
  o.set_threads.push_back(app->add_option("--threads", o.threads, "worker threads (0 = all cores)"));
}

bool given(const std::vector<CLI::Option*>& opts) {
  for (auto* o : opts)
    if (o->count() > 0) return true;
  return false;
}

ssud::RunConfig build_config(const Overrides& o) {
  auto c = o.config.empty() ? ssud::RunConfig{} : ssud::load_run_config(o.config);
  if (!o.scheme.empty()) c.scheme = o.scheme;
  if (!o.dataset.empty()) c.datasets[c.scheme] = o.dataset;
  if (!o.mode.empty()) c.mode = ssud::parse_run_mode(o.mode);
  if (given(o.set_k)) c.k = o.k;
  if (given(o.set_layer)) c.layer = o.layer;
  if (!o.model.empty()) c.model = o.model;
  if (o.offline) c.offline = true;
  if (!o.out.empty()) c.out = o.out;
  if (given(o.set_seed)) c.seed = o.seed;
  if (!o.service.empty()) c.service = o.service;
  if (given(o.set_threads)) c.threads = o.threads;
  c.headsel.exclude_punct = c.exclude_punct;
  c.validate();
  return c;
}

std::string rate(const std::optional<double>& v) {
  if (!v) return "exempt";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ssud::Error("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssud: dependency trees from attention averaged over substituted sentences"};
  app.require_subcommand(1);

  Overrides o;
  auto* parse = app.add_subcommand("parse", "induce trees for a treebank and score them");
  add_common(parse, o);

  std::string pred, gold;
  auto* eval = app.add_subcommand("eval", "score a run, or rescore an existing tree dump with --pred");
  add_common(eval, o);
  eval->add_option("--pred", pred, "tree dump to rescore")->check(CLI::ExistingFile);
  eval->add_option("--gold", gold, "gold CoNLL-U (defaults to the configured dataset)")->check(CLI::ExistingFile);

  std::vector<std::size_t> layers;
  auto* sweep_layer = app.add_subcommand("sweep-layer", "target vs SSUD UUAS for each layer");
  add_common(sweep_layer, o);
  sweep_layer->add_option("--layers", layers, "layers to sweep")->delimiter(',');

  std::vector<std::size_t> ks;
  auto* sweep_k = app.add_subcommand("sweep-k", "one report per k (0 = target only)");
  add_common(sweep_k, o);
  sweep_k->add_option("--ks", ks, "k values")->delimiter(',');

  std::string lexicon;
  std::size_t per_template = 0;
  auto* agreement = app.add_subcommand("agreement", "subject-verb edge recall on generated relative clauses");
  add_common(agreement, o);
  agreement->add_option("--lexicon", lexicon, "lexicon JSON")->check(CLI::ExistingFile);
  auto* per_template_opt = agreement->add_option("--per-template", per_template, "instances per template");

  std::string ensembles;
  auto* headsel = app.add_subcommand("headsel", "supervised head selection and directed labeled parsing");
  add_common(headsel, o);
  headsel->add_option("--ensembles", ensembles, "reuse a saved ensemble file")->check(CLI::ExistingFile);

  auto* warm = app.add_subcommand("cache-warm", "fetch all attention and substitutions a config needs");
  add_common(warm, o);

  CLI11_PARSE(app, argc, argv);

  try {
    auto c = build_config(o);
    std::ostream* log = &std::cerr;

    if (parse->parsed() || (eval->parsed() && pred.empty())) {
      ssud::Runtime rt(c);
      auto run = ssud::run_parse_eval(c, rt, log);
      ssud::print_report_table(std::cout, run.report);
      return 0;
    }

    if (eval->parsed()) {
      const auto gold_path = gold.empty() ? c.dataset() : std::filesystem::path(gold);
      auto sentences = ssud::load_treebank_file(gold_path, log);
      if (c.max_length) sentences = ssud::filter_by_length(sentences, *c.max_length, c.length_counts_punct);
      std::ifstream dump(pred);
      auto report = ssud::rescore_tree_dump(sentences, dump, c.exclude_punct);
      std::filesystem::create_directories(c.out);
      write_text(c.out / "report.json", ssud::to_json(report).dump(2) + "\n");
      std::ostringstream tsv;
      ssud::write_report_tsv(tsv, report);
      write_text(c.out / "report.tsv", tsv.str());
      ssud::print_report_table(std::cout, report);
      return 0;
    }

    if (sweep_layer->parsed()) {
      if (layers.empty()) layers = c.sweep_layers;
      if (layers.empty()) throw ssud::ConfigError("sweep-layer: give --layers or sweep_layers in the config");
      ssud::Runtime rt(c);
      auto sweep = ssud::run_layer_sweep(c, rt, layers, log);
      std::ostringstream tsv;
      tsv << "layer\ttarget\tk" << sweep.k << "\tdelta\n";
      for (const auto& r : sweep.rows)
        tsv << r.layer << '\t' << rate(r.target.uuas) << '\t' << rate(r.ssud.uuas) << '\t' << rate(r.delta()) << '\n';
      write_text(c.out / "layer_sweep.json", ssud::to_json(sweep).dump(2) + "\n");
      write_text(c.out / "layer_sweep.tsv", tsv.str());
      std::cout << tsv.str();
      if (auto best = sweep.best_layer()) std::cout << "largest increase at layer " << *best << '\n';
      return 0;
    }

    if (sweep_k->parsed()) {
      if (ks.empty()) ks = c.sweep_ks;
      if (ks.empty()) throw ssud::ConfigError("sweep-k: give --ks or sweep_ks in the config");
      ssud::Runtime rt(c);
      auto rows = ssud::run_k_sweep(c, rt, ks, log);
      std::ostringstream tsv;
      tsv << "k\tuuas\thits\ttotal\tshortfall_positions\n";
      for (const auto& r : rows)
        tsv << (r.k == 0 ? std::string("T") : std::to_string(r.k)) << '\t' << rate(r.report.uuas) << '\t'
            << r.report.uuas_counts.hit << '\t' << r.report.uuas_counts.total << '\t'
            << r.report.shortfall_positions << '\n';
      write_text(c.out / "k_sweep.json", ssud::to_json(rows).dump(2) + "\n");
      write_text(c.out / "k_sweep.tsv", tsv.str());
      std::cout << tsv.str();
      return 0;
    }

    if (agreement->parsed()) {
      if (!lexicon.empty()) c.lexicon = lexicon;
      if (per_template_opt->count() > 0) c.per_template = per_template;
      if (c.lexicon.empty()) throw ssud::ConfigError("agreement: give --lexicon or lexicon in the config");
      ssud::Runtime rt(c);
      auto run = ssud::run_agreement(c, rt, ssud::load_agreement_lexicon(c.lexicon));
      ssud::write_agreement_outputs(c.out, run);
      for (const auto& [kind, hits] : run.recall)
        std::cout << ssud::to_string(kind) << "\t" << rate(hits.rate()) << " (" << hits.hit << "/" << hits.total
                  << ")\n";
      return 0;
    }

    if (headsel->parsed()) {
      if (!ensembles.empty()) c.ensembles = ensembles;
      ssud::Runtime rt(c);
      auto result = ssud::run_headsel_experiment(c, rt, log);
      ssud::print_report_table(std::cout, result.report);
      return 0;
    }

    if (warm->parsed()) {
      ssud::Runtime rt(c);
      auto stats = ssud::cache_warm(c, rt, log);
      std::cout << ssud::to_json(stats).dump(2) << '\n';
      return 0;
    }
  } catch (const ssud::CacheMissError& e) {
    std::cerr << "error: " << e.what() << "\n(run cache-warm against a live service, or drop --offline)\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
