// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// orderlab: command-line front end for the word-order choice experiments.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "orderlab/common.hpp"
#include "orderlab/evalsvc.hpp"
#include "orderlab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace orderlab;

namespace {

std::vector<Sentence> corpus_from(const std::string& text_corpus, const std::string& conll) {
  if (!text_corpus.empty()) return read_lm_corpus(text_corpus);
  if (!conll.empty()) return treebank_sentences(conll);
  throw CLI::ValidationError("need --corpus or --conll");
}

FeatureSubset parse_subset_arg(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0)
    throw CLI::ValidationError("--subset expects NAME=feature,feature,...");
  return {arg.substr(0, eq), parse_feature_list(arg.substr(eq + 1))};
}

EvalServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orderlab: word-order choice modelling toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("orderlab ") + kToolVersion);

  std::optional<std::uint64_t> seed;
  std::string log_base_text;
  std::size_t jobs = 1;
  app.add_option("--seed", seed, "Run seed");
  app.add_option("--log-base", log_base_text, "Surprisal log base (2 or e)")
      ->check(CLI::IsMember({"2", "e"}));
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto base = [&]() { return log_base_text.empty() ? LogBase::Two : parse_log_base(log_base_text); };
  auto run_seed = [&](std::uint64_t fallback) { return seed.value_or(fallback); };

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse and validate a treebank");
  std::string ingest_treebank, ingest_out = "out";
  ingest->add_option("--treebank", ingest_treebank, "CoNLL-style treebank")->required();
  ingest->add_option("--out-dir", ingest_out, "Output directory");
  ingest->callback([&] {
    const auto conll = (fs::path(ingest_out) / "treebank.conll").string();
    const auto report = (fs::path(ingest_out) / "ingestion.tsv").string();
    ingest_stage(ingest_treebank, conll, report);
    std::cout << "wrote " << conll << " and " << report << '\n';
  });

  // train-ngram
  auto* tngram = app.add_subcommand("train-ngram", "Train the trigram Katz backoff model");
  std::string ng_corpus, ng_conll, ng_out = "ngram.lm";
  NgramOptions ng_opts;
  tngram->add_option("--corpus", ng_corpus, "Text corpus, one tokenized sentence per line");
  tngram->add_option("--conll", ng_conll, "Treebank to read sentences from");
  tngram->add_option("--min-count", ng_opts.min_count, "Vocabulary count threshold");
  tngram->add_option("--gt-max", ng_opts.gt_max, "Good-Turing cutoff k");
  tngram->add_option("--out", ng_out, "Model file");
  tngram->callback([&] {
    ng_opts.log_base = base();
    train_ngram_stage(corpus_from(ng_corpus, ng_conll), ng_opts, ng_out);
    std::cout << "wrote " << ng_out << '\n';
  });

  // train-lstm
  auto* tlstm = app.add_subcommand("train-lstm", "Train the LSTM language model");
  std::string ls_corpus, ls_conll, ls_out = "lstm.bin", ls_log = "lstm_epochs.tsv";
  LstmTrainConfig ls_cfg;
  tlstm->add_option("--corpus", ls_corpus, "Text corpus, one tokenized sentence per line");
  tlstm->add_option("--conll", ls_conll, "Treebank to read sentences from");
  tlstm->add_option("--embedding", ls_cfg.dims.embedding, "Embedding size");
  tlstm->add_option("--hidden", ls_cfg.dims.hidden, "Hidden size");
  tlstm->add_option("--layers", ls_cfg.dims.layers, "LSTM layers");
  tlstm->add_option("--epochs", ls_cfg.epochs, "Training epochs");
  tlstm->add_option("--lr", ls_cfg.base_lr, "Initial learning rate");
  tlstm->add_option("--clip", ls_cfg.clip, "Gradient norm clip");
  tlstm->add_option("--min-count", ls_cfg.min_count, "Vocabulary count threshold");
  tlstm->add_option("--out", ls_out, "Model file");
  tlstm->add_option("--log", ls_log, "Per-epoch loss log");
  tlstm->callback([&] {
    ls_cfg.log_base = base();
    ls_cfg.seed = derive_seed(run_seed(13), "lstm");
    train_lstm_stage(corpus_from(ls_corpus, ls_conll), ls_cfg, ls_out, ls_log);
    std::cout << "wrote " << ls_out << '\n';
  });

  // gen-variants
  auto* gen = app.add_subcommand("gen-variants", "Generate preverbal reorderings");
  std::string gv_conll, gv_out = "variants.tsv";
  std::size_t gv_cap = 100;
  bool gv_permissive = false;
  gen->add_option("--conll", gv_conll, "Validated treebank")->required();
  gen->add_option("--cap", gv_cap, "Sentences per set including the reference");
  gen->add_flag("--permissive", gv_permissive, "Accept every constituent order");
  gen->add_option("--out", gv_out, "Variant records");
  gen->callback([&] {
    gen_variants_stage(gv_conll, gv_cap, run_seed(13), gv_permissive, jobs, gv_out);
    std::cout << "wrote " << gv_out << '\n';
  });

  // features
  auto* feat = app.add_subcommand("features", "Score references and variants");
  FeatureStageInputs fi;
  std::string fe_out = "features.tsv";
  feat->add_option("--conll", fi.conll, "Validated treebank")->required();
  feat->add_option("--variants", fi.variants, "Variant records")->required();
  feat->add_option("--ngram", fi.ngram_model, "Trigram model")->required();
  feat->add_option("--lstm", fi.lstm_model, "LSTM model");
  feat->add_option("--external", fi.external, "External (row_id, value) column for pcfg_surp");
  feat->add_option("--mu", fi.cache_mu, "Cache mixture weight");
  feat->add_option("--adapt-lr", fi.adaptation.learning_rate, "Adaptation learning rate");
  feat->add_option("--out", fe_out, "Feature table");
  feat->callback([&] {
    fi.jobs = jobs;
    features_stage(fi, fe_out);
    std::cout << "wrote " << fe_out << '\n';
  });

  // rank
  auto* rank = app.add_subcommand("rank", "Cross-validated pairwise ranking");
  std::string rk_features, rk_out = "out";
  std::size_t rk_folds = 10;
  std::vector<std::string> rk_subsets;
  std::vector<std::string> rk_ablate;
  rank->add_option("--features", rk_features, "Feature table")->required();
  rank->add_option("--folds", rk_folds, "Cross-validation folds");
  rank->add_option("--subset", rk_subsets, "NAME=feature,feature,... (repeatable)");
  rank->add_option("--ablate", rk_ablate, "Compare all features against all minus this one");
  rank->add_option("--out-dir", rk_out, "Output directory");
  rank->callback([&] {
    std::vector<FeatureSubset> subsets;
    for (const auto& a : rk_subsets) subsets.push_back(parse_subset_arg(a));
    if (!rk_ablate.empty() || subsets.empty()) {
      for (const auto& name : rk_ablate) {
        auto f = feature_from_name(name);
        if (!f) throw CLI::ValidationError("unknown feature " + name);
        std::vector<Feature> reduced;
        for (auto g : all_features())
          if (g != *f) reduced.push_back(g);
        subsets.push_back({"all-" + name, reduced});
      }
      subsets.insert(subsets.begin(), {"all", all_features()});
    }
    const auto out = rank_stage(rk_features, rk_folds, subsets, run_seed(13), jobs, rk_out);
    for (std::size_t i = 0; i < subsets.size(); ++i)
      std::cout << subsets[i].name << "\t" << format_fixed(100.0 * out.tables[i].accuracy(), 2)
                << "%\n";
  });

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Per-subset accuracy and correlation reports");
  AnalyzeInputs ai;
  std::string an_out = "out";
  analyze->add_option("--conll", ai.conll, "Validated treebank")->required();
  analyze->add_option("--features", ai.features, "Feature table")->required();
  analyze->add_option("--predictions", ai.predictions, "Prediction table")->required();
  analyze->add_option("--verb-classes", ai.verb_classes, "lemma<TAB>CLASS file");
  analyze->add_option("--baseline", ai.baseline, "Baseline model column")->required();
  analyze->add_option("--augmented", ai.augmented, "Augmented model column")->required();
  analyze->add_flag("--conjunct-any-depth", ai.conjunct_any_depth, "Match pof at any depth");
  analyze->add_option("--out-dir", an_out, "Output directory");
  analyze->callback([&] {
    analyze_stage(ai, an_out);
    std::cout << "wrote reports to " << an_out << '\n';
  });

  // export-stimuli
  auto* stim = app.add_subcommand("export-stimuli", "Sample items for the human evaluation");
  std::string st_conll, st_variants, st_predictions, st_model, st_out = "stimuli.tsv";
  std::size_t st_count = 167;
  stim->add_option("--conll", st_conll, "Validated treebank")->required();
  stim->add_option("--variants", st_variants, "Variant records")->required();
  stim->add_option("--predictions", st_predictions, "Prediction table")->required();
  stim->add_option("--model", st_model, "Model column supplying predictions")->required();
  stim->add_option("--count", st_count, "Items to sample");
  stim->add_option("--out", st_out, "Stimulus pool");
  stim->callback([&] {
    export_stimuli_stage(st_conll, st_variants, st_predictions, st_model, st_count, run_seed(13),
                         st_out);
    std::cout << "wrote " << st_out << '\n';
  });

  // serve-eval
  auto* serve = app.add_subcommand("serve-eval", "Run the forced-choice evaluation service");
  std::string sv_host = "127.0.0.1", sv_pool, sv_log = "judgments.ndjson", sv_static;
  int sv_port = 8080;
  serve->add_option("--host", sv_host, "Bind address");
  serve->add_option("--port", sv_port, "Port")->check(CLI::Range(0, 65535));
  serve->add_option("--pool", sv_pool, "Stimulus pool");
  serve->add_option("--log-path", sv_log, "Judgment log");
  serve->add_option("--static", sv_static, "UI bundle directory");
  serve->callback([&] {
    EvalConfig cfg;
    cfg.seed = run_seed(0);
    cfg.log_path = sv_log;
    cfg.static_dir = sv_static;
    EvalService service(cfg);
    if (!sv_pool.empty()) service.set_pool(read_stimulus_pool_file(sv_pool));
    EvalServer server(service);
    g_server = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cerr << "serving on http://" << sv_host << ":" << sv_port << " ("
              << service.judgment_count() << " judgments replayed)\n";
    if (!server.listen(sv_host, sv_port)) throw std::runtime_error("cannot listen on port");
    g_server = nullptr;
  });

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline from a config file");
  std::string rn_config;
  std::vector<std::string> rn_stages;
  run->add_option("--config", rn_config, "INI config")->required()->check(CLI::ExistingFile);
  run->add_option("--stage", rn_stages, "Run only these stages");
  run->callback([&] {
    auto cfg = load_pipeline_config(rn_config);
    if (seed) {
      cfg.seed = *seed;
      cfg.lstm.seed = derive_seed(*seed, "lstm");
    }
    if (!log_base_text.empty()) {
      cfg.log_base = base();
      cfg.ngram.log_base = cfg.log_base;
      cfg.lstm.log_base = cfg.log_base;
    }
    if (app.count("--jobs")) cfg.jobs = jobs;
    run_pipeline(cfg, rn_stages, &std::cout);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "orderlab: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
