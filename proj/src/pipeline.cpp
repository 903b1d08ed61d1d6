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

#include "orderlab/pipeline.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "orderlab/analysis.hpp"
#include "orderlab/common.hpp"
#include "orderlab/corpus.hpp"
#include "orderlab/evalsvc.hpp"
#include "orderlab/variantgen.hpp"

namespace fs = std::filesystem;

namespace orderlab {

namespace {

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

void close_checked(std::ofstream& out, const std::string& path) {
  out.close();
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string feature_csv(const std::vector<Feature>& features) {
  std::vector<std::string> names;
  for (auto f : features) names.emplace_back(kFeatureNames[static_cast<std::size_t>(f)]);
  return join(names, ",");
}

std::string safe_name(const std::string& name) {
  std::string out;
  for (char ch : name)
    out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_') ? ch : '_';
  return out;
}

}  // namespace

std::vector<FeatureSubset> default_subsets(bool with_lstm) {
  using F = Feature;
  if (with_lstm) {
    std::vector<Feature> base{F::DependencyLength, F::TrigramSurprisal, F::PcfgSurprisal,
                              F::IsScore, F::LexicalRepetitionSurprisal, F::LstmSurprisal};
    auto full = base;
    full.push_back(F::AdaptiveLstmSurprisal);
    return {{"base", base}, {"base+adaptive", full}};
  }
  std::vector<Feature> base{F::DependencyLength, F::TrigramSurprisal, F::PcfgSurprisal, F::IsScore};
  auto full = base;
  full.push_back(F::LexicalRepetitionSurprisal);
  return {{"base", base}, {"base+lexrept", full}};
}

std::string PipelineConfig::canonical() const {
  std::ostringstream out;
  out << "seed=" << seed << "\nlog_base=" << log_base_name(log_base)
      << "\nngram.min_count=" << ngram.min_count << "\nngram.gt_max=" << ngram.gt_max
      << "\ncache_mu=" << format_double(cache_mu) << "\nlstm.enabled=" << lstm_enabled
      << "\nlstm.embedding=" << lstm.dims.embedding << "\nlstm.hidden=" << lstm.dims.hidden
      << "\nlstm.layers=" << lstm.dims.layers << "\nlstm.epochs=" << lstm.epochs
      << "\nlstm.base_lr=" << format_double(lstm.base_lr) << "\nlstm.clip=" << format_double(lstm.clip)
      << "\nlstm.init_range=" << format_double(lstm.init_range) << "\nlstm.seed=" << lstm.seed
      << "\nlstm.min_count=" << lstm.min_count << "\nlstm.lr_decay=" << format_double(lstm.lr_decay)
      << "\nadapt.learning_rate=" << format_double(adaptation.learning_rate)
      << "\nadapt.clip=" << format_double(adaptation.grad_clip_norm)
      << "\nvariants.cap=" << variant_cap << "\nvariants.permissive=" << permissive_grammar
      << "\nrank.folds=" << folds;
  for (const auto& s : subsets) out << "\nsubset." << s.name << "=" << feature_csv(s.features);
  out << "\nanalyze.baseline=" << baseline << "\nanalyze.augmented=" << augmented
      << "\nanalyze.conjunct_any_depth=" << conjunct_any_depth
      << "\nstimuli.count=" << stimuli_count << '\n';
  return out.str();
}

PipelineConfig parse_pipeline_config(std::istream& in, const std::string& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::runtime_error("config: " + std::string(e.what()));
  }

  static const std::map<std::string, std::set<std::string>> kKnown = {
      {"data", {"treebank", "lm_corpus", "verb_classes", "external_features"}},
      {"run", {"output", "seed", "log_base", "jobs"}},
      {"ngram", {"min_count", "gt_max", "cache_mu"}},
      {"lstm",
       {"enabled", "embedding", "hidden", "layers", "epochs", "base_lr", "clip", "init_range",
        "min_count", "lr_decay"}},
      {"adapt", {"learning_rate", "clip"}},
      {"variants", {"cap", "grammar"}},
      {"rank", {"folds"}},
      {"subsets", {}},
      {"analyze", {"baseline", "augmented", "conjunct_any_depth"}},
      {"stimuli", {"count"}},
  };
  for (const auto& [section, body] : tree) {
    auto it = kKnown.find(section);
    if (it == kKnown.end()) throw std::runtime_error("config: unknown section [" + section + "]");
    if (section == "subsets") continue;
    for (const auto& [key, value] : body)
      if (!it->second.count(key))
        throw std::runtime_error("config: unknown key '" + key + "' in [" + section + "]");
  }

  auto text = [&](const std::string& key, const std::string& fallback) {
    return tree.get<std::string>(pt::ptree::path_type(key, '.'), fallback);
  };
  auto number = [&](const std::string& key, double fallback) {
    const auto v = text(key, "");
    if (v.empty()) return fallback;
    try {
      return parse_double(v);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config: " + key + " is not a number: '" + v + "'");
    }
  };
  auto count = [&](const std::string& key, std::size_t fallback) {
    const auto v = text(key, "");
    if (v.empty()) return fallback;
    try {
      const auto n = parse_int(v);
      if (n < 0) throw std::invalid_argument("negative");
      return static_cast<std::size_t>(n);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config: " + key + " is not a non-negative integer: '" + v + "'");
    }
  };
  auto flag = [&](const std::string& key, bool fallback) {
    const auto v = to_lower(text(key, ""));
    if (v.empty()) return fallback;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config: " + key + " must be true/false");
  };
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    fs::path path(p);
    return path.is_absolute() ? p : (fs::path(base_dir) / path).lexically_normal().string();
  };

  PipelineConfig c;
  c.treebank = resolve(text("data.treebank", ""));
  if (c.treebank.empty()) throw std::runtime_error("config: data.treebank is required");
  c.lm_corpus = resolve(text("data.lm_corpus", ""));
  c.verb_classes = resolve(text("data.verb_classes", ""));
  c.external_features = resolve(text("data.external_features", ""));
  c.output_dir = resolve(text("run.output", "out"));
  c.seed = count("run.seed", 13);
  c.log_base = parse_log_base(text("run.log_base", "2"));
  c.jobs = std::max<std::size_t>(1, count("run.jobs", 1));

  c.ngram.min_count = count("ngram.min_count", c.ngram.min_count);
  c.ngram.gt_max = static_cast<int>(count("ngram.gt_max", static_cast<std::size_t>(c.ngram.gt_max)));
  c.cache_mu = number("ngram.cache_mu", c.cache_mu);

  c.lstm_enabled = flag("lstm.enabled", true);
  c.lstm.dims.embedding = count("lstm.embedding", c.lstm.dims.embedding);
  c.lstm.dims.hidden = count("lstm.hidden", c.lstm.dims.hidden);
  c.lstm.dims.layers = count("lstm.layers", c.lstm.dims.layers);
  c.lstm.epochs = count("lstm.epochs", c.lstm.epochs);
  c.lstm.base_lr = number("lstm.base_lr", c.lstm.base_lr);
  c.lstm.clip = number("lstm.clip", c.lstm.clip);
  c.lstm.init_range = number("lstm.init_range", c.lstm.init_range);
  c.lstm.min_count = count("lstm.min_count", c.lstm.min_count);
  c.lstm.lr_decay = number("lstm.lr_decay", c.lstm.lr_decay);
  c.adaptation.learning_rate = number("adapt.learning_rate", c.adaptation.learning_rate);
  c.adaptation.grad_clip_norm = number("adapt.clip", c.adaptation.grad_clip_norm);

  c.variant_cap = count("variants.cap", c.variant_cap);
  const auto grammar = text("variants.grammar", "attested");
  if (grammar != "attested" && grammar != "permissive")
    throw std::runtime_error("config: variants.grammar must be attested or permissive");
  c.permissive_grammar = grammar == "permissive";

  c.folds = count("rank.folds", c.folds);
  if (auto subsets = tree.get_child_optional("subsets")) {
    for (const auto& [name, value] : *subsets) {
      try {
        c.subsets.push_back({name, parse_feature_list(value.data())});
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error("config: subset " + name + ": " + e.what());
      }
    }
  }
  if (c.subsets.empty()) c.subsets = default_subsets(c.lstm_enabled);
  c.baseline = text("analyze.baseline", c.subsets.front().name);
  c.augmented = text("analyze.augmented", c.subsets.size() > 1 ? c.subsets[1].name : c.baseline);
  for (const auto& want : {c.baseline, c.augmented})
    if (std::none_of(c.subsets.begin(), c.subsets.end(), [&](const auto& s) { return s.name == want; }))
      throw std::runtime_error("config: analyze refers to unknown subset '" + want + "'");
  c.conjunct_any_depth = flag("analyze.conjunct_any_depth", false);
  c.stimuli_count = count("stimuli.count", c.stimuli_count);

  c.ngram.log_base = c.log_base;
  c.lstm.log_base = c.log_base;
  c.lstm.seed = derive_seed(c.seed, "lstm");
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  auto in = open_in(path);
  const auto base = fs::absolute(path).parent_path().string();
  return parse_pipeline_config(in, base);
}

void ingest_stage(const std::string& treebank, const std::string& out_conll,
                  const std::string& out_report) {
  const auto bank = parse_treebank_file(treebank);
  if (bank.report.accepted() == 0) throw std::runtime_error("no sentence of " + treebank + " was accepted");
  auto conll = open_out(out_conll);
  write_conll(conll, bank.documents);
  close_checked(conll, out_conll);
  auto report = open_out(out_report);
  bank.report.write_tsv(report);
  close_checked(report, out_report);
}

std::vector<Sentence> read_lm_corpus(const std::string& path) {
  auto in = open_in(path);
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_whitespace(line);
    if (!words.empty()) out.push_back(std::move(words));
  }
  if (out.empty()) throw std::runtime_error("LM corpus " + path + " is empty");
  return out;
}

std::vector<Sentence> treebank_sentences(const std::string& conll) {
  std::vector<Sentence> out;
  for (const auto& doc : parse_treebank_file(conll).documents)
    for (const auto& s : doc.sentences) out.push_back(s.forms());
  return out;
}

void train_ngram_stage(const std::vector<Sentence>& corpus, const NgramOptions& options,
                       const std::string& out_model) {
  const auto lm = TrigramLm::train(corpus, options);
  auto out = open_out(out_model);
  lm.save(out);
  close_checked(out, out_model);
}

void train_lstm_stage(const std::vector<Sentence>& corpus, const LstmTrainConfig& config,
                      const std::string& out_model, const std::string& out_log) {
  std::ostringstream log;
  log << "epoch\tloss\tlearning_rate\n";
  const auto lm = train_lstm(corpus, config, {}, [&](std::size_t epoch, double loss, double lr) {
    log << epoch << '\t' << format_double(loss) << '\t' << format_double(lr) << '\n';
  });
  auto out = open_out(out_model, std::ios::binary);
  lm.save(out);
  close_checked(out, out_model);
  auto log_out = open_out(out_log);
  log_out << log.str();
  close_checked(log_out, out_log);
}

namespace {

struct SentenceRef {
  const DependencyTree* tree;
  const DependencyTree* context;
};

std::vector<SentenceRef> all_sentences(const std::vector<Document>& docs) {
  std::vector<SentenceRef> out;
  for (const auto& doc : docs)
    for (std::size_t k = 0; k < doc.sentences.size(); ++k)
      out.push_back({&doc.sentences[k], doc.context_of(k)});
  return out;
}

}  // namespace

void gen_variants_stage(const std::string& conll, std::size_t cap, std::uint64_t seed,
                        bool permissive, std::size_t jobs, const std::string& out_variants) {
  const auto bank = parse_treebank_file(conll);
  AttestedGrammar grammar;
  if (permissive) {
    std::set<std::string> labels;
    for (const auto& doc : bank.documents)
      for (const auto& s : doc.sentences)
        for (const auto& c : preverbal_constituents(s)) labels.insert(s.at(c.head_token).deprel);
    grammar = AttestedGrammar::permissive({labels.begin(), labels.end()});
  } else {
    grammar = build_attested_grammar(bank.documents);
  }
  const auto refs = all_sentences(bank.documents);
  std::vector<std::string> chunks(refs.size());
  VariantOptions options;
  options.cap = cap;
  options.seed = seed;
  parallel_for(refs.size(), jobs, [&](std::size_t i) {
    std::ostringstream os;
    write_variant_records(os, generate_variants(*refs[i].tree, refs[i].context, grammar, options));
    chunks[i] = os.str();
  });
  auto out = open_out(out_variants);
  for (const auto& c : chunks) out << c;
  close_checked(out, out_variants);
}

namespace {

using RecordIndex = std::map<std::string, std::vector<VariantRecord>>;

RecordIndex index_records(const std::string& path) {
  auto in = open_in(path);
  RecordIndex out;
  for (auto& r : read_variant_records(in)) out[group_key(r.doc_id, r.sent_id)].push_back(std::move(r));
  for (auto& [key, recs] : out)
    std::sort(recs.begin(), recs.end(),
              [](const auto& a, const auto& b) { return a.variant_id < b.variant_id; });
  return out;
}

}  // namespace

void features_stage(const FeatureStageInputs& in, const std::string& out_features) {
  const auto bank = parse_treebank_file(in.conll);
  const auto records = index_records(in.variants);

  auto ngram_in = open_in(in.ngram_model);
  const auto ngram = TrigramLm::load(ngram_in);
  std::optional<LstmLm> lstm;
  if (!in.lstm_model.empty()) {
    auto lstm_in = open_in(in.lstm_model, std::ios::binary);
    lstm = LstmLm::load(lstm_in);
  }
  std::optional<ExternalColumn> external;
  if (!in.external.empty()) external = ingest_external_features_file(in.external);

  Scorers scorers;
  scorers.trigram = &ngram;
  scorers.cache_mu = in.cache_mu;
  scorers.lstm = lstm ? &*lstm : nullptr;
  scorers.adaptation = in.adaptation;

  const auto refs = all_sentences(bank.documents);
  std::vector<std::vector<FeatureRow>> rows(refs.size());
  parallel_for(refs.size(), in.jobs, [&](std::size_t i) {
    const auto& tree = *refs[i].tree;
    auto it = records.find(group_key(tree.doc_id, tree.sentence_id));
    if (it == records.end()) return;
    VariantSet set;
    set.reference = tree;
    if (refs[i].context) set.context = *refs[i].context;
    for (const auto& r : it->second) {
      if (r.variant_id == 0) continue;
      Variant v{r.order, linearize(tree, r.order)};
      if (join(v.words(tree), " ") != r.text)
        throw std::runtime_error("variant " + r.sent_id + ":" + std::to_string(r.variant_id) +
                                 " does not match its treebank sentence");
      set.variants.push_back(std::move(v));
    }
    rows[i] = assemble_features(set, scorers, {}, external ? &*external : nullptr);
  });

  std::vector<FeatureRow> flat;
  for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  auto out = open_out(out_features);
  write_feature_table(out, flat);
  close_checked(out, out_features);
}

namespace {

std::vector<FeatureRow> load_features(const std::string& path) {
  auto in = open_in(path);
  return read_feature_table(in);
}

}  // namespace

RankOutputs rank_stage(const std::string& features, std::size_t folds,
                       const std::vector<FeatureSubset>& subsets, std::uint64_t seed,
                       std::size_t jobs, const std::string& out_dir) {
  if (subsets.empty()) throw std::invalid_argument("rank needs at least one feature subset");
  RankOutputs out;
  out.pairs = make_pairs(load_features(features));
  if (out.pairs.empty()) throw std::runtime_error("no reference/variant pairs in " + features);

  std::vector<std::vector<Feature>> lists;
  for (const auto& s : subsets) lists.push_back(s.features);
  out.tables = cross_validate(out.pairs, folds, lists, seed, {}, jobs);
  for (std::size_t i = 0; i < subsets.size(); ++i) out.tables[i].name = subsets[i].name;

  fs::create_directories(out_dir);
  const auto dir = fs::path(out_dir);
  {
    const auto path = (dir / "predictions.tsv").string();
    auto f = open_out(path);
    write_prediction_tables(f, out.pairs, out.tables);
    close_checked(f, path);
  }

  std::vector<RegressionReport> fits;
  for (const auto& s : subsets) {
    fits.push_back(fit_logistic(out.pairs, s.features));
    const auto path = (dir / ("regression_" + safe_name(s.name) + ".txt")).string();
    auto f = open_out(path);
    f << "model: " << s.name << " (" << feature_csv(s.features) << ")\n"
      << render_regression_table(fits.back());
    close_checked(f, path);
  }

  {
    const auto path = (dir / "cv_summary.tsv").string();
    auto f = open_out(path);
    f << "model\tfeatures\tpairs\tfolds\taccuracy\n";
    for (std::size_t i = 0; i < subsets.size(); ++i)
      f << subsets[i].name << '\t' << feature_csv(subsets[i].features) << '\t' << out.pairs.size()
        << '\t' << folds << '\t' << format_fixed(100.0 * out.tables[i].accuracy(), 2) << '\n';
    close_checked(f, path);
  }

  {
    const auto path = (dir / "comparisons.tsv").string();
    auto f = open_out(path);
    f << "baseline\tmodel\tbaseline_acc\tmodel_acc\tb\tc\tmcnemar_p\tlr_chi2\tlr_df\tlr_p\n";
    for (std::size_t i = 1; i < subsets.size(); ++i) {
      const auto m = mcnemar(out.tables[i].predicted, out.tables[0].predicted, out.tables[0].gold);
      f << subsets[0].name << '\t' << subsets[i].name << '\t'
        << format_fixed(100.0 * out.tables[0].accuracy(), 2) << '\t'
        << format_fixed(100.0 * out.tables[i].accuracy(), 2) << '\t' << m.b << '\t' << m.c << '\t'
        << format_double(m.p);
      try {
        const auto lr = likelihood_ratio_test(fits[i], fits[0]);
        f << '\t' << format_double(lr.statistic) << '\t' << lr.df << '\t' << format_double(lr.p);
      } catch (const std::invalid_argument&) {
        f << "\t-\t-\t-";
      }
      f << '\n';
    }
    close_checked(f, path);
  }
  return out;
}

PredictionFile read_prediction_file(const std::string& path) {
  auto in = open_in(path);
  PredictionFile pf;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty prediction file");
  auto header = split(line, '\t');
  if (header.size() < 4 || header[0] != "group_id" || header[1] != "variant_id" ||
      header[2] != "gold" || header[3] != "fold")
    throw ParseError(1, "unexpected prediction header");
  pf.columns.assign(header.begin() + 4, header.end());
  pf.predicted.resize(pf.columns.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != header.size()) throw ParseError(line_no, "wrong column count");
    try {
      pf.group_id.push_back(cols[0]);
      pf.variant_id.push_back(static_cast<int>(parse_int(cols[1])));
      pf.gold.push_back(static_cast<int>(parse_int(cols[2])));
      pf.fold.push_back(static_cast<int>(parse_int(cols[3])));
      for (std::size_t c = 0; c < pf.columns.size(); ++c)
        pf.predicted[c].push_back(static_cast<int>(parse_int(cols[4 + c])));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return pf;
}

namespace {

PredictionTable table_from_file(const PredictionFile& pf, const std::string& name) {
  auto it = std::find(pf.columns.begin(), pf.columns.end(), name);
  if (it == pf.columns.end()) throw std::runtime_error("prediction file has no model '" + name + "'");
  PredictionTable t;
  t.name = name;
  t.gold = pf.gold;
  t.fold = pf.fold;
  t.predicted = pf.predicted[static_cast<std::size_t>(it - pf.columns.begin())];
  return t;
}

void check_alignment(const std::vector<PairInstance>& pairs, const PredictionFile& pf) {
  if (pairs.size() != pf.gold.size())
    throw std::runtime_error("predictions and features disagree on the number of pairs");
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i].group_id != pf.group_id[i] || pairs[i].variant_id != pf.variant_id[i] ||
        pairs[i].label != pf.gold[i])
      throw std::runtime_error("predictions row " + std::to_string(i + 1) +
                               " does not match the feature table");
}

}  // namespace

void analyze_stage(const AnalyzeInputs& in, const std::string& out_dir) {
  const auto bank = parse_treebank_file(in.conll);
  VerbClassMap classes;
  if (!in.verb_classes.empty()) classes = VerbClassMap::load_file(in.verb_classes);

  std::map<std::string, std::set<std::string>> tags;
  std::map<std::string, std::vector<double>> density_by_class;
  std::vector<double> density_all;
  for (const auto& doc : bank.documents)
    for (const auto& s : doc.sentences) {
      tags[group_key(s.doc_id, s.sentence_id)] = analysis_tags(s, classes, in.conjunct_any_depth);
      if (auto d = case_density(s)) {
        density_by_class[classify_verb(s, classes)].push_back(*d);
        density_all.push_back(*d);
      }
    }

  auto pairs = make_pairs(load_features(in.features));
  attach_tags(pairs, tags);
  const auto pf = read_prediction_file(in.predictions);
  check_alignment(pairs, pf);
  const auto base = table_from_file(pf, in.baseline);
  const auto aug = table_from_file(pf, in.augmented);

  fs::create_directories(out_dir);
  const auto dir = fs::path(out_dir);
  const std::vector<std::pair<std::string, std::vector<std::string>>> families = {
      {"class", classes.labels()},
      {"frame", {"S-IO-DO", "S-DO", "S-IO", "NONE"}},
      {"conjunct", {"yes", "no"}},
  };
  for (const auto& [family, labels] : families) {
    const auto report = subset_report(pairs, base, aug, family, labels);
    const auto txt = (dir / ("subsets_" + family + ".txt")).string();
    auto f = open_out(txt);
    f << "baseline: " << in.baseline << ", augmented: " << in.augmented << '\n' << report.render();
    if (family == "class") f << "case density counts preverbal constituents only\n";
    close_checked(f, txt);
    const auto tsv = (dir / ("subsets_" + family + ".tsv")).string();
    auto g = open_out(tsv);
    report.write_tsv(g);
    close_checked(g, tsv);
  }

  {
    const auto path = (dir / "correlations.tsv").string();
    auto f = open_out(path);
    correlation_matrix(pairs, all_features()).write_tsv(f);
    close_checked(f, path);
  }
  {
    const auto path = (dir / "case_density.tsv").string();
    auto f = open_out(path);
    f << "class\tsentences\tmean_case_density\n";
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    for (const auto& [label, values] : density_by_class)
      f << label << '\t' << values.size() << '\t' << format_fixed(mean(values), 2) << '\n';
    f << "Full\t" << density_all.size() << '\t' << format_fixed(mean(density_all), 2) << '\n';
    close_checked(f, path);
  }
}

void export_stimuli_stage(const std::string& conll, const std::string& variants,
                          const std::string& predictions, const std::string& model_column,
                          std::size_t count, std::uint64_t seed, const std::string& out_pool) {
  const auto bank = parse_treebank_file(conll);
  std::map<std::string, SentenceRef> sentences;
  for (const auto& ref : all_sentences(bank.documents))
    sentences[group_key(ref.tree->doc_id, ref.tree->sentence_id)] = ref;
  const auto records = index_records(variants);
  const auto pf = read_prediction_file(predictions);
  const auto table = table_from_file(pf, model_column);

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pf.gold.size(); ++i) {
    auto it = sentences.find(pf.group_id[i]);
    if (it != sentences.end() && it->second.context) candidates.push_back(i);
  }
  SplitMix64 rng(derive_seed(seed, "stimuli"));
  for (std::size_t i = candidates.size(); i > 1; --i)
    std::swap(candidates[i - 1], candidates[rng.bounded(i)]);
  if (candidates.size() > count) candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());

  std::vector<StimulusItem> items;
  for (std::size_t i : candidates) {
    const auto& ref = sentences.at(pf.group_id[i]);
    const auto& recs = records.at(pf.group_id[i]);
    auto v = std::find_if(recs.begin(), recs.end(),
                          [&](const auto& r) { return r.variant_id == pf.variant_id[i]; });
    if (v == recs.end())
      throw std::runtime_error("no variant " + std::to_string(pf.variant_id[i]) + " for " +
                               pf.group_id[i]);
    StimulusItem item;
    item.item_id = static_cast<int>(items.size()) + 1;
    item.context = join(ref.context->forms(), " ");
    item.reference = join(ref.tree->forms(), " ");
    item.variant = v->text;
    item.model_chose_reference = table.predicted[i] == pf.gold[i];
    items.push_back(std::move(item));
  }
  auto out = open_out(out_pool);
  write_stimulus_pool(out, items);
  close_checked(out, out_pool);
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> kNames = {"ingest",   "train-ngram", "train-lstm",
                                                  "gen-variants", "features", "rank",
                                                  "analyze",  "export-stimuli"};
  return kNames;
}

namespace {

struct StagePlan {
  std::string name;
  std::vector<std::string> inputs;
  std::string params;
  std::vector<std::string> outputs;
  std::function<void()> action;
};

}  // namespace

std::vector<StageReport> run_pipeline(const PipelineConfig& config,
                                      const std::vector<std::string>& only, std::ostream* log) {
  for (const auto& name : only)
    if (std::find(stage_names().begin(), stage_names().end(), name) == stage_names().end())
      throw std::invalid_argument("unknown stage '" + name + "'");

  const fs::path out(config.output_dir);
  fs::create_directories(out / ".cache");
  auto at = [&](const std::string& file) { return (out / file).string(); };

  const std::string conll = at("treebank.conll");
  const std::string ngram = at("ngram.lm");
  const std::string lstm = at("lstm.bin");
  const std::string variants = at("variants.tsv");
  const std::string features = at("features.tsv");
  const std::string predictions = at("predictions.tsv");
  const std::string lm_source = config.lm_corpus.empty() ? conll : config.lm_corpus;

  auto lm_corpus = [&]() {
    return config.lm_corpus.empty() ? treebank_sentences(conll) : read_lm_corpus(config.lm_corpus);
  };

  std::vector<StagePlan> plan;
  plan.push_back({"ingest", {config.treebank}, "", {conll, at("ingestion.tsv")},
                  [&] { ingest_stage(config.treebank, conll, at("ingestion.tsv")); }});
  {
    std::ostringstream p;
    p << config.ngram.min_count << ' ' << config.ngram.gt_max << ' '
      << log_base_name(config.ngram.log_base);
    plan.push_back({"train-ngram", {lm_source}, p.str(), {ngram},
                    [&] { train_ngram_stage(lm_corpus(), config.ngram, ngram); }});
  }
  if (config.lstm_enabled) {
    std::ostringstream p;
    const auto& l = config.lstm;
    p << l.dims.embedding << ' ' << l.dims.hidden << ' ' << l.dims.layers << ' ' << l.epochs << ' '
      << format_double(l.base_lr) << ' ' << format_double(l.clip) << ' '
      << format_double(l.init_range) << ' ' << l.seed << ' ' << l.min_count << ' '
      << format_double(l.lr_decay) << ' ' << log_base_name(l.log_base);
    plan.push_back({"train-lstm", {lm_source}, p.str(), {lstm, at("lstm_epochs.tsv")},
                    [&] { train_lstm_stage(lm_corpus(), config.lstm, lstm, at("lstm_epochs.tsv")); }});
  }
  plan.push_back({"gen-variants", {conll},
                  std::to_string(config.variant_cap) + ' ' + std::to_string(config.seed) + ' ' +
                      (config.permissive_grammar ? "permissive" : "attested"),
                  {variants}, [&] {
                    gen_variants_stage(conll, config.variant_cap, config.seed,
                                       config.permissive_grammar, config.jobs, variants);
                  }});
  {
    std::vector<std::string> inputs{conll, variants, ngram};
    if (config.lstm_enabled) inputs.push_back(lstm);
    if (!config.external_features.empty()) inputs.push_back(config.external_features);
    const std::string params = format_double(config.cache_mu) + ' ' +
                               format_double(config.adaptation.learning_rate) + ' ' +
                               format_double(config.adaptation.grad_clip_norm);
    plan.push_back({"features", inputs, params, {features}, [&] {
                      FeatureStageInputs in;
                      in.conll = conll;
                      in.variants = variants;
                      in.ngram_model = ngram;
                      in.lstm_model = config.lstm_enabled ? lstm : "";
                      in.external = config.external_features;
                      in.cache_mu = config.cache_mu;
                      in.adaptation = config.adaptation;
                      in.jobs = config.jobs;
                      features_stage(in, features);
                    }});
  }
  {
    std::string params = std::to_string(config.folds) + ' ' + std::to_string(config.seed);
    std::vector<std::string> outputs{predictions, at("cv_summary.tsv"), at("comparisons.tsv")};
    for (const auto& s : config.subsets) {
      params += ' ' + s.name + '=' + feature_csv(s.features);
      outputs.push_back(at("regression_" + safe_name(s.name) + ".txt"));
    }
    plan.push_back({"rank", {features}, params, outputs, [&] {
                      rank_stage(features, config.folds, config.subsets, config.seed, config.jobs,
                                 config.output_dir);
                    }});
  }
  {
    std::vector<std::string> inputs{conll, features, predictions};
    if (!config.verb_classes.empty()) inputs.push_back(config.verb_classes);
    std::vector<std::string> outputs{at("correlations.tsv"), at("case_density.tsv")};
    for (const char* f : {"class", "frame", "conjunct"}) {
      outputs.push_back(at(std::string("subsets_") + f + ".txt"));
      outputs.push_back(at(std::string("subsets_") + f + ".tsv"));
    }
    plan.push_back({"analyze", inputs,
                    config.baseline + ' ' + config.augmented + ' ' +
                        (config.conjunct_any_depth ? "any" : "root"),
                    outputs, [&] {
                      analyze_stage({conll, features, predictions, config.verb_classes,
                                     config.baseline, config.augmented, config.conjunct_any_depth},
                                    config.output_dir);
                    }});
  }
  plan.push_back({"export-stimuli", {conll, variants, predictions},
                  config.augmented + ' ' + std::to_string(config.stimuli_count) + ' ' +
                      std::to_string(config.seed),
                  {at("stimuli.tsv")}, [&] {
                    export_stimuli_stage(conll, variants, predictions, config.augmented,
                                         config.stimuli_count, config.seed, at("stimuli.tsv"));
                  }});

  nlohmann::json manifest;
  manifest["tool"] = "orderlab";
  manifest["version"] = kToolVersion;
  manifest["seed"] = config.seed;
  manifest["log_base"] = log_base_name(config.log_base);
  manifest["jobs"] = config.jobs;
  manifest["config_sha256"] = sha256_hex(config.canonical());
  manifest["inputs"] = nlohmann::json::object();
  for (const auto& p : {config.treebank, config.lm_corpus, config.verb_classes, config.external_features})
    if (!p.empty() && fs::exists(p)) manifest["inputs"][p] = sha256_file(p);
  manifest["stages"] = nlohmann::json::array();

  std::vector<StageReport> reports;
  for (const auto& stage : plan) {
    if (!only.empty() && std::find(only.begin(), only.end(), stage.name) == only.end()) continue;
    StageReport r;
    r.name = stage.name;
    const auto start = std::chrono::steady_clock::now();
    std::string key;
    try {
      std::string material = stage.name + '\n' + kToolVersion + '\n' + stage.params + '\n';
      for (const auto& input : stage.inputs) {
        if (!fs::exists(input)) throw std::runtime_error("missing input " + input);
        material += fs::path(input).filename().string() + ' ' + sha256_file(input) + '\n';
      }
      key = sha256_hex(material);
      const auto key_file = (out / ".cache" / (stage.name + ".key")).string();
      std::string previous;
      if (std::ifstream kin(key_file); kin) std::getline(kin, previous);
      const bool outputs_present = std::all_of(stage.outputs.begin(), stage.outputs.end(),
                                               [](const auto& p) { return fs::exists(p); });
      if (previous == key && outputs_present) {
        r.cached = true;
      } else {
        fs::remove(key_file);
        stage.action();
        auto kout = open_out(key_file);
        kout << key << '\n';
        close_checked(kout, key_file);
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage.name, e.what());
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log)
      *log << "[" << stage.name << "] " << (r.cached ? "cached" : "done") << " ("
           << format_fixed(r.seconds, 2) << "s)\n";
    nlohmann::json entry{{"name", stage.name},
                         {"status", r.cached ? "cached" : "ran"},
                         {"seconds", r.seconds},
                         {"key", key}};
    nlohmann::json outs = nlohmann::json::object();
    for (const auto& o : stage.outputs) outs[fs::path(o).filename().string()] = sha256_file(o);
    entry["outputs"] = outs;
    manifest["stages"].push_back(entry);
    reports.push_back(r);
  }

  auto mout = open_out(at("manifest.json"));
  mout << manifest.dump(2) << '\n';
  close_checked(mout, at("manifest.json"));
  return reports;
}

}  // namespace orderlab
