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

// Experiment stages and the memoized end-to-end run.
//
// Output directory layout:
//   treebank.conll, ingestion.tsv        ingest
//   ngram.lm                             train-ngram
//   lstm.bin, lstm_epochs.tsv            train-lstm
//   variants.tsv                         gen-variants
//   features.tsv                         features
//   predictions.tsv, regression_*.txt,
//   cv_summary.tsv, comparisons.tsv      rank
//   subsets_*.txt/.tsv, correlations.tsv,
//   case_density.tsv                     analyze
//   stimuli.tsv                          export-stimuli
//   manifest.json, .cache/<stage>.key

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "orderlab/features.hpp"
#include "orderlab/lm_common.hpp"
#include "orderlab/neural_lm.hpp"
#include "orderlab/ngram_lm.hpp"
#include "orderlab/ranker.hpp"

namespace orderlab {

inline constexpr const char* kToolVersion = "0.1.0";

struct FeatureSubset {
  std::string name;
  std::vector<Feature> features;
};

struct PipelineConfig {
  std::string treebank;
  std::string lm_corpus;  // one whitespace-tokenized sentence per line; empty: treebank forms
  std::string output_dir = "out";
  std::uint64_t seed = 13;
  LogBase log_base = LogBase::Two;
  std::size_t jobs = 1;

  NgramOptions ngram;
  double cache_mu = CacheState::kDefaultMu;

  bool lstm_enabled = true;
  LstmTrainConfig lstm;
  AdaptationConfig adaptation;

  std::size_t variant_cap = 100;
  bool permissive_grammar = false;

  std::string external_features;  // optional (row_id, value) file for pcfg_surp

  std::size_t folds = 10;
  std::vector<FeatureSubset> subsets;
  std::string baseline;   // subset name
  std::string augmented;  // subset name

  std::string verb_classes;
  bool conjunct_any_depth = false;

  std::size_t stimuli_count = 167;

  // Stable key=value rendering of every setting that affects outputs.
  std::string canonical() const;
};

// INI file. Relative paths are resolved against the config file's directory.
PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config(std::istream& in, const std::string& base_dir);

// Default subsets: the full model and the full model without the adaptive LSTM.
std::vector<FeatureSubset> default_subsets(bool with_lstm);

class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage " + stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Individual stages (also used by CLI subcommands).
void ingest_stage(const std::string& treebank, const std::string& out_conll,
                  const std::string& out_report);
std::vector<Sentence> read_lm_corpus(const std::string& path);
std::vector<Sentence> treebank_sentences(const std::string& conll);
void train_ngram_stage(const std::vector<Sentence>& corpus, const NgramOptions& options,
                       const std::string& out_model);
void train_lstm_stage(const std::vector<Sentence>& corpus, const LstmTrainConfig& config,
                      const std::string& out_model, const std::string& out_log);
void gen_variants_stage(const std::string& conll, std::size_t cap, std::uint64_t seed,
                        bool permissive, std::size_t jobs, const std::string& out_variants);

struct FeatureStageInputs {
  std::string conll;
  std::string variants;
  std::string ngram_model;
  std::string lstm_model;  // empty: LSTM columns stay 0
  std::string external;    // empty: pcfg column absent
  double cache_mu = CacheState::kDefaultMu;
  AdaptationConfig adaptation;
  std::size_t jobs = 1;
};
void features_stage(const FeatureStageInputs& in, const std::string& out_features);

struct RankOutputs {
  std::vector<PairInstance> pairs;
  std::vector<PredictionTable> tables;
};
RankOutputs rank_stage(const std::string& features, std::size_t folds,
                       const std::vector<FeatureSubset>& subsets, std::uint64_t seed,
                       std::size_t jobs, const std::string& out_dir);

struct AnalyzeInputs {
  std::string conll;
  std::string features;
  std::string predictions;
  std::string verb_classes;  // empty: every verb is OTHERS
  std::string baseline;
  std::string augmented;
  bool conjunct_any_depth = false;
};
void analyze_stage(const AnalyzeInputs& in, const std::string& out_dir);

void export_stimuli_stage(const std::string& conll, const std::string& variants,
                          const std::string& predictions, const std::string& model_column,
                          std::size_t count, std::uint64_t seed, const std::string& out_pool);

// Prediction table file written by rank_stage.
struct PredictionFile {
  std::vector<std::string> columns;  // model names
  std::vector<std::string> group_id;
  std::vector<int> variant_id;
  std::vector<int> gold;
  std::vector<int> fold;
  std::vector<std::vector<int>> predicted;  // [column][row]
};
PredictionFile read_prediction_file(const std::string& path);

struct StageReport {
  std::string name;
  bool cached = false;
  double seconds = 0.0;
};

// Runs the stages in dependency order; `only` restricts to named stages
// (their upstream outputs must already exist). Progress lines go to `log`.
std::vector<StageReport> run_pipeline(const PipelineConfig& config,
                                      const std::vector<std::string>& only = {},
                                      std::ostream* log = nullptr);

const std::vector<std::string>& stage_names();

}  // namespace orderlab
