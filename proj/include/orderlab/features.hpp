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

// Sentence-level predictors for reference/variant choice.

#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "orderlab/corpus.hpp"
#include "orderlab/neural_lm.hpp"
#include "orderlab/ngram_lm.hpp"
#include "orderlab/variantgen.hpp"

namespace orderlab {

inline constexpr std::size_t kFeatureCount = 7;

// Column order of the regression equation and of feature tables.
enum class Feature : std::size_t {
  DependencyLength = 0,
  TrigramSurprisal,
  PcfgSurprisal,
  IsScore,
  LexicalRepetitionSurprisal,
  LstmSurprisal,
  AdaptiveLstmSurprisal,
};

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "dep_length",    "trigram_surp", "pcfg_surp",         "is_score",
    "lex_rept_surp", "lstm_surp",    "adaptive_lstm_surp"};

// Display names used in rendered regression tables.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureLabels = {
    "dependency length", "trigram surprisal", "pcfg surprisal",         "IS score",
    "lex-rept surprisal", "lstm surprisal",   "adaptive lstm surprisal"};

std::optional<Feature> feature_from_name(std::string_view name);

struct FeatureVector {
  double trigram_surp = 0.0;
  double pcfg_surp = 0.0;
  double lex_rept_surp = 0.0;
  double lstm_surp = 0.0;
  double adaptive_lstm_surp = 0.0;
  int dep_length = 0;
  int is_score = 0;

  double operator[](Feature f) const;
  std::array<double, kFeatureCount> values() const;
  bool operator==(const FeatureVector&) const = default;
};

// Sum over non-root tokens of the number of words between token and head.
int dependency_length(const DependencyTree& tree);

enum class InfoStatus { Given, New };

// How tagged constituents combine into one score. LeadingPair scores the two
// leftmost tagged constituents (Given-New = +1, New-Given = -1, else 0).
// PairwiseSignSum takes the sign of the summed scores of every ordered pair.
enum class IsAggregation { LeadingPair, PairwiseSignSum };

struct IsConfig {
  std::set<std::string> subject_object_relations{"k1", "k2", "k4"};
  std::set<std::string> content_pos{"NOUN", "PROPN", "VERB", "ADJ", "ADV"};
  std::string pronoun_pos = "PRON";
  IsAggregation aggregation = IsAggregation::LeadingPair;
};

struct TaggedConstituent {
  int head = 0;
  Span span;
  InfoStatus status = InfoStatus::New;
};

// Subject/object root dependents in linear order with their Given/New tag.
std::vector<TaggedConstituent> tag_information_status(const DependencyTree& target,
                                                      const DependencyTree* context,
                                                      const IsConfig& config = {});

int is_score(const DependencyTree& target, const DependencyTree* context,
             const IsConfig& config = {});

// Externally computed per-row values (e.g. PCFG surprisal).
struct ExternalColumn {
  std::unordered_map<std::string, double> values;

  // Fraction of `row_ids` present in the column.
  double coverage(const std::vector<std::string>& row_ids) const;
};

// Tab-separated (row_id, value) lines; '#' lines are comments.
ExternalColumn ingest_external_features(std::istream& in);
ExternalColumn ingest_external_features_file(const std::string& path);

struct FeatureRow {
  std::string doc_id;
  std::string sent_id;
  int variant_id = 0;  // 0 = reference
  FeatureVector features;

  // Key used by external columns: "<sent_id>:<variant_id>".
  std::string row_id() const;
};

struct Scorers {
  const TrigramLm* trigram = nullptr;
  double cache_mu = CacheState::kDefaultMu;
  const LstmLm* lstm = nullptr;
  AdaptationConfig adaptation;
};

struct AssemblyReport {
  bool pcfg_column_absent = true;
  AdaptationTrace adaptation;
};

// One row per reference/variant; every row of a set is conditioned on the
// same context. Throws if `external` lacks any row id.
std::vector<FeatureRow> assemble_features(const VariantSet& set, const Scorers& scorers,
                                          const IsConfig& is_config = {},
                                          const ExternalColumn* external = nullptr,
                                          AssemblyReport* report = nullptr);

// "#orderlab-features<TAB>1" then a header and one row per line.
void write_feature_table(std::ostream& out, const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> read_feature_table(std::istream& in);

}  // namespace orderlab
