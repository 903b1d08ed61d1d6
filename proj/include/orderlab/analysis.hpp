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

// Subsets of the data (verb class, argument frame, conjunct verbs), per-subset
// accuracy tables and correlations.

#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "orderlab/corpus.hpp"
#include "orderlab/features.hpp"
#include "orderlab/ranker.hpp"

namespace orderlab {

class VerbClassMap {
 public:
  static constexpr const char* kDefaultClass = "OTHERS";

  void set(const std::string& lemma, const std::string& label);
  // Unmapped lemmas fall back to OTHERS.
  const std::string& classify(const std::string& lemma) const;
  std::size_t size() const { return classes_.size(); }
  std::vector<std::string> labels() const;

  // "lemma<TAB>CLASS" lines; '#' starts a comment.
  static VerbClassMap load(std::istream& in);
  static VerbClassMap load_file(const std::string& path);

 private:
  std::map<std::string, std::string> classes_;
  std::string default_ = kDefaultClass;
};

std::string classify_verb(const DependencyTree& tree, const VerbClassMap& map);

enum class ArgumentFrame { SubjectIndirectDirect, SubjectDirect, SubjectIndirect, None };

std::string frame_name(ArgumentFrame frame);
ArgumentFrame argument_frame(const DependencyTree& tree);

// True iff a root dependent (any token when `any_depth`) is attached by pof.
bool is_conjunct_verb(const DependencyTree& tree, bool any_depth = false);

// lwg_psp tokens inside preverbal constituents per constituent; nullopt
// when the tree has none.
std::optional<double> case_density(const DependencyTree& tree);

// "class=GIVE", "frame=S-IO-DO", "conjunct=yes" style tags.
std::set<std::string> analysis_tags(const DependencyTree& tree, const VerbClassMap& map,
                                    bool conjunct_any_depth = false);

// Copies tags onto pairs by group id (see group_key).
void attach_tags(std::vector<PairInstance>& pairs,
                 const std::map<std::string, std::set<std::string>>& tags_by_group);

struct SubsetRow {
  std::string label;
  std::size_t pairs = 0;
  std::size_t sentences = 0;
  double pair_frequency = 0.0;      // percent of all pairs
  double sentence_frequency = 0.0;  // percent of all reference sentences
  double baseline_accuracy = 0.0;   // percent
  double augmented_accuracy = 0.0;  // percent
  std::optional<McNemarResult> test;
  bool significant = false;         // p < 0.05
};

struct SubsetReport {
  std::string family;
  std::vector<SubsetRow> rows;
  SubsetRow total;

  std::string render() const;
  void write_tsv(std::ostream& out) const;
};

// Rows for every `family=label` tag; `labels` fixes row order and adds empty
// rows (n = 0) for labels with no pairs. With no labels, observed ones are
// used in sorted order.
SubsetReport subset_report(const std::vector<PairInstance>& pairs, const PredictionTable& baseline,
                           const PredictionTable& augmented, const std::string& family,
                           const std::vector<std::string>& labels = {});

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

struct CorrelationMatrix {
  std::vector<Feature> features;
  std::vector<std::vector<std::optional<double>>> r;

  // Square tab-separated matrix, "NA" for undefined cells.
  void write_tsv(std::ostream& out) const;
};

// Correlations between feature deltas across pairs.
CorrelationMatrix correlation_matrix(const std::vector<PairInstance>& pairs,
                                     const std::vector<Feature>& features);

}  // namespace orderlab
