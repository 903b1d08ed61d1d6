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

// Pairwise ranking: reference/variant pairs, logistic regression by IRLS,
// grouped cross-validation and McNemar's test.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "orderlab/features.hpp"

namespace orderlab {

struct PairInstance {
  std::array<double, kFeatureCount> delta{};  // first minus second
  int label = 0;                              // 1 iff first is the reference
  std::string group_id;                       // doc_id/sent_id of the reference
  int variant_id = 0;
  std::set<std::string> subset_tags;

  PairInstance flipped() const;
};

// Rows must hold each reference (variant_id 0) with its variants. Variants
// are visited in variant_id order; even 0-based index gives (reference,
// variant) labelled 1, odd gives (variant, reference) labelled 0.
std::vector<PairInstance> make_pairs(const std::vector<FeatureRow>& rows);

std::string group_key(const std::string& doc_id, const std::string& sent_id);

struct FitConfig {
  std::size_t max_iter = 100;
  double tolerance = 1e-8;      // on max |score|
  double divergence = 1e3;      // |beta| beyond this is treated as separation
  bool standardize = false;     // z-score columns (diagnostics only)
};

class SingularDesign : public std::runtime_error {
 public:
  SingularDesign(std::vector<std::string> columns);
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::vector<std::string> columns_;
};

struct RegressionReport {
  std::vector<Feature> features;
  std::vector<std::string> names;  // "(intercept)" first, then features
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::VectorXd t;
  double log_likelihood = 0.0;
  std::size_t n = 0;
  std::size_t iterations = 0;
  bool converged = false;
  bool separation = false;
  double max_score = 0.0;
  // Identically zero columns: beta 0, se infinite, t 0.
  std::vector<std::string> zero_columns;
  // Column centres/scales when standardized (empty otherwise).
  Eigen::VectorXd centre;
  Eigen::VectorXd scale;

  double probability(const std::array<double, kFeatureCount>& delta) const;
};

RegressionReport fit_logistic(const std::vector<PairInstance>& pairs,
                              const std::vector<Feature>& features, const FitConfig& config = {});

// Gradient of the log-likelihood at `report.beta` (unstandardized fits).
Eigen::VectorXd score_vector(const std::vector<PairInstance>& pairs, const RegressionReport& report);

std::vector<Feature> all_features();
std::vector<Feature> parse_feature_list(const std::string& comma_separated);
std::string feature_list_name(const std::vector<Feature>& features);

struct PredictionTable {
  std::string name;
  std::vector<Feature> features;
  std::vector<int> gold;
  std::vector<int> predicted;
  std::vector<double> probability;
  std::vector<int> fold;

  double accuracy() const;
};

struct FoldAssignment {
  std::vector<std::string> groups;  // order of first appearance
  std::vector<int> group_fold;
  std::vector<int> pair_fold;
};

// Groups are shuffled with the seed and dealt round-robin into k folds.
FoldAssignment assign_folds(const std::vector<PairInstance>& pairs, std::size_t k,
                            std::uint64_t seed);

std::vector<PredictionTable> cross_validate(const std::vector<PairInstance>& pairs, std::size_t k,
                                            const std::vector<std::vector<Feature>>& subsets,
                                            std::uint64_t seed, const FitConfig& config = {},
                                            std::size_t jobs = 1);

struct McNemarResult {
  std::size_t b = 0;  // A right, B wrong
  std::size_t c = 0;  // A wrong, B right
  double statistic = 0.0;
  double p = 1.0;
  bool exact = true;
};

inline constexpr std::size_t kMcNemarExactBelow = 50;

double mcnemar_exact_p(std::size_t b, std::size_t c);
// Continuity-corrected statistic max(0, |b-c|-1)^2 / (b+c), 1 d.f.
double mcnemar_chi2_statistic(std::size_t b, std::size_t c);
double mcnemar_chi2_p(std::size_t b, std::size_t c);
McNemarResult mcnemar_counts(std::size_t b, std::size_t c);
McNemarResult mcnemar(const std::vector<int>& a, const std::vector<int>& b,
                      const std::vector<int>& gold);

double chi2_upper_tail(double statistic, double df);

struct LikelihoodRatio {
  double statistic = 0.0;
  std::size_t df = 0;
  double p = 1.0;
};

LikelihoodRatio likelihood_ratio_test(const RegressionReport& full, const RegressionReport& reduced);

// Predictor / beta / se / t table; '*' marks |t| > 2.
std::string render_regression_table(const RegressionReport& report);
void write_prediction_tables(std::ostream& out, const std::vector<PairInstance>& pairs,
                             const std::vector<PredictionTable>& tables);

}  // namespace orderlab
