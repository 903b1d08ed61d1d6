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

#include "orderlab/ranker.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "orderlab/common.hpp"

namespace orderlab {

PairInstance PairInstance::flipped() const {
  PairInstance out = *this;
  for (auto& d : out.delta) d = -d;
  out.label = 1 - label;
  return out;
}

std::string group_key(const std::string& doc_id, const std::string& sent_id) {
  return doc_id + "/" + sent_id;
}

std::vector<PairInstance> make_pairs(const std::vector<FeatureRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const FeatureRow*>> groups;
  for (const auto& row : rows) {
    const auto key = group_key(row.doc_id, row.sent_id);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&row);
  }

  std::vector<PairInstance> pairs;
  for (const auto& key : order) {
    auto& members = groups[key];
    std::sort(members.begin(), members.end(),
              [](const FeatureRow* a, const FeatureRow* b) { return a->variant_id < b->variant_id; });
    if (members.front()->variant_id != 0)
      throw std::invalid_argument("group " + key + " has no reference row");
    const auto ref = members.front()->features.values();
    for (std::size_t k = 1; k < members.size(); ++k) {
      if (members[k]->variant_id == members[k - 1]->variant_id)
        throw std::invalid_argument("group " + key + " repeats variant " +
                                    std::to_string(members[k]->variant_id));
      const auto var = members[k]->features.values();
      PairInstance p;
      p.group_id = key;
      p.variant_id = members[k]->variant_id;
      p.label = (k - 1) % 2 == 0 ? 1 : 0;
      for (std::size_t j = 0; j < kFeatureCount; ++j)
        p.delta[j] = p.label == 1 ? ref[j] - var[j] : var[j] - ref[j];
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

namespace {

std::string column_name(std::size_t col, const std::vector<Feature>& features) {
  if (col == 0) return "(intercept)";
  return std::string(kFeatureNames[static_cast<std::size_t>(features[col - 1])]);
}

double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double softplus(double eta) {
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

Eigen::MatrixXd raw_design(const std::vector<PairInstance>& pairs,
                           const std::vector<Feature>& features) {
  Eigen::MatrixXd x(pairs.size(), features.size() + 1);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    x(i, 0) = 1.0;
    for (std::size_t j = 0; j < features.size(); ++j)
      x(i, j + 1) = pairs[i].delta[static_cast<std::size_t>(features[j])];
  }
  return x;
}

void apply_scaling(Eigen::MatrixXd& x, const Eigen::VectorXd& centre, const Eigen::VectorXd& scale) {
  if (centre.size() == 0) return;
  for (Eigen::Index j = 1; j < x.cols(); ++j)
    x.col(j) = (x.col(j).array() - centre(j)) / scale(j);
}

Eigen::Index matrix_rank(const Eigen::MatrixXd& x) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  return qr.rank();
}

}  // namespace

SingularDesign::SingularDesign(std::vector<std::string> columns)
    : std::runtime_error("singular design: collinear columns " + join(columns, ", ")),
      columns_(std::move(columns)) {}

double RegressionReport::probability(const std::array<double, kFeatureCount>& delta) const {
  double eta = beta(0);
  for (std::size_t j = 0; j < features.size(); ++j) {
    double x = delta[static_cast<std::size_t>(features[j])];
    if (centre.size() != 0) x = (x - centre(j + 1)) / scale(j + 1);
    eta += beta(j + 1) * x;
  }
  return sigmoid(eta);
}

RegressionReport fit_logistic(const std::vector<PairInstance>& pairs,
                              const std::vector<Feature>& features, const FitConfig& config) {
  if (pairs.empty()) throw std::invalid_argument("fit_logistic needs at least one pair");
  const std::size_t p = features.size() + 1;
  RegressionReport report;
  report.features = features;
  for (std::size_t j = 0; j < p; ++j) report.names.push_back(column_name(j, features));
  report.n = pairs.size();

  Eigen::MatrixXd x = raw_design(pairs, features);
  Eigen::VectorXd y(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) y(i) = pairs[i].label;

  std::vector<Eigen::Index> active{0};
  for (Eigen::Index j = 1; j < x.cols(); ++j) {
    if (x.col(j).cwiseAbs().maxCoeff() == 0.0)
      report.zero_columns.push_back(report.names[j]);
    else
      active.push_back(j);
  }

  if (config.standardize) {
    report.centre = Eigen::VectorXd::Zero(p);
    report.scale = Eigen::VectorXd::Ones(p);
    for (Eigen::Index j : active) {
      if (j == 0) continue;
      const double mean = x.col(j).mean();
      const double sd = std::sqrt((x.col(j).array() - mean).square().mean());
      report.centre(j) = mean;
      report.scale(j) = sd > 0 ? sd : 1.0;
    }
    apply_scaling(x, report.centre, report.scale);
  }

  Eigen::MatrixXd xa(x.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) xa.col(k) = x.col(active[k]);

  const Eigen::Index rank = matrix_rank(xa);
  if (rank < xa.cols()) {
    std::vector<std::string> culprits;
    for (Eigen::Index k = 0; k < xa.cols(); ++k) {
      Eigen::MatrixXd reduced(xa.rows(), xa.cols() - 1);
      for (Eigen::Index m = 0, c = 0; m < xa.cols(); ++m)
        if (m != k) reduced.col(c++) = xa.col(m);
      if (matrix_rank(reduced) == rank) culprits.push_back(report.names[active[k]]);
    }
    throw SingularDesign(culprits);
  }

  Eigen::VectorXd b = Eigen::VectorXd::Zero(xa.cols());
  Eigen::VectorXd mu(xa.rows());
  auto refresh = [&]() {
    const Eigen::VectorXd eta = xa * b;
    for (Eigen::Index i = 0; i < eta.size(); ++i) mu(i) = sigmoid(eta(i));
  };
  auto information = [&]() {
    const Eigen::VectorXd w = (mu.array() * (1.0 - mu.array())).matrix();
    return Eigen::MatrixXd(xa.transpose() * w.asDiagonal() * xa);
  };

  for (std::size_t iter = 0; iter < config.max_iter; ++iter) {
    refresh();
    const Eigen::VectorXd score = xa.transpose() * (y - mu);
    report.max_score = score.cwiseAbs().maxCoeff();
    if (report.max_score < config.tolerance) {
      report.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(information());
    const Eigen::VectorXd step = ldlt.solve(score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      report.separation = true;
      break;
    }
    b += step;
    ++report.iterations;
    if (b.cwiseAbs().maxCoeff() > config.divergence) {
      report.separation = true;
      break;
    }
  }
  if (!report.converged) {
    refresh();
    report.max_score = (xa.transpose() * (y - mu)).cwiseAbs().maxCoeff();
    if (report.max_score < config.tolerance)
      report.converged = true;
    else
      report.separation = true;
  }

  const Eigen::MatrixXd info = information();
  Eigen::VectorXd var = info.ldlt().solve(Eigen::MatrixXd::Identity(info.rows(), info.cols())).diagonal();

  report.beta = Eigen::VectorXd::Zero(p);
  report.se = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < active.size(); ++k) {
    report.beta(active[k]) = b(k);
    report.se(active[k]) = var(k) > 0 ? std::sqrt(var(k)) : std::numeric_limits<double>::quiet_NaN();
  }
  report.t = Eigen::VectorXd::Zero(p);
  for (std::size_t j = 0; j < p; ++j)
    report.t(j) = std::isinf(report.se(j)) ? 0.0 : report.beta(j) / report.se(j);

  const Eigen::VectorXd eta = xa * b;
  double ll = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - softplus(eta(i));
  report.log_likelihood = ll;
  return report;
}

Eigen::VectorXd score_vector(const std::vector<PairInstance>& pairs, const RegressionReport& report) {
  Eigen::MatrixXd x = raw_design(pairs, report.features);
  apply_scaling(x, report.centre, report.scale);
  Eigen::VectorXd r(pairs.size());
  const Eigen::VectorXd eta = x * report.beta;
  for (std::size_t i = 0; i < pairs.size(); ++i) r(i) = pairs[i].label - sigmoid(eta(i));
  return x.transpose() * r;
}

std::vector<Feature> all_features() {
  std::vector<Feature> out;
  for (std::size_t i = 0; i < kFeatureCount; ++i) out.push_back(static_cast<Feature>(i));
  return out;
}

std::vector<Feature> parse_feature_list(const std::string& comma_separated) {
  if (trim(comma_separated) == "all") return all_features();
  std::vector<Feature> out;
  for (const auto& part : split(comma_separated, ',')) {
    const auto name = trim(part);
    if (name.empty()) continue;
    const auto f = feature_from_name(name);
    if (!f) throw std::invalid_argument("unknown feature '" + std::string(name) + "'");
    if (std::find(out.begin(), out.end(), *f) != out.end())
      throw std::invalid_argument("feature listed twice: " + std::string(name));
    out.push_back(*f);
  }
  if (out.empty()) throw std::invalid_argument("empty feature list");
  return out;
}

std::string feature_list_name(const std::vector<Feature>& features) {
  std::vector<std::string> names;
  for (auto f : features) names.emplace_back(kFeatureNames[static_cast<std::size_t>(f)]);
  return join(names, "+");
}

double PredictionTable::accuracy() const {
  if (gold.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predicted[i] == gold[i];
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

FoldAssignment assign_folds(const std::vector<PairInstance>& pairs, std::size_t k,
                            std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("cross-validation needs k >= 2");
  FoldAssignment out;
  std::map<std::string, std::size_t> index;
  for (const auto& p : pairs)
    if (index.try_emplace(p.group_id, out.groups.size()).second) out.groups.push_back(p.group_id);
  if (out.groups.size() < k)
    throw std::invalid_argument("cross-validation needs at least k=" + std::to_string(k) +
                                " groups, got " + std::to_string(out.groups.size()));

  std::vector<std::size_t> perm(out.groups.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  SplitMix64 rng(derive_seed(seed, "cv-folds"));
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.bounded(i)]);

  out.group_fold.assign(out.groups.size(), 0);
  for (std::size_t pos = 0; pos < perm.size(); ++pos)
    out.group_fold[perm[pos]] = static_cast<int>(pos % k);
  for (const auto& p : pairs) out.pair_fold.push_back(out.group_fold[index.at(p.group_id)]);
  return out;
}

std::vector<PredictionTable> cross_validate(const std::vector<PairInstance>& pairs, std::size_t k,
                                            const std::vector<std::vector<Feature>>& subsets,
                                            std::uint64_t seed, const FitConfig& config,
                                            std::size_t jobs) {
  const FoldAssignment folds = assign_folds(pairs, k, seed);
  std::vector<PredictionTable> tables(subsets.size());
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    auto& t = tables[s];
    t.name = feature_list_name(subsets[s]);
    t.features = subsets[s];
    t.fold = folds.pair_fold;
    t.predicted.assign(pairs.size(), 0);
    t.probability.assign(pairs.size(), 0.0);
    for (const auto& p : pairs) t.gold.push_back(p.label);
  }

  parallel_for(subsets.size() * k, jobs, [&](std::size_t task) {
    const std::size_t s = task / k;
    const int fold = static_cast<int>(task % k);
    std::vector<PairInstance> train;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (folds.pair_fold[i] != fold) train.push_back(pairs[i]);
    const auto model = fit_logistic(train, subsets[s], config);
    auto& t = tables[s];
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (folds.pair_fold[i] != fold) continue;
      const double prob = model.probability(pairs[i].delta);
      t.probability[i] = prob;
      t.predicted[i] = prob > 0.5 ? 1 : 0;
    }
  });
  return tables;
}

double mcnemar_exact_p(std::size_t b, std::size_t c) {
  const std::size_t n = b + c;
  if (n == 0) return 1.0;
  const std::size_t m = std::min(b, c);
  double tail = 0.0;
  if (n <= 62) {
    unsigned __int128 coeff = 1, sum = 0;
    for (std::size_t i = 0; i <= m; ++i) {
      sum += coeff;
      coeff = coeff * (n - i) / (i + 1);
    }
    tail = std::ldexp(static_cast<double>(sum), -static_cast<int>(n));
  } else {
    boost::math::binomial_distribution<double> dist(static_cast<double>(n), 0.5);
    tail = boost::math::cdf(dist, static_cast<double>(m));
  }
  return std::min(1.0, 2.0 * tail);
}

double mcnemar_chi2_statistic(std::size_t b, std::size_t c) {
  const std::size_t n = b + c;
  if (n == 0) return 0.0;
  const double diff = std::max(0.0, std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0);
  return diff * diff / static_cast<double>(n);
}

double chi2_upper_tail(double statistic, double df) {
  if (df <= 0) return 1.0;
  if (statistic <= 0) return 1.0;
  return boost::math::gamma_q(df / 2.0, statistic / 2.0);
}

double mcnemar_chi2_p(std::size_t b, std::size_t c) {
  return chi2_upper_tail(mcnemar_chi2_statistic(b, c), 1.0);
}

McNemarResult mcnemar_counts(std::size_t b, std::size_t c) {
  McNemarResult r;
  r.b = b;
  r.c = c;
  if (b + c < kMcNemarExactBelow) {
    r.exact = true;
    r.p = mcnemar_exact_p(b, c);
    r.statistic = static_cast<double>(std::min(b, c));
  } else {
    r.exact = false;
    r.statistic = mcnemar_chi2_statistic(b, c);
    r.p = chi2_upper_tail(r.statistic, 1.0);
  }
  return r;
}

McNemarResult mcnemar(const std::vector<int>& a, const std::vector<int>& b,
                      const std::vector<int>& gold) {
  if (a.size() != gold.size() || b.size() != gold.size())
    throw std::invalid_argument("mcnemar: prediction vectors differ in length");
  std::size_t nb = 0, nc = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool ra = a[i] == gold[i];
    const bool rb = b[i] == gold[i];
    nb += ra && !rb;
    nc += !ra && rb;
  }
  return mcnemar_counts(nb, nc);
}

LikelihoodRatio likelihood_ratio_test(const RegressionReport& full, const RegressionReport& reduced) {
  for (auto f : reduced.features)
    if (std::find(full.features.begin(), full.features.end(), f) == full.features.end())
      throw std::invalid_argument("likelihood ratio test: '" +
                                  std::string(kFeatureNames[static_cast<std::size_t>(f)]) +
                                  "' is not in the full model");
  if (full.n != reduced.n)
    throw std::invalid_argument("likelihood ratio test: models were fit on different pairs");
  LikelihoodRatio out;
  out.df = full.features.size() - reduced.features.size();
  out.statistic = std::max(0.0, 2.0 * (full.log_likelihood - reduced.log_likelihood));
  out.p = chi2_upper_tail(out.statistic, static_cast<double>(out.df));
  return out;
}

std::string render_regression_table(const RegressionReport& report) {
  std::vector<std::string> labels;
  for (std::size_t j = 0; j < report.names.size(); ++j)
    labels.push_back(j == 0 ? std::string("intercept")
                            : std::string(kFeatureLabels[static_cast<std::size_t>(
                                  report.features[j - 1])]));
  std::size_t width = std::string("Predictor").size();
  for (const auto& l : labels) width = std::max(width, l.size());

  auto cell = [](const std::string& s, std::size_t w) {
    return std::string(w > s.size() ? w - s.size() : 0, ' ') + s;
  };
  auto num = [](double v) {
    if (std::isinf(v)) return std::string("inf");
    if (std::isnan(v)) return std::string("nan");
    return format_fixed(v, 2);
  };

  std::ostringstream out;
  out << "Predictor" << std::string(width - 9, ' ') << cell("beta", 10) << cell("se", 10)
      << cell("t", 10) << '\n';
  for (std::size_t j = 0; j < labels.size(); ++j) {
    out << labels[j] << std::string(width - labels[j].size(), ' ') << cell(num(report.beta(j)), 10)
        << cell(num(report.se(j)), 10) << cell(num(report.t(j)), 10);
    if (std::abs(report.t(j)) > 2) out << " *";
    out << '\n';
  }
  out << "n = " << report.n << ", log-likelihood = " << format_fixed(report.log_likelihood, 3);
  if (report.separation) out << ", separation detected";
  if (!report.zero_columns.empty()) out << ", constant-zero: " << join(report.zero_columns, ",");
  out << '\n';
  return out.str();
}

void write_prediction_tables(std::ostream& out, const std::vector<PairInstance>& pairs,
                             const std::vector<PredictionTable>& tables) {
  out << "group_id\tvariant_id\tgold\tfold";
  for (const auto& t : tables) out << '\t' << t.name;
  out << '\n';
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out << pairs[i].group_id << '\t' << pairs[i].variant_id << '\t' << pairs[i].label << '\t'
        << (tables.empty() ? -1 : tables.front().fold[i]);
    for (const auto& t : tables) out << '\t' << t.predicted[i];
    out << '\n';
  }
}

}  // namespace orderlab
