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

#include "orderlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "orderlab/common.hpp"
#include "orderlab/variantgen.hpp"

namespace orderlab {

void VerbClassMap::set(const std::string& lemma, const std::string& label) {
  classes_[to_lower(lemma)] = label;
}

const std::string& VerbClassMap::classify(const std::string& lemma) const {
  auto it = classes_.find(to_lower(lemma));
  return it == classes_.end() ? default_ : it->second;
}

std::vector<std::string> VerbClassMap::labels() const {
  std::set<std::string> seen;
  for (const auto& [lemma, label] : classes_) seen.insert(label);
  seen.insert(default_);
  return {seen.begin(), seen.end()};
}

VerbClassMap VerbClassMap::load(std::istream& in) {
  VerbClassMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto cols = split_whitespace(text);
    if (cols.size() != 2) throw ParseError(line_no, "verb class rows need a lemma and a class");
    map.set(cols[0], cols[1]);
  }
  return map;
}

VerbClassMap VerbClassMap::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open verb class file " + path);
  return load(in);
}

std::string classify_verb(const DependencyTree& tree, const VerbClassMap& map) {
  const auto& root = root_of(tree);
  const bool no_lemma = root.lemma.empty() || root.lemma == "_";
  return map.classify(no_lemma ? root.form : root.lemma);
}

std::string frame_name(ArgumentFrame frame) {
  switch (frame) {
    case ArgumentFrame::SubjectIndirectDirect: return "S-IO-DO";
    case ArgumentFrame::SubjectDirect: return "S-DO";
    case ArgumentFrame::SubjectIndirect: return "S-IO";
    case ArgumentFrame::None: return "NONE";
  }
  return "NONE";
}

ArgumentFrame argument_frame(const DependencyTree& tree) {
  std::set<std::string> rels;
  for (int child : children_of(tree, root_of(tree).index)) rels.insert(tree.at(child).deprel);
  const bool s = rels.count("k1"), d = rels.count("k2"), i = rels.count("k4");
  if (s && d && i) return ArgumentFrame::SubjectIndirectDirect;
  if (s && d) return ArgumentFrame::SubjectDirect;
  if (s && i) return ArgumentFrame::SubjectIndirect;
  return ArgumentFrame::None;
}

bool is_conjunct_verb(const DependencyTree& tree, bool any_depth) {
  const int root = root_of(tree).index;
  for (const auto& t : tree.tokens)
    if (t.deprel == "pof" && (any_depth || t.head == root)) return true;
  return false;
}

std::optional<double> case_density(const DependencyTree& tree) {
  const auto constituents = preverbal_constituents(tree);
  if (constituents.empty()) return std::nullopt;
  std::size_t markers = 0;
  for (const auto& c : constituents)
    for (int i = c.span.first; i <= c.span.last; ++i) markers += tree.at(i).deprel == "lwg_psp";
  return static_cast<double>(markers) / static_cast<double>(constituents.size());
}

std::set<std::string> analysis_tags(const DependencyTree& tree, const VerbClassMap& map,
                                    bool conjunct_any_depth) {
  return {"class=" + classify_verb(tree, map), "frame=" + frame_name(argument_frame(tree)),
          std::string("conjunct=") + (is_conjunct_verb(tree, conjunct_any_depth) ? "yes" : "no")};
}

void attach_tags(std::vector<PairInstance>& pairs,
                 const std::map<std::string, std::set<std::string>>& tags_by_group) {
  for (auto& p : pairs) {
    auto it = tags_by_group.find(p.group_id);
    if (it != tags_by_group.end()) p.subset_tags.insert(it->second.begin(), it->second.end());
  }
}

namespace {

double percent(std::size_t part, std::size_t whole) {
  return whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

SubsetRow make_row(const std::string& label, const std::vector<std::size_t>& members,
                   const std::vector<PairInstance>& pairs, const PredictionTable& baseline,
                   const PredictionTable& augmented, std::size_t total_sentences) {
  SubsetRow row;
  row.label = label;
  row.pairs = members.size();
  std::set<std::string> groups;
  std::vector<int> a, b, gold;
  std::size_t right_a = 0, right_b = 0;
  for (auto i : members) {
    groups.insert(pairs[i].group_id);
    a.push_back(baseline.predicted[i]);
    b.push_back(augmented.predicted[i]);
    gold.push_back(pairs[i].label);
    right_a += baseline.predicted[i] == pairs[i].label;
    right_b += augmented.predicted[i] == pairs[i].label;
  }
  row.sentences = groups.size();
  row.pair_frequency = percent(row.pairs, pairs.size());
  row.sentence_frequency = percent(row.sentences, total_sentences);
  if (!members.empty()) {
    row.baseline_accuracy = percent(right_a, members.size());
    row.augmented_accuracy = percent(right_b, members.size());
    row.test = mcnemar(a, b, gold);
    row.significant = row.test->p < 0.05;
  }
  return row;
}

}  // namespace

SubsetReport subset_report(const std::vector<PairInstance>& pairs, const PredictionTable& baseline,
                           const PredictionTable& augmented, const std::string& family,
                           const std::vector<std::string>& labels) {
  if (baseline.predicted.size() != pairs.size() || augmented.predicted.size() != pairs.size())
    throw std::invalid_argument("subset_report: prediction tables do not match the pairs");
  const std::string prefix = family + "=";
  std::map<std::string, std::vector<std::size_t>> members;
  std::set<std::string> groups;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    groups.insert(pairs[i].group_id);
    for (const auto& tag : pairs[i].subset_tags)
      if (tag.rfind(prefix, 0) == 0) members[tag.substr(prefix.size())].push_back(i);
  }

  std::vector<std::string> order = labels;
  if (order.empty())
    for (const auto& [label, idx] : members) order.push_back(label);

  SubsetReport report;
  report.family = family;
  for (const auto& label : order) {
    auto it = members.find(label);
    static const std::vector<std::size_t> kNone;
    report.rows.push_back(make_row(label, it == members.end() ? kNone : it->second, pairs, baseline,
                                   augmented, groups.size()));
  }
  std::vector<std::size_t> everything(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) everything[i] = i;
  report.total = make_row("Full", everything, pairs, baseline, augmented, groups.size());
  return report;
}

namespace {

std::string p_text(const SubsetRow& row) {
  if (!row.test) return "-";
  return format_fixed(row.test->p, 4);
}

}  // namespace

std::string SubsetReport::render() const {
  std::ostringstream out;
  std::size_t width = family.size();
  for (const auto& r : rows) width = std::max(width, r.label.size());
  width = std::max<std::size_t>(width, 4);
  auto pad = [](const std::string& s, std::size_t w) {
    return std::string(w > s.size() ? w - s.size() : 0, ' ') + s;
  };
  out << family << std::string(width - family.size(), ' ') << pad("pairs", 8) << pad("freq%", 8)
      << pad("sent%", 8) << pad("base%", 8) << pad("aug%", 8) << pad("p", 8) << '\n';
  auto line = [&](const SubsetRow& r) {
    out << r.label << std::string(width - r.label.size(), ' ') << pad(std::to_string(r.pairs), 8)
        << pad(format_fixed(r.pair_frequency, 2), 8) << pad(format_fixed(r.sentence_frequency, 2), 8)
        << pad(format_fixed(r.baseline_accuracy, 2), 8)
        << pad(format_fixed(r.augmented_accuracy, 2), 8) << pad(p_text(r), 8)
        << (r.significant ? " *" : "") << '\n';
  };
  for (const auto& r : rows) line(r);
  line(total);
  return out.str();
}

void SubsetReport::write_tsv(std::ostream& out) const {
  out << "family\tsubset\tpairs\tsentences\tpair_freq\tsentence_freq\tbaseline_acc\t"
         "augmented_acc\tb\tc\tp\tsignificant\n";
  auto line = [&](const SubsetRow& r) {
    out << family << '\t' << r.label << '\t' << r.pairs << '\t' << r.sentences << '\t'
        << format_double(r.pair_frequency) << '\t' << format_double(r.sentence_frequency) << '\t'
        << format_double(r.baseline_accuracy) << '\t' << format_double(r.augmented_accuracy) << '\t';
    if (r.test)
      out << r.test->b << '\t' << r.test->c << '\t' << format_double(r.test->p);
    else
      out << "-\t-\t-";
    out << '\t' << (r.significant ? 1 : 0) << '\n';
  };
  for (const auto& r : rows) line(r);
  line(total);
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: lengths differ");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0 || syy <= 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix correlation_matrix(const std::vector<PairInstance>& pairs,
                                     const std::vector<Feature>& features) {
  CorrelationMatrix m;
  m.features = features;
  std::vector<std::vector<double>> cols(features.size());
  for (std::size_t j = 0; j < features.size(); ++j)
    for (const auto& p : pairs) cols[j].push_back(p.delta[static_cast<std::size_t>(features[j])]);
  m.r.assign(features.size(), std::vector<std::optional<double>>(features.size()));
  for (std::size_t a = 0; a < features.size(); ++a)
    for (std::size_t b = 0; b < features.size(); ++b) m.r[a][b] = pearson(cols[a], cols[b]);
  return m;
}

void CorrelationMatrix::write_tsv(std::ostream& out) const {
  out << "feature";
  for (auto f : features) out << '\t' << kFeatureNames[static_cast<std::size_t>(f)];
  out << '\n';
  for (std::size_t a = 0; a < features.size(); ++a) {
    out << kFeatureNames[static_cast<std::size_t>(features[a])];
    for (std::size_t b = 0; b < features.size(); ++b)
      out << '\t' << (r[a][b] ? format_double(*r[a][b]) : std::string("NA"));
    out << '\n';
  }
}

}  // namespace orderlab
