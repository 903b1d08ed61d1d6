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

#include "orderlab/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "orderlab/common.hpp"

namespace orderlab {

std::optional<Feature> feature_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (kFeatureNames[i] == name) return static_cast<Feature>(i);
  return std::nullopt;
}

double FeatureVector::operator[](Feature f) const {
  switch (f) {
    case Feature::DependencyLength: return dep_length;
    case Feature::TrigramSurprisal: return trigram_surp;
    case Feature::PcfgSurprisal: return pcfg_surp;
    case Feature::IsScore: return is_score;
    case Feature::LexicalRepetitionSurprisal: return lex_rept_surp;
    case Feature::LstmSurprisal: return lstm_surp;
    case Feature::AdaptiveLstmSurprisal: return adaptive_lstm_surp;
  }
  throw std::logic_error("bad feature");
}

std::array<double, kFeatureCount> FeatureVector::values() const {
  std::array<double, kFeatureCount> out{};
  for (std::size_t i = 0; i < kFeatureCount; ++i) out[i] = (*this)[static_cast<Feature>(i)];
  return out;
}

int dependency_length(const DependencyTree& tree) {
  int total = 0;
  for (const auto& t : tree.tokens)
    if (t.head != 0) total += std::abs(t.head - t.index) - 1;
  return total;
}

namespace {

std::string match_key(const Token& t) {
  const bool no_lemma = t.lemma.empty() || t.lemma == "_";
  return to_lower(no_lemma ? t.form : t.lemma);
}

}  // namespace

std::vector<TaggedConstituent> tag_information_status(const DependencyTree& target,
                                                      const DependencyTree* context,
                                                      const IsConfig& config) {
  std::unordered_set<std::string> mentioned;
  if (context)
    for (const auto& t : context->tokens) mentioned.insert(match_key(t));

  std::vector<TaggedConstituent> out;
  const int root = root_of(target).index;
  for (int child : children_of(target, root)) {
    const auto& head = target.at(child);
    if (!config.subject_object_relations.count(head.deprel)) continue;
    TaggedConstituent tc{child, subtree_span(target, child), InfoStatus::New};
    if (head.upos == config.pronoun_pos) {
      tc.status = InfoStatus::Given;
    } else {
      for (int i = tc.span.first; i <= tc.span.last; ++i) {
        const auto& t = target.at(i);
        if (config.content_pos.count(t.upos) && mentioned.count(match_key(t))) {
          tc.status = InfoStatus::Given;
          break;
        }
      }
    }
    out.push_back(tc);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.span.first < b.span.first; });
  return out;
}

int is_score(const DependencyTree& target, const DependencyTree* context, const IsConfig& config) {
  const auto tagged = tag_information_status(target, context, config);
  auto pair_score = [](InfoStatus earlier, InfoStatus later) {
    if (earlier == later) return 0;
    return earlier == InfoStatus::Given ? 1 : -1;
  };
  if (tagged.size() < 2) return 0;
  if (config.aggregation == IsAggregation::LeadingPair)
    return pair_score(tagged[0].status, tagged[1].status);
  int sum = 0;
  for (std::size_t i = 0; i < tagged.size(); ++i)
    for (std::size_t j = i + 1; j < tagged.size(); ++j)
      sum += pair_score(tagged[i].status, tagged[j].status);
  return (sum > 0) - (sum < 0);
}

double ExternalColumn::coverage(const std::vector<std::string>& row_ids) const {
  if (row_ids.empty()) return 1.0;
  std::size_t hit = 0;
  for (const auto& id : row_ids) hit += values.count(id);
  return static_cast<double>(hit) / static_cast<double>(row_ids.size());
}

ExternalColumn ingest_external_features(std::istream& in) {
  ExternalColumn col;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 2)
      throw ParseError(row, "external feature rows need 2 tab-separated columns");
    double value = 0;
    try {
      value = parse_double(cols[1]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(row, e.what());
    }
    if (!col.values.emplace(cols[0], value).second)
      throw ParseError(row, "duplicate id '" + cols[0] + "'");
  }
  return col;
}

ExternalColumn ingest_external_features_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open external feature file " + path);
  return ingest_external_features(in);
}

std::string FeatureRow::row_id() const { return sent_id + ":" + std::to_string(variant_id); }

std::vector<FeatureRow> assemble_features(const VariantSet& set, const Scorers& scorers,
                                          const IsConfig& is_config, const ExternalColumn* external,
                                          AssemblyReport* report) {
  const DependencyTree* context = set.context ? &*set.context : nullptr;
  std::vector<DependencyTree> trees{set.reference};
  for (const auto& v : set.variants) trees.push_back(v.tree(set.reference));
  std::vector<Sentence> words;
  for (const auto& t : trees) words.push_back(t.forms());

  std::vector<FeatureRow> rows(trees.size());
  for (std::size_t k = 0; k < trees.size(); ++k) {
    auto& row = rows[k];
    row.doc_id = set.reference.doc_id;
    row.sent_id = set.reference.sentence_id;
    row.variant_id = static_cast<int>(k);
    row.features.dep_length = dependency_length(trees[k]);
    row.features.is_score = is_score(trees[k], context, is_config);
  }

  if (scorers.trigram) {
    CacheState cache;
    cache.mu = scorers.cache_mu;
    if (context) cache = update_cache(cache, *scorers.trigram, context->forms());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      rows[k].features.trigram_surp = sentence_surprisal(*scorers.trigram, words[k]).total;
      rows[k].features.lex_rept_surp =
          cache_sentence_surprisal(*scorers.trigram, cache, words[k]).total;
    }
  }

  if (scorers.lstm) {
    for (std::size_t k = 0; k < rows.size(); ++k)
      rows[k].features.lstm_surp = lstm_sentence_surprisal(*scorers.lstm, words[k]).total;
    AdaptationTrace trace;
    const Sentence ctx_words = context ? context->forms() : Sentence{};
    const auto adapted = adapt_and_score(*scorers.lstm, ctx_words, words, scorers.adaptation, &trace);
    for (std::size_t k = 0; k < rows.size(); ++k)
      rows[k].features.adaptive_lstm_surp = adapted[k].total;
    if (report) report->adaptation = trace;
  }

  if (external) {
    for (auto& row : rows) {
      auto it = external->values.find(row.row_id());
      if (it == external->values.end())
        throw std::runtime_error("external feature column has no value for '" + row.row_id() + "'");
      row.features.pcfg_surp = it->second;
    }
  }
  if (report) report->pcfg_column_absent = external == nullptr;

  for (const auto& row : rows)
    for (double x : row.features.values())
      if (!std::isfinite(x))
        throw std::runtime_error("non-finite feature value for " + row.row_id());
  return rows;
}

void write_feature_table(std::ostream& out, const std::vector<FeatureRow>& rows) {
  out << "#orderlab-features\t1\n";
  out << "doc_id\tsent_id\tvariant_id";
  for (auto name : kFeatureNames) out << '\t' << name;
  out << '\n';
  for (const auto& row : rows) {
    out << row.doc_id << '\t' << row.sent_id << '\t' << row.variant_id;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      const auto f = static_cast<Feature>(i);
      out << '\t';
      if (f == Feature::DependencyLength || f == Feature::IsScore)
        out << static_cast<int>(row.features[f]);
      else
        out << format_double(row.features[f]);
    }
    out << '\n';
  }
}

std::vector<FeatureRow> read_feature_table(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != "#orderlab-features\t1")
    throw ParseError(1, "missing '#orderlab-features 1' header");
  ++line_no;
  if (!std::getline(in, line)) throw ParseError(2, "missing column header");
  ++line_no;
  std::vector<std::string> expected{"doc_id", "sent_id", "variant_id"};
  for (auto n : kFeatureNames) expected.emplace_back(n);
  if (split(line, '\t') != expected) throw ParseError(2, "unexpected feature columns");
  std::vector<FeatureRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != expected.size()) throw ParseError(line_no, "wrong column count");
    try {
      FeatureRow row;
      row.doc_id = cols[0];
      row.sent_id = cols[1];
      row.variant_id = static_cast<int>(parse_int(cols[2]));
      auto& f = row.features;
      f.dep_length = static_cast<int>(parse_int(cols[3]));
      f.trigram_surp = parse_double(cols[4]);
      f.pcfg_surp = parse_double(cols[5]);
      f.is_score = static_cast<int>(parse_int(cols[6]));
      f.lex_rept_surp = parse_double(cols[7]);
      f.lstm_surp = parse_double(cols[8]);
      f.adaptive_lstm_surp = parse_double(cols[9]);
      rows.push_back(std::move(row));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return rows;
}

}  // namespace orderlab
