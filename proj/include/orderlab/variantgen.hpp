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

// Word-order variant generation.
//
// A variant permutes the preverbal dependents of the root verb as whole
// blocks (each block is the dependent's full projective subtree), keeps the
// root and all postverbal material in place, and is kept only if every
// adjacent pair of block relation labels was attested between adjacent
// preverbal root dependents somewhere in the reference corpus.
//
// Sampling: when the survivors plus the reference exceed `cap`, cap-1
// survivors are drawn uniformly without replacement using SplitMix64 seeded
// with derive_seed(seed, doc_id + '/' + sentence_id), so the result does not
// depend on processing order. For more than kMaxEnumeratedConstituents blocks
// the permutation space is sampled instead of enumerated (random permutations
// are uniform, so filtered draws stay uniform over survivors).

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "orderlab/corpus.hpp"

namespace orderlab {

struct Constituent {
  int head_token = 0;  // 1-based index of the root dependent
  Span span;
  bool operator==(const Constituent&) const = default;
};

// Root dependents lying entirely left of the root, in linear order.
std::vector<Constituent> preverbal_constituents(const DependencyTree& tree);

class AttestedGrammar {
 public:
  using Bigram = std::pair<std::string, std::string>;

  void add(const std::string& left, const std::string& right) { bigrams_.emplace(left, right); }
  bool contains(const std::string& left, const std::string& right) const {
    return bigrams_.count({left, right}) != 0;
  }
  // True when every adjacent pair in `labels` is attested.
  bool accepts(const std::vector<std::string>& labels) const;
  const std::set<Bigram>& bigrams() const { return bigrams_; }
  std::size_t size() const { return bigrams_.size(); }

  // Grammar accepting every ordered pair over `labels` (including repeats).
  static AttestedGrammar permissive(const std::vector<std::string>& labels);

 private:
  std::set<Bigram> bigrams_;
};

// Adjacent preverbal relation bigrams over all trees. Throws on empty corpus.
AttestedGrammar build_attested_grammar(const std::vector<Document>& corpus);
void add_tree_bigrams(AttestedGrammar& grammar, const DependencyTree& tree);

// Token positions (original 1-based indices) after placing the preverbal
// blocks in `order` (indices into preverbal_constituents(tree)).
// Throws std::invalid_argument if `order` is not a permutation.
std::vector<int> linearize(const DependencyTree& tree, const std::vector<std::size_t>& order);

struct Variant {
  std::vector<std::size_t> order;  // constituent permutation
  std::vector<int> positions;      // original token indices in new order

  std::string signature() const;  // e.g. "1,0,2"
  std::vector<std::string> words(const DependencyTree& tree) const;
  DependencyTree tree(const DependencyTree& reference) const;
};

struct VariantSet {
  DependencyTree reference;
  std::optional<DependencyTree> context;
  std::vector<Variant> variants;
  std::uint64_t seed = 0;

  // Bookkeeping for the generation report.
  std::size_t constituent_count = 0;
  std::size_t permutations_considered = 0;
  std::size_t filtered_out = 0;
  std::size_t duplicate_surface = 0;
  bool sampled = false;
};

struct VariantOptions {
  std::size_t cap = 100;  // including the reference
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMaxEnumeratedConstituents = 8;

VariantSet generate_variants(const DependencyTree& tree, const DependencyTree* context,
                             const AttestedGrammar& grammar, const VariantOptions& options = {});

// Tab-separated: doc_id, sent_id, variant_id, tokens, signature.
// variant_id 0 is the reference with the identity signature.
void write_variant_records(std::ostream& out, const VariantSet& set);

struct VariantRecord {
  std::string doc_id;
  std::string sent_id;
  int variant_id = 0;
  std::string text;
  std::vector<std::size_t> order;
};
std::vector<VariantRecord> read_variant_records(std::istream& in);
std::vector<std::size_t> parse_signature(const std::string& signature);

}  // namespace orderlab
