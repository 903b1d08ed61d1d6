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

#include "orderlab/variantgen.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "orderlab/common.hpp"

namespace orderlab {

std::vector<Constituent> preverbal_constituents(const DependencyTree& tree) {
  std::vector<Constituent> out;
  const int root = root_of(tree).index;
  for (int child : children_of(tree, root)) {
    const Span span = subtree_span(tree, child);
    if (span.last < root) out.push_back({child, span});
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.span.first < b.span.first; });
  return out;
}

bool AttestedGrammar::accepts(const std::vector<std::string>& labels) const {
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (!contains(labels[i - 1], labels[i])) return false;
  return true;
}

AttestedGrammar AttestedGrammar::permissive(const std::vector<std::string>& labels) {
  AttestedGrammar g;
  for (const auto& a : labels)
    for (const auto& b : labels) g.add(a, b);
  return g;
}

void add_tree_bigrams(AttestedGrammar& grammar, const DependencyTree& tree) {
  const auto blocks = preverbal_constituents(tree);
  for (std::size_t i = 1; i < blocks.size(); ++i)
    grammar.add(tree.at(blocks[i - 1].head_token).deprel, tree.at(blocks[i].head_token).deprel);
}

AttestedGrammar build_attested_grammar(const std::vector<Document>& corpus) {
  AttestedGrammar grammar;
  std::size_t trees = 0;
  for (const auto& doc : corpus)
    for (const auto& tree : doc.sentences) {
      add_tree_bigrams(grammar, tree);
      ++trees;
    }
  if (trees == 0) throw std::invalid_argument("build_attested_grammar: empty corpus");
  return grammar;
}

namespace {

std::vector<int> linearize_blocks(const DependencyTree& tree,
                                  const std::vector<Constituent>& blocks,
                                  const std::vector<std::size_t>& order) {
  if (order.size() != blocks.size())
    throw std::invalid_argument("linearize: order has wrong length");
  std::vector<bool> seen(blocks.size(), false);
  for (auto k : order) {
    if (k >= blocks.size() || seen[k])
      throw std::invalid_argument("linearize: order is not a permutation");
    seen[k] = true;
  }
  std::vector<int> out;
  out.reserve(tree.size());
  for (auto k : order)
    for (int i = blocks[k].span.first; i <= blocks[k].span.last; ++i) out.push_back(i);
  const int rest = blocks.empty() ? 1 : blocks.back().span.last + 1;
  // Preverbal blocks tile positions 1..root-1 in a projective tree.
  if (static_cast<int>(out.size()) != rest - 1)
    throw std::logic_error("linearize: preverbal blocks do not tile the prefix of " +
                           tree.sentence_id);
  for (int i = rest; i <= static_cast<int>(tree.size()); ++i) out.push_back(i);
  return out;
}

std::string surface(const DependencyTree& tree, const std::vector<int>& positions) {
  std::string s;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    if (k) s.push_back(' ');
    s += tree.at(positions[k]).form;
  }
  return s;
}

}  // namespace

std::vector<int> linearize(const DependencyTree& tree, const std::vector<std::size_t>& order) {
  return linearize_blocks(tree, preverbal_constituents(tree), order);
}

std::string Variant::signature() const {
  std::vector<std::string> parts;
  parts.reserve(order.size());
  for (auto k : order) parts.push_back(std::to_string(k));
  return join(parts, ",");
}

std::vector<std::string> Variant::words(const DependencyTree& tree) const {
  std::vector<std::string> out;
  out.reserve(positions.size());
  for (int p : positions) out.push_back(tree.at(p).form);
  return out;
}

DependencyTree Variant::tree(const DependencyTree& reference) const {
  return reorder_tree(reference, positions);
}

VariantSet generate_variants(const DependencyTree& tree, const DependencyTree* context,
                             const AttestedGrammar& grammar, const VariantOptions& options) {
  if (options.cap < 2) throw std::invalid_argument("generate_variants: cap must be >= 2");
  VariantSet set;
  set.reference = tree;
  if (context) set.context = *context;
  set.seed = derive_seed(options.seed, tree.doc_id + '/' + tree.sentence_id);

  const auto blocks = preverbal_constituents(tree);
  const std::size_t n = blocks.size();
  set.constituent_count = n;
  if (n < 2) return set;

  std::vector<std::string> labels(n);
  for (std::size_t k = 0; k < n; ++k) labels[k] = tree.at(blocks[k].head_token).deprel;

  std::vector<std::size_t> identity(n);
  std::iota(identity.begin(), identity.end(), 0);
  std::vector<int> ref_positions(tree.size());
  std::iota(ref_positions.begin(), ref_positions.end(), 1);

  std::unordered_set<std::string> surfaces{surface(tree, ref_positions)};
  SplitMix64 rng(set.seed);
  const std::size_t keep = options.cap - 1;

  auto consider = [&](const std::vector<std::size_t>& order) -> std::optional<Variant> {
    ++set.permutations_considered;
    std::vector<std::string> seq(n);
    for (std::size_t k = 0; k < n; ++k) seq[k] = labels[order[k]];
    if (!grammar.accepts(seq)) {
      ++set.filtered_out;
      return std::nullopt;
    }
    Variant v{order, linearize_blocks(tree, blocks, order)};
    if (!surfaces.insert(surface(tree, v.positions)).second) {
      ++set.duplicate_surface;
      return std::nullopt;
    }
    return v;
  };

  if (n <= kMaxEnumeratedConstituents) {
    std::vector<Variant> survivors;
    auto order = identity;
    while (std::next_permutation(order.begin(), order.end()))
      if (auto v = consider(order)) survivors.push_back(std::move(*v));
    if (survivors.size() > keep) {
      set.sampled = true;
      std::vector<std::size_t> idx(survivors.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < keep; ++i) {
        const auto j = i + rng.bounded(idx.size() - i);
        std::swap(idx[i], idx[j]);
      }
      idx.resize(keep);
      std::sort(idx.begin(), idx.end());
      std::vector<Variant> chosen;
      chosen.reserve(keep);
      for (auto i : idx) chosen.push_back(std::move(survivors[i]));
      survivors = std::move(chosen);
    }
    set.variants = std::move(survivors);
    return set;
  }

  // Too many blocks to enumerate: draw uniform random permutations.
  set.sampled = true;
  std::set<std::vector<std::size_t>> drawn{identity};
  const std::size_t max_draws = 200 * options.cap;
  for (std::size_t draw = 0; draw < max_draws && set.variants.size() < keep; ++draw) {
    auto order = identity;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.bounded(i + 1)]);
    if (!drawn.insert(order).second) continue;
    if (auto v = consider(order)) set.variants.push_back(std::move(*v));
  }
  std::sort(set.variants.begin(), set.variants.end(),
            [](const auto& a, const auto& b) { return a.order < b.order; });
  return set;
}

void write_variant_records(std::ostream& out, const VariantSet& set) {
  const auto& ref = set.reference;
  std::vector<std::size_t> identity(set.constituent_count);
  std::iota(identity.begin(), identity.end(), 0);
  Variant self{identity, {}};
  out << ref.doc_id << '\t' << ref.sentence_id << "\t0\t" << join(ref.forms(), " ") << '\t'
      << (identity.empty() ? "-" : self.signature()) << '\n';
  for (std::size_t i = 0; i < set.variants.size(); ++i) {
    const auto& v = set.variants[i];
    out << ref.doc_id << '\t' << ref.sentence_id << '\t' << (i + 1) << '\t'
        << join(v.words(ref), " ") << '\t' << v.signature() << '\n';
  }
}

std::vector<std::size_t> parse_signature(const std::string& signature) {
  std::vector<std::size_t> out;
  if (signature == "-" || signature.empty()) return out;
  for (const auto& part : split(signature, ','))
    out.push_back(static_cast<std::size_t>(parse_int(part)));
  return out;
}

std::vector<VariantRecord> read_variant_records(std::istream& in) {
  std::vector<VariantRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto cols = split(line, '\t');
    if (cols.size() != 5)
      throw ParseError(line_no, "variant record needs 5 columns");
    try {
      out.push_back({cols[0], cols[1], static_cast<int>(parse_int(cols[2])), cols[3],
                     parse_signature(cols[4])});
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace orderlab
