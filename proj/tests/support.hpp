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

// Shared generators and helpers for the test binaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "orderlab/common.hpp"
#include "orderlab/corpus.hpp"
#include "orderlab/lm_common.hpp"
#include "orderlab/ngram_lm.hpp"
#include "orderlab/ranker.hpp"
#include "orderlab/variantgen.hpp"

namespace orderlab::testing {

inline std::string fixture_path(const std::string& name) {
  return std::string(ORDERLAB_FIXTURE_DIR) + "/" + name;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "orderlab") {
    static std::uint64_t counter = 0;
    SplitMix64 rng((static_cast<std::uint64_t>(std::random_device{}()) << 20) ^ ++counter);
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rng.next() % 1000000000ULL));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline Token make_token(int index, const std::string& form, int head, const std::string& deprel,
                        const std::string& upos = "NOUN", const std::string& lemma = "") {
  Token t;
  t.index = index;
  t.form = form;
  t.lemma = lemma.empty() ? form : lemma;
  t.upos = upos;
  t.head = head;
  t.deprel = deprel;
  return t;
}

// Projective tree over n tokens: each interval picks a head and recurses on
// both sides.
inline DependencyTree random_projective_tree(SplitMix64& rng, int n) {
  DependencyTree tree;
  tree.sentence_id = "r";
  tree.doc_id = "d";
  std::vector<int> head(static_cast<std::size_t>(n + 1), 0);
  struct Frame {
    int lo, hi, parent;
  };
  std::vector<Frame> stack{{1, n, 0}};
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    if (f.lo > f.hi) continue;
    const int h = f.lo + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(f.hi - f.lo + 1)));
    head[static_cast<std::size_t>(h)] = f.parent;
    stack.push_back({f.lo, h - 1, h});
    stack.push_back({h + 1, f.hi, h});
  }
  for (int i = 1; i <= n; ++i)
    tree.tokens.push_back(make_token(i, "w" + std::to_string(i), head[static_cast<std::size_t>(i)],
                                     head[static_cast<std::size_t>(i)] == 0 ? "root" : "dep"));
  return tree;
}

// Arbitrary (possibly non-projective) tree: tokens join in random order,
// each attaching to a random earlier one.
inline DependencyTree random_tree(SplitMix64& rng, int n) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 1);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.bounded(i)]);
  std::vector<int> head(static_cast<std::size_t>(n + 1), 0);
  for (std::size_t k = 1; k < order.size(); ++k)
    head[static_cast<std::size_t>(order[k])] = order[rng.bounded(k)];
  DependencyTree tree;
  tree.sentence_id = "r";
  tree.doc_id = "d";
  for (int i = 1; i <= n; ++i)
    tree.tokens.push_back(make_token(i, "w" + std::to_string(i), head[static_cast<std::size_t>(i)],
                                     head[static_cast<std::size_t>(i)] == 0 ? "root" : "dep"));
  return tree;
}

// Verb-final clause with `preverbal` root dependents (each a projective
// subtree of 1..3 tokens) and 0..2 postverbal dependents. Forms are unique.
inline DependencyTree random_clause(SplitMix64& rng, int preverbal, const std::string& id = "s") {
  static const char* kLabels[] = {"k1", "k2", "k3", "k4", "k7t", "k7p", "pof", "adv"};
  std::vector<std::vector<int>> blocks;  // relative heads, -1 = block head
  std::vector<std::string> labels;
  auto make_block = [&]() {
    const int len = 1 + static_cast<int>(rng.bounded(3));
    const int h = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(len)));
    std::vector<int> rel(static_cast<std::size_t>(len), h);
    rel[static_cast<std::size_t>(h)] = -1;
    return rel;
  };
  for (int i = 0; i < preverbal; ++i) {
    blocks.push_back(make_block());
    labels.push_back(kLabels[rng.bounded(8)]);
  }
  const int post = static_cast<int>(rng.bounded(3));
  DependencyTree tree;
  tree.sentence_id = id;
  tree.doc_id = "d";
  int next = 1;
  std::vector<std::pair<int, std::vector<int>>> placed;
  for (const auto& b : blocks) {
    placed.emplace_back(next, b);
    next += static_cast<int>(b.size());
  }
  const int root = next++;
  std::vector<std::pair<int, std::vector<int>>> post_blocks;
  for (int i = 0; i < post; ++i) {
    auto b = make_block();
    post_blocks.emplace_back(next, b);
    next += static_cast<int>(b.size());
  }
  tree.tokens.resize(static_cast<std::size_t>(next - 1));
  auto emit = [&](int start, const std::vector<int>& rel, const std::string& label) {
    for (std::size_t k = 0; k < rel.size(); ++k) {
      const int idx = start + static_cast<int>(k);
      const int head = rel[k] < 0 ? root : start + rel[k];
      tree.tokens[static_cast<std::size_t>(idx - 1)] =
          make_token(idx, id + "_t" + std::to_string(idx), head, rel[k] < 0 ? label : "dep");
    }
  };
  for (std::size_t i = 0; i < placed.size(); ++i) emit(placed[i].first, placed[i].second, labels[i]);
  for (const auto& [start, rel] : post_blocks) emit(start, rel, "post");
  tree.tokens[static_cast<std::size_t>(root - 1)] = make_token(root, id + "_v", 0, "root", "VERB");
  return tree;
}

// Small corpus over a fixed vocabulary with Zipf-like word choice.
inline std::vector<Sentence> zipf_corpus(SplitMix64& rng, std::size_t sentences,
                                         std::size_t vocab, std::size_t max_len) {
  std::vector<double> cdf(vocab);
  double z = 0;
  for (std::size_t i = 0; i < vocab; ++i) cdf[i] = (z += 1.0 / static_cast<double>(i + 1));
  std::vector<Sentence> out;
  for (std::size_t s = 0; s < sentences; ++s) {
    Sentence sent;
    const std::size_t len = 1 + rng.bounded(max_len);
    for (std::size_t k = 0; k < len; ++k) {
      const double u = rng.uniform() * z;
      const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
      sent.push_back("v" + std::to_string(static_cast<std::size_t>(it - cdf.begin())));
    }
    out.push_back(std::move(sent));
  }
  return out;
}

// Synthetic word-order world. Clauses draw constituents from role-specific
// lexicons; the LM corpus mostly follows a canonical role order. Each
// treebank reference is the permutation of its blocks with the lowest
// trigram surprisal (sets with ties are dropped).
struct SyntheticWorld {
  std::vector<Sentence> lm_corpus;
  std::vector<Document> treebank;
  TrigramLm lm;
};

inline SyntheticWorld make_synthetic_world(std::uint64_t seed, std::size_t documents,
                                           std::size_t sentences_per_doc) {
  struct Role {
    const char* label;
    const char* marker;
    std::vector<std::string> nouns;
  };
  const std::vector<Role> roles = {
      {"k7t", "", {"kal", "aaj", "subah", "raat", "sukravar"}},
      {"k1", "ne", {"ram", "sita", "mohan", "gita", "ravi", "anil"}},
      {"k4", "ko", {"bachche", "mitra", "guru", "bhai", "maa"}},
      {"k2", "", {"kitaab", "patra", "phal", "kapda", "paisa", "khat"}},
      {"k3", "se", {"daak", "haath", "gaadi", "bus"}},
  };
  const std::vector<std::string> verbs = {"diya", "bheja", "likha", "laaya", "becha"};
  SplitMix64 rng(seed);

  auto draw_roles = [&](std::size_t k) {
    std::vector<std::size_t> idx(roles.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.bounded(i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  auto block_words = [&](std::size_t role) {
    std::vector<std::string> w{roles[role].nouns[rng.bounded(roles[role].nouns.size())]};
    if (*roles[role].marker) w.emplace_back(roles[role].marker);
    return w;
  };

  SyntheticWorld world;
  for (std::size_t s = 0; s < 3000; ++s) {
    auto r = draw_roles(2 + rng.bounded(3));
    if (rng.uniform() < 0.15)
      for (std::size_t i = r.size(); i > 1; --i) std::swap(r[i - 1], r[rng.bounded(i)]);
    Sentence sent;
    for (auto role : r)
      for (auto& w : block_words(role)) sent.push_back(w);
    sent.push_back(verbs[rng.bounded(verbs.size())]);
    world.lm_corpus.push_back(std::move(sent));
  }
  NgramOptions opts;
  opts.min_count = 1;
  world.lm = TrigramLm::train(world.lm_corpus, opts);

  for (std::size_t d = 0; d < documents; ++d) {
    Document doc;
    doc.doc_id = "syn" + std::to_string(d);
    for (std::size_t s = 0; s < sentences_per_doc * 2 && doc.sentences.size() < sentences_per_doc;
         ++s) {
      auto r = draw_roles(3 + rng.bounded(2));
      DependencyTree tree;
      tree.doc_id = doc.doc_id;
      tree.sentence_id = doc.doc_id + "-" + std::to_string(s);
      int idx = 1;
      std::vector<int> heads;
      const int n_tokens = [&] {
        int n = 1;
        for (auto role : r) n += *roles[role].marker ? 2 : 1;
        return n;
      }();
      for (auto role : r) {
        const auto words = block_words(role);
        const int head = idx;
        tree.tokens.push_back(make_token(idx++, words[0], n_tokens, roles[role].label));
        for (std::size_t k = 1; k < words.size(); ++k)
          tree.tokens.push_back(make_token(idx++, words[k], head, "lwg_psp", "ADP"));
      }
      tree.tokens.push_back(make_token(idx, verbs[rng.bounded(verbs.size())], 0, "root", "VERB"));

      // Reorder to the surprisal-minimizing permutation.
      const auto blocks = preverbal_constituents(tree);
      std::vector<std::size_t> perm(blocks.size());
      std::iota(perm.begin(), perm.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      std::vector<std::size_t> best_perm;
      bool tie = false;
      do {
        const auto positions = linearize(tree, perm);
        Sentence words;
        for (int p : positions) words.push_back(tree.at(p).form);
        const double total = sentence_surprisal(world.lm, words).total;
        if (total < best - 1e-9) {
          best = total;
          best_perm = perm;
          tie = false;
        } else if (std::abs(total - best) <= 1e-9) {
          tie = true;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
      if (tie) continue;
      auto ordered = reorder_tree(tree, linearize(tree, best_perm));
      ordered.doc_id = tree.doc_id;
      ordered.sentence_id = tree.sentence_id;
      doc.sentences.push_back(std::move(ordered));
    }
    world.treebank.push_back(std::move(doc));
  }
  return world;
}

// Pairs whose labels follow a logistic model with zero intercept and the
// given slopes on `features`; one group per pair.
inline std::vector<PairInstance> logistic_pairs(std::uint64_t seed, std::size_t n,
                                                const std::vector<Feature>& features,
                                                const std::vector<double>& beta) {
  SplitMix64 rng(seed);
  std::vector<PairInstance> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = out[i];
    double eta = 0;
    for (std::size_t j = 0; j < features.size(); ++j) {
      const double x = rng.normal();
      p.delta[static_cast<std::size_t>(features[j])] = x;
      eta += beta[j] * x;
    }
    p.label = rng.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0;
    p.group_id = "g" + std::to_string(i);
    p.variant_id = 1;
  }
  return out;
}

inline std::string to_conll(const std::vector<Document>& docs) {
  std::ostringstream out;
  write_conll(out, docs);
  return out.str();
}

}  // namespace orderlab::testing
