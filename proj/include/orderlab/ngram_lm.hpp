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

// Trigram language model with Katz backoff over Good-Turing discounted
// counts, and a unigram-cache mixture for lexical repetition.
//
// Events. Each sentence w1..wn is scored as n+1 predictions
// P(w_k | w_{k-2}, w_{k-1}) with w_{-1} = w_0 = <s> and w_{n+1} = </s>; the
// same events (one per prediction, per order) are counted at training time.
// <s> is never predicted, so every conditional distribution ranges over the
// vocabulary minus <s>.
//
// Discounting. For order n with counts-of-counts N_r, Katz's discount for
// 1 <= r <= k is
//     d_r = (r*/r - (k+1)N_{k+1}/N_1) / (1 - (k+1)N_{k+1}/N_1),
//     r*  = (r+1) N_{r+1} / N_r,
// and d_r = 1 above k. Zero N_r in 1..k+1 are replaced by a log-linear fit of
// log N_r on log r over the nonzero entries. If some d_r falls outside
// (0, 1] the cutoff k is lowered until all are valid; with no valid k the
// order is left undiscounted.
//
// Backoff.  P(w|h) = d_c c(h,w)/c(h)            if c(h,w) > 0
//                  = alpha(h) P(w|h')            otherwise
// with alpha(h) chosen so that P(.|h) sums to one. Unigram mass freed by
// discounting goes uniformly to zero-count words (normally <unk>). A context
// whose successors all lie above the cutoff frees no mass; it then reserves
// 1/(c(h)+1) for backoff (and the unigram level 1/(N+Z) per zero-count word)
// so that no word is assigned probability zero.
//
// Cache. P(w) = mu * count_H(w)/|H| + (1 - mu) * P_trigram(w|h), where H is
// the previous sentence (at most 100 words, the most recent kept). With an
// empty history, or mu == 0, the plain trigram probability is used.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <unordered_map>
#include <vector>

#include "orderlab/lm_common.hpp"

namespace orderlab {

struct NgramOptions {
  std::size_t min_count = 2;
  int gt_max = 7;
  LogBase log_base = LogBase::Two;
};

class TrigramLm {
 public:
  static constexpr int kOrder = 3;

  static TrigramLm train(const std::vector<Sentence>& sentences, const NgramOptions& options = {});

  // P(w | h2 h1), where h1 is the immediately preceding word.
  double prob(WordId w, WordId h2, WordId h1) const;
  double prob_bigram(WordId w, WordId h1) const;
  double prob_unigram(WordId w) const { return unigram_prob_.at(w); }

  const Vocabulary& vocab() const { return vocab_; }
  LogBase log_base() const { return options_.log_base; }
  const NgramOptions& options() const { return options_; }

  // Raw event counts (after <unk> mapping).
  std::uint64_t count(WordId w) const;
  std::uint64_t count(WordId h1, WordId w) const;
  std::uint64_t count(WordId h2, WordId h1, WordId w) const;
  std::uint64_t total_tokens() const { return total_tokens_; }

  // Discount coefficient d_r for an order in 1..3 (1.0 above the cutoff).
  double discount(int order, std::uint64_t r) const;
  int cutoff(int order) const { return static_cast<int>(discounts_.at(order - 1).size()); }
  // Backoff weight of a seen context (1.0 for unseen contexts).
  double backoff_weight(WordId h1) const;
  double backoff_weight(WordId h2, WordId h1) const;

  void save(std::ostream& out) const;
  static TrigramLm load(std::istream& in);

 private:
  struct ContextStats {
    std::uint64_t total = 0;
    double alpha = 1.0;
    double seen_scale = 1.0;  // renormalizer when no unseen mass can be spread
  };

  static std::uint64_t key(WordId a, WordId b) { return (std::uint64_t{a} << 21) | b; }
  static std::uint64_t key(WordId a, WordId b, WordId c) {
    return (std::uint64_t{a} << 42) | (std::uint64_t{b} << 21) | c;
  }

  void estimate();
  double discounted(int order, std::uint64_t c, std::uint64_t context_total) const;

  NgramOptions options_;
  Vocabulary vocab_;
  std::uint64_t total_tokens_ = 0;
  std::vector<std::uint64_t> unigram_counts_;
  std::unordered_map<std::uint64_t, std::uint64_t> bigram_counts_;
  std::unordered_map<std::uint64_t, std::uint64_t> trigram_counts_;
  std::vector<std::vector<double>> discounts_;  // [order-1][r-1]
  std::vector<double> unigram_prob_;
  std::unordered_map<WordId, ContextStats> bigram_contexts_;
  std::unordered_map<std::uint64_t, ContextStats> trigram_contexts_;
};

// Katz discount table from counts-of-counts (index r -> N_r; index 0 unused).
// Exposed for testing. Returns d_1..d_k for the chosen cutoff k <= gt_max.
std::vector<double> katz_discounts(const std::map<std::uint64_t, std::uint64_t>& count_of_counts,
                                   int gt_max);

SurprisalScore sentence_surprisal(const TrigramLm& lm, const Sentence& sentence);

struct CacheState {
  static constexpr std::size_t kMaxHistory = 100;
  static constexpr double kDefaultMu = 0.05;

  std::vector<WordId> history;  // most recent last
  double mu = kDefaultMu;
  std::size_t max_history = kMaxHistory;
};

// Replaces the history with the context sentence (not appended), keeping the
// most recent max_history words.
CacheState update_cache(const CacheState& cache, const TrigramLm& lm, const Sentence& context);

// mu * count/|H| + (1 - mu) * p_trigram; p_trigram when the history is empty.
double cache_mixture(double p_trigram, std::size_t count_in_history, std::size_t history_size,
                     double mu);

double cache_prob(const TrigramLm& lm, const CacheState& cache, WordId w, WordId h2, WordId h1);

SurprisalScore cache_sentence_surprisal(const TrigramLm& lm, const CacheState& cache,
                                        const Sentence& sentence);

}  // namespace orderlab
