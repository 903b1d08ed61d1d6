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

#include "orderlab/ngram_lm.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "orderlab/common.hpp"

namespace orderlab {

namespace {

constexpr WordId kMaxVocab = (1u << 21) - 1;
constexpr double kTinyMass = 1e-12;

}  // namespace

std::vector<double> katz_discounts(const std::map<std::uint64_t, std::uint64_t>& count_of_counts,
                                   int gt_max) {
  // Log-linear fit over the nonzero counts-of-counts bridges gaps.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int points = 0;
  for (const auto& [r, n] : count_of_counts) {
    if (r == 0 || n == 0) continue;
    const double x = std::log(static_cast<double>(r)), y = std::log(static_cast<double>(n));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++points;
  }
  const bool have_fit = points >= 2 && (points * sxx - sx * sx) > 0;
  const double slope = have_fit ? (points * sxy - sx * sy) / (points * sxx - sx * sx) : 0.0;
  const double intercept = have_fit ? (sy - slope * sx) / points : 0.0;

  auto smoothed = [&](std::uint64_t r) -> double {
    auto it = count_of_counts.find(r);
    if (it != count_of_counts.end() && it->second > 0) return static_cast<double>(it->second);
    return have_fit ? std::exp(intercept + slope * std::log(static_cast<double>(r))) : 0.0;
  };

  const double n1 = smoothed(1);
  if (n1 <= 0) return {};
  for (int k = gt_max; k >= 1; --k) {
    const double common = (k + 1) * smoothed(k + 1) / n1;
    if (!(common < 1.0)) continue;
    std::vector<double> d(k);
    bool valid = true;
    for (int r = 1; r <= k && valid; ++r) {
      const double nr = smoothed(r);
      if (nr <= 0) {
        valid = false;
        break;
      }
      const double r_star = (r + 1) * smoothed(r + 1) / nr;
      d[r - 1] = (r_star / r - common) / (1.0 - common);
      valid = d[r - 1] > 0.0 && d[r - 1] <= 1.0;
    }
    if (valid) return d;
  }
  return {};
}

TrigramLm TrigramLm::train(const std::vector<Sentence>& sentences, const NgramOptions& options) {
  if (sentences.empty()) throw std::invalid_argument("train_trigram: empty corpus");
  TrigramLm lm;
  lm.options_ = options;
  lm.vocab_ = Vocabulary::build(sentences, options.min_count);
  if (lm.vocab_.size() > kMaxVocab) throw std::invalid_argument("vocabulary too large");
  lm.unigram_counts_.assign(lm.vocab_.size(), 0);
  for (const auto& s : sentences) {
    auto ids = lm.vocab_.encode(s);
    ids.push_back(Vocabulary::kEos);
    WordId h2 = Vocabulary::kBos, h1 = Vocabulary::kBos;
    for (WordId w : ids) {
      ++lm.unigram_counts_[w];
      ++lm.bigram_counts_[key(h1, w)];
      ++lm.trigram_counts_[key(h2, h1, w)];
      ++lm.total_tokens_;
      h2 = h1;
      h1 = w;
    }
  }
  lm.estimate();
  return lm;
}

double TrigramLm::discount(int order, std::uint64_t r) const {
  const auto& d = discounts_.at(order - 1);
  return (r >= 1 && r <= d.size()) ? d[r - 1] : 1.0;
}

double TrigramLm::discounted(int order, std::uint64_t c, std::uint64_t context_total) const {
  return discount(order, c) * static_cast<double>(c) / static_cast<double>(context_total);
}

void TrigramLm::estimate() {
  const std::size_t v = vocab_.size();
  discounts_.assign(3, {});

  // Unigrams.
  {
    std::map<std::uint64_t, std::uint64_t> coc;
    for (WordId w = 0; w < v; ++w)
      if (w != Vocabulary::kBos && unigram_counts_[w] > 0) ++coc[unigram_counts_[w]];
    discounts_[0] = katz_discounts(coc, options_.gt_max);

    unigram_prob_.assign(v, 0.0);
    double seen = 0.0;
    std::size_t zero = 0;
    for (WordId w = 0; w < v; ++w) {
      if (w == Vocabulary::kBos) continue;
      if (unigram_counts_[w] == 0) {
        ++zero;
        continue;
      }
      unigram_prob_[w] = discounted(1, unigram_counts_[w], total_tokens_);
      seen += unigram_prob_[w];
    }
    const double freed = 1.0 - seen;
    if (zero == 0) {
      for (auto& p : unigram_prob_) p /= seen;
    } else if (freed > kTinyMass) {
      for (WordId w = 0; w < v; ++w)
        if (w != Vocabulary::kBos && unigram_counts_[w] == 0)
          unigram_prob_[w] = freed / static_cast<double>(zero);
    } else {
      const double denom = static_cast<double>(total_tokens_ + zero);
      for (WordId w = 0; w < v; ++w)
        if (w != Vocabulary::kBos)
          unigram_prob_[w] =
              unigram_counts_[w] == 0 ? 1.0 / denom : static_cast<double>(unigram_counts_[w]) / denom;
    }
  }

  // Shared backoff-weight computation for one order.
  auto finish_context = [](ContextStats& st, double seen_disc, double seen_lower) {
    const double unseen_lower = 1.0 - seen_lower;
    double freed = 1.0 - seen_disc;
    if (unseen_lower <= kTinyMass) {
      st.alpha = 0.0;
      st.seen_scale = 1.0 / seen_disc;
      return;
    }
    if (freed <= kTinyMass) {
      const double reserve = 1.0 / static_cast<double>(st.total + 1);
      st.seen_scale = (1.0 - reserve) / seen_disc;
      freed = reserve;
    }
    st.alpha = freed / unseen_lower;
  };

  // Bigrams.
  {
    std::map<std::uint64_t, std::uint64_t> coc;
    for (const auto& [k, c] : bigram_counts_) {
      ++coc[c];
      bigram_contexts_[static_cast<WordId>(k >> 21)].total += c;
    }
    discounts_[1] = katz_discounts(coc, options_.gt_max);
    std::unordered_map<WordId, std::pair<double, double>> sums;
    for (const auto& [k, c] : bigram_counts_) {
      const auto h1 = static_cast<WordId>(k >> 21);
      const auto w = static_cast<WordId>(k & kMaxVocab);
      auto& s = sums[h1];
      s.first += discounted(2, c, bigram_contexts_[h1].total);
      s.second += unigram_prob_[w];
    }
    for (auto& [h1, st] : bigram_contexts_) finish_context(st, sums[h1].first, sums[h1].second);
  }

  // Trigrams.
  {
    std::map<std::uint64_t, std::uint64_t> coc;
    for (const auto& [k, c] : trigram_counts_) {
      ++coc[c];
      trigram_contexts_[k >> 21].total += c;
    }
    discounts_[2] = katz_discounts(coc, options_.gt_max);
    std::unordered_map<std::uint64_t, std::pair<double, double>> sums;
    for (const auto& [k, c] : trigram_counts_) {
      const auto ctx = k >> 21;
      const auto h1 = static_cast<WordId>(ctx & kMaxVocab);
      const auto w = static_cast<WordId>(k & kMaxVocab);
      auto& s = sums[ctx];
      s.first += discounted(3, c, trigram_contexts_[ctx].total);
      s.second += prob_bigram(w, h1);
    }
    for (auto& [ctx, st] : trigram_contexts_) finish_context(st, sums[ctx].first, sums[ctx].second);
  }
}

double TrigramLm::prob_bigram(WordId w, WordId h1) const {
  auto ctx = bigram_contexts_.find(h1);
  if (ctx == bigram_contexts_.end()) return unigram_prob_.at(w);
  auto it = bigram_counts_.find(key(h1, w));
  if (it != bigram_counts_.end())
    return ctx->second.seen_scale * discounted(2, it->second, ctx->second.total);
  return ctx->second.alpha * unigram_prob_.at(w);
}

double TrigramLm::prob(WordId w, WordId h2, WordId h1) const {
  auto ctx = trigram_contexts_.find(key(h2, h1));
  if (ctx == trigram_contexts_.end()) return prob_bigram(w, h1);
  auto it = trigram_counts_.find(key(h2, h1, w));
  if (it != trigram_counts_.end())
    return ctx->second.seen_scale * discounted(3, it->second, ctx->second.total);
  return ctx->second.alpha * prob_bigram(w, h1);
}

std::uint64_t TrigramLm::count(WordId w) const { return unigram_counts_.at(w); }

std::uint64_t TrigramLm::count(WordId h1, WordId w) const {
  auto it = bigram_counts_.find(key(h1, w));
  return it == bigram_counts_.end() ? 0 : it->second;
}

std::uint64_t TrigramLm::count(WordId h2, WordId h1, WordId w) const {
  auto it = trigram_counts_.find(key(h2, h1, w));
  return it == trigram_counts_.end() ? 0 : it->second;
}

double TrigramLm::backoff_weight(WordId h1) const {
  auto it = bigram_contexts_.find(h1);
  return it == bigram_contexts_.end() ? 1.0 : it->second.alpha;
}

double TrigramLm::backoff_weight(WordId h2, WordId h1) const {
  auto it = trigram_contexts_.find(key(h2, h1));
  return it == trigram_contexts_.end() ? 1.0 : it->second.alpha;
}

// Model file:
//   #orderlab-ngram <TAB> 1
//   order / log_base / gt_max / min_count / total_tokens lines
//   vocab <V>, then V words in id order
//   discounts <order> <k>, then k coefficients
//   unigrams <V>: id, count, probability
//   bigram_contexts / trigram_contexts: context ids, total, alpha, scale
//   bigrams / trigrams: ids, count
// Reals are written in shortest round-trip form, so load(save(m)) == m.
void TrigramLm::save(std::ostream& out) const {
  out << "#orderlab-ngram\t1\n"
      << "order\t" << kOrder << '\n'
      << "log_base\t" << log_base_name(options_.log_base) << '\n'
      << "gt_max\t" << options_.gt_max << '\n'
      << "min_count\t" << options_.min_count << '\n'
      << "total_tokens\t" << total_tokens_ << '\n'
      << "vocab\t" << vocab_.size() << '\n';
  vocab_.write(out);
  for (int order = 1; order <= 3; ++order) {
    const auto& d = discounts_[order - 1];
    out << "discounts\t" << order << '\t' << d.size() << '\n';
    for (double x : d) out << format_double(x) << '\n';
  }
  out << "unigrams\t" << vocab_.size() << '\n';
  for (WordId w = 0; w < vocab_.size(); ++w)
    out << w << '\t' << unigram_counts_[w] << '\t' << format_double(unigram_prob_[w]) << '\n';

  auto stats_line = [&](const ContextStats& st) {
    out << st.total << '\t' << format_double(st.alpha) << '\t' << format_double(st.seen_scale)
        << '\n';
  };
  std::vector<WordId> bctx;
  for (const auto& [h, st] : bigram_contexts_) bctx.push_back(h);
  std::sort(bctx.begin(), bctx.end());
  out << "bigram_contexts\t" << bctx.size() << '\n';
  for (auto h : bctx) {
    out << h << '\t';
    stats_line(bigram_contexts_.at(h));
  }
  std::vector<std::uint64_t> keys;
  for (const auto& [k, c] : bigram_counts_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  out << "bigrams\t" << keys.size() << '\n';
  for (auto k : keys)
    out << (k >> 21) << '\t' << (k & kMaxVocab) << '\t' << bigram_counts_.at(k) << '\n';

  keys.clear();
  for (const auto& [k, st] : trigram_contexts_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  out << "trigram_contexts\t" << keys.size() << '\n';
  for (auto k : keys) {
    out << (k >> 21) << '\t' << (k & kMaxVocab) << '\t';
    stats_line(trigram_contexts_.at(k));
  }
  keys.clear();
  for (const auto& [k, c] : trigram_counts_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  out << "trigrams\t" << keys.size() << '\n';
  for (auto k : keys)
    out << (k >> 42) << '\t' << ((k >> 21) & kMaxVocab) << '\t' << (k & kMaxVocab) << '\t'
        << trigram_counts_.at(k) << '\n';
}

namespace {

std::vector<std::string> expect_line(std::istream& in, const std::string& tag, std::size_t fields) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("ngram model truncated before " + tag);
  auto cols = split(line, '\t');
  if (cols.size() != fields || (!tag.empty() && cols[0] != tag))
    throw std::runtime_error("ngram model: malformed '" + tag + "' line: " + line);
  return cols;
}

std::uint64_t as_u64(const std::string& s) { return static_cast<std::uint64_t>(parse_int(s)); }

}  // namespace

TrigramLm TrigramLm::load(std::istream& in) {
  TrigramLm lm;
  auto header = expect_line(in, "#orderlab-ngram", 2);
  if (header[1] != "1") throw std::runtime_error("unsupported ngram model version " + header[1]);
  if (expect_line(in, "order", 2)[1] != "3") throw std::runtime_error("only order 3 supported");
  lm.options_.log_base = parse_log_base(expect_line(in, "log_base", 2)[1]);
  lm.options_.gt_max = static_cast<int>(parse_int(expect_line(in, "gt_max", 2)[1]));
  lm.options_.min_count = as_u64(expect_line(in, "min_count", 2)[1]);
  lm.total_tokens_ = as_u64(expect_line(in, "total_tokens", 2)[1]);
  const auto v = as_u64(expect_line(in, "vocab", 2)[1]);
  lm.vocab_ = Vocabulary::read(in, v);
  lm.discounts_.assign(3, {});
  for (int order = 1; order <= 3; ++order) {
    auto cols = expect_line(in, "discounts", 3);
    const auto k = as_u64(cols[2]);
    for (std::uint64_t i = 0; i < k; ++i)
      lm.discounts_[order - 1].push_back(parse_double(expect_line(in, "", 1)[0]));
  }
  expect_line(in, "unigrams", 2);
  lm.unigram_counts_.assign(v, 0);
  lm.unigram_prob_.assign(v, 0.0);
  for (std::uint64_t i = 0; i < v; ++i) {
    auto cols = expect_line(in, "", 3);
    const auto w = as_u64(cols[0]);
    lm.unigram_counts_.at(w) = as_u64(cols[1]);
    lm.unigram_prob_.at(w) = parse_double(cols[2]);
  }
  auto n = as_u64(expect_line(in, "bigram_contexts", 2)[1]);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto c = expect_line(in, "", 4);
    lm.bigram_contexts_[static_cast<WordId>(as_u64(c[0]))] = {as_u64(c[1]), parse_double(c[2]),
                                                              parse_double(c[3])};
  }
  n = as_u64(expect_line(in, "bigrams", 2)[1]);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto c = expect_line(in, "", 3);
    lm.bigram_counts_[key(static_cast<WordId>(as_u64(c[0])), static_cast<WordId>(as_u64(c[1])))] =
        as_u64(c[2]);
  }
  n = as_u64(expect_line(in, "trigram_contexts", 2)[1]);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto c = expect_line(in, "", 5);
    lm.trigram_contexts_[key(static_cast<WordId>(as_u64(c[0])), static_cast<WordId>(as_u64(c[1])))] =
        {as_u64(c[2]), parse_double(c[3]), parse_double(c[4])};
  }
  n = as_u64(expect_line(in, "trigrams", 2)[1]);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto c = expect_line(in, "", 4);
    lm.trigram_counts_[key(static_cast<WordId>(as_u64(c[0])), static_cast<WordId>(as_u64(c[1])),
                           static_cast<WordId>(as_u64(c[2])))] = as_u64(c[3]);
  }
  return lm;
}

SurprisalScore sentence_surprisal(const TrigramLm& lm, const Sentence& sentence) {
  SurprisalScore score;
  auto ids = lm.vocab().encode(sentence);
  ids.push_back(Vocabulary::kEos);
  WordId h2 = Vocabulary::kBos, h1 = Vocabulary::kBos;
  for (WordId w : ids) {
    score.push(surprisal_of(lm.prob(w, h2, h1), lm.log_base()));
    h2 = h1;
    h1 = w;
  }
  return score;
}

CacheState update_cache(const CacheState& cache, const TrigramLm& lm, const Sentence& context) {
  CacheState next = cache;
  next.history = lm.vocab().encode(context);
  if (next.history.size() > next.max_history)
    next.history.erase(next.history.begin(),
                       next.history.end() - static_cast<std::ptrdiff_t>(next.max_history));
  return next;
}

double cache_mixture(double p_trigram, std::size_t count_in_history, std::size_t history_size,
                     double mu) {
  if (history_size == 0 || mu == 0.0) return p_trigram;
  const double p_cache = static_cast<double>(count_in_history) / static_cast<double>(history_size);
  return mu * p_cache + (1.0 - mu) * p_trigram;
}

double cache_prob(const TrigramLm& lm, const CacheState& cache, WordId w, WordId h2, WordId h1) {
  const auto hits = static_cast<std::size_t>(
      std::count(cache.history.begin(), cache.history.end(), w));
  return cache_mixture(lm.prob(w, h2, h1), hits, cache.history.size(), cache.mu);
}

SurprisalScore cache_sentence_surprisal(const TrigramLm& lm, const CacheState& cache,
                                        const Sentence& sentence) {
  if (cache.mu < 0.0 || cache.mu > 1.0) throw std::invalid_argument("cache mu must be in [0,1]");
  SurprisalScore score;
  auto ids = lm.vocab().encode(sentence);
  ids.push_back(Vocabulary::kEos);
  WordId h2 = Vocabulary::kBos, h1 = Vocabulary::kBos;
  for (WordId w : ids) {
    score.push(surprisal_of(cache_prob(lm, cache, w, h2, h1), lm.log_base()));
    h2 = h1;
    h1 = w;
  }
  return score;
}

}  // namespace orderlab
