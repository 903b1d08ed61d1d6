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

// Reference Katz/Good-Turing trigram model over strings, written directly
// from the estimator's definition with plain maps and no id packing.

#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace orderlab::testing {

class KatzOracle {
 public:
  using Words = std::vector<std::string>;

  KatzOracle(const std::vector<Words>& corpus, std::size_t min_count, int gt_max) {
    std::map<std::string, std::size_t> freq;
    for (const auto& s : corpus)
      for (const auto& w : s) ++freq[w];
    vocab_ = {"</s>", "<unk>"};
    for (const auto& [w, c] : freq)
      if (c >= min_count) vocab_.insert(w);
    for (const auto& s : corpus) {
      Words seq{"<s>", "<s>"};
      for (const auto& w : s) seq.push_back(vocab_.count(w) ? w : "<unk>");
      seq.push_back("</s>");
      for (std::size_t k = 2; k < seq.size(); ++k) {
        ++uni_[seq[k]];
        ++bi_[{seq[k - 1], seq[k]}];
        ++tri_[{seq[k - 2], seq[k - 1], seq[k]}];
        ++bi_ctx_[seq[k - 1]];
        ++tri_ctx_[{seq[k - 2], seq[k - 1]}];
        ++n_;
      }
    }
    d_[0] = discounts(coc(uni_), gt_max);
    d_[1] = discounts(coc(bi_), gt_max);
    d_[2] = discounts(coc(tri_), gt_max);

    double seen = 0;
    std::size_t zero = 0;
    for (const auto& w : vocab_) {
      auto it = uni_.find(w);
      if (it == uni_.end()) {
        ++zero;
      } else {
        seen += disc(0, it->second) * it->second / static_cast<double>(n_);
      }
    }
    for (const auto& w : vocab_) {
      auto it = uni_.find(w);
      const double c = it == uni_.end() ? 0.0 : static_cast<double>(it->second);
      if (zero == 0)
        p1_[w] = disc(0, it->second) * c / n_ / seen;
      else if (1.0 - seen > 1e-12)
        p1_[w] = c > 0 ? disc(0, it->second) * c / n_ : (1.0 - seen) / zero;
      else
        p1_[w] = (c > 0 ? c : 1.0) / static_cast<double>(n_ + zero);
    }
  }

  const std::set<std::string>& vocab() const { return vocab_; }
  std::size_t tokens() const { return n_; }

  std::size_t singletons() const {
    std::size_t n1 = 0;
    for (const auto& [w, c] : uni_) n1 += c == 1;
    return n1;
  }

  double unigram(const std::string& w) const { return p1_.at(w); }

  double bigram(const std::string& w, const std::string& h1) const {
    auto ctx = bi_ctx_.find(h1);
    if (ctx == bi_ctx_.end()) return unigram(w);
    double seen_disc = 0, seen_lower = 0;
    for (const auto& x : vocab_) {
      auto it = bi_.find({h1, x});
      if (it == bi_.end()) continue;
      seen_disc += disc(1, it->second) * it->second / static_cast<double>(ctx->second);
      seen_lower += unigram(x);
    }
    const auto [alpha, scale] = weights(seen_disc, seen_lower, ctx->second);
    auto it = bi_.find({h1, w});
    if (it != bi_.end()) return scale * disc(1, it->second) * it->second / static_cast<double>(ctx->second);
    return alpha * unigram(w);
  }

  double trigram(const std::string& w, const std::string& h2, const std::string& h1) const {
    auto ctx = tri_ctx_.find({h2, h1});
    if (ctx == tri_ctx_.end()) return bigram(w, h1);
    double seen_disc = 0, seen_lower = 0;
    for (const auto& x : vocab_) {
      auto it = tri_.find({h2, h1, x});
      if (it == tri_.end()) continue;
      seen_disc += disc(2, it->second) * it->second / static_cast<double>(ctx->second);
      seen_lower += bigram(x, h1);
    }
    const auto [alpha, scale] = weights(seen_disc, seen_lower, ctx->second);
    auto it = tri_.find({h2, h1, w});
    if (it != tri_.end()) return scale * disc(2, it->second) * it->second / static_cast<double>(ctx->second);
    return alpha * bigram(w, h1);
  }

  // Discount table d_1..d_k chosen for an order (1-based).
  const std::vector<double>& table(int order) const { return d_[order - 1]; }

  template <class Map>
  static std::map<std::size_t, std::size_t> coc(const Map& counts) {
    std::map<std::size_t, std::size_t> out;
    for (const auto& [k, c] : counts) ++out[c];
    return out;
  }

  static std::vector<double> discounts(const std::map<std::size_t, std::size_t>& nr, int gt_max) {
    // Least-squares line through (log r, log N_r) for the missing N_r.
    std::vector<double> xs, ys;
    for (const auto& [r, n] : nr) {
      xs.push_back(std::log(double(r)));
      ys.push_back(std::log(double(n)));
    }
    double a = 0, b = 0;
    bool fitted = false;
    if (xs.size() >= 2) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
      mx /= xs.size();
      my /= ys.size();
      double num = 0, den = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
      }
      if (den > 0) {
        fitted = true;
        b = num / den;
        a = my - b * mx;
      }
    }
    auto N = [&](std::size_t r) {
      auto it = nr.find(r);
      if (it != nr.end()) return double(it->second);
      return fitted ? std::exp(a + b * std::log(double(r))) : 0.0;
    };
    if (N(1) <= 0) return {};
    for (int k = gt_max; k >= 1; --k) {
      const double big = (k + 1) * N(k + 1) / N(1);
      if (big >= 1.0) continue;
      std::vector<double> d;
      for (int r = 1; r <= k; ++r) {
        if (N(r) <= 0) break;
        const double rs = (r + 1) * N(r + 1) / N(r);
        const double dr = (rs / r - big) / (1 - big);
        if (!(dr > 0 && dr <= 1)) break;
        d.push_back(dr);
      }
      if (static_cast<int>(d.size()) == k) return d;
    }
    return {};
  }

 private:
  double disc(int order, std::size_t r) const {
    const auto& d = d_[order];
    return r >= 1 && r <= d.size() ? d[r - 1] : 1.0;
  }

  static std::pair<double, double> weights(double seen_disc, double seen_lower, std::size_t total) {
    if (1.0 - seen_lower <= 1e-12) return {0.0, 1.0 / seen_disc};
    double freed = 1.0 - seen_disc, scale = 1.0;
    if (freed <= 1e-12) {
      freed = 1.0 / (total + 1.0);
      scale = (1.0 - freed) / seen_disc;
    }
    return {freed / (1.0 - seen_lower), scale};
  }

  std::set<std::string> vocab_;
  std::size_t n_ = 0;
  std::map<std::string, std::size_t> uni_;
  std::map<std::pair<std::string, std::string>, std::size_t> bi_;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> tri_;
  std::map<std::string, std::size_t> bi_ctx_;
  std::map<std::pair<std::string, std::string>, std::size_t> tri_ctx_;
  std::vector<double> d_[3];
  std::map<std::string, double> p1_;
};

}  // namespace orderlab::testing
