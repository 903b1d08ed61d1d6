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

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace orderlab {

using WordId = std::uint32_t;
using Sentence = std::vector<std::string>;

// Word <-> id mapping shared by the n-gram and LSTM models. Ids 0..2 are
// reserved for <s>, </s> and <unk>; the remaining words are sorted so that
// the mapping does not depend on corpus order.
class Vocabulary {
 public:
  static constexpr WordId kBos = 0;
  static constexpr WordId kEos = 1;
  static constexpr WordId kUnk = 2;

  Vocabulary();

  // Words with frequency >= min_count; the rest map to <unk>.
  static Vocabulary build(const std::vector<Sentence>& sentences, std::size_t min_count);

  WordId id(std::string_view word) const;
  const std::string& word(WordId id) const { return words_.at(id); }
  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view word) const;
  std::vector<WordId> encode(const Sentence& sentence) const;

  // One word per line in id order.
  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in, std::size_t count);

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  void add(const std::string& word);
  std::vector<std::string> words_;
  std::unordered_map<std::string, WordId> ids_;
};

enum class LogBase { Two, E };

LogBase parse_log_base(std::string_view text);
std::string_view log_base_name(LogBase base);

// -log_base(p).
inline double surprisal_of(double p, LogBase base) {
  return base == LogBase::Two ? -std::log2(p) : -std::log(p);
}

struct SurprisalScore {
  std::vector<double> per_token;  // includes the </s> term
  double total = 0.0;

  void push(double s) {
    per_token.push_back(s);
    total += s;
  }
};

}  // namespace orderlab
