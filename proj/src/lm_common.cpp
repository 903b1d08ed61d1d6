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

#include "orderlab/lm_common.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

namespace orderlab {

Vocabulary::Vocabulary() {
  add("<s>");
  add("</s>");
  add("<unk>");
}

void Vocabulary::add(const std::string& word) {
  if (ids_.count(word)) throw std::invalid_argument("duplicate vocabulary word: " + word);
  ids_.emplace(word, static_cast<WordId>(words_.size()));
  words_.push_back(word);
}

Vocabulary Vocabulary::build(const std::vector<Sentence>& sentences, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  Vocabulary v;
  for (const auto& [w, c] : counts)
    if (c >= min_count && !v.contains(w)) v.add(w);
  return v;
}

WordId Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const {
  return ids_.count(std::string(word)) != 0;
}

std::vector<WordId> Vocabulary::encode(const Sentence& sentence) const {
  std::vector<WordId> out;
  out.reserve(sentence.size());
  for (const auto& w : sentence) out.push_back(id(w));
  return out;
}

void Vocabulary::write(std::ostream& out) const {
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::read(std::istream& in, std::size_t count) {
  Vocabulary v;
  std::string line;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("truncated vocabulary");
    if (i < 3) {
      if (line != v.words_[i]) throw std::runtime_error("vocabulary reserved words mismatch");
      continue;
    }
    v.add(line);
  }
  return v;
}

LogBase parse_log_base(std::string_view text) {
  if (text == "2") return LogBase::Two;
  if (text == "e") return LogBase::E;
  throw std::invalid_argument("log base must be 2 or e, got '" + std::string(text) + "'");
}

std::string_view log_base_name(LogBase base) { return base == LogBase::Two ? "2" : "e"; }

}  // namespace orderlab
