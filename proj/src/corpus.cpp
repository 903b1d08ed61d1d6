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

#include "orderlab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "orderlab/common.hpp"

namespace orderlab {

std::vector<std::string> DependencyTree::forms() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.form);
  return out;
}

int ColumnMap::min_columns() const {
  return 1 + std::max({id, form, lemma, upos, head, deprel});
}

std::size_t IngestionReport::accepted() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const auto& r) { return r.accepted; }));
}

void IngestionReport::write_tsv(std::ostream& out) const {
  out << "sentence_id\tstatus\treason\n";
  for (const auto& r : records)
    out << r.sentence_id << '\t' << (r.accepted ? "accepted" : "rejected") << '\t'
        << (r.reason.empty() ? "-" : r.reason) << '\n';
}

namespace {

// Value of a "# key = value" comment, if the comment has that key.
std::optional<std::string> comment_value(std::string_view line, std::string_view key) {
  auto body = trim(line.substr(1));
  if (body.substr(0, key.size()) != key) return std::nullopt;
  auto rest = trim(body.substr(key.size()));
  if (rest.empty() || rest.front() != '=') return std::nullopt;
  return std::string(trim(rest.substr(1)));
}

struct PendingSentence {
  std::vector<Token> tokens;
  std::string sentence_id;
  std::size_t first_line = 0;
};

}  // namespace

std::optional<std::string> validate_tree(const DependencyTree& tree) {
  const int n = static_cast<int>(tree.size());
  if (n == 0) return "empty";
  int roots = 0;
  for (const auto& t : tree.tokens) {
    if (t.head == t.index) return "self-loop";
    if (t.head < 0 || t.head > n) return "head-out-of-range";
    if (t.head == 0) ++roots;
  }
  if (roots == 0) return "no-root";
  if (roots > 1) return "multi-root";
  // Walk up from every token; a path longer than n revisits a node.
  for (const auto& t : tree.tokens) {
    int cur = t.index;
    int steps = 0;
    while (cur != 0) {
      cur = tree.at(cur).head;
      if (++steps > n) return "cycle";
    }
  }
  if (!is_projective(tree)) return "non-projective";
  return std::nullopt;
}

bool is_projective(const DependencyTree& tree) {
  const int n = static_cast<int>(tree.size());
  // Yield bounds and sizes accumulated by walking every token to the root.
  std::vector<int> lo(n + 1), hi(n + 1), count(n + 1, 0);
  for (int i = 0; i <= n; ++i) lo[i] = hi[i] = i;
  for (int i = 1; i <= n; ++i) {
    int cur = i;
    while (true) {
      lo[cur] = std::min(lo[cur], i);
      hi[cur] = std::max(hi[cur], i);
      ++count[cur];
      if (cur == 0) break;
      cur = tree.at(cur).head;
    }
  }
  for (int i = 1; i <= n; ++i)
    if (hi[i] - lo[i] + 1 != count[i]) return false;
  // The root arc from position 0 must not be covered by any other arc.
  const int root = root_of(tree).index;
  for (const auto& t : tree.tokens) {
    if (t.head == 0) continue;
    const int a = std::min(t.head, t.index), b = std::max(t.head, t.index);
    if (a < root && root < b) return false;
  }
  return true;
}

const Token& root_of(const DependencyTree& tree) {
  for (const auto& t : tree.tokens)
    if (t.head == 0) return t;
  throw std::logic_error("tree without root: " + tree.sentence_id);
}

std::vector<int> children_of(const DependencyTree& tree, int head) {
  std::vector<int> out;
  for (const auto& t : tree.tokens)
    if (t.head == head) out.push_back(t.index);
  return out;
}

Span subtree_span(const DependencyTree& tree, int index) {
  Span span{index, index};
  for (const auto& t : tree.tokens) {
    int cur = t.index;
    while (cur != 0 && cur != index) cur = tree.at(cur).head;
    if (cur == index) {
      span.first = std::min(span.first, t.index);
      span.last = std::max(span.last, t.index);
    }
  }
  return span;
}

Treebank parse_treebank(std::istream& input, const ColumnMap& columns,
                        const std::string& default_doc_id) {
  Treebank bank;
  std::string current_doc = default_doc_id;
  std::string next_sent_id;
  PendingSentence pending;
  std::size_t sentence_counter = 0;
  std::size_t line_no = 0;

  auto document_for = [&](const std::string& doc_id) -> Document& {
    if (bank.documents.empty() || bank.documents.back().doc_id != doc_id)
      bank.documents.push_back(Document{doc_id, {}});
    return bank.documents.back();
  };

  auto flush = [&] {
    if (pending.tokens.empty()) return;
    ++sentence_counter;
    DependencyTree tree;
    tree.tokens = std::move(pending.tokens);
    tree.doc_id = current_doc;
    tree.sentence_id = pending.sentence_id.empty()
                           ? current_doc + "-s" + std::to_string(sentence_counter)
                           : pending.sentence_id;
    auto reason = validate_tree(tree);
    bank.report.records.push_back({tree.sentence_id, !reason, reason.value_or("")});
    if (!reason) document_for(current_doc).sentences.push_back(std::move(tree));
    pending = PendingSentence{};
  };

  const int need = columns.min_columns();
  std::string line;
  while (std::getline(input, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) {
      flush();
      continue;
    }
    if (line.front() == '#') {
      if (auto doc = comment_value(line, "doc_id"); doc) {
        flush();
        current_doc = *doc;
      } else if (auto newdoc = comment_value(line, "newdoc id"); newdoc) {
        flush();
        current_doc = *newdoc;
      } else if (auto sid = comment_value(line, "sent_id"); sid) {
        if (!pending.tokens.empty())
          throw ParseError(line_no, "sent_id comment inside a sentence");
        pending.sentence_id = *sid;
      }
      continue;
    }
    auto cols = split(line, '\t');
    if (static_cast<int>(cols.size()) < need)
      throw ParseError(line_no, "expected at least " + std::to_string(need) +
                                    " tab-separated columns, found " +
                                    std::to_string(cols.size()));
    const auto& id_text = cols[columns.id];
    if (id_text.find('-') != std::string::npos || id_text.find('.') != std::string::npos)
      continue;  // multiword range or empty node
    Token tok;
    try {
      tok.index = static_cast<int>(parse_int(id_text));
      tok.head = static_cast<int>(parse_int(cols[columns.head]));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    if (tok.index != static_cast<int>(pending.tokens.size()) + 1)
      throw ParseError(line_no, "token index " + std::to_string(tok.index) +
                                    " out of sequence");
    if (pending.tokens.empty()) pending.first_line = line_no;
    tok.form = cols[columns.form];
    tok.lemma = cols[columns.lemma];
    tok.upos = cols[columns.upos];
    tok.deprel = cols[columns.deprel];
    pending.tokens.push_back(std::move(tok));
  }
  flush();
  return bank;
}

Treebank parse_treebank_file(const std::string& path, const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open treebank " + path);
  return parse_treebank(in, columns, "doc");
}

void write_conll(std::ostream& out, const std::vector<Document>& documents) {
  for (const auto& doc : documents) {
    out << "# doc_id = " << doc.doc_id << '\n';
    for (const auto& tree : doc.sentences) {
      out << "# sent_id = " << tree.sentence_id << '\n';
      for (const auto& t : tree.tokens)
        out << t.index << '\t' << t.form << '\t' << t.lemma << '\t' << t.upos << "\t_\t_\t"
            << t.head << '\t' << t.deprel << "\t_\t_\n";
      out << '\n';
    }
  }
}

DependencyTree reorder_tree(const DependencyTree& tree, const std::vector<int>& order) {
  const int n = static_cast<int>(tree.size());
  if (static_cast<int>(order.size()) != n)
    throw std::invalid_argument("reorder_tree: order length mismatch");
  std::vector<int> new_pos(n + 1, 0);
  for (int k = 0; k < n; ++k) {
    const int old = order[k];
    if (old < 1 || old > n || new_pos[old] != 0)
      throw std::invalid_argument("reorder_tree: order is not a permutation");
    new_pos[old] = k + 1;
  }
  DependencyTree out;
  out.sentence_id = tree.sentence_id;
  out.doc_id = tree.doc_id;
  out.tokens.reserve(n);
  for (int k = 0; k < n; ++k) {
    Token t = tree.at(order[k]);
    t.index = k + 1;
    t.head = t.head == 0 ? 0 : new_pos[t.head];
    out.tokens.push_back(std::move(t));
  }
  return out;
}

}  // namespace orderlab
