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

// Dependency treebank ingestion.
//
// Input is CoNLL-style text: one token per line, tab-separated columns,
// sentences separated by blank lines. Comment lines of the form
// "# doc_id = X" (or CoNLL-U "# newdoc id = X") open a new document and
// "# sent_id = Y" names the next sentence. Multiword-token ranges ("3-4") and
// empty nodes ("3.1") are skipped.
//
// A sentence is accepted only if it forms a single projective tree. Rejected
// sentences are recorded in the IngestionReport and dropped; a structurally
// malformed line (wrong column count, non-numeric head) aborts the parse with
// a ParseError carrying the line number.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace orderlab {

struct Token {
  int index = 0;  // 1-based position
  std::string form;
  std::string lemma;
  std::string upos;
  int head = 0;   // 0 = root
  std::string deprel;

  bool operator==(const Token&) const = default;
};

struct DependencyTree {
  std::vector<Token> tokens;
  std::string sentence_id;
  std::string doc_id;

  std::size_t size() const { return tokens.size(); }
  // 1-based access.
  const Token& at(int index) const { return tokens.at(static_cast<std::size_t>(index - 1)); }
  std::vector<std::string> forms() const;

  bool operator==(const DependencyTree&) const = default;
};

struct Document {
  std::string doc_id;
  std::vector<DependencyTree> sentences;

  // Preceding sentence of sentence k, or nullptr for k == 0.
  const DependencyTree* context_of(std::size_t k) const {
    return k == 0 ? nullptr : &sentences[k - 1];
  }

  bool operator==(const Document&) const = default;
};

// Zero-based column positions. Defaults follow CoNLL-U.
struct ColumnMap {
  int id = 0;
  int form = 1;
  int lemma = 2;
  int upos = 3;
  int head = 6;
  int deprel = 7;
  // Minimum number of columns a token line must have.
  int min_columns() const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct IngestionRecord {
  std::string sentence_id;
  bool accepted = false;
  std::string reason;  // empty when accepted
};

struct IngestionReport {
  std::vector<IngestionRecord> records;

  std::size_t total() const { return records.size(); }
  std::size_t accepted() const;
  std::size_t rejected() const { return total() - accepted(); }
  // Tab-separated: sentence_id, status, reason.
  void write_tsv(std::ostream& out) const;
};

struct Treebank {
  std::vector<Document> documents;
  IngestionReport report;
};

// Parses a treebank stream. Sentences preceding any document marker are
// placed in a document named `default_doc_id`.
Treebank parse_treebank(std::istream& input, const ColumnMap& columns = {},
                        const std::string& default_doc_id = "doc");
Treebank parse_treebank_file(const std::string& path, const ColumnMap& columns = {});

// Validation of a candidate tree. Returns the rejection reason, or nullopt for
// a well-formed projective tree. Reasons: "empty", "self-loop",
// "head-out-of-range", "no-root", "multi-root", "cycle", "non-projective".
std::optional<std::string> validate_tree(const DependencyTree& tree);

// Projectivity with the artificial root arc: every subtree's yield is a
// contiguous span and no arc covers the root. Assumes a single acyclic tree.
bool is_projective(const DependencyTree& tree);

// The unique token with head 0.
const Token& root_of(const DependencyTree& tree);

// Children (1-based indices) of a token, in linear order; head 0 gives the root.
std::vector<int> children_of(const DependencyTree& tree, int head);

// Inclusive [first, last] span of the subtree rooted at `index`.
struct Span {
  int first = 0;
  int last = 0;
  int length() const { return last - first + 1; }
  bool contains(int i) const { return first <= i && i <= last; }
  bool operator==(const Span&) const = default;
};
Span subtree_span(const DependencyTree& tree, int index);

// Writes documents in 10-column CoNLL-U with doc/sent comments.
void write_conll(std::ostream& out, const std::vector<Document>& documents);

// Renumbers a tree after reordering: `order` lists original 1-based indices in
// their new linear order. Heads are remapped so the arcs are unchanged.
DependencyTree reorder_tree(const DependencyTree& tree, const std::vector<int>& order);

}  // namespace orderlab
