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

// Forced-choice evaluation service.
//
//   GET  /api/items/next?participant=ID
//   POST /api/judgments   {"participant": ID, "item_id": N, "choice": "A"|"B"}
//   GET  /api/results
//   GET  /api/health
//
// Judgments are appended to a newline-delimited JSON log (flushed and
// fsync'd before the acknowledgment) and replayed at startup; the latest
// judgment per (participant, item) wins.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace orderlab {

struct StimulusItem {
  int item_id = 0;
  std::string context;
  std::string reference;
  std::string variant;
  bool model_chose_reference = true;
};

// Columns: item_id, context, reference, variant, model_prediction, where
// model_prediction is 1/reference or 0/variant. An optional header row
// starting with "item_id" is skipped.
std::vector<StimulusItem> read_stimulus_pool(std::istream& in);
std::vector<StimulusItem> read_stimulus_pool_file(const std::string& path);
void write_stimulus_pool(std::ostream& out, const std::vector<StimulusItem>& items);

// Whether the reference is shown as option A for this item.
bool reference_is_option_a(int item_id, std::uint64_t seed);

enum class Choice { A, B };

std::optional<Choice> parse_choice(const std::string& text);
const char* choice_name(Choice c);

struct Judgment {
  std::string participant;
  int item_id = 0;
  Choice choice = Choice::A;
  std::int64_t timestamp_ms = 0;
};

// One JSON object per line. Unparseable lines (e.g. a torn final write)
// are skipped and counted.
struct LogReplay {
  std::vector<Judgment> judgments;
  std::size_t skipped_lines = 0;
};
LogReplay replay_judgment_log(const std::string& path);

struct ItemTally {
  int item_id = 0;
  std::size_t votes = 0;
  std::size_t reference_votes = 0;
  std::optional<int> human_label;  // 1 iff strictly more than half chose the reference
  int model_label = 0;             // 1 iff the model chose the reference
};

struct ResultsSummary {
  std::vector<ItemTally> items;
  std::size_t judgments = 0;
  std::size_t judged_items = 0;
  // Percentages over judged items.
  double human_corpus = 0.0;
  double model_corpus = 0.0;
  double model_human = 0.0;
  // Over two sentences per judged item (reference and variant).
  std::optional<double> pearson_model_human;
  std::optional<double> pearson_model_corpus;

  std::string to_json() const;
};

// Strict majority rule for one item.
std::optional<int> human_label(std::size_t reference_votes, std::size_t votes);

// `judgments` in log order; later entries for a (participant, item) replace
// earlier ones.
ResultsSummary summarize(const std::vector<StimulusItem>& pool,
                         const std::vector<Judgment>& judgments, std::uint64_t seed);

struct EvalConfig {
  std::uint64_t seed = 0;
  std::string log_path;    // empty: judgments kept in memory only
  std::string static_dir;  // UI bundle; empty: not served
};

enum class RecordStatus { Accepted, UnknownItem, UnknownChoice, BadParticipant, NoPool };

class EvalService {
 public:
  explicit EvalService(EvalConfig config);
  ~EvalService();
  EvalService(const EvalService&) = delete;
  EvalService& operator=(const EvalService&) = delete;

  void set_pool(std::vector<StimulusItem> pool);
  bool has_pool() const;
  const EvalConfig& config() const { return config_; }

  // JSON payload for the participant's next item (or {"done": true}).
  // Throws std::runtime_error without a pool.
  std::string next_item_json(const std::string& participant) const;

  RecordStatus record(const std::string& participant, int item_id, const std::string& choice);

  ResultsSummary results() const;
  std::size_t judgment_count() const;
  std::size_t replay_skipped() const { return replay_skipped_; }

 private:
  EvalConfig config_;
  mutable std::mutex mutex_;
  std::vector<StimulusItem> pool_;
  bool has_pool_ = false;
  std::vector<Judgment> log_;
  std::map<std::pair<std::string, int>, Choice> latest_;
  int fd_ = -1;
  std::size_t replay_skipped_ = 0;
};

// HTTP front end for an EvalService.
class EvalServer {
 public:
  explicit EvalServer(EvalService& service);
  ~EvalServer();

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  // Blocks serving on the calling thread.
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace orderlab
