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

#include "orderlab/evalsvc.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>
#include <thread>

#include "orderlab/analysis.hpp"
#include "orderlab/common.hpp"
#include "orderlab/corpus.hpp"

// After Eigen: <resolv.h> (pulled in by httplib) defines a `_res` macro.
#include "httplib.h"
#include "json.hpp"

namespace orderlab {

using nlohmann::json;

std::vector<StimulusItem> read_stimulus_pool(std::istream& in) {
  std::vector<StimulusItem> items;
  std::set<int> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (line.rfind("item_id\t", 0) == 0) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 5) throw ParseError(line_no, "stimulus rows need 5 tab-separated columns");
    StimulusItem item;
    try {
      item.item_id = static_cast<int>(parse_int(cols[0]));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    item.context = cols[1];
    item.reference = cols[2];
    item.variant = cols[3];
    const auto pred = to_lower(cols[4]);
    if (pred == "1" || pred == "reference")
      item.model_chose_reference = true;
    else if (pred == "0" || pred == "variant")
      item.model_chose_reference = false;
    else
      throw ParseError(line_no, "model_prediction must be 1/0 or reference/variant");
    if (item.reference == item.variant)
      throw ParseError(line_no, "reference and variant are identical");
    if (!ids.insert(item.item_id).second)
      throw ParseError(line_no, "duplicate item_id " + cols[0]);
    items.push_back(std::move(item));
  }
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
  return items;
}

std::vector<StimulusItem> read_stimulus_pool_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stimulus pool " + path);
  return read_stimulus_pool(in);
}

void write_stimulus_pool(std::ostream& out, const std::vector<StimulusItem>& items) {
  out << "item_id\tcontext\treference\tvariant\tmodel_prediction\n";
  for (const auto& it : items)
    out << it.item_id << '\t' << it.context << '\t' << it.reference << '\t' << it.variant << '\t'
        << (it.model_chose_reference ? 1 : 0) << '\n';
}

bool reference_is_option_a(int item_id, std::uint64_t seed) {
  SplitMix64 rng(seed ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(item_id)));
  return (rng.next() & 1ULL) == 0;
}

std::optional<Choice> parse_choice(const std::string& text) {
  if (text == "A") return Choice::A;
  if (text == "B") return Choice::B;
  return std::nullopt;
}

const char* choice_name(Choice c) { return c == Choice::A ? "A" : "B"; }

namespace {

json judgment_json(const Judgment& j) {
  return json{{"participant", j.participant},
              {"item_id", j.item_id},
              {"choice", choice_name(j.choice)},
              {"timestamp_ms", j.timestamp_ms}};
}

std::optional<Judgment> judgment_from_json(const std::string& line) {
  const json doc = json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
  if (!doc.contains("participant") || !doc["participant"].is_string()) return std::nullopt;
  if (!doc.contains("item_id") || !doc["item_id"].is_number_integer()) return std::nullopt;
  if (!doc.contains("choice") || !doc["choice"].is_string()) return std::nullopt;
  const auto choice = parse_choice(doc["choice"].get<std::string>());
  if (!choice) return std::nullopt;
  Judgment j;
  j.participant = doc["participant"].get<std::string>();
  j.item_id = doc["item_id"].get<int>();
  j.choice = *choice;
  if (doc.contains("timestamp_ms") && doc["timestamp_ms"].is_number_integer())
    j.timestamp_ms = doc["timestamp_ms"].get<std::int64_t>();
  return j;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

LogReplay replay_judgment_log(const std::string& path) {
  LogReplay out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (auto j = judgment_from_json(line))
      out.judgments.push_back(std::move(*j));
    else
      ++out.skipped_lines;
  }
  return out;
}

std::optional<int> human_label(std::size_t reference_votes, std::size_t votes) {
  if (votes == 0) return std::nullopt;
  return 2 * reference_votes > votes ? 1 : 0;
}

ResultsSummary summarize(const std::vector<StimulusItem>& pool,
                         const std::vector<Judgment>& judgments, std::uint64_t seed) {
  std::map<std::pair<std::string, int>, Choice> latest;
  for (const auto& j : judgments) latest[{j.participant, j.item_id}] = j.choice;

  std::map<int, std::size_t> index;
  ResultsSummary s;
  for (const auto& item : pool) {
    index[item.item_id] = s.items.size();
    ItemTally t;
    t.item_id = item.item_id;
    t.model_label = item.model_chose_reference ? 1 : 0;
    s.items.push_back(t);
  }
  for (const auto& [key, choice] : latest) {
    auto it = index.find(key.second);
    if (it == index.end()) continue;
    auto& t = s.items[it->second];
    ++t.votes;
    const bool ref_a = reference_is_option_a(t.item_id, seed);
    t.reference_votes += (choice == Choice::A) == ref_a;
    ++s.judgments;
  }

  std::size_t human_corpus = 0, model_corpus = 0, model_human = 0;
  std::vector<double> model_ind, human_ind, corpus_ind;
  for (auto& t : s.items) {
    t.human_label = human_label(t.reference_votes, t.votes);
    if (!t.human_label) continue;
    ++s.judged_items;
    human_corpus += *t.human_label == 1;
    model_corpus += t.model_label == 1;
    model_human += t.model_label == *t.human_label;
    model_ind.push_back(t.model_label);
    human_ind.push_back(*t.human_label);
    corpus_ind.push_back(1.0);
    model_ind.push_back(1 - t.model_label);
    human_ind.push_back(1 - *t.human_label);
    corpus_ind.push_back(0.0);
  }
  if (s.judged_items > 0) {
    const double n = static_cast<double>(s.judged_items);
    s.human_corpus = 100.0 * static_cast<double>(human_corpus) / n;
    s.model_corpus = 100.0 * static_cast<double>(model_corpus) / n;
    s.model_human = 100.0 * static_cast<double>(model_human) / n;
    s.pearson_model_human = pearson(model_ind, human_ind);
    s.pearson_model_corpus = pearson(model_ind, corpus_ind);
  }
  return s;
}

std::string ResultsSummary::to_json() const {
  json items_json = json::array();
  for (const auto& t : items)
    items_json.push_back({{"item_id", t.item_id},
                          {"votes", t.votes},
                          {"reference_votes", t.reference_votes},
                          {"human_label", t.human_label ? json(*t.human_label) : json(nullptr)},
                          {"model_label", t.model_label},
                          {"corpus_label", 1}});
  json doc{{"items", items_json},
           {"judgments", judgments},
           {"judged_items", judged_items},
           {"agreement",
            {{"human_corpus", human_corpus},
             {"model_corpus", model_corpus},
             {"model_human", model_human}}},
           {"pearson",
            {{"model_human", optional_number(pearson_model_human)},
             {"model_corpus", optional_number(pearson_model_corpus)}}}};
  return doc.dump();
}

EvalService::EvalService(EvalConfig config) : config_(std::move(config)) {
  if (config_.log_path.empty()) return;
  auto replay = replay_judgment_log(config_.log_path);
  replay_skipped_ = replay.skipped_lines;
  for (auto& j : replay.judgments) {
    latest_[{j.participant, j.item_id}] = j.choice;
    log_.push_back(std::move(j));
  }
  fd_ = ::open(config_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0)
    throw std::runtime_error("cannot open judgment log " + config_.log_path + ": " +
                             std::strerror(errno));
  // Terminate a torn final record so the next append starts on its own line.
  std::ifstream tail(config_.log_path, std::ios::binary | std::ios::ate);
  if (tail && tail.tellg() > 0) {
    tail.seekg(-1, std::ios::end);
    if (tail.get() != '\n' && ::write(fd_, "\n", 1) != 1)
      throw std::runtime_error("cannot repair judgment log " + config_.log_path);
  }
}

EvalService::~EvalService() {
  if (fd_ >= 0) ::close(fd_);
}

void EvalService::set_pool(std::vector<StimulusItem> pool) {
  std::lock_guard lock(mutex_);
  std::sort(pool.begin(), pool.end(),
            [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
  pool_ = std::move(pool);
  has_pool_ = true;
}

bool EvalService::has_pool() const {
  std::lock_guard lock(mutex_);
  return has_pool_;
}

std::string EvalService::next_item_json(const std::string& participant) const {
  std::lock_guard lock(mutex_);
  if (!has_pool_) throw std::runtime_error("no stimulus pool loaded");
  std::size_t judged = 0;
  const StimulusItem* next = nullptr;
  for (const auto& item : pool_) {
    if (latest_.count({participant, item.item_id}))
      ++judged;
    else if (!next)
      next = &item;
  }
  json progress{{"judged", judged}, {"total", pool_.size()}};
  if (!next) return json{{"done", true}, {"progress", progress}}.dump();
  const bool ref_a = reference_is_option_a(next->item_id, config_.seed);
  const auto& a = ref_a ? next->reference : next->variant;
  const auto& b = ref_a ? next->variant : next->reference;
  return json{{"done", false},
              {"item_id", next->item_id},
              {"context", next->context},
              {"options", json::array({{{"label", "A"}, {"text", a}}, {{"label", "B"}, {"text", b}}})},
              {"progress", progress}}
      .dump();
}

RecordStatus EvalService::record(const std::string& participant, int item_id,
                                 const std::string& choice_text) {
  std::lock_guard lock(mutex_);
  if (!has_pool_) return RecordStatus::NoPool;
  if (participant.empty()) return RecordStatus::BadParticipant;
  const bool known = std::any_of(pool_.begin(), pool_.end(),
                                 [&](const auto& it) { return it.item_id == item_id; });
  if (!known) return RecordStatus::UnknownItem;
  const auto choice = parse_choice(choice_text);
  if (!choice) return RecordStatus::UnknownChoice;

  Judgment j{participant, item_id, *choice, now_ms()};
  if (fd_ >= 0) {
    const std::string line = judgment_json(j).dump() + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
      const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error(std::string("judgment log write failed: ") + std::strerror(errno));
      }
      written += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0)
      throw std::runtime_error(std::string("judgment log fsync failed: ") + std::strerror(errno));
  }
  latest_[{participant, item_id}] = *choice;
  log_.push_back(std::move(j));
  return RecordStatus::Accepted;
}

ResultsSummary EvalService::results() const {
  std::lock_guard lock(mutex_);
  return summarize(pool_, log_, config_.seed);
}

std::size_t EvalService::judgment_count() const {
  std::lock_guard lock(mutex_);
  return latest_.size();
}

struct EvalServer::Impl {
  EvalService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(EvalService& s) : service(s) { routes(); }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void routes() {
    server.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200,
                {{"status", "ok"},
                 {"pool_loaded", service.has_pool()},
                 {"judgments", service.judgment_count()}});
    });

    server.Get("/api/items/next", [this](const httplib::Request& req, httplib::Response& res) {
      if (!service.has_pool()) return send_json(res, 503, {{"error", "no stimulus pool loaded"}});
      const auto participant = req.get_param_value("participant");
      if (participant.empty()) return send_json(res, 400, {{"error", "participant is required"}});
      res.status = 200;
      res.set_content(service.next_item_json(participant), "application/json");
    });

    server.Post("/api/judgments", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object())
        return send_json(res, 400, {{"error", "body must be a JSON object"}});
      if (!body.contains("participant") || !body["participant"].is_string())
        return send_json(res, 400, {{"error", "participant must be a string"}});
      if (!body.contains("item_id") || !body["item_id"].is_number_integer())
        return send_json(res, 400, {{"error", "item_id must be an integer"}});
      if (!body.contains("choice") || !body["choice"].is_string())
        return send_json(res, 400, {{"error", "choice must be a string"}});
      const int item_id = body["item_id"].get<int>();
      switch (service.record(body["participant"].get<std::string>(), item_id,
                             body["choice"].get<std::string>())) {
        case RecordStatus::Accepted:
          return send_json(res, 200, {{"ok", true}, {"item_id", item_id}});
        case RecordStatus::UnknownItem:
          return send_json(res, 422, {{"error", "unknown item_id " + std::to_string(item_id)}});
        case RecordStatus::UnknownChoice:
          return send_json(res, 422, {{"error", "choice must be \"A\" or \"B\""}});
        case RecordStatus::BadParticipant:
          return send_json(res, 400, {{"error", "participant must be non-empty"}});
        case RecordStatus::NoPool:
          return send_json(res, 503, {{"error", "no stimulus pool loaded"}});
      }
    });

    server.Get("/api/results", [this](const httplib::Request&, httplib::Response& res) {
      res.status = 200;
      res.set_content(service.results().to_json(), "application/json");
    });

    server.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          std::string what = "internal error";
          try {
            std::rethrow_exception(ep);
          } catch (const std::exception& e) {
            what = e.what();
          } catch (...) {
          }
          send_json(res, 500, {{"error", what}});
        });

    const auto& dir = service.config().static_dir;
    if (!dir.empty() && std::filesystem::is_directory(dir)) server.set_mount_point("/", dir);
  }
};

EvalServer::EvalServer(EvalService& service) : impl_(std::make_unique<Impl>(service)) {}

EvalServer::~EvalServer() { stop(); }

int EvalServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool EvalServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void EvalServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace orderlab
