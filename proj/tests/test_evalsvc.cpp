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

#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "orderlab/evalsvc.hpp"
#include "support.hpp"

#include "httplib.h"
#include "json.hpp"

using namespace orderlab;
using nlohmann::json;

namespace {

std::vector<StimulusItem> make_pool(int n) {
  std::vector<StimulusItem> pool;
  for (int i = 0; i < n; ++i) {
    StimulusItem it;
    it.item_id = 100 + i;
    it.context = "context " + std::to_string(i);
    it.reference = "ref sentence " + std::to_string(i);
    it.variant = "sentence ref " + std::to_string(i);
    it.model_chose_reference = i % 3 != 0;
    pool.push_back(it);
  }
  return pool;
}

// Independent copy of the option layout.
bool ref_is_a(int item_id, std::uint64_t seed) {
  std::uint64_t z = (seed ^ static_cast<std::uint32_t>(item_id)) + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return (z & 1) == 0;
}

std::string choice_for_ref(int item_id, std::uint64_t seed, bool pick_reference) {
  return (ref_is_a(item_id, seed) == pick_reference) ? "A" : "B";
}

struct Live {
  EvalService service;
  EvalServer server;
  int port;
  httplib::Client client;

  explicit Live(EvalConfig cfg)
      : service(std::move(cfg)), server(service), port(server.start("127.0.0.1", 0)),
        client("127.0.0.1", port) {
    client.set_connection_timeout(5);
    client.set_read_timeout(10);
  }
  ~Live() { server.stop(); }

  httplib::Result post(const json& body) {
    return client.Post("/api/judgments", body.dump(), "application/json");
  }
  json next(const std::string& who) {
    auto r = client.Get(("/api/items/next?participant=" + who).c_str());
    EXPECT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    return json::parse(r->body);
  }
};

// Recomputes the results object from the raw log without the library.
json offline_results(const std::vector<StimulusItem>& pool, const std::string& log_path,
                     std::uint64_t seed) {
  std::map<std::pair<std::string, int>, std::string> latest;
  std::ifstream in(log_path);
  std::string line;
  while (std::getline(in, line)) {
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    latest[{j["participant"].get<std::string>(), j["item_id"].get<int>()}] =
        j["choice"].get<std::string>();
  }
  std::map<int, std::pair<int, int>> tally;
  for (const auto& [k, c] : latest) {
    auto& t = tally[k.second];
    ++t.first;
    t.second += (c == "A") == ref_is_a(k.second, seed);
  }
  json items = json::array();
  int judged = 0, hc = 0, mc = 0, mh = 0;
  for (const auto& it : pool) {
    const auto [votes, refv] = tally[it.item_id];
    const int model = it.model_chose_reference ? 1 : 0;
    json h = nullptr;
    if (votes > 0) {
      const int label = 2 * refv > votes ? 1 : 0;
      h = label;
      ++judged;
      hc += label;
      mc += model;
      mh += model == label;
    }
    items.push_back({{"item_id", it.item_id},
                     {"votes", votes},
                     {"reference_votes", refv},
                     {"human_label", h},
                     {"model_label", model},
                     {"corpus_label", 1}});
  }
  json out{{"items", items}, {"judgments", latest.size()}, {"judged_items", judged}};
  if (judged > 0) {
    out["agreement"] = {{"human_corpus", 100.0 * hc / judged},
                        {"model_corpus", 100.0 * mc / judged},
                        {"model_human", 100.0 * mh / judged}};
  }
  return out;
}

}  // namespace

TEST(StimulusPool, ReadWriteRoundTrip) {
  const auto pool = make_pool(4);
  std::stringstream ss;
  write_stimulus_pool(ss, pool);
  const auto back = read_stimulus_pool(ss);
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back[i].item_id, pool[i].item_id);
    EXPECT_EQ(back[i].reference, pool[i].reference);
    EXPECT_EQ(back[i].variant, pool[i].variant);
    EXPECT_EQ(back[i].model_chose_reference, pool[i].model_chose_reference);
  }
}

TEST(StimulusPool, Rejections) {
  auto bad = [](const std::string& text) {
    std::istringstream in(text);
    EXPECT_THROW(read_stimulus_pool(in), ParseError) << text;
  };
  bad("1\tc\tr\tv\n");
  bad("x\tc\tr\tv\t1\n");
  bad("1\tc\tr\tv\tmaybe\n");
  bad("1\tc\tsame\tsame\t1\n");
  bad("1\tc\tr\tv\t1\n1\tc\tr2\tv2\t0\n");
  EXPECT_THROW(read_stimulus_pool_file("/nonexistent/pool.tsv"), std::runtime_error);
  std::istringstream ok("# note\n2\tc\tr\tv\tvariant\n1\tc\tr\tv\treference\n");
  const auto items = read_stimulus_pool(ok);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].item_id, 1);
  EXPECT_FALSE(items[1].model_chose_reference);
}

TEST(EvalLabels, StrictMajority) {
  EXPECT_EQ(human_label(7, 12), 1);
  EXPECT_EQ(human_label(6, 12), 0);
  EXPECT_EQ(human_label(1, 1), 1);
  EXPECT_FALSE(human_label(0, 0).has_value());
}

TEST(EvalLabels, OptionLayoutMatchesIndependentFormula) {
  int a_count = 0;
  for (int id = -50; id < 1000; ++id) {
    for (std::uint64_t seed : {0ULL, 7ULL, 0xdeadbeefULL}) {
      EXPECT_EQ(reference_is_option_a(id, seed), ref_is_a(id, seed));
    }
    a_count += reference_is_option_a(id, 7);
  }
  EXPECT_GT(a_count, 400);
  EXPECT_LT(a_count, 650);
}

TEST(EvalHttp, NoPoolIs503) {
  Live live(EvalConfig{});
  auto r = live.client.Get("/api/items/next?participant=p");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 503);
  auto h = live.client.Get("/api/health");
  ASSERT_TRUE(h);
  EXPECT_FALSE(json::parse(h->body)["pool_loaded"].get<bool>());
  auto p = live.post({{"participant", "p"}, {"item_id", 1}, {"choice", "A"}});
  ASSERT_TRUE(p);
  EXPECT_EQ(p->status, 503);
}

TEST(EvalHttp, NextItemIsBlindAndOrdered) {
  EvalConfig cfg;
  cfg.seed = 11;
  Live live(cfg);
  const auto pool = make_pool(3);
  live.service.set_pool(pool);

  auto missing = live.client.Get("/api/items/next");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 400);

  auto j = live.next("alice");
  std::set<std::string> keys;
  for (auto& [k, v] : j.items()) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"done", "item_id", "context", "options", "progress"}));
  EXPECT_FALSE(j["done"].get<bool>());
  EXPECT_EQ(j["item_id"], 100);
  ASSERT_EQ(j["options"].size(), 2u);
  for (const auto& o : j["options"]) {
    std::set<std::string> ok;
    for (auto& [k, v] : o.items()) ok.insert(k);
    EXPECT_EQ(ok, (std::set<std::string>{"label", "text"}));
  }
  const bool ra = ref_is_a(100, 11);
  EXPECT_EQ(j["options"][0]["text"], ra ? pool[0].reference : pool[0].variant);
  EXPECT_EQ(j["options"][1]["text"], ra ? pool[0].variant : pool[0].reference);
  EXPECT_EQ(j["progress"]["judged"], 0);
  EXPECT_EQ(j["progress"]["total"], 3);

  for (const auto& it : pool) {
    auto r = live.post({{"participant", "alice"}, {"item_id", it.item_id}, {"choice", "B"}});
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(json::parse(r->body)["item_id"], it.item_id);
  }
  auto done = live.next("alice");
  EXPECT_TRUE(done["done"].get<bool>());
  EXPECT_EQ(done["progress"]["judged"], 3);
  EXPECT_EQ(live.next("bob")["item_id"], 100);
}

TEST(EvalHttp, LayoutStableAcrossRestart) {
  EvalConfig cfg;
  cfg.seed = 99;
  std::string first, second;
  {
    Live live(cfg);
    live.service.set_pool(make_pool(2));
    first = live.next("p").dump();
  }
  {
    Live live(cfg);
    live.service.set_pool(make_pool(2));
    second = live.next("p").dump();
  }
  EXPECT_EQ(first, second);
}

TEST(EvalHttp, ValidationErrors) {
  Live live(EvalConfig{});
  live.service.set_pool(make_pool(2));
  auto status = [&](const std::string& body) {
    auto r = live.client.Post("/api/judgments", body, "application/json");
    return r ? r->status : -1;
  };
  EXPECT_EQ(status("{not json"), 400);
  EXPECT_EQ(status("[1,2]"), 400);
  EXPECT_EQ(status(R"({"item_id":100,"choice":"A"})"), 400);
  EXPECT_EQ(status(R"({"participant":"p","item_id":"100","choice":"A"})"), 400);
  EXPECT_EQ(status(R"({"participant":"p","item_id":100,"choice":1})"), 400);
  EXPECT_EQ(status(R"({"participant":"","item_id":100,"choice":"A"})"), 400);
  EXPECT_EQ(status(R"({"participant":"p","item_id":5,"choice":"A"})"), 422);
  EXPECT_EQ(status(R"({"participant":"p","item_id":100,"choice":"C"})"), 422);
  EXPECT_EQ(status(R"({"participant":"p","item_id":100,"choice":"A"})"), 200);
  EXPECT_EQ(live.service.judgment_count(), 1u);
}

TEST(EvalHttp, DuplicateOverwrites) {
  EvalConfig cfg;
  cfg.seed = 5;
  Live live(cfg);
  live.service.set_pool(make_pool(1));
  const int id = 100;
  live.post({{"participant", "p"}, {"item_id", id}, {"choice", choice_for_ref(id, 5, true)}});
  live.post({{"participant", "p"}, {"item_id", id}, {"choice", choice_for_ref(id, 5, false)}});
  const auto res = json::parse(live.client.Get("/api/results")->body);
  EXPECT_EQ(res["items"][0]["votes"], 1);
  EXPECT_EQ(res["items"][0]["reference_votes"], 0);
  EXPECT_EQ(res["items"][0]["human_label"], 0);
  EXPECT_EQ(res["judgments"], 1);
}

TEST(EvalHttp, MajorityThroughService) {
  EvalConfig cfg;
  cfg.seed = 3;
  Live live(cfg);
  live.service.set_pool(make_pool(2));
  for (int p = 0; p < 12; ++p) {
    const std::string who = "p" + std::to_string(p);
    live.post({{"participant", who}, {"item_id", 100}, {"choice", choice_for_ref(100, 3, p < 7)}});
    live.post({{"participant", who}, {"item_id", 101}, {"choice", choice_for_ref(101, 3, p < 6)}});
  }
  const auto res = json::parse(live.client.Get("/api/results")->body);
  EXPECT_EQ(res["items"][0]["reference_votes"], 7);
  EXPECT_EQ(res["items"][0]["human_label"], 1);
  EXPECT_EQ(res["items"][1]["reference_votes"], 6);
  EXPECT_EQ(res["items"][1]["human_label"], 0);
  EXPECT_EQ(res["judged_items"], 2);
  for (const auto& it : res["items"]) EXPECT_EQ(it["corpus_label"], 1);
}

TEST(EvalHttp, DurableAcrossRestartAndOfflineAgrees) {
  orderlab::testing::TempDir dir;
  EvalConfig cfg;
  cfg.seed = 2024;
  cfg.log_path = dir.file("judgments.ndjson");
  const auto pool = make_pool(6);
  std::mt19937_64 rng(17);
  {
    Live live(cfg);
    live.service.set_pool(pool);
    for (int i = 0; i < 60; ++i) {
      const std::string who = "w" + std::to_string(rng() % 9);
      const int id = 100 + static_cast<int>(rng() % 6);
      live.post({{"participant", who}, {"item_id", id}, {"choice", rng() % 2 ? "A" : "B"}});
    }
  }
  EvalService again(cfg);
  again.set_pool(pool);
  const auto replay = replay_judgment_log(cfg.log_path);
  EXPECT_EQ(replay.judgments.size(), 60u);
  EXPECT_EQ(replay.skipped_lines, 0u);

  const json live_json = json::parse(again.results().to_json());
  const json offline = offline_results(pool, cfg.log_path, cfg.seed);
  EXPECT_EQ(live_json["items"], offline["items"]);
  EXPECT_EQ(live_json["judgments"], offline["judgments"]);
  EXPECT_EQ(live_json["judged_items"], offline["judged_items"]);
  EXPECT_EQ(live_json["agreement"], offline["agreement"]);
}

TEST(EvalHttp, TornFinalLineSkipped) {
  orderlab::testing::TempDir dir;
  EvalConfig cfg;
  cfg.log_path = dir.file("log.ndjson");
  orderlab::testing::write_text(cfg.log_path,
                      R"({"participant":"a","item_id":100,"choice":"A","timestamp_ms":1})"
                      "\n"
                      R"({"participant":"b","item_id":100,"ch)");
  {
    EvalService svc(cfg);
    svc.set_pool(make_pool(1));
    EXPECT_EQ(svc.replay_skipped(), 1u);
    EXPECT_EQ(svc.judgment_count(), 1u);
    EXPECT_EQ(svc.record("c", 100, "B"), RecordStatus::Accepted);
  }
  EvalService svc(cfg);
  EXPECT_EQ(svc.replay_skipped(), 1u);
  EXPECT_EQ(svc.judgment_count(), 2u);
}

TEST(EvalHttp, ConcurrentPosts) {
  orderlab::testing::TempDir dir;
  EvalConfig cfg;
  cfg.log_path = dir.file("log.ndjson");
  Live live(cfg);
  live.service.set_pool(make_pool(5));
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", live.port);
      for (int i = 0; i < 5; ++i) {
        json body{{"participant", "t" + std::to_string(t)}, {"item_id", 100 + i}, {"choice", "A"}};
        auto r = c.Post("/api/judgments", body.dump(), "application/json");
        EXPECT_TRUE(r && r->status == 200);
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(live.service.judgment_count(), 20u);
  const auto replay = replay_judgment_log(cfg.log_path);
  EXPECT_EQ(replay.judgments.size(), 20u);
  EXPECT_EQ(replay.skipped_lines, 0u);
  auto h = json::parse(live.client.Get("/api/health")->body);
  EXPECT_EQ(h["judgments"], 20);
}
