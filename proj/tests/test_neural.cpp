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

#include <cmath>
#include <sstream>

#include "orderlab/neural_lm.hpp"
#include "support.hpp"

namespace orderlab {
namespace {

std::vector<Sentence> toy_corpus(std::uint64_t seed, std::size_t n) {
  SplitMix64 rng(seed);
  return testing::zipf_corpus(rng, n, 12, 6);
}

LstmLm small_model(std::uint64_t seed, std::size_t hidden = 8, std::size_t layers = 2) {
  const auto corpus = toy_corpus(seed, 40);
  LstmDims dims{hidden, hidden, layers};
  return LstmLm::initialize(Vocabulary::build(corpus, 1), dims, seed, 0.3);
}

TEST(Lstm, ZeroOutputLayerIsUniform) {
  auto lm = small_model(1);
  lm.mutable_params().output.setZero();
  lm.mutable_params().output_bias.setZero();
  const auto s = lstm_sentence_surprisal(lm, {"v0", "v1", "v3"});
  ASSERT_EQ(s.per_token.size(), 4u);
  for (double x : s.per_token) EXPECT_NEAR(x, std::log2(static_cast<double>(lm.vocab().size())), 1e-12);
}

TEST(Lstm, SoftmaxNormalizedEveryStep) {
  const auto lm = small_model(2);
  const auto seq = lstm_sequence(lm.vocab(), {"v0", "v2", "zzz", "v1"});
  EXPECT_EQ(seq.front(), Vocabulary::kBos);
  EXPECT_EQ(seq.back(), Vocabulary::kEos);
  for (const auto& p : step_distributions(lm.params(), lm.dims(), seq)) {
    EXPECT_NEAR(p.sum(), 1.0, 1e-6);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
}

TEST(Lstm, SurprisalMatchesLossesAndBase) {
  const auto lm = small_model(3);
  const Sentence s{"v1", "v2", "v0"};
  const auto losses = token_losses(lm.params(), lm.dims(), lstm_sequence(lm.vocab(), s));
  const auto bits = lstm_sentence_surprisal(lm, s);
  ASSERT_EQ(losses.size(), bits.per_token.size());
  for (std::size_t i = 0; i < losses.size(); ++i) EXPECT_NEAR(bits.per_token[i], losses[i] / std::log(2.0), 1e-12);
}

TEST(Lstm, GradientCheckSmallModel) {
  const auto lm = small_model(4);
  const auto r = gradient_check(lm, {"v0", "v1", "v2", "v0", "v5"}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4);
  EXPECT_GT(r.parameters_checked, 500u);
  EXPECT_EQ(r.per_block.size(), lm.params().block_names().size());
}

TEST(Lstm, CancellationAtTinyEpsilon) {
  const auto lm = small_model(4);
  const Sentence s{"v0", "v1", "v2"};
  EXPECT_GT(gradient_check(lm, s, 1e-12).max_absolute_error, gradient_check(lm, s, 1e-5).max_absolute_error);
}

TEST(Lstm, AbsentWordEmbeddingGradientIsZero) {
  const auto lm = small_model(5);
  LstmParams grad;
  loss_and_gradient(lm.params(), lm.dims(), lstm_sequence(lm.vocab(), {"v0", "v1"}), grad);
  const WordId absent = lm.vocab().id("v7");
  ASSERT_NE(absent, Vocabulary::kUnk);
  for (Eigen::Index j = 0; j < grad.embedding.cols(); ++j) EXPECT_EQ(grad.embedding(absent, j), 0.0);
  EXPECT_NE(grad.embedding.row(lm.vocab().id("v0")).norm(), 0.0);
}

TEST(Lstm, ClipGradient) {
  auto lm = small_model(6);
  LstmParams grad;
  loss_and_gradient(lm.params(), lm.dims(), lstm_sequence(lm.vocab(), {"v0", "v1"}), grad);
  const double norm = std::sqrt(grad.squared_norm());
  EXPECT_NEAR(clip_gradient(grad, norm / 4), norm, 1e-12);
  EXPECT_NEAR(std::sqrt(grad.squared_norm()), norm / 4, 1e-12);
  const LstmParams before = grad;
  clip_gradient(grad, norm * 10);
  EXPECT_TRUE(grad == before);
}

TEST(Lstm, AdaptationLearningRateZeroIsIdentity) {
  const auto lm = small_model(7);
  AdaptationConfig cfg;
  cfg.learning_rate = 0.0;
  const std::vector<Sentence> targets{{"v0", "v1"}, {"v3", "v2", "v9"}, {}};
  const auto adapted = adapt_and_score(lm, {"v1", "v1", "v4"}, targets, cfg);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto plain = lstm_sentence_surprisal(lm, targets[i]);
    EXPECT_EQ(adapted[i].per_token, plain.per_token);
    EXPECT_EQ(adapted[i].total, plain.total);
  }
}

TEST(Lstm, EmptyContextTakesNoStep) {
  const auto lm = small_model(8);
  AdaptationTrace trace;
  const auto out = adapt_and_score(lm, {}, {{"v0", "v2"}}, {}, &trace);
  EXPECT_EQ(out[0].total, lstm_sentence_surprisal(lm, {"v0", "v2"}).total);
  EXPECT_EQ(trace.adaptation_steps, 0u);
  EXPECT_EQ(trace.targets_scored, 1u);
}

TEST(Lstm, AdaptationLowersContextLossAndRestoresWeights) {
  const auto lm = small_model(9);
  const LstmParams before = lm.params();
  AdaptationTrace trace;
  const Sentence ctx{"v0", "v1", "v0", "v1"};
  const auto a = adapt_and_score(lm, ctx, {{"v0", "v1"}, {"v1", "v0"}}, {}, &trace);
  EXPECT_EQ(trace.adaptation_steps, 1u);
  EXPECT_EQ(trace.targets_scored, 2u);
  EXPECT_LT(trace.context_loss_after, trace.context_loss_before);
  EXPECT_TRUE(lm.params() == before);
  const auto b = adapt_and_score(lm, ctx, {{"v0", "v1"}, {"v1", "v0"}});
  EXPECT_EQ(a[0].per_token, b[0].per_token);
  EXPECT_EQ(a[1].per_token, b[1].per_token);
  EXPECT_THROW(adapted_params(lm, ctx, {-1.0, 0.25}), std::invalid_argument);
}

TEST(Lstm, TrainingIsDeterministic) {
  LstmTrainConfig cfg;
  cfg.dims = {6, 6, 1};
  cfg.epochs = 2;
  cfg.base_lr = 1.0;
  cfg.min_count = 1;
  cfg.seed = 11;
  const auto corpus = toy_corpus(3, 30);
  const auto a = train_lstm(corpus, cfg);
  const auto b = train_lstm(corpus, cfg);
  EXPECT_TRUE(a.params() == b.params());
  EXPECT_EQ(a.training_loss, b.training_loss);
  cfg.seed = 12;
  EXPECT_FALSE(train_lstm(corpus, cfg).params() == a.params());
}

TEST(Lstm, LearnsDeterministicAlternation) {
  LstmTrainConfig cfg;
  cfg.dims = {16, 16, 1};
  cfg.epochs = 80;
  cfg.base_lr = 1.0;
  cfg.clip = 5.0;
  cfg.min_count = 1;
  cfg.seed = 2;
  std::vector<Sentence> corpus(20, Sentence{"a", "b", "a", "b", "a", "b"});
  std::vector<std::size_t> epochs;
  const auto lm = train_lstm(corpus, cfg, {}, [&](std::size_t e, double, double) { epochs.push_back(e); });
  EXPECT_EQ(epochs.size(), 80u);
  EXPECT_LT(lm.training_loss.back(), lm.training_loss.front());
  const auto s = lstm_sentence_surprisal(lm, corpus[0]);
  for (std::size_t i = 1; i < s.per_token.size(); ++i) EXPECT_LT(s.per_token[i], 0.2) << i;
}

TEST(Lstm, NonFiniteLossAborts) {
  LstmTrainConfig cfg;
  cfg.dims = {4, 4, 1};
  cfg.epochs = 3;
  cfg.base_lr = 1e300;
  cfg.clip = 1e300;
  cfg.min_count = 1;
  EXPECT_THROW(train_lstm(toy_corpus(1, 10), cfg), std::runtime_error);
  EXPECT_THROW(train_lstm({}, cfg), std::invalid_argument);
}

TEST(Lstm, SaveLoadRoundTrip) {
  auto lm = small_model(10, 5, 2);
  lm.training_loss = {2.0, 1.5};
  std::stringstream buf;
  lm.save(buf);
  const auto back = LstmLm::load(buf);
  EXPECT_TRUE(back.params() == lm.params());
  EXPECT_EQ(back.dims(), lm.dims());
  EXPECT_TRUE(back.vocab() == lm.vocab());
  std::istringstream junk("not a model");
  EXPECT_THROW(LstmLm::load(junk), std::runtime_error);
}

TEST(Lstm, PerplexityIsExpOfLoss) {
  const auto lm = small_model(12);
  const auto corpus = toy_corpus(12, 10);
  EXPECT_NEAR(perplexity(lm, corpus), std::exp(corpus_loss(lm, corpus)), 1e-12);
}

}  // namespace
}  // namespace orderlab
