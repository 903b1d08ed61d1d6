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

// Word-level LSTM language model in double precision.
//
// A sentence w1..wn is processed as inputs <s>, w1..wn with targets
// w1..wn, </s>; hidden and cell states start at zero for every sentence.
// Each layer computes, from its input x and previous hidden state h,
//     [i f g o] = W [x; h] + b
//     c' = sigmoid(f) * c + sigmoid(i) * tanh(g)
//     h' = sigmoid(o) * tanh(c')
// and the top layer feeds a softmax over the vocabulary. The training and
// adaptation loss is the mean per-target cross-entropy (nats).
//
// Adaptive scoring copies the base parameters, takes a single SGD step on
// the context sentence's loss (gradient clipped to a global norm), scores
// every target with the adapted copy, and discards the copy.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orderlab/lm_common.hpp"

namespace orderlab {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LstmDims {
  std::size_t embedding = 200;
  std::size_t hidden = 200;
  std::size_t layers = 2;

  bool operator==(const LstmDims&) const = default;
};

struct LstmParams {
  RowMatrix embedding;                 // V x E
  std::vector<RowMatrix> gates;        // per layer: 4H x (in + H), rows i,f,g,o
  std::vector<Eigen::VectorXd> bias;   // per layer: 4H
  RowMatrix output;                    // V x H
  Eigen::VectorXd output_bias;         // V

  static LstmParams zeros(std::size_t vocab, const LstmDims& dims);

  // Mutable views of every parameter block, in a fixed order.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  std::vector<std::string> block_names() const;

  double squared_norm() const;
  void scale(double factor);
  // this += factor * other
  void axpy(double factor, const LstmParams& other);
  bool all_finite() const;

  bool operator==(const LstmParams& other) const;
};

class LstmLm {
 public:
  LstmLm() = default;
  LstmLm(Vocabulary vocab, LstmDims dims, LogBase base = LogBase::Two);

  // Uniform(-range, range) initialization from SplitMix64(seed).
  static LstmLm initialize(Vocabulary vocab, LstmDims dims, std::uint64_t seed,
                           double init_range = 0.1, LogBase base = LogBase::Two);

  const Vocabulary& vocab() const { return vocab_; }
  const LstmDims& dims() const { return dims_; }
  LogBase log_base() const { return log_base_; }
  const LstmParams& params() const { return params_; }
  LstmParams& mutable_params() { return params_; }

  // Mean training loss (nats/token) after each epoch.
  std::vector<double> training_loss;

  // Binary container: magic, version, dims, vocab, row-major doubles.
  void save(std::ostream& out) const;
  static LstmLm load(std::istream& in);

 private:
  Vocabulary vocab_;
  LstmDims dims_;
  LogBase log_base_ = LogBase::Two;
  LstmParams params_;
};

// <s>-prefixed input ids and </s>-terminated targets for a sentence.
std::vector<WordId> lstm_sequence(const Vocabulary& vocab, const Sentence& sentence);

// Per-target natural-log losses under the given parameters.
std::vector<double> token_losses(const LstmParams& params, const LstmDims& dims,
                                 const std::vector<WordId>& sequence);

// Softmax distribution at every step (rows = steps); used for checks.
std::vector<Eigen::VectorXd> step_distributions(const LstmParams& params, const LstmDims& dims,
                                                const std::vector<WordId>& sequence);

// Mean cross-entropy and its exact gradient (written into `grad`, which is
// resized to match `params`).
double loss_and_gradient(const LstmParams& params, const LstmDims& dims,
                         const std::vector<WordId>& sequence, LstmParams& grad);

double mean_loss(const LstmParams& params, const LstmDims& dims,
                 const std::vector<WordId>& sequence);

// Rescales `grad` to at most `max_norm` in global L2 norm; returns the
// pre-clipping norm.
double clip_gradient(LstmParams& grad, double max_norm);

SurprisalScore lstm_sentence_surprisal(const LstmLm& lm, const Sentence& sentence);
SurprisalScore lstm_sentence_surprisal(const LstmLm& lm, const LstmParams& params,
                                       const Sentence& sentence);

struct LstmTrainConfig {
  LstmDims dims;
  std::size_t epochs = 10;
  double base_lr = 20.0;
  double clip = 0.25;
  double init_range = 0.1;
  std::uint64_t seed = 1;
  std::size_t min_count = 2;
  LogBase log_base = LogBase::Two;
  // Learning rate is divided by this factor when validation loss does not
  // improve (training loss is used when no validation set is given).
  double lr_decay = 4.0;
};

// Per-sentence SGD with shuffling. Throws std::runtime_error on a
// non-finite loss.
LstmLm train_lstm(const std::vector<Sentence>& sentences, const LstmTrainConfig& config,
                  const std::vector<Sentence>& validation = {},
                  const std::function<void(std::size_t, double, double)>& on_epoch = {});

// Same, on an existing model and vocabulary.
void train_lstm_epochs(LstmLm& lm, const std::vector<Sentence>& sentences,
                       const LstmTrainConfig& config, const std::vector<Sentence>& validation = {},
                       const std::function<void(std::size_t, double, double)>& on_epoch = {});

// Token-weighted mean loss (nats) over a corpus.
double corpus_loss(const LstmLm& lm, const std::vector<Sentence>& sentences);
double perplexity(const LstmLm& lm, const std::vector<Sentence>& sentences);

struct AdaptationConfig {
  static constexpr double kDefaultLearningRate = 2.0;
  static constexpr double kDefaultClip = 0.25;

  double learning_rate = kDefaultLearningRate;
  double grad_clip_norm = kDefaultClip;
};

struct AdaptationTrace {
  std::size_t adaptation_steps = 0;
  std::size_t targets_scored = 0;
  double context_loss_before = 0.0;
  double context_loss_after = 0.0;
};

std::vector<SurprisalScore> adapt_and_score(const LstmLm& lm, const Sentence& context,
                                            const std::vector<Sentence>& targets,
                                            const AdaptationConfig& config = {},
                                            AdaptationTrace* trace = nullptr);

// The adapted parameter copy itself (one step on `context`).
LstmParams adapted_params(const LstmLm& lm, const Sentence& context, const AdaptationConfig& config);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t parameters_checked = 0;
  std::vector<std::pair<std::string, double>> per_block;  // max relative error per block
};

// Central differences on every parameter. Relative error per element is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradientCheckResult gradient_check(const LstmLm& lm, const Sentence& sentence, double epsilon,
                                   double floor = 1e-6);

}  // namespace orderlab
