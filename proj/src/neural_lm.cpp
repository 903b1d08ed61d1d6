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

#include "orderlab/neural_lm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "orderlab/common.hpp"

namespace orderlab {

static_assert(std::endian::native == std::endian::little,
              "model files are written as little-endian doubles");

// ---------------------------------------------------------------- params

LstmParams LstmParams::zeros(std::size_t vocab, const LstmDims& dims) {
  LstmParams p;
  const auto v = static_cast<Eigen::Index>(vocab);
  const auto e = static_cast<Eigen::Index>(dims.embedding);
  const auto h = static_cast<Eigen::Index>(dims.hidden);
  p.embedding = RowMatrix::Zero(v, e);
  for (std::size_t l = 0; l < dims.layers; ++l) {
    const auto in = l == 0 ? e : h;
    p.gates.push_back(RowMatrix::Zero(4 * h, in + h));
    p.bias.push_back(Eigen::VectorXd::Zero(4 * h));
  }
  p.output = RowMatrix::Zero(v, h);
  p.output_bias = Eigen::VectorXd::Zero(v);
  return p;
}

std::vector<std::span<double>> LstmParams::blocks() {
  std::vector<std::span<double>> out;
  out.emplace_back(embedding.data(), static_cast<std::size_t>(embedding.size()));
  for (std::size_t l = 0; l < gates.size(); ++l) {
    out.emplace_back(gates[l].data(), static_cast<std::size_t>(gates[l].size()));
    out.emplace_back(bias[l].data(), static_cast<std::size_t>(bias[l].size()));
  }
  out.emplace_back(output.data(), static_cast<std::size_t>(output.size()));
  out.emplace_back(output_bias.data(), static_cast<std::size_t>(output_bias.size()));
  return out;
}

std::vector<std::span<const double>> LstmParams::blocks() const {
  auto mutable_blocks = const_cast<LstmParams*>(this)->blocks();
  return {mutable_blocks.begin(), mutable_blocks.end()};
}

std::vector<std::string> LstmParams::block_names() const {
  std::vector<std::string> out{"embedding"};
  for (std::size_t l = 0; l < gates.size(); ++l) {
    out.push_back("layer" + std::to_string(l) + ".gates");
    out.push_back("layer" + std::to_string(l) + ".bias");
  }
  out.push_back("output");
  out.push_back("output_bias");
  return out;
}

double LstmParams::squared_norm() const {
  double s = 0.0;
  for (auto b : blocks())
    for (double x : b) s += x * x;
  return s;
}

void LstmParams::scale(double factor) {
  for (auto b : blocks())
    for (double& x : b) x *= factor;
}

void LstmParams::axpy(double factor, const LstmParams& other) {
  auto dst = blocks();
  auto src = other.blocks();
  if (dst.size() != src.size()) throw std::invalid_argument("axpy: shape mismatch");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k].size() != src[k].size()) throw std::invalid_argument("axpy: shape mismatch");
    for (std::size_t i = 0; i < dst[k].size(); ++i) dst[k][i] += factor * src[k][i];
  }
}

bool LstmParams::all_finite() const {
  for (auto b : blocks())
    for (double x : b)
      if (!std::isfinite(x)) return false;
  return true;
}

bool LstmParams::operator==(const LstmParams& other) const {
  auto a = blocks();
  auto b = other.blocks();
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].size() != b[k].size()) return false;
    if (std::memcmp(a[k].data(), b[k].data(), a[k].size() * sizeof(double)) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------- model

LstmLm::LstmLm(Vocabulary vocab, LstmDims dims, LogBase base)
    : vocab_(std::move(vocab)), dims_(dims), log_base_(base) {
  if (dims_.embedding == 0 || dims_.hidden == 0 || dims_.layers == 0)
    throw std::invalid_argument("LSTM dimensions must be positive");
  params_ = LstmParams::zeros(vocab_.size(), dims_);
}

LstmLm LstmLm::initialize(Vocabulary vocab, LstmDims dims, std::uint64_t seed, double init_range,
                          LogBase base) {
  LstmLm lm(std::move(vocab), dims, base);
  SplitMix64 rng(seed);
  for (auto block : lm.params_.blocks())
    for (double& x : block) x = (2.0 * rng.uniform() - 1.0) * init_range;
  return lm;
}

namespace {

constexpr char kMagic[8] = {'O', 'L', 'L', 'S', 'T', 'M', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw std::runtime_error("LSTM model truncated");
  return value;
}

}  // namespace

void LstmLm::save(std::ostream& out) const {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, vocab_.size());
  put<std::uint64_t>(out, dims_.embedding);
  put<std::uint64_t>(out, dims_.hidden);
  put<std::uint64_t>(out, dims_.layers);
  put<std::uint8_t>(out, log_base_ == LogBase::Two ? 2 : 0);
  for (WordId w = 0; w < vocab_.size(); ++w) {
    const auto& word = vocab_.word(w);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(word.size()));
    out.write(word.data(), static_cast<std::streamsize>(word.size()));
  }
  put<std::uint64_t>(out, training_loss.size());
  for (double x : training_loss) put<double>(out, x);
  for (auto block : params_.blocks()) {
    put<std::uint64_t>(out, block.size());
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed to write LSTM model");
}

LstmLm LstmLm::load(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("not an orderlab LSTM model");
  if (get<std::uint32_t>(in) != kVersion) throw std::runtime_error("unsupported LSTM model version");
  const auto v = get<std::uint64_t>(in);
  LstmDims dims;
  dims.embedding = get<std::uint64_t>(in);
  dims.hidden = get<std::uint64_t>(in);
  dims.layers = get<std::uint64_t>(in);
  const auto base = get<std::uint8_t>(in) == 2 ? LogBase::Two : LogBase::E;
  std::ostringstream words;
  for (std::uint64_t i = 0; i < v; ++i) {
    const auto len = get<std::uint32_t>(in);
    std::string word(len, '\0');
    if (!in.read(word.data(), len)) throw std::runtime_error("LSTM model truncated");
    words << word << '\n';
  }
  std::istringstream words_in(words.str());
  LstmLm lm(Vocabulary::read(words_in, v), dims, base);
  const auto epochs = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < epochs; ++i) lm.training_loss.push_back(get<double>(in));
  for (auto block : lm.params_.blocks()) {
    if (get<std::uint64_t>(in) != block.size()) throw std::runtime_error("LSTM block size mismatch");
    if (!in.read(reinterpret_cast<char*>(block.data()),
                 static_cast<std::streamsize>(block.size() * sizeof(double))))
      throw std::runtime_error("LSTM model truncated");
  }
  return lm;
}

// ---------------------------------------------------------------- forward / backward

std::vector<WordId> lstm_sequence(const Vocabulary& vocab, const Sentence& sentence) {
  std::vector<WordId> seq{Vocabulary::kBos};
  for (auto id : vocab.encode(sentence)) seq.push_back(id);
  seq.push_back(Vocabulary::kEos);
  return seq;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct StepCache {
  Eigen::VectorXd input;   // layer input x
  Eigen::VectorXd h_prev, c_prev;
  Eigen::VectorXd i, f, g, o;  // activated gates
  Eigen::VectorXd c, tanh_c, h;
};

struct Forward {
  std::vector<std::vector<StepCache>> steps;  // [t][layer]
  std::vector<Eigen::VectorXd> probs;         // softmax per step
  std::vector<double> losses;                 // -ln p(target)
};

Forward run_forward(const LstmParams& p, const LstmDims& dims, const std::vector<WordId>& seq,
                    bool keep_cache) {
  if (seq.size() < 2) throw std::invalid_argument("LSTM sequence needs <s> and </s>");
  const auto h = static_cast<Eigen::Index>(dims.hidden);
  const std::size_t steps = seq.size() - 1;
  Forward fw;
  if (keep_cache) fw.steps.resize(steps);
  fw.probs.reserve(steps);
  fw.losses.reserve(steps);
  std::vector<Eigen::VectorXd> hs(dims.layers, Eigen::VectorXd::Zero(h));
  std::vector<Eigen::VectorXd> cs(dims.layers, Eigen::VectorXd::Zero(h));
  Eigen::VectorXd joint;
  for (std::size_t t = 0; t < steps; ++t) {
    Eigen::VectorXd x = p.embedding.row(seq[t]).transpose();
    for (std::size_t l = 0; l < dims.layers; ++l) {
      joint.resize(x.size() + h);
      joint << x, hs[l];
      const Eigen::VectorXd z = p.gates[l] * joint + p.bias[l];
      StepCache sc;
      sc.i = z.segment(0, h).unaryExpr(&sigmoid);
      sc.f = z.segment(h, h).unaryExpr(&sigmoid);
      sc.g = z.segment(2 * h, h).array().tanh();
      sc.o = z.segment(3 * h, h).unaryExpr(&sigmoid);
      sc.c = sc.f.cwiseProduct(cs[l]) + sc.i.cwiseProduct(sc.g);
      sc.tanh_c = sc.c.array().tanh();
      sc.h = sc.o.cwiseProduct(sc.tanh_c);
      if (keep_cache) {
        sc.input = x;
        sc.h_prev = hs[l];
        sc.c_prev = cs[l];
      }
      hs[l] = sc.h;
      cs[l] = sc.c;
      x = sc.h;
      if (keep_cache) fw.steps[t].push_back(std::move(sc));
    }
    Eigen::VectorXd logits = p.output * x + p.output_bias;
    const double mx = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - mx).exp();
    const double z = e.sum();
    e /= z;
    // -ln softmax computed from the log-sum-exp for accuracy at small probabilities.
    fw.losses.push_back(-(logits[seq[t + 1]] - mx - std::log(z)));
    fw.probs.push_back(std::move(e));
  }
  return fw;
}

}  // namespace

std::vector<double> token_losses(const LstmParams& params, const LstmDims& dims,
                                 const std::vector<WordId>& sequence) {
  return run_forward(params, dims, sequence, false).losses;
}

std::vector<Eigen::VectorXd> step_distributions(const LstmParams& params, const LstmDims& dims,
                                                const std::vector<WordId>& sequence) {
  return run_forward(params, dims, sequence, false).probs;
}

double mean_loss(const LstmParams& params, const LstmDims& dims,
                 const std::vector<WordId>& sequence) {
  const auto losses = token_losses(params, dims, sequence);
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

double loss_and_gradient(const LstmParams& p, const LstmDims& dims,
                         const std::vector<WordId>& seq, LstmParams& grad) {
  const Forward fw = run_forward(p, dims, seq, true);
  const std::size_t steps = fw.losses.size();
  const double inv_t = 1.0 / static_cast<double>(steps);
  const auto h = static_cast<Eigen::Index>(dims.hidden);
  grad = LstmParams::zeros(static_cast<std::size_t>(p.embedding.rows()), dims);

  std::vector<Eigen::VectorXd> dh_next(dims.layers, Eigen::VectorXd::Zero(h));
  std::vector<Eigen::VectorXd> dc_next(dims.layers, Eigen::VectorXd::Zero(h));
  Eigen::VectorXd dz(4 * h);
  for (std::size_t t = steps; t-- > 0;) {
    const auto& top = fw.steps[t].back();
    Eigen::VectorXd dlogits = fw.probs[t] * inv_t;
    dlogits[seq[t + 1]] -= inv_t;
    grad.output.noalias() += dlogits * top.h.transpose();
    grad.output_bias += dlogits;
    Eigen::VectorXd dh_above = p.output.transpose() * dlogits;

    for (std::size_t l = dims.layers; l-- > 0;) {
      const auto& sc = fw.steps[t][l];
      const Eigen::VectorXd dh = dh_above + dh_next[l];
      const Eigen::VectorXd d_o = dh.cwiseProduct(sc.tanh_c);
      const Eigen::VectorXd dc =
          dh.cwiseProduct(sc.o).cwiseProduct((1.0 - sc.tanh_c.array().square()).matrix()) +
          dc_next[l];
      const Eigen::VectorXd d_i = dc.cwiseProduct(sc.g);
      const Eigen::VectorXd d_g = dc.cwiseProduct(sc.i);
      const Eigen::VectorXd d_f = dc.cwiseProduct(sc.c_prev);
      dc_next[l] = dc.cwiseProduct(sc.f);

      dz.segment(0, h) = d_i.array() * sc.i.array() * (1.0 - sc.i.array());
      dz.segment(h, h) = d_f.array() * sc.f.array() * (1.0 - sc.f.array());
      dz.segment(2 * h, h) = d_g.array() * (1.0 - sc.g.array().square());
      dz.segment(3 * h, h) = d_o.array() * sc.o.array() * (1.0 - sc.o.array());

      const auto in = sc.input.size();
      grad.gates[l].leftCols(in).noalias() += dz * sc.input.transpose();
      grad.gates[l].rightCols(h).noalias() += dz * sc.h_prev.transpose();
      grad.bias[l] += dz;
      const Eigen::VectorXd djoint = p.gates[l].transpose() * dz;
      dh_next[l] = djoint.tail(h);
      if (l == 0) {
        grad.embedding.row(seq[t]) += djoint.head(in).transpose();
      } else {
        dh_above = djoint.head(in);
      }
    }
  }
  return std::accumulate(fw.losses.begin(), fw.losses.end(), 0.0) * inv_t;
}

double clip_gradient(LstmParams& grad, double max_norm) {
  const double norm = std::sqrt(grad.squared_norm());
  if (norm > max_norm && norm > 0.0) grad.scale(max_norm / norm);
  return norm;
}

SurprisalScore lstm_sentence_surprisal(const LstmLm& lm, const LstmParams& params,
                                       const Sentence& sentence) {
  SurprisalScore score;
  const double to_base = lm.log_base() == LogBase::Two ? 1.0 / std::log(2.0) : 1.0;
  for (double nats : token_losses(params, lm.dims(), lstm_sequence(lm.vocab(), sentence)))
    score.push(nats * to_base);
  return score;
}

SurprisalScore lstm_sentence_surprisal(const LstmLm& lm, const Sentence& sentence) {
  return lstm_sentence_surprisal(lm, lm.params(), sentence);
}

// ---------------------------------------------------------------- training

double corpus_loss(const LstmLm& lm, const std::vector<Sentence>& sentences) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : sentences) {
    for (double l : token_losses(lm.params(), lm.dims(), lstm_sequence(lm.vocab(), s))) {
      total += l;
      ++tokens;
    }
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

double perplexity(const LstmLm& lm, const std::vector<Sentence>& sentences) {
  return std::exp(corpus_loss(lm, sentences));
}

void train_lstm_epochs(LstmLm& lm, const std::vector<Sentence>& sentences,
                       const LstmTrainConfig& config, const std::vector<Sentence>& validation,
                       const std::function<void(std::size_t, double, double)>& on_epoch) {
  if (sentences.empty()) throw std::invalid_argument("train_lstm: empty corpus");
  std::vector<std::vector<WordId>> seqs;
  seqs.reserve(sentences.size());
  for (const auto& s : sentences) seqs.push_back(lstm_sequence(lm.vocab(), s));

  SplitMix64 rng(derive_seed(config.seed, "lstm-shuffle"));
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = config.base_lr;
  double best = std::numeric_limits<double>::infinity();
  LstmParams grad;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.bounded(i)]);
    for (auto idx : order) {
      const double loss = loss_and_gradient(lm.params(), lm.dims(), seqs[idx], grad);
      if (!std::isfinite(loss))
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                                 " (lr " + format_double(lr) + "); lower the learning rate");
      clip_gradient(grad, config.clip);
      lm.mutable_params().axpy(-lr, grad);
    }
    const double train_loss = corpus_loss(lm, sentences);
    if (!std::isfinite(train_loss) || !lm.params().all_finite())
      throw std::runtime_error("non-finite loss after epoch " + std::to_string(epoch + 1) +
                               " (lr " + format_double(lr) + "); lower the learning rate");
    lm.training_loss.push_back(train_loss);
    const double monitored = validation.empty() ? train_loss : corpus_loss(lm, validation);
    if (on_epoch) on_epoch(epoch + 1, train_loss, lr);
    if (monitored < best) {
      best = monitored;
    } else {
      lr /= config.lr_decay;
    }
  }
}

LstmLm train_lstm(const std::vector<Sentence>& sentences, const LstmTrainConfig& config,
                  const std::vector<Sentence>& validation,
                  const std::function<void(std::size_t, double, double)>& on_epoch) {
  if (sentences.empty()) throw std::invalid_argument("train_lstm: empty corpus");
  LstmLm lm = LstmLm::initialize(Vocabulary::build(sentences, config.min_count), config.dims,
                                 config.seed, config.init_range, config.log_base);
  train_lstm_epochs(lm, sentences, config, validation, on_epoch);
  return lm;
}

// ---------------------------------------------------------------- adaptation

LstmParams adapted_params(const LstmLm& lm, const Sentence& context,
                          const AdaptationConfig& config) {
  if (config.learning_rate < 0.0) throw std::invalid_argument("learning rate must be >= 0");
  LstmParams scratch = lm.params();
  if (context.empty()) return scratch;
  LstmParams grad;
  loss_and_gradient(scratch, lm.dims(), lstm_sequence(lm.vocab(), context), grad);
  clip_gradient(grad, config.grad_clip_norm);
  scratch.axpy(-config.learning_rate, grad);
  return scratch;
}

std::vector<SurprisalScore> adapt_and_score(const LstmLm& lm, const Sentence& context,
                                            const std::vector<Sentence>& targets,
                                            const AdaptationConfig& config,
                                            AdaptationTrace* trace) {
  const LstmParams scratch = adapted_params(lm, context, config);
  std::vector<SurprisalScore> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(lstm_sentence_surprisal(lm, scratch, t));
  if (trace) {
    if (!context.empty()) {
      const auto seq = lstm_sequence(lm.vocab(), context);
      ++trace->adaptation_steps;
      trace->context_loss_before = mean_loss(lm.params(), lm.dims(), seq);
      trace->context_loss_after = mean_loss(scratch, lm.dims(), seq);
    }
    trace->targets_scored += targets.size();
  }
  return out;
}

// ---------------------------------------------------------------- gradient check

GradientCheckResult gradient_check(const LstmLm& lm, const Sentence& sentence, double epsilon,
                                   double floor) {
  const auto seq = lstm_sequence(lm.vocab(), sentence);
  LstmParams analytic;
  loss_and_gradient(lm.params(), lm.dims(), seq, analytic);
  LstmParams probe = lm.params();
  auto probe_blocks = probe.blocks();
  const auto grad_blocks = analytic.blocks();
  const auto names = probe.block_names();

  GradientCheckResult result;
  for (std::size_t k = 0; k < probe_blocks.size(); ++k) {
    double block_max = 0.0;
    for (std::size_t i = 0; i < probe_blocks[k].size(); ++i) {
      double& theta = probe_blocks[k][i];
      const double saved = theta;
      theta = saved + epsilon;
      const double up = mean_loss(probe, lm.dims(), seq);
      theta = saved - epsilon;
      const double down = mean_loss(probe, lm.dims(), seq);
      theta = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = grad_blocks[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      block_max = std::max(block_max, rel);
      result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
      ++result.parameters_checked;
    }
    result.per_block.emplace_back(names[k], block_max);
    result.max_relative_error = std::max(result.max_relative_error, block_max);
  }
  return result;
}

}  // namespace orderlab
