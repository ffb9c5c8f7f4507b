// src/training.cpp

// Copyright 2026  The odpers Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "odpers/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "odpers/evaluation.hpp"
#include "odpers/transducer.hpp"

namespace odpers {

double adam_step(OptState& opt, ModelParams& params, const ModelParams& grads,
                 const FreezeMask& mask, double learning_rate, double clip_norm,
                 const AdamSettings& adam) {
  if (!(params.config == grads.config))
    throw ShapeError("adam_step: gradient config differs from parameters");
  std::vector<Matrix*> targets;
  std::vector<const Matrix*> sources;
  std::vector<std::string> names;
  params.for_each_tensor([&](const std::string& layer, const std::string& name,
                             Matrix& m) {
    if (!mask.trainable(layer)) return;
    targets.push_back(&m);
    names.push_back(name);
  });
  grads.for_each_tensor([&](const std::string& layer, const std::string&,
                            const Matrix& g) {
    if (mask.trainable(layer)) sources.push_back(&g);
  });
  if (targets.empty()) return 0.0;

  double sq = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (sources[i]->rows() != targets[i]->rows() ||
        sources[i]->cols() != targets[i]->cols())
      throw ShapeError("adam_step: gradient shape mismatch for " + names[i]);
    for (double g : sources[i]->values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("adam_step: non-finite gradient");
  const double scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;

  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double bc1 = 1.0 - std::pow(adam.beta1, t);
  const double bc2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Matrix& p = *targets[i];
    auto it = opt.moments.find(names[i]);
    if (it == opt.moments.end())
      it = opt.moments
               .emplace(names[i], OptState::Moments{Matrix(p.rows(), p.cols()),
                                                    Matrix(p.rows(), p.cols())})
               .first;
    double* m = it->second.first.data();
    double* v = it->second.second.data();
    const double* g = sources[i]->data();
    double* w = p.data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k] * scale;
      m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * gk;
      v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * gk * gk;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      w[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + adam.epsilon);
    }
  }
  return norm;
}

TrainingExample make_example(const ModelConfig& config, std::string id,
                             std::string speaker, std::string transcript,
                             const FeatureSequence& raw) {
  TrainingExample ex;
  ex.id = std::move(id);
  ex.speaker = std::move(speaker);
  ex.labels = config.tokenize(transcript);
  ex.transcript = std::move(transcript);
  ex.stacked = stack_features(raw, config.stack_size, config.stack_stride);
  return ex;
}

std::string transcribe(const ModelParams& params, const TrainingExample& example,
                       std::size_t max_symbols_per_frame) {
  return params.config.detokenize(
      greedy_decode_stacked(params, example.stacked, max_symbols_per_frame));
}

double evaluate_wer(const ModelParams& params,
                    std::span<const TrainingExample> examples,
                    std::size_t max_symbols_per_frame) {
  std::vector<TranscriptPair> pairs;
  pairs.reserve(examples.size());
  for (const auto& ex : examples)
    pairs.push_back({transcribe(params, ex, max_symbols_per_frame), ex.transcript});
  return corpus_wer(pairs).wer();
}

// ---------------------------------------------------------------------------

void RoundConfig::validate(const ModelConfig& model) const {
  if (utterances_per_round < 1) throw ConfigError("round config: N must be >= 1");
  if (epochs < 1) throw ConfigError("round config: E must be >= 1");
  if (!(learning_rate > 0.0))
    throw ConfigError("round config: learning rate must be positive");
  if (max_symbols_per_frame < 1)
    throw ConfigError("round config: max_symbols_per_frame must be >= 1");
  mask.validate(model);
}

void UtteranceBuffer::push(TrainingExample example) {
  if (pending_.size() >= capacity_)
    throw DataError("utterance buffer full (capacity " + std::to_string(capacity_) +
                    ")");
  pending_.push_back(std::move(example));
  high_water_ = std::max(high_water_, pending_.size());
}

void UtteranceBuffer::clear() {
  pending_.clear();
  pending_.shrink_to_fit();
}

RoundLog train_round(ModelParams& model, OptState& opt, UtteranceBuffer& buffer,
                     const RoundConfig& config, std::size_t round_index) {
  config.validate(model.config);
  if (buffer.size() == 0) throw DataError("train_round: empty buffer");
  if (buffer.size() != config.utterances_per_round)
    throw DataError("train_round: buffer holds " + std::to_string(buffer.size()) +
                    " utterances, round expects " +
                    std::to_string(config.utterances_per_round));
  RoundLog log;
  log.round = round_index;
  for (const auto& ex : buffer.pending())
    log.transcripts.push_back(
        {transcribe(model, ex, config.max_symbols_per_frame), ex.transcript});

  if (config.reset_optimizer) opt = OptState{};
  ModelParams grads = ModelParams::zeros(model.config);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    grads.set_zero();
    double loss = 0.0;
    for (const auto& ex : buffer.pending())
      loss += utterance_loss_and_grad(model, ex.stacked, ex.labels, config.mask, grads);
    adam_step(opt, model, grads, config.mask, config.learning_rate,
              config.grad_clip_norm);
    log.loss_trace.push_back(loss);
  }
  buffer.clear();
  return log;
}

UtteranceStream stream_of(std::vector<TrainingExample> examples) {
  auto shared = std::make_shared<std::vector<TrainingExample>>(std::move(examples));
  auto next = std::make_shared<std::size_t>(0);
  return [shared, next]() -> std::optional<TrainingExample> {
    if (*next >= shared->size()) return std::nullopt;
    return (*shared)[(*next)++];
  };
}

ConsecutiveResult consecutive_personalize(const ModelParams& seed_model,
                                          const UtteranceStream& stream,
                                          std::size_t rounds,
                                          const RoundConfig& config,
                                          const ConsecutiveHooks& hooks) {
  config.validate(seed_model.config);
  ConsecutiveResult result;
  result.model = seed_model;
  if (hooks.on_round_end) hooks.on_round_end(0, result.model);
  UtteranceBuffer buffer(config.utterances_per_round);
  for (std::size_t round = 1; round <= rounds; ++round) {
    while (!buffer.full()) {
      auto next = stream();
      if (!next)
        throw DataError("utterance stream exhausted during round " +
                        std::to_string(round) + " of " + std::to_string(rounds) +
                        " after " + std::to_string(result.consumed) +
                        " utterances");
      buffer.push(std::move(*next));
      ++result.consumed;
      if (hooks.on_buffer_change) hooks.on_buffer_change(buffer.size());
    }
    RoundLog log = train_round(result.model, result.opt, buffer, config, round);
    if (hooks.on_buffer_change) hooks.on_buffer_change(buffer.size());
    log.checkpoint_id = hooks.persist ? hooks.persist(round, result.model, result.opt)
                                      : "round-" + std::to_string(round);
    result.logs.push_back(std::move(log));
    if (hooks.on_round_end) hooks.on_round_end(round, result.model);
  }
  return result;
}

// ---------------------------------------------------------------------------

void ServerConfig::validate(const ModelConfig& model) const {
  if (batch_size < 1) throw ConfigError("server config: batch size must be >= 1");
  if (!(learning_rate > 0.0))
    throw ConfigError("server config: learning rate must be positive");
  if (max_symbols_per_frame < 1)
    throw ConfigError("server config: max_symbols_per_frame must be >= 1");
  mask.validate(model);
}

ServerResult server_personalize(const ModelParams& start,
                                std::span<const TrainingExample> train,
                                std::span<const TrainingExample> dev,
                                const ServerConfig& config) {
  config.validate(start.config);
  if (train.empty()) throw DataError("server_personalize: empty training set");
  if (dev.empty()) throw DataError("server_personalize: empty dev set");
  ServerResult result;
  result.model = start;
  result.best_epoch = 0;
  result.best_dev_wer = evaluate_wer(start, dev, config.max_symbols_per_frame);
  result.dev_wer.push_back(result.best_dev_wer);

  ModelParams current = start;
  OptState opt;
  ModelParams grads = ModelParams::zeros(start.config);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      grads.set_zero();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = train[order[i]];
        epoch_loss +=
            utterance_loss_and_grad(current, ex.stacked, ex.labels, config.mask, grads);
      }
      // Mean over the minibatch.
      const double inv = 1.0 / static_cast<double>(end - begin);
      grads.for_each_tensor([&](const std::string&, const std::string&, Matrix& m) {
        for (double& g : m.values()) g *= inv;
      });
      adam_step(opt, current, grads, config.mask, config.learning_rate,
                config.grad_clip_norm);
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    const double dev_wer = evaluate_wer(current, dev, config.max_symbols_per_frame);
    result.dev_wer.push_back(dev_wer);
    if (dev_wer < result.best_dev_wer) {
      result.best_dev_wer = dev_wer;
      result.best_epoch = epoch;
      result.model = current;
      since_best = 0;
    } else if (++since_best > config.patience) {
      break;
    }
  }
  return result;
}

std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>>
leave_one_out_pool(std::span<const SpeakerData> speakers, std::string_view leave_out) {
  bool found = false;
  std::vector<TrainingExample> train, dev;
  for (const auto& s : speakers) {
    if (s.id == leave_out) {
      found = true;
      continue;
    }
    train.insert(train.end(), s.train.begin(), s.train.end());
    dev.insert(dev.end(), s.dev.begin(), s.dev.end());
  }
  if (!found)
    throw DataError("leave-one-out: unknown speaker '" + std::string(leave_out) + "'");
  return {std::move(train), std::move(dev)};
}

ServerResult build_seed_model(const ModelParams& base,
                              std::span<const SpeakerData> speakers,
                              std::string_view leave_out,
                              const ServerConfig& config) {
  auto [train, dev] = leave_one_out_pool(speakers, leave_out);
  return server_personalize(base, train, dev, config);
}

}  // namespace odpers
