// odpers/training.hpp

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

#ifndef ODPERS_TRAINING_HPP_
#define ODPERS_TRAINING_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odpers/model.hpp"
#include "odpers/types.hpp"

namespace odpers {

/// Adam moments for the tensors that have been trained so far, keyed by
/// tensor name.
struct OptState {
  struct Moments {
    Matrix first;
    Matrix second;
    friend bool operator==(const Moments&, const Moments&) = default;
  };
  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;

  friend bool operator==(const OptState&, const OptState&) = default;
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update of the tensors whose layer is in `mask`. Gradients of the
/// masked tensors are first clipped to a global L2 norm of `clip_norm`
/// (disabled when <= 0). Unmasked tensors are not touched. Returns the
/// pre-clip gradient norm.
double adam_step(OptState& opt, ModelParams& params, const ModelParams& grads,
                 const FreezeMask& mask, double learning_rate,
                 double clip_norm = 5.0, const AdamSettings& adam = {});

/// An utterance ready for training: stacked features and label indices.
struct TrainingExample {
  std::string id;
  std::string speaker;
  std::string transcript;
  std::vector<int> labels;
  FeatureSequence stacked;
};

TrainingExample make_example(const ModelConfig& config, std::string id,
                             std::string speaker, std::string transcript,
                             const FeatureSequence& raw);

/// Greedy transcript of one example.
std::string transcribe(const ModelParams& params, const TrainingExample& example,
                       std::size_t max_symbols_per_frame = 3);

/// Pooled WER (percent) of greedy transcripts against references.
double evaluate_wer(const ModelParams& params,
                    std::span<const TrainingExample> examples,
                    std::size_t max_symbols_per_frame = 3);

// ---------------------------------------------------------------------------
// On-device consecutive training.

struct RoundConfig {
  std::size_t utterances_per_round = 5;  // N
  std::size_t epochs = 4;                // E
  double learning_rate = 1e-3;
  FreezeMask mask = FreezeMask::encoder_range(2, 4);
  double grad_clip_norm = 5.0;
  /// Start every round from fresh Adam moments instead of carrying them.
  bool reset_optimizer = false;
  std::size_t max_symbols_per_frame = 3;

  void validate(const ModelConfig& model) const;
};

/// Holds the utterances recorded since the last round. Never holds more
/// than its capacity.
class UtteranceBuffer {
 public:
  explicit UtteranceBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(TrainingExample example);
  void clear();
  bool full() const { return pending_.size() == capacity_; }
  std::size_t size() const { return pending_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t high_water_mark() const { return high_water_; }
  std::span<const TrainingExample> pending() const { return pending_; }

 private:
  std::size_t capacity_;
  std::size_t high_water_ = 0;
  std::vector<TrainingExample> pending_;
};

/// One round: the pre-round model transcribes every buffered utterance into
/// the log, then E epochs each take one Adam step on the loss summed over
/// the whole buffer. The buffer is empty on return.
RoundLog train_round(ModelParams& model, OptState& opt, UtteranceBuffer& buffer,
                     const RoundConfig& config, std::size_t round_index = 0);

using UtteranceStream = std::function<std::optional<TrainingExample>()>;

/// Stream over a fixed list, yielding copies in order.
UtteranceStream stream_of(std::vector<TrainingExample> examples);

struct ConsecutiveHooks {
  /// Called with the buffer size after every push and after every clear.
  std::function<void(std::size_t)> on_buffer_change;
  /// Persists the post-round model; returns the checkpoint id. Round 0 is
  /// the starting model and is not persisted.
  std::function<std::string(std::size_t round, const ModelParams&,
                            const OptState&)>
      persist;
  /// Called after persisting, and once with round 0 before training.
  std::function<void(std::size_t round, const ModelParams&)> on_round_end;
};

struct ConsecutiveResult {
  ModelParams model;
  OptState opt;
  std::vector<RoundLog> logs;
  std::size_t consumed = 0;
};

/// Repeats `rounds` times: record N utterances from the stream into the
/// buffer, train one round, persist. Returns the last checkpoint. Throws
/// DataError naming the round when the stream runs dry.
ConsecutiveResult consecutive_personalize(const ModelParams& seed_model,
                                          const UtteranceStream& stream,
                                          std::size_t rounds,
                                          const RoundConfig& config,
                                          const ConsecutiveHooks& hooks = {});

// ---------------------------------------------------------------------------
// Server-side fine-tuning with early stopping.

struct ServerConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-5;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  FreezeMask mask = FreezeMask::encoder_range(0, 4);
  double grad_clip_norm = 5.0;
  std::uint64_t seed = 1;
  std::size_t max_symbols_per_frame = 3;

  void validate(const ModelConfig& model) const;
};

struct ServerResult {
  ModelParams model;  // best checkpoint
  std::size_t best_epoch = 0;
  double best_dev_wer = 0.0;
  std::vector<double> dev_wer;     // index 0 is the starting model
  std::vector<double> train_loss;  // mean per-utterance loss, epochs 1..
};

/// Minibatch Adam over shuffled epochs; after each epoch the dev WER is
/// measured and the best checkpoint (ties to the earliest) is kept. Stops
/// once `patience` epochs in a row fail to improve on the best.
ServerResult server_personalize(const ModelParams& start,
                                std::span<const TrainingExample> train,
                                std::span<const TrainingExample> dev,
                                const ServerConfig& config);

struct SpeakerData {
  std::string id;
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> dev;
};

/// Pooled training and dev sets of every speaker except `leave_out`.
std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>>
leave_one_out_pool(std::span<const SpeakerData> speakers, std::string_view leave_out);

/// server_personalize on the leave-one-out pool. Throws DataError for an
/// unknown speaker id.
ServerResult build_seed_model(const ModelParams& base,
                              std::span<const SpeakerData> speakers,
                              std::string_view leave_out,
                              const ServerConfig& config);

}  // namespace odpers

#endif  // ODPERS_TRAINING_HPP_
