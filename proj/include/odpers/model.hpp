// odpers/model.hpp

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

#ifndef ODPERS_MODEL_HPP_
#define ODPERS_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odpers/numerics.hpp"

namespace odpers {

/// Output index of the blank symbol; labels occupy 1..V.
inline constexpr int kBlank = 0;

struct ModelConfig {
  std::size_t feature_dim = 16;
  std::size_t stack_size = 4;
  std::size_t stack_stride = 3;
  std::size_t encoder_layers = 8;
  std::size_t prediction_layers = 2;
  std::size_t hidden_size = 48;
  // Encoder layers above the first add their input to their output.
  bool encoder_residual = true;
  // One character per symbol. Symbol vocab[k] has output index k + 1.
  std::string vocab = " abcdefghijklmnopqrstuvwxyz";

  std::size_t vocab_size() const { return vocab.size(); }
  std::size_t num_outputs() const { return vocab.size() + 1; }
  std::size_t stacked_dim() const { return feature_dim * stack_size; }

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  /// Stable digest of every field; stored in checkpoints.
  std::uint64_t digest() const;

  /// Maps text to label indices; throws DataError on a character outside
  /// the vocabulary.
  std::vector<int> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const int> tokens) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One "key=value" line per field, in a fixed order.
std::string format_model_config(const ModelConfig& config);
/// Sets one field from its text form. Returns false for an unknown key;
/// throws ConfigError for a malformed value.
bool set_model_config_key(ModelConfig& config, std::string_view key,
                          std::string_view value);

struct FeatureSequence {
  Matrix frames;  // T x d
  double frame_period_ms = 10.0;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

/// Concatenates `stack` consecutive frames every `stride` frames. Frames past
/// the end are filled by repeating the last input frame.
FeatureSequence stack_features(const FeatureSequence& seq, std::size_t stack,
                               std::size_t stride);

/// Gate rows are laid out [input, forget, candidate, output], H rows each.
struct LstmParams {
  Matrix w_input;      // 4H x in
  Matrix w_recurrent;  // 4H x H
  Matrix bias;         // 1 x 4H
  friend bool operator==(const LstmParams&, const LstmParams&) = default;

  std::size_t hidden_size() const { return w_recurrent.cols(); }
  std::size_t input_size() const { return w_input.cols(); }
};

struct LstmCellState {
  Vector h;
  Vector c;
};

using LstmState = std::vector<LstmCellState>;

/// One time step. Returns the new (h, c); the layer output is the new h.
LstmCellState lstm_step(const LstmParams& layer, std::span<const double> x,
                        const LstmCellState& state);

/// Layer identifiers are "encoder.<i>", "prediction.<i>", "embedding" and
/// "joint"; tensor names append ".<tensor>".
std::string encoder_layer_id(std::size_t i);
std::string prediction_layer_id(std::size_t i);
inline constexpr std::string_view kEmbeddingLayer = "embedding";
inline constexpr std::string_view kJointLayer = "joint";

struct ModelParams {
  ModelConfig config;
  std::vector<LstmParams> encoder;
  std::vector<LstmParams> prediction;
  Matrix embedding;       // V x H, row k - 1 embeds label k
  Matrix joint_enc;       // H x H
  Matrix joint_pred;      // H x H
  Matrix joint_bias;      // 1 x H
  Matrix joint_out;       // (V + 1) x H
  Matrix joint_out_bias;  // 1 x (V + 1)

  /// Zero-valued parameters with the shapes implied by `config`.
  static ModelParams zeros(const ModelConfig& config);

  /// Visits every tensor in a fixed order as (layer id, tensor name, matrix).
  template <typename Fn>
  void for_each_tensor(Fn&& fn);
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const;

  std::vector<std::string> layer_ids() const;
  std::size_t num_parameters() const;
  bool all_finite() const;
  void set_zero();

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// FNV-1a digest over the raw bytes of one tensor.
std::uint64_t tensor_checksum(const Matrix& m);
/// Per-layer digests, combining every tensor of the layer.
std::vector<std::pair<std::string, std::uint64_t>> layer_checksums(
    const ModelParams& params);

/// Uniform in [-s, s], s = 1 / sqrt(hidden_size), drawn in for_each_tensor
/// order.
ModelParams init_params(const ModelConfig& config, Rng& rng);

/// Set of layer ids whose tensors are updated by training.
class FreezeMask {
 public:
  FreezeMask() = default;
  explicit FreezeMask(std::set<std::string> trainable)
      : trainable_(std::move(trainable)) {}

  static FreezeMask all(const ModelConfig& config);
  static FreezeMask encoder_range(std::size_t first, std::size_t last);
  /// Parses "encoder.0-4", "encoder.2,encoder.3", "all", "none".
  static FreezeMask parse(std::string_view text, const ModelConfig& config);

  bool trainable(std::string_view layer) const {
    return trainable_.count(std::string(layer)) != 0;
  }
  bool empty() const { return trainable_.empty(); }
  std::size_t size() const { return trainable_.size(); }
  const std::set<std::string>& layers() const { return trainable_; }
  std::string to_string() const;
  /// Throws ConfigError if a layer id is unknown to `config`.
  void validate(const ModelConfig& config) const;

  /// Lowest encoder layer index that is trainable, or encoder_layers if none.
  std::size_t lowest_trainable_encoder(const ModelConfig& config) const;
  bool any_above_encoder() const;

  friend bool operator==(const FreezeMask&, const FreezeMask&) = default;

 private:
  std::set<std::string> trainable_;
};

// ---------------------------------------------------------------------------
// Forward passes.

/// Runs the encoder stack causally. Returns T' x H top-layer states.
Matrix encode(const ModelParams& params, const FeatureSequence& stacked);

/// Row 0 is the state after an all-zero start embedding, row u the state
/// after labels y_1..y_u. Throws DataError on an out-of-range label.
Matrix predict(const ModelParams& params, std::span<const int> labels);

/// Normalized log-probabilities over blank + V labels for one lattice node.
Vector joint(const ModelParams& params, std::span<const double> enc_t,
             std::span<const double> pred_u);

// ---------------------------------------------------------------------------
// Training-time forward with a tape, and its backward pass.

struct LstmLayerTape {
  Matrix input;   // T x in
  Matrix gates;   // T x 4H, post-activation
  Matrix cell;    // T x H
  Matrix hidden;  // T x H
};

/// Forward over a whole sequence recording everything backward needs.
void lstm_sequence_forward(const LstmParams& layer, const Matrix& input,
                           LstmLayerTape& tape);

/// Back-propagates d_hidden (T x H) through one recorded layer. Weight
/// gradients are accumulated into `grad` when non-null; the input gradient
/// is written to `d_input` when non-null.
void lstm_sequence_backward(const LstmParams& layer, const LstmLayerTape& tape,
                            const Matrix& d_hidden, LstmParams* grad,
                            Matrix* d_input);

struct JointTape {
  std::size_t frames = 0;
  std::size_t positions = 0;  // U + 1
  Matrix hidden;    // (T * (U+1)) x H, post-tanh
  Matrix logprobs;  // (T * (U+1)) x (V+1)
};

void joint_forward(const ModelParams& params, const Matrix& enc,
                   const Matrix& pred, JointTape& tape);

struct ForwardTape {
  std::vector<LstmLayerTape> encoder;
  std::vector<Matrix> encoder_out;  // layer outputs after the residual add
  std::vector<LstmLayerTape> prediction;
  JointTape joint;
  std::vector<int> labels;
};

/// Forward pass over one utterance, recording every layer.
void forward_with_tape(const ModelParams& params, const FeatureSequence& stacked,
                       std::span<const int> labels, ForwardTape& tape);

/// Back-propagates d(loss)/d(logprobs) (laid out like JointTape::logprobs)
/// into `grads`, touching only tensors of layers in `mask`. Work below the
/// lowest trainable layer is skipped.
void backward(const ModelParams& params, const ForwardTape& tape,
              const Matrix& d_logprobs, const FreezeMask& mask,
              ModelParams& grads);

// ---------------------------------------------------------------------------

template <typename Fn>
void ModelParams::for_each_tensor(Fn&& fn) {
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string id = encoder_layer_id(i);
    fn(id, id + ".w_input", encoder[i].w_input);
    fn(id, id + ".w_recurrent", encoder[i].w_recurrent);
    fn(id, id + ".bias", encoder[i].bias);
  }
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const std::string id = prediction_layer_id(i);
    fn(id, id + ".w_input", prediction[i].w_input);
    fn(id, id + ".w_recurrent", prediction[i].w_recurrent);
    fn(id, id + ".bias", prediction[i].bias);
  }
  const std::string emb(kEmbeddingLayer), jnt(kJointLayer);
  fn(emb, emb + ".table", embedding);
  fn(jnt, jnt + ".enc", joint_enc);
  fn(jnt, jnt + ".pred", joint_pred);
  fn(jnt, jnt + ".bias", joint_bias);
  fn(jnt, jnt + ".out", joint_out);
  fn(jnt, jnt + ".out_bias", joint_out_bias);
}

template <typename Fn>
void ModelParams::for_each_tensor(Fn&& fn) const {
  const_cast<ModelParams*>(this)->for_each_tensor(
      [&fn](const std::string& layer, const std::string& name, Matrix& m) {
        fn(layer, name, static_cast<const Matrix&>(m));
      });
}

}  // namespace odpers

#endif  // ODPERS_MODEL_HPP_
