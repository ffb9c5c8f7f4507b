// src/transducer.cpp

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

#include "odpers/transducer.hpp"

#include <cmath>
#include <limits>

namespace odpers {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_labels(const Lattice& lattice, std::span<const int> labels) {
  if (lattice.frames == 0) throw DataError("rnnt: lattice has no frames");
  if (labels.size() != lattice.labels)
    throw DataError("rnnt: " + std::to_string(labels.size()) +
                    " labels for a lattice built for " +
                    std::to_string(lattice.labels));
  const int v = static_cast<int>(lattice.outputs()) - 1;
  for (int k : labels)
    if (k < 1 || k > v)
      throw DataError("rnnt: label " + std::to_string(k) + " outside [1, " +
                      std::to_string(v) + "]");
}

// alpha(t, u): log-probability of reaching node (t, u) having emitted y_1..y_u.
Matrix forward_variables(const Lattice& lat, std::span<const int> labels) {
  const std::size_t T = lat.frames, U = lat.labels;
  Matrix alpha(T, U + 1, kNegInf);
  alpha(0, 0) = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double from_blank =
          t > 0 ? alpha(t - 1, u) + lat.at(t - 1, u, kBlank) : kNegInf;
      double from_label =
          u > 0 ? alpha(t, u - 1) + lat.at(t, u - 1, labels[u - 1]) : kNegInf;
      alpha(t, u) = log_add(from_blank, from_label);
    }
  }
  return alpha;
}

// beta(t, u): log-probability of completing the sequence from node (t, u).
Matrix backward_variables(const Lattice& lat, std::span<const int> labels) {
  const std::size_t T = lat.frames, U = lat.labels;
  Matrix beta(T, U + 1, kNegInf);
  beta(T - 1, U) = lat.at(T - 1, U, kBlank);
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t u = U + 1; u-- > 0;) {
      if (t == T - 1 && u == U) continue;
      double via_blank =
          t + 1 < T ? beta(t + 1, u) + lat.at(t, u, kBlank) : kNegInf;
      double via_label =
          u < U ? beta(t, u + 1) + lat.at(t, u, labels[u]) : kNegInf;
      beta(t, u) = log_add(via_blank, via_label);
    }
  }
  return beta;
}

}  // namespace

double rnnt_loss(const Lattice& lattice, std::span<const int> labels) {
  check_labels(lattice, labels);
  Matrix alpha = forward_variables(lattice, labels);
  const std::size_t T = lattice.frames, U = lattice.labels;
  return -(alpha(T - 1, U) + lattice.at(T - 1, U, kBlank));
}

TransducerResult rnnt_loss_and_grad(const Lattice& lattice,
                                    std::span<const int> labels) {
  check_labels(lattice, labels);
  const std::size_t T = lattice.frames, U = lattice.labels;
  Matrix alpha = forward_variables(lattice, labels);
  Matrix beta = backward_variables(lattice, labels);
  const double log_z = beta(0, 0);
  TransducerResult result;
  result.loss = -log_z;
  result.gradient = Matrix(lattice.logprobs.rows(), lattice.outputs());
  if (!std::isfinite(log_z)) return result;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      const double a = alpha(t, u);
      if (a == kNegInf) continue;
      double next_blank = t + 1 < T ? beta(t + 1, u) : (u == U ? 0.0 : kNegInf);
      if (next_blank != kNegInf)
        result.gradient(lattice.node(t, u), kBlank) =
            -std::exp(a + lattice.at(t, u, kBlank) + next_blank - log_z);
      if (u < U) {
        const int k = labels[u];
        result.gradient(lattice.node(t, u), k) =
            -std::exp(a + lattice.at(t, u, k) + beta(t, u + 1) - log_z);
      }
    }
  }
  return result;
}

Matrix rnnt_grad(const Lattice& lattice, std::span<const int> labels) {
  return rnnt_loss_and_grad(lattice, labels).gradient;
}

// ---------------------------------------------------------------------------

TokenSequence greedy_decode(const ModelParams& params,
                            const FeatureSequence& features,
                            std::size_t max_symbols_per_frame) {
  const ModelConfig& cfg = params.config;
  return greedy_decode_stacked(
      params, stack_features(features, cfg.stack_size, cfg.stack_stride),
      max_symbols_per_frame);
}

TokenSequence greedy_decode_stacked(const ModelParams& params,
                                    const FeatureSequence& stacked,
                                    std::size_t max_symbols_per_frame) {
  if (max_symbols_per_frame == 0)
    throw ConfigError("greedy_decode: max_symbols_per_frame must be >= 1");
  const ModelConfig& cfg = params.config;
  const std::size_t h = cfg.hidden_size;
  const std::size_t outputs = cfg.num_outputs();
  Matrix enc = encode(params, stacked);
  Matrix enc_proj(enc.rows(), h);
  gemm_nt_add(enc, params.joint_enc, enc_proj);

  LstmState state(cfg.prediction_layers, LstmCellState{Vector(h), Vector(h)});
  Vector pred_proj(h);
  auto advance = [&](std::span<const double> input) {
    Vector x(input.begin(), input.end());
    for (std::size_t l = 0; l < cfg.prediction_layers; ++l) {
      state[l] = lstm_step(params.prediction[l], x, state[l]);
      x = state[l].h;
    }
    std::fill(pred_proj.begin(), pred_proj.end(), 0.0);
    gemv_add(params.joint_pred, x, pred_proj);
  };
  advance(Vector(h, 0.0));

  TokenSequence out;
  Vector z(h), logits(outputs);
  for (std::size_t t = 0; t < enc.rows(); ++t) {
    auto a = enc_proj.row(t);
    for (std::size_t emitted = 0; emitted < max_symbols_per_frame; ++emitted) {
      for (std::size_t j = 0; j < h; ++j)
        z[j] = std::tanh(a[j] + pred_proj[j] + params.joint_bias.data()[j]);
      std::copy(params.joint_out_bias.values().begin(),
                params.joint_out_bias.values().end(), logits.begin());
      gemv_add(params.joint_out, z, logits);
      log_softmax_inplace(logits);
      std::size_t best = 0;
      for (std::size_t k = 1; k < outputs; ++k)
        if (logits[k] > logits[best]) best = k;
      if (best == static_cast<std::size_t>(kBlank)) break;
      out.push_back(static_cast<int>(best));
      advance(params.embedding.row(best - 1));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

double utterance_loss_and_grad(const ModelParams& params,
                               const FeatureSequence& stacked,
                               std::span<const int> labels,
                               const FreezeMask& mask, ModelParams& grads) {
  ForwardTape tape;
  forward_with_tape(params, stacked, labels, tape);
  Lattice lattice;
  lattice.frames = tape.joint.frames;
  lattice.labels = labels.size();
  lattice.logprobs = std::move(tape.joint.logprobs);
  TransducerResult r = rnnt_loss_and_grad(lattice, labels);
  tape.joint.logprobs = std::move(lattice.logprobs);
  if (!std::isfinite(r.loss))
    throw TrainingError("non-finite transducer loss");
  backward(params, tape, r.gradient, mask, grads);
  return r.loss;
}

double utterance_loss(const ModelParams& params, const FeatureSequence& stacked,
                      std::span<const int> labels) {
  ForwardTape tape;
  forward_with_tape(params, stacked, labels, tape);
  Lattice lattice;
  lattice.frames = tape.joint.frames;
  lattice.labels = labels.size();
  lattice.logprobs = std::move(tape.joint.logprobs);
  return rnnt_loss(lattice, labels);
}

}  // namespace odpers
