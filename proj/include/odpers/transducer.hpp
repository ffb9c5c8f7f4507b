// odpers/transducer.hpp

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

#ifndef ODPERS_TRANSDUCER_HPP_
#define ODPERS_TRANSDUCER_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "odpers/model.hpp"
#include "odpers/numerics.hpp"

namespace odpers {

/// Alignment lattice of log-probabilities. Node (t, u) is row t * (U+1) + u
/// of `logprobs`; column k is output k, with blank at column 0.
struct Lattice {
  std::size_t frames = 0;  // T
  std::size_t labels = 0;  // U
  Matrix logprobs;         // (T * (U+1)) x (V+1)

  Lattice() = default;
  Lattice(std::size_t t, std::size_t u, std::size_t outputs)
      : frames(t), labels(u), logprobs(t * (u + 1), outputs) {}

  std::size_t outputs() const { return logprobs.cols(); }
  std::size_t node(std::size_t t, std::size_t u) const { return t * (labels + 1) + u; }
  double& at(std::size_t t, std::size_t u, std::size_t k) {
    return logprobs(node(t, u), k);
  }
  double at(std::size_t t, std::size_t u, std::size_t k) const {
    return logprobs(node(t, u), k);
  }
};

using TokenSequence = std::vector<int>;

struct TransducerResult {
  double loss = 0.0;
  Matrix gradient;  // same layout as Lattice::logprobs
};

/// Negative log-likelihood of `labels` summed over all monotonic alignments.
/// Throws DataError when the label count or a label index does not fit the
/// lattice.
double rnnt_loss(const Lattice& lattice, std::span<const int> labels);

/// Gradient of rnnt_loss w.r.t. every lattice entry, from the alpha and beta
/// recursions. Only blank and next-label entries are non-zero.
Matrix rnnt_grad(const Lattice& lattice, std::span<const int> labels);

/// Loss and gradient from one forward-backward sweep.
TransducerResult rnnt_loss_and_grad(const Lattice& lattice,
                                    std::span<const int> labels);

/// Greedy search over raw (unstacked) features. Per encoder frame the argmax
/// output is taken repeatedly: blank advances the frame, a label is emitted
/// and fed to the prediction network. At most `max_symbols_per_frame` labels
/// per frame. Ties go to the lowest index, so blank wins them.
TokenSequence greedy_decode(const ModelParams& params,
                            const FeatureSequence& features,
                            std::size_t max_symbols_per_frame = 3);

/// As above over already-stacked features.
TokenSequence greedy_decode_stacked(const ModelParams& params,
                                    const FeatureSequence& stacked,
                                    std::size_t max_symbols_per_frame = 3);

/// RNN-T loss of one utterance with its gradient accumulated into `grads`
/// for the layers in `mask`.
double utterance_loss_and_grad(const ModelParams& params,
                               const FeatureSequence& stacked,
                               std::span<const int> labels,
                               const FreezeMask& mask, ModelParams& grads);

/// Loss only.
double utterance_loss(const ModelParams& params, const FeatureSequence& stacked,
                      std::span<const int> labels);

}  // namespace odpers

#endif  // ODPERS_TRANSDUCER_HPP_
