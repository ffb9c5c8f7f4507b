// tests/test_util.hpp


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


#ifndef ODPERS_TESTS_TEST_UTIL_HPP_
#define ODPERS_TESTS_TEST_UTIL_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "odpers/model.hpp"
#include "odpers/numerics.hpp"
#include "odpers/transducer.hpp"

namespace odpers::testing {

/// Lattice whose every node holds a normalized random distribution.
inline Lattice random_lattice(std::size_t t, std::size_t u, std::size_t v, Rng& rng) {
  Lattice lat(t, u, v + 1);
  for (std::size_t n = 0; n < lat.logprobs.rows(); ++n) {
    auto row = lat.logprobs.row(n);
    for (double& x : row) x = 2.0 * rng.normal();
    log_softmax_inplace(row);
  }
  return lat;
}

/// Sums the probability of every monotonic alignment by explicit recursion.
inline double brute_force_prob(const Lattice& lat, const std::vector<int>& labels,
                               std::size_t t, std::size_t u) {
  const std::size_t big_t = lat.frames, big_u = labels.size();
  double total = 0.0;
  const double blank = std::exp(lat.at(t, u, kBlank));
  if (t + 1 == big_t) {
    if (u == big_u) total += blank;
  } else {
    total += blank * brute_force_prob(lat, labels, t + 1, u);
  }
  if (u < big_u)
    total += std::exp(lat.at(t, u, static_cast<std::size_t>(labels[u]))) *
             brute_force_prob(lat, labels, t, u + 1);
  return total;
}

inline double brute_force_loss(const Lattice& lat, const std::vector<int>& labels) {
  return -std::log(brute_force_prob(lat, labels, 0, 0));
}

/// Minimum edit cost over every monotone pairing of reference and hypothesis
/// words. Paired words cost 0 or 1, unpaired words cost 1 each.
inline std::size_t exhaustive_edit_distance(const std::vector<std::string>& ref,
                                            const std::vector<std::string>& hyp) {
  std::size_t best = ref.size() + hyp.size();
  std::function<void(std::size_t, std::size_t, std::size_t, std::size_t)> walk =
      [&](std::size_t i, std::size_t j, std::size_t pairs, std::size_t subs) {
        best = std::min(best, subs + (ref.size() - pairs) + (hyp.size() - pairs));
        for (std::size_t a = i; a < ref.size(); ++a)
          for (std::size_t b = j; b < hyp.size(); ++b)
            walk(a + 1, b + 1, pairs + 1, subs + (ref[a] != hyp[b] ? 1 : 0));
      };
  walk(0, 0, 0, 0);
  return best;
}

/// Small model for finite-difference checks.
inline ModelConfig tiny_config() {
  ModelConfig mc;
  mc.feature_dim = 3;
  mc.stack_size = 2;
  mc.stack_stride = 1;
  mc.encoder_layers = 5;
  mc.prediction_layers = 1;
  mc.hidden_size = 3;
  mc.vocab = " ab";
  return mc;
}

/// Experiment small enough to finish in seconds.
inline std::string smoke_config_text(const std::string& output_dir) {
  return "[experiment]\n"
         "output_dir = \"" + output_dir + "\"\n"
         "master_seed = 3\n"
         "workers = 2\n"
         "[corpus]\n"
         "typical_speakers = 2\n"
         "speakers_per_severity = 1\n"
         "utterances_per_speaker = 20\n"
         "subsample_size = 10\n"
         "[model]\n"
         "encoder_layers = 5\n"
         "prediction_layers = 1\n"
         "hidden_size = 8\n"
         "[recipe base]\nmax_epochs = 1\n"
         "[recipe seed]\nmax_epochs = 1\n"
         "[recipe server_all]\nmax_epochs = 1\n"
         "[recipe server_50]\nmax_epochs = 1\n"
         "[recipe ondevice]\nrounds = 2\nepochs = 1\n";
}

}  // namespace odpers::testing

#endif  // ODPERS_TESTS_TEST_UTIL_HPP_
