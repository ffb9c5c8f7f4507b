// odpers/synthcorpus.hpp

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

#ifndef ODPERS_SYNTHCORPUS_HPP_
#define ODPERS_SYNTHCORPUS_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "odpers/evaluation.hpp"
#include "odpers/model.hpp"
#include "odpers/numerics.hpp"
#include "odpers/types.hpp"

namespace odpers {

struct SynthConfig {
  std::size_t feature_dim = 16;
  std::string vocab = ModelConfig{}.vocab;
  double frames_per_char = 3.0;
  /// Noise-only frames appended after the last symbol.
  std::size_t trailing_silence = 6;
  double frame_period_ms = 10.0;
  std::uint64_t prototype_seed = 0x70726f746f747970ULL;
  /// Per-utterance speaking-rate factor drawn from [1 - j, 1 + j].
  double tempo_jitter = 0.15;
  /// Weight of the disorder component shared by all non-typical speakers.
  double shared_disorder = 0.7;
};

/// Distortion ranges per severity. Warp, channel strength and blend weights
/// are drawn uniformly from [lo, hi]; the rest are fixed per group.
struct SeverityRanges {
  double warp_lo, warp_hi;
  double noise_sigma;
  double perturb_prob;
  double channel_lo, channel_hi;
  /// Fraction of letters articulated as a blend toward their partner.
  double articulation_fraction = 0.0;
  double blend_lo = 0.0, blend_hi = 0.0;
};

SeverityRanges severity_ranges(Severity severity);

struct SpeakerProfile {
  std::string id;
  Severity severity = Severity::kTypical;
  std::uint64_t seed = 0;
  Matrix channel;  // d x d, applied to every frame
  double channel_strength = 0.0;
  double tempo_warp = 1.0;
  double noise_sigma = 0.0;
  double perturb_prob = 0.0;
  /// confusions[k] is the symbol index spoken in place of symbol k when a
  /// perturbation fires. Identity for TYPICAL speakers.
  std::vector<int> confusions;
  /// articulation[k] in [0, 1) moves symbol k toward confusions[k] on every
  /// occurrence. Zero for unaffected symbols.
  std::vector<double> articulation;
};

/// Draws a profile from the severity's ranges. TYPICAL speakers get an
/// identity channel, warp 1 and no perturbation.
SpeakerProfile make_speaker(Severity severity, std::uint64_t seed,
                            std::string id, const SynthConfig& synth = {});
SpeakerProfile make_speaker(Severity severity, const SeverityRanges& ranges,
                            std::uint64_t seed, std::string id,
                            const SynthConfig& synth = {});

/// Fixed d-dimensional prototype per vocabulary symbol.
Matrix symbol_prototypes(const SynthConfig& synth);

/// Each symbol's prototype is held for a number of frames set by the tempo
/// warp, optionally replaced by its confusion partner, passed through the
/// speaker channel, and corrupted by Gaussian noise. Trailing silence frames
/// carry noise only. Deterministic in
/// (transcript, profile, utt_seed). Throws DataError on an out-of-vocabulary
/// character or an empty transcript.
FeatureSequence synthesize_features(std::string_view transcript,
                                    const SpeakerProfile& profile,
                                    std::uint64_t utt_seed,
                                    const SynthConfig& synth = {});

/// Samples one template production. The returned intent is what
/// parse_intent yields for the transcript.
std::pair<std::string, Intent> generate_phrase(const Grammar& grammar, Rng& rng);

enum class Split { kTrain, kDev, kTest };
std::string_view split_name(Split s);

struct Utterance {
  std::size_t speaker = 0;  // index into Corpus::speakers
  std::size_t index = 0;    // position within the speaker
  std::string transcript;
  Intent intent;
  std::uint64_t seed = 0;
  Split split = Split::kTrain;
  std::string domain = "HA";
};

struct CorpusConfig {
  std::size_t typical_speakers = 8;
  std::size_t speakers_per_severity = 4;
  std::size_t utterances_per_speaker = 200;
  std::size_t subsample_size = 50;
  double train_fraction = 0.8;
  double dev_fraction = 0.1;
  std::uint64_t seed = 1;
  SynthConfig synth;
};

struct CorpusSpeaker {
  SpeakerProfile profile;
  std::vector<std::size_t> train, dev, test;  // utterance ids
  /// Random subsample of the HA train utterances, in recording order.
  std::vector<std::size_t> subsample;
};

struct Corpus {
  CorpusConfig config;
  std::vector<CorpusSpeaker> speakers;
  std::vector<Utterance> utterances;

  FeatureSequence features(std::size_t utterance_id) const;
  std::size_t find_speaker(std::string_view id) const;  // throws DataError
  std::vector<std::size_t> speakers_with(Severity s) const;
  std::vector<std::size_t> disordered_speakers() const;

  /// Line-delimited manifest; every feature is recomputable from it.
  std::string manifest() const;
  std::uint64_t digest() const { return fnv1a64(manifest()); }
  static Corpus from_manifest(std::string_view text);
};

Corpus build_corpus(const CorpusConfig& config,
                    const Grammar& grammar = Grammar::builtin());

/// seed = hash(corpus seed, speaker id, index)
std::uint64_t utterance_seed(std::uint64_t corpus_seed, std::string_view speaker,
                             std::size_t index);

}  // namespace odpers

#endif  // ODPERS_SYNTHCORPUS_HPP_
