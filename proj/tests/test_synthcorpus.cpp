// tests/test_synthcorpus.cpp


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


#include <set>

#include "doctest.h"
#include "odpers/error.hpp"
#include "odpers/synthcorpus.hpp"

using namespace odpers;

TEST_CASE("generated phrases parse to their intent") {
  const Grammar& g = Grammar::builtin();
  Rng rng(31);
  std::set<std::string> actions, devices;
  for (int i = 0; i < 1000; ++i) {
    auto [text, intent] = generate_phrase(g, rng);
    auto parsed = parse_intent(text, g);
    REQUIRE_MESSAGE(parsed, text);
    CHECK_MESSAGE(*parsed == intent, text);
    actions.insert(intent.action);
    if (!intent.device.empty()) devices.insert(intent.device);
  }
  CHECK(actions.size() >= 2);
  CHECK(devices.size() >= 2);
  Rng a(5), b(5);
  CHECK(generate_phrase(g, a).first == generate_phrase(g, b).first);
}

TEST_CASE("typical speaker with zero noise yields repeated prototypes") {
  SynthConfig sc;
  sc.tempo_jitter = 0.0;
  sc.trailing_silence = 0;
  SpeakerProfile p = make_speaker(Severity::kTypical, 7, "t", sc);
  CHECK(p.channel == Matrix::identity(sc.feature_dim));
  CHECK(p.tempo_warp == 1.0);
  CHECK(p.perturb_prob == 0.0);
  p.noise_sigma = 0.0;
  const Matrix protos = symbol_prototypes(sc);
  const std::string text = "turn on";
  FeatureSequence f = synthesize_features(text, p, 99, sc);
  const std::size_t k = 3;
  REQUIRE(f.num_frames() == k * text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const std::size_t sym = sc.vocab.find(text[i]);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t j = 0; j < sc.feature_dim; ++j)
        CHECK(f.frames(i * k + r, j) == protos(sym, j));
  }
}

TEST_CASE("feature synthesis is deterministic and linear in length") {
  SynthConfig sc;
  SpeakerProfile p = make_speaker(Severity::kModerate, 12, "m", sc);
  auto a = synthesize_features("play music", p, 3, sc);
  auto b = synthesize_features("play music", p, 3, sc);
  CHECK(a.frames == b.frames);
  sc.tempo_jitter = 0.0;
  auto s = synthesize_features("fan", p, 3, sc);
  auto l = synthesize_features("fan fan fan fan", p, 3, sc);
  const double ratio = static_cast<double>(l.num_frames() - sc.trailing_silence) /
                       static_cast<double>(s.num_frames() - sc.trailing_silence);
  CHECK(ratio == doctest::Approx(15.0 / 3.0).epsilon(0.1));
  CHECK_THROWS_AS(synthesize_features("PLAY", p, 3, sc), DataError);
  CHECK_THROWS_AS(synthesize_features("", p, 3, sc), DataError);
}

TEST_CASE("speaker profiles follow their severity ranges") {
  SynthConfig sc;
  CHECK(make_speaker(Severity::kSevere, 4, "s", sc).channel ==
        make_speaker(Severity::kSevere, 4, "s", sc).channel);
  const Severity order[] = {Severity::kMild, Severity::kModerate, Severity::kSevere};
  for (int i = 0; i < 2; ++i) {
    auto lo = severity_ranges(order[i]), hi = severity_ranges(order[i + 1]);
    CHECK(lo.noise_sigma < hi.noise_sigma);
    CHECK(lo.perturb_prob < hi.perturb_prob);
    CHECK(lo.channel_hi <= hi.channel_hi);
    CHECK(lo.articulation_fraction < hi.articulation_fraction);
    CHECK(hi.warp_hi - hi.warp_lo >= lo.warp_hi - lo.warp_lo);
  }
  for (Severity sev : order) {
    auto r = severity_ranges(sev);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto p = make_speaker(sev, seed, "x", sc);
      CHECK(p.tempo_warp >= r.warp_lo);
      CHECK(p.tempo_warp <= r.warp_hi);
      CHECK(p.channel_strength >= r.channel_lo);
      CHECK(p.channel_strength <= r.channel_hi);
      std::size_t affected = 0;
      for (std::size_t k = 0; k < p.articulation.size(); ++k) {
        if (p.articulation[k] == 0.0) continue;
        ++affected;
        CHECK(p.articulation[k] >= r.blend_lo);
        CHECK(p.articulation[k] <= r.blend_hi);
        CHECK(static_cast<std::size_t>(p.confusions[k]) != k);
      }
      CHECK(p.confusions[sc.vocab.find(' ')] == static_cast<int>(sc.vocab.find(' ')));
      CHECK(affected > 0);
    }
  }
}

TEST_CASE("corpus splits and subsample") {
  CorpusConfig cc;
  cc.typical_speakers = 2;
  cc.speakers_per_severity = 1;
  cc.utterances_per_speaker = 40;
  Corpus c = build_corpus(cc);
  REQUIRE(c.speakers.size() == 5);
  CHECK(c.disordered_speakers().size() == 3);
  CHECK(c.speakers_with(Severity::kTypical).size() == 2);
  for (const auto& s : c.speakers) {
    std::set<std::size_t> all;
    for (auto* part : {&s.train, &s.dev, &s.test})
      for (std::size_t id : *part) CHECK(all.insert(id).second);
    CHECK(all.size() == cc.utterances_per_speaker);
    if (s.profile.severity == Severity::kTypical) continue;
    CHECK(s.subsample.size() == std::min<std::size_t>(50, s.train.size()));
    for (std::size_t id : s.subsample)
      CHECK(std::find(s.train.begin(), s.train.end(), id) != s.train.end());
    CHECK_FALSE(s.test.empty());
    CHECK_FALSE(s.dev.empty());
  }
  Corpus again = build_corpus(cc);
  CHECK(again.digest() == c.digest());
  Corpus back = Corpus::from_manifest(c.manifest());
  CHECK(back.manifest() == c.manifest());
  CHECK(back.features(7).frames == c.features(7).frames);
  cc.seed = 2;
  CHECK(build_corpus(cc).digest() != c.digest());
  CHECK_THROWS_AS(c.find_speaker("nobody"), DataError);
  CHECK_THROWS_AS(Corpus::from_manifest("config\tseed=1\tbogus=2\n"), DataError);
}
