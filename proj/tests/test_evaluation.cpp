// tests/test_evaluation.cpp


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



#include "doctest.h"
#include "odpers/error.hpp"
#include "odpers/evaluation.hpp"
#include "odpers/numerics.hpp"
#include "test_util.hpp"

using namespace odpers;

namespace {

std::vector<std::string> random_words(Rng& rng) {
  static const char* alphabet[] = {"on", "off", "lights", "play", "fan"};
  std::vector<std::string> out(rng.below(7));
  for (auto& w : out) w = alphabet[rng.below(5)];
  return out;
}

}  // namespace

TEST_CASE("wer matches exhaustive edit distance") {
  Rng rng(21);
  std::size_t mismatches = 0;
  for (int n = 0; n < 10000; ++n) {
    auto ref = random_words(rng), hyp = random_words(rng);
    WerBreakdown b = word_errors(ref, hyp);
    if (b.errors() != odpers::testing::exhaustive_edit_distance(ref, hyp)) ++mismatches;
    CHECK(b.reference_words == ref.size());
    CHECK(b.deletions + hyp.size() == b.insertions + ref.size());
  }
  CHECK(mismatches == 0);
}

TEST_CASE("wer examples") {
  WerBreakdown same = wer("turn on kitchen lights", "turn on kitchen lights");
  CHECK(same.errors() == 0);
  CHECK(same.wer() == 0.0);
  WerBreakdown one = wer("turn on kitchen lights", "turn on the lights");
  CHECK(one.substitutions == 1);
  CHECK(one.deletions == 0);
  CHECK(one.insertions == 0);
  CHECK(one.wer() == 25.0);
  WerBreakdown gone = wer("turn on kitchen lights", "");
  CHECK(gone.deletions == 4);
  CHECK(gone.wer() == 100.0);
  WerBreakdown empty = wer("", "hello there");
  CHECK(empty.empty_reference);
  CHECK(empty.insertions == 2);
  CHECK(empty.wer() == 200.0);
}

TEST_CASE("text normalization") {
  CHECK(normalize_text("  Turn ON,  the Kitchen-lights! ") == "turn on the kitchen lights");
  CHECK(split_words("a  b c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(wer("Play ABBA on Spotify.", "play abba on spotify").errors() == 0);
}

TEST_CASE("corpus wer pools counts") {
  std::vector<TranscriptPair> pairs{{"turn on the lights", "turn on kitchen lights"},
                                    {"", "play music"}};
  WerBreakdown b = corpus_wer(pairs);
  CHECK(b.reference_words == 6);
  CHECK(b.errors() == 3);
  CHECK(b.wer() == doctest::Approx(50.0));
}

TEST_CASE("intent parses of the two reference phrases") {
  const Grammar& g = Grammar::builtin();
  auto a = parse_intent("turn on kitchen lights", g);
  REQUIRE(a);
  CHECK(a->action == "turn_on");
  CHECK(a->device == "lights");
  CHECK(a->location == "kitchen");
  CHECK(a->media.empty());
  auto b = parse_intent("play ABBA on Spotify", g);
  REQUIRE(b);
  CHECK(b->action == "play");
  CHECK(b->media == "abba");
  CHECK(b->device == "spotify");
  CHECK(b->location.empty());
  CHECK_FALSE(parse_intent("zzz qqq", g));
  CHECK_FALSE(parse_intent("", g));
}

TEST_CASE("atsr examples") {
  const Grammar& g = Grammar::builtin();
  std::vector<std::string> refs{"turn on kitchen lights", "play abba on spotify",
                                "turn off the fan", "open the blinds"};
  CHECK(atsr(refs, refs, g) == 100.0);
  std::vector<std::string> junk(4, "zzz qqq");
  CHECK(atsr(junk, refs, g) == 0.0);
  std::vector<std::string> hyps{"turn on kitchen light", "play abba on spotify",
                                "turn on the fan", "open the blinds"};
  CHECK(atsr(hyps, refs, g) == 75.0);
  CHECK_THROWS_AS(atsr(std::span<const std::string>(hyps.data(), 3), refs, g), DataError);
}

TEST_CASE("relative improvement rounds the reference pairs") {
  CHECK(relative_improvement(23.2, 6.5) == 72);
  CHECK(relative_improvement(41.3, 12.1) == 71);
  CHECK(relative_improvement(80.4, 19.0) == 76);
  CHECK(relative_improvement(33.6, 9.7) == 71);
  CHECK(relative_improvement(23.2, 5.8) == 75);
  CHECK(relative_improvement(41.3, 11.8) == 71);
  CHECK(relative_improvement(80.4, 20.3) == 75);
  CHECK(relative_improvement(12.5, 12.5) == 0);
  CHECK_THROWS_AS(relative_improvement(0.0, 1.0), DataError);
}

TEST_CASE("median by severity") {
  std::vector<double> v{30, 10, 20, 70, 50, 90};
  std::vector<Severity> s{Severity::kMild,     Severity::kMild,   Severity::kModerate,
                          Severity::kModerate, Severity::kSevere, Severity::kSevere};
  auto m = median_by_severity(v, s);
  CHECK(m.by_group.at(Severity::kMild) == 20.0);
  CHECK(m.by_group.at(Severity::kModerate) == 45.0);
  CHECK(m.by_group.at(Severity::kSevere) == 70.0);
  CHECK(*m.overall == 40.0);
  auto partial = median_by_severity(std::span<const double>(v.data(), 2),
                                    std::span<const Severity>(s.data(), 2));
  CHECK(partial.by_group.count(Severity::kSevere) == 0);
}

TEST_CASE("correction cost") {
  RoundLog r1, r2;
  r1.transcripts = {{"turn on lights", "turn on lights"}};
  r2.transcripts = {{"turn of lights", "turn off lights"}};
  std::vector<RoundLog> perfect{r1};
  CHECK(correction_cost(perfect).errors() == 0);
  std::vector<RoundLog> both{r1, r2};
  CHECK(correction_cost(both).wer() == doctest::Approx(100.0 / 6.0));
  CHECK_THROWS_AS(correction_cost(std::vector<RoundLog>{}), DataError);
}

TEST_CASE("grammar parsing rejects malformed text") {
  CHECK_THROWS_AS(Grammar::parse("[action]\nturn_on = turn on\n"), DataError);
  CHECK_THROWS_AS(Grammar::parse("[bogus]\n"), DataError);
  CHECK_FALSE(Grammar::builtin().templates().empty());
}
