// tests/test_experiment.cpp


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


#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "odpers/config_file.hpp"
#include "odpers/error.hpp"
#include "odpers/experiment.hpp"
#include "odpers/recipe.hpp"
#include "test_util.hpp"

using namespace odpers;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("config text parsing") {
  auto s = parse_config_text(
      "top = 1\n# comment\n[a]\nx = \"two words\"\ny=3\n\n[b c]\n");
  REQUIRE(s.size() == 3);
  CHECK(s[0].name.empty());
  CHECK(s[0].entries[0].value == "1");
  CHECK(s[1].name == "a");
  CHECK(s[1].entries[0].value == "two words");
  CHECK(s[1].entries[1].key == "y");
  CHECK(s[1].entries[1].line == 5);
  CHECK(s[2].name == "b c");
  CHECK_THROWS_WITH_AS(parse_config_text("[a]\nx = 1\nx = 2\n"), doctest::Contains("line 3"),
                       ConfigError);
  CHECK_THROWS_AS(parse_config_text("[a\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("novalue\n"), ConfigError);
  CHECK(parse_bool("k", "true"));
  CHECK_FALSE(parse_bool("k", "0"));
  CHECK_THROWS_AS(parse_bool("k", "maybe"), ConfigError);
  CHECK_THROWS_AS(parse_u64("k", "-1"), ConfigError);
  CHECK_THROWS_AS(parse_double("k", "1.5x"), ConfigError);
  CHECK(parse_double("k", format_double(0.1)) == 0.1);
  CHECK(parse_config_text("v = " + quote_config_value(" a \"b\" ") + "\n")[0].entries[0].value ==
        " a \"b\" ");
}

TEST_CASE("recipes parse and validate") {
  ModelConfig mc;
  auto r = parse_recipes(
      "[recipe fast]\nkind = ondevice\nn = 5\nepochs = 4\nrounds = 10\nlearning_rate = 1e-3\n"
      "mask = encoder.2-4\n",
      mc);
  REQUIRE(r.count("fast"));
  const Recipe& f = r.at("fast");
  CHECK(f.kind == RecipeKind::kOnDevice);
  CHECK(f.ondevice.utterances_per_round == 5);
  CHECK(f.ondevice.epochs == 4);
  CHECK(f.ondevice.learning_rate == 1e-3);
  CHECK(f.rounds == 10);
  CHECK(f.ondevice.mask == FreezeMask::encoder_range(2, 4));
  auto again = parse_recipes("[recipe fast]\n" + format_recipe(f), mc);
  CHECK(format_recipe(again.at("fast")) == format_recipe(f));
  CHECK_THROWS_AS(parse_recipes("[recipe x]\nkind = server\nepochs = 4\n", mc), ConfigError);
  CHECK_THROWS_AS(parse_recipes("[recipe x]\nkind = ondevice\nepochs = 0\n", mc), ConfigError);
}

TEST_CASE("experiment config round trip and validation") {
  ExperimentConfig d = ExperimentConfig::desk_default();
  d.validate();
  CHECK(d.ondevice.ondevice.utterances_per_round == 5);
  CHECK(d.ondevice.ondevice.epochs == 4);
  CHECK(d.ondevice.rounds == 10);
  CHECK(d.ondevice.ondevice.mask == FreezeMask::encoder_range(2, 4));
  CHECK(d.server_all.server.mask == FreezeMask::encoder_range(0, 4));
  const std::string text = format_experiment_config(d);
  CHECK(format_experiment_config(parse_experiment_config(text)) == text);

  auto c = parse_experiment_config(odpers::testing::smoke_config_text("x"));
  CHECK(c.model.hidden_size == 8);
  CHECK(c.ondevice.rounds == 2);
  CHECK_THROWS_AS(parse_experiment_config("[corpus]\nsubsample_size = 20\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[nowhere]\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[model]\nencoder_layers = 3\n"), ConfigError);
}

TEST_CASE("minimal experiment emits every report deterministically") {
  const fs::path root = fs::temp_directory_path() / "odpers_smoke";
  fs::remove_all(root);
  std::vector<std::string> csv_a;
  for (const char* name : {"a", "b"}) {
    auto c = parse_experiment_config(odpers::testing::smoke_config_text((root / name).string()));
    c.workers = name[0] == 'a' ? 1 : 3;
    ExperimentResults r = run_experiment(c);
    CHECK(r.speakers.size() == 3);
    for (const auto& s : r.speakers) {
      CHECK(s.rounds_from_sm.size() == 3);
      CHECK(s.rounds_from_bm.size() == 3);
      CHECK(s.sm_single.reference_words == s.sm_consec.reference_words);
    }
    const fs::path dir = root / name;
    const auto files = report_files();
    CHECK(files.size() == 6);
    for (std::size_t i = 0; i < files.size(); ++i) {
      CHECK_MESSAGE(fs::exists(dir / files[i]), files[i]);
      if (name[0] == 'a') csv_a.push_back(slurp(dir / files[i]));
      else CHECK_MESSAGE(slurp(dir / files[i]) == csv_a[i], files[i]);
    }
    CHECK(fs::exists(dir / "results.json"));
    CHECK_FALSE(fs::exists(dir / "FAILED"));
    const std::string json = slurp(dir / "results.json");
    CHECK(results_to_json(results_from_json(json)) == json);
  }
  const std::string rounds = slurp(root / "a" / "wer_by_round.csv");
  CHECK(rounds.rfind("round,", 0) == 0);
  fs::remove_all(root);
}

TEST_CASE("failed experiments leave a marker") {
  const fs::path root = fs::temp_directory_path() / "odpers_fail";
  fs::remove_all(root);
  auto c = parse_experiment_config(odpers::testing::smoke_config_text(root.string()));
  c.speakers = {"nobody"};
  CHECK_THROWS_AS(run_experiment(c), Error);
  CHECK(fs::exists(root / "FAILED"));
  fs::remove_all(root);
}
