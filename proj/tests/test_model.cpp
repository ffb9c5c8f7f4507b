// tests/test_model.cpp


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


#include <cmath>

#include "doctest.h"
#include "odpers/error.hpp"
#include "odpers/model.hpp"
#include "test_util.hpp"

using namespace odpers;

namespace {

FeatureSequence ramp(std::size_t t, std::size_t d) {
  FeatureSequence seq;
  seq.frames = Matrix(t, d);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) seq.frames(i, j) = static_cast<double>(i);
  return seq;
}

}  // namespace

TEST_CASE("stack_features shapes and padding") {
  auto a = stack_features(ramp(12, 2), 4, 3);
  CHECK(a.num_frames() == 4);
  CHECK(a.dim() == 8);
  CHECK(a.frame_period_ms == doctest::Approx(30.0));

  auto b = stack_features(ramp(1, 2), 4, 3);
  CHECK(b.num_frames() == 1);
  for (double x : b.frames.row(0)) CHECK(x == 0.0);

  auto c = stack_features(ramp(4, 1), 4, 3);
  REQUIRE(c.num_frames() == 2);
  for (double x : c.frames.row(1)) CHECK(x == 3.0);
  CHECK(c.frames(0, 0) == 0.0);
  CHECK(c.frames(0, 3) == 3.0);

  CHECK_THROWS(stack_features(ramp(0, 2), 4, 3));
}

TEST_CASE("lstm_step gate arithmetic") {
  LstmParams layer{Matrix(8, 3), Matrix(8, 2), Matrix(1, 8)};
  LstmCellState zero{Vector(2, 0.0), Vector(2, 0.0)};
  auto s = lstm_step(layer, std::vector<double>{1, 2, 3}, zero);
  CHECK(s.h == Vector{0.0, 0.0});
  LstmCellState ones{Vector(2, 0.0), Vector(2, 1.0)};
  auto r = lstm_step(layer, std::vector<double>{1, 2, 3}, ones);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r.c[i] == doctest::Approx(0.5));
    CHECK(r.h[i] == doctest::Approx(0.5 * std::tanh(0.5)));
  }
  CHECK_THROWS_AS(lstm_step(layer, std::vector<double>{1, 2}, zero), ShapeError);
}

TEST_CASE("encode and predict shapes") {
  ModelConfig mc = odpers::testing::tiny_config();
  ModelParams zero = ModelParams::zeros(mc);
  FeatureSequence one;
  one.frames = Matrix(1, mc.stacked_dim(), 1.0);
  Matrix enc = encode(zero, one);
  CHECK(enc.rows() == 1);
  CHECK(enc.cols() == mc.hidden_size);
  for (double x : enc.values()) CHECK(x == 0.0);
  Matrix pred = predict(zero, std::vector<int>{});
  CHECK(pred.rows() == 1);
  CHECK(pred.cols() == mc.hidden_size);
  const Matrix states = predict(zero, std::vector<int>{1, 3});
  CHECK(states.rows() == 3);
  for (double x : states.values()) CHECK(x == 0.0);
  CHECK_THROWS(predict(zero, std::vector<int>{4}));
  CHECK_THROWS(predict(zero, std::vector<int>{0}));
}

TEST_CASE("predict is causal") {
  ModelConfig mc = odpers::testing::tiny_config();
  Rng rng(5);
  ModelParams p = init_params(mc, rng);
  const std::vector<int> y{1, 2, 2, 1};
  Matrix full = predict(p, y);
  for (std::size_t u = 0; u <= y.size(); ++u) {
    Matrix part = predict(p, std::span<const int>(y.data(), u));
    for (std::size_t r = 0; r <= u; ++r)
      for (std::size_t j = 0; j < mc.hidden_size; ++j) CHECK(part(r, j) == doctest::Approx(full(r, j)).epsilon(1e-12));
  }
}

TEST_CASE("joint is normalized") {
  ModelConfig mc = odpers::testing::tiny_config();
  Rng rng(6);
  ModelParams p = init_params(mc, rng);
  for (int n = 0; n < 20; ++n) {
    Vector e(mc.hidden_size), q(mc.hidden_size);
    for (double& x : e) x = rng.normal();
    for (double& x : q) x = rng.normal();
    Vector out = joint(p, e, q);
    double total = 0.0;
    for (double x : out) total += std::exp(x);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  ModelParams zero = ModelParams::zeros(mc);
  Vector e(mc.hidden_size, 0.7);
  for (double x : joint(zero, e, e)) CHECK(x == doctest::Approx(std::log(1.0 / 4.0)));
  CHECK_THROWS_AS(joint(zero, Vector(2), e), ShapeError);
}

TEST_CASE("joint bias form gives 0.75 and 0.25") {
  ModelConfig mc = odpers::testing::tiny_config();
  mc.vocab = "a";
  ModelParams p = ModelParams::zeros(mc);
  p.joint_out_bias(0, 0) = std::log(3.0);
  p.joint_out_bias(0, 1) = std::log(1.0);
  Vector e(mc.hidden_size, 0.2);
  Vector out = joint(p, e, e);
  CHECK(std::exp(out[0]) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(std::exp(out[1]) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("init_params is deterministic and bounded") {
  ModelConfig mc;
  Rng a(9), b(9), c(10);
  ModelParams pa = init_params(mc, a), pb = init_params(mc, b), pc = init_params(mc, c);
  CHECK(pa == pb);
  CHECK_FALSE(pa == pc);
  const double s = 1.0 / std::sqrt(static_cast<double>(mc.hidden_size));
  pa.for_each_tensor([&](const std::string&, const std::string&, const Matrix& m) {
    for (double x : m.values()) {
      CHECK(x >= -s);
      CHECK(x <= s);
    }
  });
  CHECK(pa.all_finite());
}

TEST_CASE("freeze mask parsing") {
  ModelConfig mc;
  auto m = FreezeMask::parse("encoder.2-4", mc);
  CHECK(m == FreezeMask::encoder_range(2, 4));
  CHECK(m.to_string() == "encoder.2,encoder.3,encoder.4");
  CHECK(m.lowest_trainable_encoder(mc) == 2);
  CHECK_FALSE(m.any_above_encoder());
  CHECK(FreezeMask::parse("all", mc) == FreezeMask::all(mc));
  CHECK(FreezeMask::parse("none", mc).empty());
  CHECK(FreezeMask::parse("joint, embedding", mc).any_above_encoder());
  CHECK_THROWS_AS(FreezeMask::parse("encoder.9", mc), ConfigError);
  CHECK_THROWS_AS(FreezeMask::parse("encoder.4-2", mc), ConfigError);
  CHECK_THROWS_AS(FreezeMask::parse("decoder", mc), ConfigError);
  CHECK(FreezeMask::all(mc).size() == mc.encoder_layers + mc.prediction_layers + 2);
}

TEST_CASE("model config text round trip") {
  ModelConfig mc;
  mc.hidden_size = 32;
  mc.encoder_residual = false;
  mc.vocab = " xyz";
  ModelConfig back;
  std::string text = format_model_config(mc);
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    std::string line = text.substr(start, nl - start);
    start = nl + 1;
    auto eq = line.find('=');
    REQUIRE(eq != std::string::npos);
    CHECK(set_model_config_key(back, line.substr(0, eq), line.substr(eq + 1)));
  }
  CHECK(back == mc);
  CHECK(back.digest() == mc.digest());
  CHECK(mc.digest() != ModelConfig{}.digest());
  CHECK(mc.detokenize(mc.tokenize("zy x")) == "zy x");
  CHECK_THROWS(mc.tokenize("q"));
}

TEST_CASE("layer checksums track edits") {
  ModelConfig mc = odpers::testing::tiny_config();
  Rng rng(4);
  ModelParams p = init_params(mc, rng);
  auto before = layer_checksums(p);
  p.joint_bias(0, 0) += 1e-12;
  auto after = layer_checksums(p);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK((before[i].second != after[i].second) == (before[i].first == "joint"));
}
