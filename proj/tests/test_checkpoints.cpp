// tests/test_checkpoints.cpp


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
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "odpers/checkpoints.hpp"
#include "odpers/error.hpp"
#include "test_util.hpp"

using namespace odpers;

namespace {

ModelParams random_params(std::uint64_t seed) {
  Rng rng(seed);
  return init_params(odpers::testing::tiny_config(), rng);
}

OptState random_opt(const ModelParams& p, std::uint64_t seed) {
  Rng rng(seed);
  OptState opt;
  opt.step = 7;
  p.for_each_tensor([&](const std::string& layer, const std::string& name, const Matrix& m) {
    if (layer != "joint") return;
    OptState::Moments mo{Matrix(m.rows(), m.cols()), Matrix(m.rows(), m.cols())};
    for (double& x : mo.first.values()) x = rng.normal();
    for (double& x : mo.second.values()) x = rng.uniform();
    opt.moments[name] = mo;
  });
  return opt;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  ModelParams p = random_params(1);
  p.joint_bias(0, 0) = -0.0;
  p.joint_bias(0, 1) = std::numeric_limits<double>::denorm_min();
  OptState opt = random_opt(p, 2);
  CheckpointMetadata meta{3, "ondevice"};
  auto bytes = serialize_checkpoint(p, &opt, meta);
  Checkpoint c = deserialize_checkpoint(bytes);
  CHECK(c.model == p);
  CHECK(std::signbit(c.model.joint_bias(0, 0)));
  REQUIRE(c.opt);
  CHECK(*c.opt == opt);
  CHECK(c.metadata == meta);
  CHECK(c.quantized.empty());
  CHECK(serialize_checkpoint(c.model, &*c.opt, c.metadata) == bytes);

  Checkpoint bare = deserialize_checkpoint(serialize_checkpoint(p, nullptr, {}));
  CHECK_FALSE(bare.opt);
}

TEST_CASE("checkpoint files survive save and load") {
  const auto dir = std::filesystem::temp_directory_path() / "odpers_ckpt_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  ModelParams p = random_params(3);
  save_checkpoint(p, nullptr, {1, "x"}, dir / "a.epck");
  CHECK(load_checkpoint(dir / "a.epck").model == p);
  std::size_t files = 0;
  for (auto& e : std::filesystem::directory_iterator(dir)) files += e.is_regular_file();
  CHECK(files == 1);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.epck"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corruption is detected") {
  ModelParams p = random_params(4);
  auto bytes = serialize_checkpoint(p, nullptr, {});
  Rng rng(5);
  for (int n = 0; n < 50; ++n) {
    auto bad = bytes;
    const std::size_t at = 20 + rng.below(bad.size() - 28);
    bad[at] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    CHECK_THROWS_AS(deserialize_checkpoint(bad), ChecksumError);
  }
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(version), VersionError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(magic), DataError);
  CHECK_THROWS_AS(deserialize_checkpoint(std::span(bytes.data(), 10)), DataError);
}

TEST_CASE("quantization bounds") {
  QuantizedTensor z = quantize(Matrix(3, 4));
  CHECK(z.scale == 1.0);
  for (auto v : z.values) CHECK(v == 0);
  CHECK(z.dequantize() == Matrix(3, 4));

  const double s = 0.37;
  QuantizedTensor e = quantize(Matrix(1, 3, {127 * s, -127 * s, 0.0}));
  CHECK(e.values == std::vector<std::int8_t>{127, -127, 0});
  CHECK(e.scale == doctest::Approx(s));

  Rng rng(6);
  for (int n = 0; n < 1000; ++n) {
    Matrix m(1 + rng.below(6), 1 + rng.below(6));
    const double spread = std::exp(rng.uniform(-8.0, 4.0));
    for (double& x : m.values()) x = spread * rng.normal();
    QuantizedTensor q = quantize(m);
    Matrix d = q.dequantize();
    for (std::size_t i = 0; i < m.size(); ++i)
      CHECK(std::abs(d.values()[i] - m.values()[i]) <= q.scale / 2 * (1 + 1e-12));
  }
  Matrix bad(1, 2);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(quantize(bad), DataError);
}

TEST_CASE("quantized checkpoints store int8 layers") {
  ModelParams p = random_params(7);
  auto bytes = serialize_checkpoint(p, nullptr, {}, {{"encoder.0"}});
  CHECK(bytes.size() < serialize_checkpoint(p, nullptr, {}).size());
  Checkpoint c = deserialize_checkpoint(bytes);
  CHECK(c.quantized.size() == 3);
  CHECK(c.model == quantize_layers(p, {"encoder.0"}));
  CHECK(c.model.encoder[1].w_input == p.encoder[1].w_input);
  CHECK_FALSE(c.model.encoder[0].w_input == p.encoder[0].w_input);
}

TEST_CASE("training memory estimate") {
  ModelConfig mc;
  const auto none = training_memory_breakdown(mc, FreezeMask{}, 100, 20);
  CHECK(none.optimizer == 0);
  CHECK(none.activations == 0);
  CHECK(none.total() == none.parameters + none.lattice);
  CHECK(none.lattice == 100 * 21 * 28 * 8);
  const auto upper = estimate_training_memory(mc, FreezeMask::encoder_range(2, 4), 100, 20);
  const auto lower = estimate_training_memory(mc, FreezeMask::encoder_range(0, 4), 100, 20);
  CHECK(upper < lower);
  CHECK(upper == 6080480);
}
