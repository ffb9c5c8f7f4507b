// src/model.cpp

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

#include "odpers/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace odpers {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (feature_dim == 0 || stack_size == 0 || stack_stride == 0 ||
      hidden_size == 0)
    throw ConfigError("model config: dimensions must be positive");
  if (encoder_layers < 5)
    throw ConfigError("model config: encoder_layers must be >= 5, got " +
                      std::to_string(encoder_layers));
  if (prediction_layers < 1)
    throw ConfigError("model config: prediction_layers must be >= 1");
  if (vocab.empty()) throw ConfigError("model config: empty vocabulary");
  std::string sorted = vocab;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("model config: duplicate vocabulary symbol");
  if (vocab.find('\0') != std::string::npos)
    throw ConfigError("model config: NUL is reserved for blank");
}

std::uint64_t ModelConfig::digest() const {
  std::ostringstream os;
  os << "odpers-model-config/1 d=" << feature_dim << " stack=" << stack_size
     << " stride=" << stack_stride << " enc=" << encoder_layers
     << " pred=" << prediction_layers << " hidden=" << hidden_size
     << " residual=" << (encoder_residual ? 1 : 0)
     << " vocab=[" << vocab << "]";
  return fnv1a64(os.str());
}

std::string format_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "feature_dim=" << c.feature_dim << "\n"
     << "stack_size=" << c.stack_size << "\n"
     << "stack_stride=" << c.stack_stride << "\n"
     << "encoder_layers=" << c.encoder_layers << "\n"
     << "prediction_layers=" << c.prediction_layers << "\n"
     << "hidden_size=" << c.hidden_size << "\n"
     << "encoder_residual=" << (c.encoder_residual ? "true" : "false") << "\n"
     << "vocab=" << c.vocab << "\n";
  return os.str();
}

namespace {

std::size_t parse_size(std::string_view key, std::string_view value) {
  std::size_t out = 0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size())
    throw ConfigError("model config: bad value '" + std::string(value) +
                      "' for " + std::string(key));
  return out;
}

}  // namespace

bool set_model_config_key(ModelConfig& c, std::string_view key,
                          std::string_view value) {
  if (key == "feature_dim") c.feature_dim = parse_size(key, value);
  else if (key == "stack_size") c.stack_size = parse_size(key, value);
  else if (key == "stack_stride") c.stack_stride = parse_size(key, value);
  else if (key == "encoder_layers") c.encoder_layers = parse_size(key, value);
  else if (key == "prediction_layers") c.prediction_layers = parse_size(key, value);
  else if (key == "hidden_size") c.hidden_size = parse_size(key, value);
  else if (key == "encoder_residual") {
    if (value == "true") c.encoder_residual = true;
    else if (value == "false") c.encoder_residual = false;
    else throw ConfigError("model config: encoder_residual must be true or false");
  } else if (key == "vocab") c.vocab = std::string(value);
  else return false;
  return true;
}

std::vector<int> ModelConfig::tokenize(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char ch : text) {
    auto pos = vocab.find(ch);
    if (pos == std::string::npos)
      throw DataError(std::string("character '") + ch + "' not in vocabulary");
    out.push_back(static_cast<int>(pos) + 1);
  }
  return out;
}

std::string ModelConfig::detokenize(std::span<const int> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 1 || t > static_cast<int>(vocab.size()))
      throw DataError("token " + std::to_string(t) + " out of range");
    out.push_back(vocab[t - 1]);
  }
  return out;
}

// ---------------------------------------------------------------------------

FeatureSequence stack_features(const FeatureSequence& seq, std::size_t stack,
                               std::size_t stride) {
  if (stack == 0 || stride == 0)
    throw ConfigError("stack_features: stack and stride must be >= 1");
  const std::size_t t_in = seq.num_frames();
  if (t_in == 0) throw DataError("stack_features: empty input");
  const std::size_t d = seq.dim();
  const std::size_t t_out = (t_in + stride - 1) / stride;
  FeatureSequence out;
  out.frame_period_ms = seq.frame_period_ms * static_cast<double>(stride);
  out.frames = Matrix(t_out, stack * d);
  for (std::size_t i = 0; i < t_out; ++i) {
    auto dst = out.frames.row(i);
    for (std::size_t k = 0; k < stack; ++k) {
      std::size_t src = std::min(i * stride + k, t_in - 1);
      auto row = seq.frames.row(src);
      std::copy(row.begin(), row.end(), dst.begin() + k * d);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// LSTM

namespace {

void check_layer_shapes(const LstmParams& layer, std::size_t in) {
  const std::size_t h = layer.hidden_size();
  if (layer.w_recurrent.rows() != 4 * h || layer.w_input.rows() != 4 * h ||
      layer.bias.size() != 4 * h)
    throw ShapeError("lstm: inconsistent gate dimensions");
  if (layer.input_size() != in)
    throw ShapeError("lstm: input has " + std::to_string(in) +
                     " values, layer expects " +
                     std::to_string(layer.input_size()));
}

// Applies gate nonlinearities to a 4H pre-activation vector in place and
// advances the cell.
inline void lstm_activate(double* gates, const double* c_prev, double* c,
                          double* h, std::size_t hidden) {
  double* ig = gates;
  double* fg = gates + hidden;
  double* gg = gates + 2 * hidden;
  double* og = gates + 3 * hidden;
  for (std::size_t j = 0; j < hidden; ++j) {
    ig[j] = sigmoid(ig[j]);
    fg[j] = sigmoid(fg[j]);
    gg[j] = std::tanh(gg[j]);
    og[j] = sigmoid(og[j]);
    c[j] = fg[j] * c_prev[j] + ig[j] * gg[j];
    h[j] = og[j] * std::tanh(c[j]);
  }
}

LstmParams zero_lstm(std::size_t in, std::size_t hidden) {
  return LstmParams{Matrix(4 * hidden, in), Matrix(4 * hidden, hidden),
                    Matrix(1, 4 * hidden)};
}

}  // namespace

LstmCellState lstm_step(const LstmParams& layer, std::span<const double> x,
                        const LstmCellState& state) {
  check_layer_shapes(layer, x.size());
  const std::size_t hidden = layer.hidden_size();
  if (state.h.size() != hidden || state.c.size() != hidden)
    throw ShapeError("lstm_step: state size mismatch");
  Vector gates(layer.bias.values().begin(), layer.bias.values().end());
  gemv_add(layer.w_input, x, gates);
  gemv_add(layer.w_recurrent, state.h, gates);
  LstmCellState next{Vector(hidden), Vector(hidden)};
  lstm_activate(gates.data(), state.c.data(), next.c.data(), next.h.data(),
                hidden);
  return next;
}

void lstm_sequence_forward(const LstmParams& layer, const Matrix& input,
                           LstmLayerTape& tape) {
  check_layer_shapes(layer, input.cols());
  const std::size_t steps = input.rows();
  const std::size_t hidden = layer.hidden_size();
  tape.input = input;
  tape.gates = Matrix(steps, 4 * hidden);
  for (std::size_t t = 0; t < steps; ++t) {
    auto row = tape.gates.row(t);
    std::copy(layer.bias.values().begin(), layer.bias.values().end(),
              row.begin());
  }
  gemm_nt_add(input, layer.w_input, tape.gates);
  tape.cell = Matrix(steps, hidden);
  tape.hidden = Matrix(steps, hidden);
  const Vector zeros(hidden, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    const double* h_prev = t ? tape.hidden.row(t - 1).data() : zeros.data();
    const double* c_prev = t ? tape.cell.row(t - 1).data() : zeros.data();
    auto g = tape.gates.row(t);
    gemv_add(layer.w_recurrent, std::span<const double>(h_prev, hidden), g);
    lstm_activate(g.data(), c_prev, tape.cell.row(t).data(),
                  tape.hidden.row(t).data(), hidden);
  }
}

void lstm_sequence_backward(const LstmParams& layer, const LstmLayerTape& tape,
                            const Matrix& d_hidden, LstmParams* grad,
                            Matrix* d_input) {
  const std::size_t steps = tape.hidden.rows();
  const std::size_t hidden = layer.hidden_size();
  Matrix d_pre(steps, 4 * hidden);
  Vector dh_next(hidden, 0.0), dc_next(hidden, 0.0);
  for (std::size_t t = steps; t-- > 0;) {
    const double* g = tape.gates.row(t).data();
    const double* ig = g;
    const double* fg = g + hidden;
    const double* gg = g + 2 * hidden;
    const double* og = g + 3 * hidden;
    const double* c = tape.cell.row(t).data();
    const double* c_prev = t ? tape.cell.row(t - 1).data() : nullptr;
    const double* dh_out = d_hidden.row(t).data();
    double* dp = d_pre.row(t).data();
    for (std::size_t j = 0; j < hidden; ++j) {
      const double dh = dh_out[j] + dh_next[j];
      const double tc = std::tanh(c[j]);
      const double dc = dc_next[j] + dh * og[j] * (1.0 - tc * tc);
      const double d_o = dh * tc;
      const double d_i = dc * gg[j];
      const double d_g = dc * ig[j];
      const double d_f = c_prev ? dc * c_prev[j] : 0.0;
      dc_next[j] = dc * fg[j];
      dp[j] = d_i * ig[j] * (1.0 - ig[j]);
      dp[hidden + j] = d_f * fg[j] * (1.0 - fg[j]);
      dp[2 * hidden + j] = d_g * (1.0 - gg[j] * gg[j]);
      dp[3 * hidden + j] = d_o * og[j] * (1.0 - og[j]);
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    if (t > 0) gemv_t_add(layer.w_recurrent, d_pre.row(t), dh_next);
  }
  if (grad) {
    gemm_tn_add(d_pre, tape.input, grad->w_input);
    Matrix h_prev(steps, hidden);
    for (std::size_t t = 1; t < steps; ++t) {
      auto src = tape.hidden.row(t - 1);
      std::copy(src.begin(), src.end(), h_prev.row(t).begin());
    }
    gemm_tn_add(d_pre, h_prev, grad->w_recurrent);
    auto gb = grad->bias.values();
    for (std::size_t t = 0; t < steps; ++t) {
      auto dp = d_pre.row(t);
      for (std::size_t j = 0; j < 4 * hidden; ++j) gb[j] += dp[j];
    }
  }
  if (d_input) {
    *d_input = Matrix(steps, layer.input_size());
    gemm_nn_add(d_pre, layer.w_input, *d_input);
  }
}

// ---------------------------------------------------------------------------
// Parameters

std::string encoder_layer_id(std::size_t i) {
  return "encoder." + std::to_string(i);
}

std::string prediction_layer_id(std::size_t i) {
  return "prediction." + std::to_string(i);
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t h = config.hidden_size;
  const std::size_t v = config.vocab_size();
  ModelParams p;
  p.config = config;
  for (std::size_t i = 0; i < config.encoder_layers; ++i)
    p.encoder.push_back(zero_lstm(i == 0 ? config.stacked_dim() : h, h));
  for (std::size_t i = 0; i < config.prediction_layers; ++i)
    p.prediction.push_back(zero_lstm(h, h));
  p.embedding = Matrix(v, h);
  p.joint_enc = Matrix(h, h);
  p.joint_pred = Matrix(h, h);
  p.joint_bias = Matrix(1, h);
  p.joint_out = Matrix(v + 1, h);
  p.joint_out_bias = Matrix(1, v + 1);
  return p;
}

std::vector<std::string> ModelParams::layer_ids() const {
  std::vector<std::string> ids;
  for_each_tensor([&](const std::string& layer, const std::string&,
                      const Matrix&) {
    if (ids.empty() || ids.back() != layer) ids.push_back(layer);
  });
  return ids;
}

std::size_t ModelParams::num_parameters() const {
  std::size_t n = 0;
  for_each_tensor(
      [&](const std::string&, const std::string&, const Matrix& m) {
        n += m.size();
      });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const std::string&, const std::string&,
                      const Matrix& m) { ok = ok && m.all_finite(); });
  return ok;
}

void ModelParams::set_zero() {
  for_each_tensor(
      [](const std::string&, const std::string&, Matrix& m) { m.set_zero(); });
}

std::uint64_t tensor_checksum(const Matrix& m) {
  return fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(m.data()),
      m.size() * sizeof(double)));
}

std::vector<std::pair<std::string, std::uint64_t>> layer_checksums(
    const ModelParams& params) {
  std::vector<std::pair<std::string, std::uint64_t>> out;
  params.for_each_tensor([&](const std::string& layer, const std::string&,
                             const Matrix& m) {
    if (out.empty() || out.back().first != layer) out.emplace_back(layer, 0);
    out.back().second = mix_seed(out.back().second, tensor_checksum(m));
  });
  return out;
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
  ModelParams p = ModelParams::zeros(config);
  const double s = 1.0 / std::sqrt(static_cast<double>(config.hidden_size));
  p.for_each_tensor([&](const std::string&, const std::string&, Matrix& m) {
    for (double& v : m.values()) v = rng.uniform(-s, s);
  });
  return p;
}

// ---------------------------------------------------------------------------
// FreezeMask

FreezeMask FreezeMask::all(const ModelConfig& config) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < config.encoder_layers; ++i)
    ids.insert(encoder_layer_id(i));
  for (std::size_t i = 0; i < config.prediction_layers; ++i)
    ids.insert(prediction_layer_id(i));
  ids.insert(std::string(kEmbeddingLayer));
  ids.insert(std::string(kJointLayer));
  return FreezeMask(std::move(ids));
}

FreezeMask FreezeMask::encoder_range(std::size_t first, std::size_t last) {
  std::set<std::string> ids;
  for (std::size_t i = first; i <= last; ++i) ids.insert(encoder_layer_id(i));
  return FreezeMask(std::move(ids));
}

FreezeMask FreezeMask::parse(std::string_view text, const ModelConfig& config) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
      s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
      s.remove_suffix(1);
    return s;
  };
  text = trim(text);
  if (text == "all") return all(config);
  std::set<std::string> ids;
  if (text == "none" || text.empty()) return FreezeMask{};
  while (!text.empty()) {
    auto comma = text.find(',');
    std::string_view item = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{}
                                           : text.substr(comma + 1);
    if (item.empty()) continue;
    auto dash = item.find('-');
    auto dot = item.rfind('.');
    if (dash != std::string_view::npos && dot != std::string_view::npos &&
        dot < dash) {
      std::string prefix(item.substr(0, dot + 1));
      std::size_t lo = 0, hi = 0;
      auto lo_text = item.substr(dot + 1, dash - dot - 1);
      auto hi_text = item.substr(dash + 1);
      auto r1 = std::from_chars(lo_text.data(), lo_text.data() + lo_text.size(), lo);
      auto r2 = std::from_chars(hi_text.data(), hi_text.data() + hi_text.size(), hi);
      if (r1.ec != std::errc() || r2.ec != std::errc() ||
          r1.ptr != lo_text.data() + lo_text.size() ||
          r2.ptr != hi_text.data() + hi_text.size() || hi < lo)
        throw ConfigError("freeze mask: bad range '" + std::string(item) + "'");
      for (std::size_t i = lo; i <= hi; ++i) ids.insert(prefix + std::to_string(i));
    } else {
      ids.insert(std::string(item));
    }
  }
  FreezeMask mask(std::move(ids));
  mask.validate(config);
  return mask;
}

std::string FreezeMask::to_string() const {
  if (trainable_.empty()) return "none";
  std::string out;
  for (const auto& id : trainable_) {
    if (!out.empty()) out += ',';
    out += id;
  }
  return out;
}

void FreezeMask::validate(const ModelConfig& config) const {
  const FreezeMask every = all(config);
  for (const auto& id : trainable_)
    if (!every.trainable(id))
      throw ConfigError("freeze mask: unknown layer '" + id + "'");
}

std::size_t FreezeMask::lowest_trainable_encoder(const ModelConfig& config) const {
  for (std::size_t i = 0; i < config.encoder_layers; ++i)
    if (trainable(encoder_layer_id(i))) return i;
  return config.encoder_layers;
}

bool FreezeMask::any_above_encoder() const {
  for (const auto& id : trainable_)
    if (id.rfind("encoder.", 0) != 0) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Inference forward passes

Matrix encode(const ModelParams& params, const FeatureSequence& stacked) {
  if (stacked.dim() != params.config.stacked_dim())
    throw ShapeError("encode: feature dim " + std::to_string(stacked.dim()) +
                     " != " + std::to_string(params.config.stacked_dim()));
  Matrix x = stacked.frames;
  LstmLayerTape tape;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    lstm_sequence_forward(params.encoder[l], x, tape);
    if (l > 0 && params.config.encoder_residual) {
      auto out = tape.hidden.values();
      auto in = x.values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
    }
    x = std::move(tape.hidden);
  }
  return x;
}

namespace {

Matrix prediction_inputs(const ModelParams& params, std::span<const int> labels) {
  const std::size_t h = params.config.hidden_size;
  const int v = static_cast<int>(params.config.vocab_size());
  Matrix x(labels.size() + 1, h);
  for (std::size_t u = 0; u < labels.size(); ++u) {
    const int k = labels[u];
    if (k < 1 || k > v)
      throw DataError("predict: label " + std::to_string(k) + " out of range");
    auto src = params.embedding.row(k - 1);
    std::copy(src.begin(), src.end(), x.row(u + 1).begin());
  }
  return x;
}

}  // namespace

Matrix predict(const ModelParams& params, std::span<const int> labels) {
  Matrix x = prediction_inputs(params, labels);
  LstmLayerTape tape;
  for (const auto& layer : params.prediction) {
    lstm_sequence_forward(layer, x, tape);
    x = std::move(tape.hidden);
  }
  return x;
}

Vector joint(const ModelParams& params, std::span<const double> enc_t,
             std::span<const double> pred_u) {
  const std::size_t h = params.config.hidden_size;
  if (enc_t.size() != h || pred_u.size() != h)
    throw ShapeError("joint: expected inputs of size " + std::to_string(h));
  Vector z(params.joint_bias.values().begin(), params.joint_bias.values().end());
  gemv_add(params.joint_enc, enc_t, z);
  gemv_add(params.joint_pred, pred_u, z);
  for (double& v : z) v = std::tanh(v);
  Vector logits(params.joint_out_bias.values().begin(),
                params.joint_out_bias.values().end());
  gemv_add(params.joint_out, z, logits);
  log_softmax_inplace(logits);
  return logits;
}

// ---------------------------------------------------------------------------
// Tape forward / backward

void joint_forward(const ModelParams& params, const Matrix& enc,
                   const Matrix& pred, JointTape& tape) {
  const std::size_t frames = enc.rows(), positions = pred.rows();
  const std::size_t h = params.config.hidden_size;
  const std::size_t outputs = params.config.num_outputs();
  Matrix enc_proj(frames, h), pred_proj(positions, h);
  gemm_nt_add(enc, params.joint_enc, enc_proj);
  gemm_nt_add(pred, params.joint_pred, pred_proj);
  tape.frames = frames;
  tape.positions = positions;
  tape.hidden = Matrix(frames * positions, h);
  tape.logprobs = Matrix(frames * positions, outputs);
  const double* jb = params.joint_bias.data();
  for (std::size_t t = 0; t < frames; ++t) {
    const double* a = enc_proj.row(t).data();
    for (std::size_t u = 0; u < positions; ++u) {
      const double* b = pred_proj.row(u).data();
      double* z = tape.hidden.row(t * positions + u).data();
      for (std::size_t j = 0; j < h; ++j) z[j] = std::tanh(a[j] + b[j] + jb[j]);
    }
  }
  for (std::size_t n = 0; n < frames * positions; ++n) {
    auto row = tape.logprobs.row(n);
    std::copy(params.joint_out_bias.values().begin(),
              params.joint_out_bias.values().end(), row.begin());
  }
  gemm_nt_add(tape.hidden, params.joint_out, tape.logprobs);
  for (std::size_t n = 0; n < frames * positions; ++n)
    log_softmax_inplace(tape.logprobs.row(n));
}

void forward_with_tape(const ModelParams& params, const FeatureSequence& stacked,
                       std::span<const int> labels, ForwardTape& tape) {
  if (stacked.dim() != params.config.stacked_dim())
    throw ShapeError("forward: feature dim mismatch");
  tape.labels.assign(labels.begin(), labels.end());
  tape.encoder.resize(params.encoder.size());
  tape.encoder_out.resize(params.encoder.size());
  tape.prediction.resize(params.prediction.size());
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    lstm_sequence_forward(params.encoder[l],
                          l == 0 ? stacked.frames : tape.encoder_out[l - 1],
                          tape.encoder[l]);
    tape.encoder_out[l] = tape.encoder[l].hidden;
    if (l > 0 && params.config.encoder_residual) {
      auto out = tape.encoder_out[l].values();
      auto in = tape.encoder_out[l - 1].values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
    }
  }
  Matrix pred_in = prediction_inputs(params, labels);
  for (std::size_t l = 0; l < params.prediction.size(); ++l)
    lstm_sequence_forward(params.prediction[l],
                          l == 0 ? pred_in : tape.prediction[l - 1].hidden,
                          tape.prediction[l]);
  joint_forward(params, tape.encoder_out.back(),
                tape.prediction.back().hidden, tape.joint);
}

void backward(const ModelParams& params, const ForwardTape& tape,
              const Matrix& d_logprobs, const FreezeMask& mask,
              ModelParams& grads) {
  const ModelConfig& cfg = params.config;
  const std::size_t frames = tape.joint.frames;
  const std::size_t positions = tape.joint.positions;
  const std::size_t nodes = frames * positions;
  const std::size_t h = cfg.hidden_size;
  const std::size_t outputs = cfg.num_outputs();
  const std::string jnt(kJointLayer), emb(kEmbeddingLayer);
  const bool joint_trainable = mask.trainable(jnt);
  const std::size_t lowest_enc = mask.lowest_trainable_encoder(cfg);
  bool need_pred = mask.trainable(emb);
  std::size_t lowest_pred = cfg.prediction_layers;
  for (std::size_t l = 0; l < cfg.prediction_layers; ++l)
    if (mask.trainable(prediction_layer_id(l))) {
      lowest_pred = l;
      need_pred = true;
      break;
    }
  if (mask.trainable(emb)) lowest_pred = 0;
  const bool need_enc = lowest_enc < cfg.encoder_layers;
  if (!joint_trainable && !need_enc && !need_pred) return;

  // Log-softmax backward: d_logit = d_lp - softmax * sum(d_lp).
  Matrix d_logits(nodes, outputs);
  for (std::size_t n = 0; n < nodes; ++n) {
    auto dl = d_logprobs.row(n);
    double s = 0.0;
    for (double v : dl) s += v;
    auto lp = tape.joint.logprobs.row(n);
    auto out = d_logits.row(n);
    for (std::size_t k = 0; k < outputs; ++k)
      out[k] = dl[k] - std::exp(lp[k]) * s;
  }
  const Matrix& enc = tape.encoder_out.back();
  const Matrix& pred = tape.prediction.back().hidden;
  if (joint_trainable) {
    gemm_tn_add(d_logits, tape.joint.hidden, grads.joint_out);
    auto gb = grads.joint_out_bias.values();
    for (std::size_t n = 0; n < nodes; ++n) {
      auto dl = d_logits.row(n);
      for (std::size_t k = 0; k < outputs; ++k) gb[k] += dl[k];
    }
  }
  Matrix d_act(nodes, h);
  gemm_nn_add(d_logits, params.joint_out, d_act);
  Matrix d_enc_proj(frames, h), d_pred_proj(positions, h);
  for (std::size_t t = 0; t < frames; ++t) {
    double* de = d_enc_proj.row(t).data();
    for (std::size_t u = 0; u < positions; ++u) {
      const std::size_t n = t * positions + u;
      double* da = d_act.row(n).data();
      const double* z = tape.joint.hidden.row(n).data();
      double* dp = d_pred_proj.row(u).data();
      for (std::size_t j = 0; j < h; ++j) {
        da[j] *= 1.0 - z[j] * z[j];
        de[j] += da[j];
        dp[j] += da[j];
      }
    }
  }
  if (joint_trainable) {
    auto gb = grads.joint_bias.values();
    for (std::size_t t = 0; t < frames; ++t) {
      auto de = d_enc_proj.row(t);
      for (std::size_t j = 0; j < h; ++j) gb[j] += de[j];
    }
    gemm_tn_add(d_enc_proj, enc, grads.joint_enc);
    gemm_tn_add(d_pred_proj, pred, grads.joint_pred);
  }

  if (need_enc) {
    Matrix d_hidden(frames, h);
    gemm_nn_add(d_enc_proj, params.joint_enc, d_hidden);
    for (std::size_t l = cfg.encoder_layers; l-- > lowest_enc;) {
      LstmParams* g =
          mask.trainable(encoder_layer_id(l)) ? &grads.encoder[l] : nullptr;
      Matrix d_below;
      lstm_sequence_backward(params.encoder[l], tape.encoder[l], d_hidden, g,
                             l > lowest_enc ? &d_below : nullptr);
      if (l > lowest_enc) {
        if (cfg.encoder_residual) {
          auto db = d_below.values();
          auto dh = d_hidden.values();
          for (std::size_t i = 0; i < db.size(); ++i) db[i] += dh[i];
        }
        d_hidden = std::move(d_below);
      }
    }
  }

  if (need_pred) {
    Matrix d_hidden(positions, h);
    gemm_nn_add(d_pred_proj, params.joint_pred, d_hidden);
    const bool need_emb = mask.trainable(emb);
    for (std::size_t l = cfg.prediction_layers; l-- > lowest_pred;) {
      LstmParams* g = mask.trainable(prediction_layer_id(l))
                          ? &grads.prediction[l]
                          : nullptr;
      const bool want_input = l > lowest_pred || need_emb;
      Matrix d_below;
      lstm_sequence_backward(params.prediction[l], tape.prediction[l], d_hidden,
                             g, want_input ? &d_below : nullptr);
      if (want_input) d_hidden = std::move(d_below);
    }
    if (need_emb) {
      // d_hidden now holds the gradient w.r.t. the embedded inputs.
      for (std::size_t u = 0; u < tape.labels.size(); ++u) {
        auto src = d_hidden.row(u + 1);
        auto dst = grads.embedding.row(tape.labels[u] - 1);
        for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
      }
    }
  }
}

}  // namespace odpers
