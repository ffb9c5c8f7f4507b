// src/checkpoints.cpp


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


#include "odpers/checkpoints.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

namespace odpers {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// Quantization

Matrix QuantizedTensor::dequantize() const {
  Matrix out(rows, cols);
  auto v = out.values();
  for (std::size_t i = 0; i < values.size(); ++i) v[i] = values[i] * scale;
  return out;
}

QuantizedTensor quantize(const Matrix& tensor) {
  double max_abs = 0.0;
  for (double x : tensor.values()) {
    if (!std::isfinite(x))
      throw DataError("quantize: tensor contains a non-finite value");
    max_abs = std::max(max_abs, std::fabs(x));
  }
  QuantizedTensor q;
  q.rows = tensor.rows();
  q.cols = tensor.cols();
  q.scale = max_abs > 0.0 ? max_abs / 127.0 : 1.0;
  q.values.reserve(tensor.size());
  for (double x : tensor.values()) {
    double r = std::round(x / q.scale);
    r = std::clamp(r, -127.0, 127.0);
    q.values.push_back(static_cast<std::int8_t>(r));
  }
  return q;
}

ModelParams quantize_layers(const ModelParams& params,
                            const std::set<std::string>& layers) {
  ModelParams out = params;
  out.for_each_tensor([&](const std::string& layer, const std::string&, Matrix& m) {
    if (layers.count(layer)) m = quantize(m).dequantize();
  });
  return out;
}

// ---------------------------------------------------------------------------
// Byte streams

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_str(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_doubles(std::span<const double> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    bytes_.insert(bytes_.end(), p, p + v.size_bytes());
  }
  void put_matrix(const Matrix& m) {
    put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    put_doubles(m.values());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_doubles(std::span<double> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  Matrix get_matrix() {
    const std::size_t r = get<std::uint32_t>(), c = get<std::uint32_t>();
    need(r * c * sizeof(double));
    Matrix m(r, c);
    get_doubles(m.values());
    return m;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint: truncated file");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'E', 'P', 'C', 'K'};
constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint8_t kDtypeI8 = 1;

ModelConfig parse_config_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos ||
        !set_model_config_key(c, std::string_view(line).substr(0, eq),
                              std::string_view(line).substr(eq + 1)))
      throw DataError("checkpoint: bad config line '" + line + "'");
  }
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& model,
                                               const OptState* opt,
                                               const CheckpointMetadata& meta,
                                               const SaveOptions& options) {
  Writer w;
  for (char ch : kMagic) w.put<char>(ch);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(model.config.digest());
  w.put_str(format_model_config(model.config));

  std::uint32_t count = 0;
  model.for_each_tensor([&](const std::string&, const std::string&, const Matrix&) { ++count; });
  w.put<std::uint32_t>(count);
  model.for_each_tensor(
      [&](const std::string& layer, const std::string& name, const Matrix& m) {
        w.put_str(name);
        const bool q = options.quantized_layers.count(layer) != 0;
        w.put<std::uint8_t>(q ? kDtypeI8 : kDtypeF64);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
        if (q) {
          QuantizedTensor qt = quantize(m);
          w.put<double>(qt.scale);
          for (std::int8_t v : qt.values) w.put<std::int8_t>(v);
        } else {
          w.put_doubles(m.values());
        }
      });

  w.put<std::uint8_t>(opt ? 1 : 0);
  if (opt) {
    w.put<std::uint64_t>(opt->step);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(opt->moments.size()));
    for (const auto& [name, mom] : opt->moments) {
      w.put_str(name);
      w.put_matrix(mom.first);
      w.put_matrix(mom.second);
    }
  }
  w.put<std::uint64_t>(meta.round_index);
  w.put_str(meta.recipe);
  w.put<std::uint64_t>(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError("checkpoint: missing EPCK magic");
  Reader r(bytes);
  r.get<std::uint32_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: unsupported version " +
                       std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (fnv1a64(bytes.first(body)) != stored)
    throw ChecksumError("checkpoint: checksum mismatch");

  const auto digest = r.get<std::uint64_t>();
  ModelConfig config = parse_config_text(r.get_str());
  if (config.digest() != digest)
    throw DataError("checkpoint: config digest mismatch");
  config.validate();

  Checkpoint ck;
  ck.model = ModelParams::zeros(config);
  const auto count = r.get<std::uint32_t>();
  std::uint32_t seen = 0;
  ck.model.for_each_tensor(
      [&](const std::string&, const std::string& name, Matrix& m) {
        if (seen++ >= count) throw DataError("checkpoint: tensor table too short");
        const std::string stored_name = r.get_str();
        if (stored_name != name)
          throw DataError("checkpoint: expected tensor " + name + ", found " +
                          stored_name);
        const auto dtype = r.get<std::uint8_t>();
        const std::size_t rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
        if (rows != m.rows() || cols != m.cols())
          throw DataError("checkpoint: shape mismatch for " + name);
        if (dtype == kDtypeF64) {
          r.get_doubles(m.values());
        } else if (dtype == kDtypeI8) {
          QuantizedTensor q;
          q.rows = rows;
          q.cols = cols;
          q.scale = r.get<double>();
          q.values.resize(rows * cols);
          for (auto& v : q.values) v = r.get<std::int8_t>();
          m = q.dequantize();
          ck.quantized.emplace(name, std::move(q));
        } else {
          throw DataError("checkpoint: unknown dtype for " + name);
        }
      });
  if (seen != count) throw DataError("checkpoint: tensor count mismatch");

  if (r.get<std::uint8_t>()) {
    OptState opt;
    opt.step = r.get<std::uint64_t>();
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.get_str();
      OptState::Moments mom;
      mom.first = r.get_matrix();
      mom.second = r.get_matrix();
      opt.moments.emplace(std::move(name), std::move(mom));
    }
    ck.opt = std::move(opt);
  }
  ck.metadata.round_index = r.get<std::uint64_t>();
  ck.metadata.recipe = r.get_str();
  if (r.pos() != body) throw DataError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const ModelParams& model, const OptState* opt,
                     const CheckpointMetadata& meta,
                     const std::filesystem::path& path,
                     const SaveOptions& options) {
  static std::atomic<std::uint64_t> counter{0};
  const auto bytes = serialize_checkpoint(model, opt, meta, options);
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
         "-" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("checkpoint: cannot rename into " + path.string() + ": " +
                    ec.message());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Memory accounting

MemoryEstimate training_memory_breakdown(const ModelConfig& config,
                                         const FreezeMask& mask,
                                         std::size_t max_frames,
                                         std::size_t max_labels) {
  constexpr std::uint64_t kBytes = sizeof(double);
  const std::uint64_t t = max_frames, positions = max_labels + 1;
  const std::uint64_t h = config.hidden_size, v1 = config.num_outputs();
  const ModelParams shapes = ModelParams::zeros(config);

  MemoryEstimate m;
  std::uint64_t masked = 0;
  shapes.for_each_tensor(
      [&](const std::string& layer, const std::string&, const Matrix& x) {
        m.parameters += x.size() * kBytes;
        if (mask.trainable(layer)) masked += x.size();
      });
  m.optimizer = 3 * masked * kBytes;
  m.lattice = t * positions * v1 * kBytes;
  if (mask.empty()) return m;

  // Per LSTM layer the tape keeps input, four gates, cell and hidden.
  auto lstm_tape = [&](std::uint64_t steps, std::uint64_t in) {
    return steps * (in + 6 * h);
  };
  std::uint64_t doubles = t * positions * h;  // joint hidden layer
  doubles += (t + positions) * h;             // encoder and prediction outputs
  const std::size_t lowest_enc = mask.lowest_trainable_encoder(config);
  for (std::size_t l = lowest_enc; l < config.encoder_layers; ++l)
    doubles += lstm_tape(t, l == 0 ? config.stacked_dim() : h) + t * h;
  std::size_t lowest_pred = config.prediction_layers;
  if (mask.trainable(kEmbeddingLayer)) {
    lowest_pred = 0;
  } else {
    for (std::size_t l = 0; l < config.prediction_layers; ++l)
      if (mask.trainable(prediction_layer_id(l))) {
        lowest_pred = l;
        break;
      }
  }
  for (std::size_t l = lowest_pred; l < config.prediction_layers; ++l)
    doubles += lstm_tape(positions, h);
  m.activations = doubles * kBytes;
  return m;
}

std::uint64_t estimate_training_memory(const ModelConfig& config,
                                       const FreezeMask& mask,
                                       std::size_t max_frames,
                                       std::size_t max_labels) {
  return training_memory_breakdown(config, mask, max_frames, max_labels).total();
}

}  // namespace odpers
