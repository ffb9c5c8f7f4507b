// odpers/checkpoints.hpp


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


#ifndef ODPERS_CHECKPOINTS_HPP_
#define ODPERS_CHECKPOINTS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "odpers/model.hpp"
#include "odpers/training.hpp"

namespace odpers {

// ---------------------------------------------------------------------------
// Int8 weight quantization.

/// Symmetric per-tensor int8: value = q * scale, |q| <= 127.
struct QuantizedTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> values;
  double scale = 1.0;

  Matrix dequantize() const;
  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

/// scale = max|x| / 127 (1 for an all-zero tensor); q = round(x / scale).
/// Throws DataError on a non-finite entry.
QuantizedTensor quantize(const Matrix& tensor);

/// Replaces every tensor of the given layers by its dequantized int8 form.
ModelParams quantize_layers(const ModelParams& params,
                            const std::set<std::string>& layers);

// ---------------------------------------------------------------------------
// Checkpoint files.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::uint64_t round_index = 0;
  std::string recipe;
  friend bool operator==(const CheckpointMetadata&,
                         const CheckpointMetadata&) = default;
};

struct Checkpoint {
  ModelParams model;
  std::optional<OptState> opt;
  CheckpointMetadata metadata;
  /// Tensors stored as int8; `model` holds their dequantized values.
  std::map<std::string, QuantizedTensor> quantized;
};

/// Options for what goes into the file.
struct SaveOptions {
  /// Layers whose tensors are stored as int8.
  std::set<std::string> quantized_layers;
};

/// Layout (little-endian):
///   "EPCK" u32 version u64 config-digest str config
///   u32 n_tensors { str name u8 dtype u32 rows u32 cols [f64 scale] payload }
///   u8 has_opt [u64 step u32 n { str name f64[] first f64[] second }]
///   u64 round str recipe
///   u64 fnv1a64 of every preceding byte
/// where str is u32 length + bytes and dtype is 0 (f64) or 1 (int8).
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& model,
                                               const OptState* opt,
                                               const CheckpointMetadata& meta,
                                               const SaveOptions& options = {});
/// Throws DataError on truncation or a malformed table, ChecksumError on a
/// digest mismatch, VersionError on an unsupported version.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const ModelParams& model, const OptState* opt,
                     const CheckpointMetadata& meta,
                     const std::filesystem::path& path,
                     const SaveOptions& options = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training memory.

struct MemoryEstimate {
  std::uint64_t parameters = 0;
  std::uint64_t optimizer = 0;    // gradient + two Adam moments, masked only
  std::uint64_t activations = 0;  // backprop tape above the lowest masked layer
  std::uint64_t lattice = 0;      // T x (U + 1) x (V + 1) log-probabilities

  std::uint64_t total() const {
    return parameters + optimizer + activations + lattice;
  }
};

/// Closed-form byte count for one training step on an utterance of at most
/// `max_frames` encoder frames and `max_labels` labels. All values are
/// 8-byte doubles.
MemoryEstimate training_memory_breakdown(const ModelConfig& config,
                                         const FreezeMask& mask,
                                         std::size_t max_frames,
                                         std::size_t max_labels);
std::uint64_t estimate_training_memory(const ModelConfig& config,
                                       const FreezeMask& mask,
                                       std::size_t max_frames,
                                       std::size_t max_labels);

}  // namespace odpers

#endif  // ODPERS_CHECKPOINTS_HPP_
