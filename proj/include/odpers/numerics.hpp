// odpers/numerics.hpp

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

#ifndef ODPERS_NUMERICS_HPP_
#define ODPERS_NUMERICS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odpers/error.hpp"

namespace odpers {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. All training arithmetic in the project
/// runs through this type at 64-bit precision.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  Matrix transposed() const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void set_zero();
  bool all_finite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Reductions and small kernels.

/// log(sum(exp(v))) with max-shift. -inf entries contribute nothing; an
/// all -inf input returns -inf. Throws on empty input.
double logsumexp(std::span<const double> values);

/// Two-argument log-add used by the lattice recursions.
double log_add(double a, double b);

/// Normalized log-probabilities. Throws on empty input.
Vector log_softmax(std::span<const double> logits);
void log_softmax_inplace(std::span<double> logits);

/// W x + b.
Vector affine(const Matrix& w, std::span<const double> x,
              std::span<const double> b);

/// y += W x (no shape checks; callers guarantee sizes).
void gemv_add(const Matrix& w, std::span<const double> x, std::span<double> y);
/// y += W^T x.
void gemv_t_add(const Matrix& w, std::span<const double> x, std::span<double> y);
/// W += alpha * a b^T.
void rank1_add(Matrix& w, double alpha, std::span<const double> a,
               std::span<const double> b);
/// C += A^T B where A is (k x m), B is (k x n), C is (m x n).
void gemm_tn_add(const Matrix& a, const Matrix& b, Matrix& c);
/// C += A B^T where A is (m x k), B is (n x k), C is (m x n).
void gemm_nt_add(const Matrix& a, const Matrix& b, Matrix& c);
/// C += A B where A is (m x k), B is (k x n), C is (m x n).
void gemm_nn_add(const Matrix& a, const Matrix& b, Matrix& c);

double sigmoid(double x);
double softplus(double x);

// ---------------------------------------------------------------------------
// Randomness and hashing.

/// xoshiro256** seeded through SplitMix64. The stream is a pure function of
/// the 64-bit seed on every platform; all derived distributions below are
/// implemented here rather than through <random> distributions, whose
/// algorithms vary between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (no cached second value).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t x);
/// Order-dependent combination of two 64-bit values into a seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::string_view tag);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);
std::string hex64(std::uint64_t v);

/// Median: middle element for odd n, mean of the middle two for even n.
/// Throws on empty input.
double median(std::vector<double> values);

}  // namespace odpers

#endif  // ODPERS_NUMERICS_HPP_
