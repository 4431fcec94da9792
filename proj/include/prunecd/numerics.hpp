// Copyright 2026 The PruneCD Engine Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense f32 kernels used by the forward pass.
//
// Every reduction runs in a fixed order, so results are bit-identical across
// runs and across OpenMP thread counts. The kernels in `serial::` are the
// single-threaded reference versions of the same loops; tests assert that the
// parallel and serial variants agree bit-for-bit, and bench/ compares speed.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace prunecd {

using Vector = std::vector<float>;

// Row-major f32 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

inline constexpr float kLayerNormEps = 1e-5f;
// sqrt(2/pi), the tanh-GELU inner scale.
inline constexpr float kGeluScale = 0.7978845608f;
inline constexpr float kGeluCubic = 0.044715f;

// a·b. Throws ContractViolation when a.cols() != b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);

// x·w + bias (bias may be empty).
Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias);

// Overflow-safe softmax. Empty input is a contract violation.
Vector softmax(std::span<const float> v);

// log(softmax(v)) in double precision.
std::vector<double> log_softmax(std::span<const float> v);

Vector layer_norm(std::span<const float> v, std::span<const float> gain,
                  std::span<const float> bias, float eps = kLayerNormEps);

// Row-wise layer norm of every row of x.
Matrix layer_norm_rows(const Matrix& x, std::span<const float> gain,
                       std::span<const float> bias, float eps = kLayerNormEps);

float gelu(float x);
Vector gelu(std::span<const float> v);
void gelu_inplace(std::span<float> v);

// In-place a += b.
void add_inplace(std::span<float> a, std::span<const float> b);

// Index of the largest element; the lowest index wins ties.
std::size_t argmax(std::span<const float> v);
std::size_t argmax(std::span<const double> v);

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias);
Matrix layer_norm_rows(const Matrix& x, std::span<const float> gain,
                       std::span<const float> bias, float eps = kLayerNormEps);
void gelu_inplace(std::span<float> v);

}  // namespace serial

}  // namespace prunecd
