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

#include "prunecd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include <omp.h>

#include "prunecd/errors.hpp"

namespace prunecd {

namespace {

// Narrowest column tile when rows alone cannot occupy every thread.
constexpr std::size_t kMinColTile = 64;
// Kernels with fewer multiply-adds than this stay on the calling thread.
constexpr std::size_t kParallelWork = std::size_t{1} << 15;

void check_nonempty(std::span<const float> v, const char* what) {
  if (v.empty()) throw ContractViolation(std::string(what) + ": empty vector");
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ContractViolation("Matrix: data length " + std::to_string(data_.size()) +
                            " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

namespace {

constexpr std::size_t kRowBlock = 4;

// Four floats in one SSE register. Lane-wise multiply then add, so each lane
// rounds exactly like the scalar code.
typedef float f32x4 __attribute__((vector_size(16)));

f32x4 load4(const float* p) {
  f32x4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

// out[r0+r][j0..j0+4*NV) for r < NR, accumulated in registers. Every
// element sums k = 0..inner-1 in order and adds the bias last, matching the
// serial kernel bit for bit.
template <std::size_t NR, std::size_t NV>
void linear_block(const Matrix& x, const Matrix& w, std::span<const float> bias, Matrix& out,
                  std::size_t r0, std::size_t j0) {
  f32x4 acc[NR][NV] = {};
  const float* a[NR];
  for (std::size_t r = 0; r < NR; ++r) a[r] = x.row(r0 + r).data();
  const std::size_t inner = x.cols();
  for (std::size_t k = 0; k < inner; ++k) {
    const float* wk = w.row(k).data() + j0;
    f32x4 wv[NV];
    for (std::size_t v = 0; v < NV; ++v) wv[v] = load4(wk + 4 * v);
    for (std::size_t r = 0; r < NR; ++r) {
      const f32x4 ak = {a[r][k], a[r][k], a[r][k], a[r][k]};
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] = acc[r][v] + ak * wv[v];
    }
  }
  for (std::size_t r = 0; r < NR; ++r) {
    float* o = out.row(r0 + r).data() + j0;
    for (std::size_t v = 0; v < NV; ++v) {
      if (!bias.empty()) acc[r][v] = acc[r][v] + load4(bias.data() + j0 + 4 * v);
      std::memcpy(o + 4 * v, &acc[r][v], sizeof(f32x4));
    }
  }
}

// Columns [j0, j1) of one row, for the ragged edge.
void linear_scalar(const Matrix& x, const Matrix& w, std::span<const float> bias, Matrix& out,
                   std::size_t row, std::size_t j0, std::size_t j1) {
  float* o = out.row(row).data();
  const float* a = x.row(row).data();
  for (std::size_t k = 0; k < x.cols(); ++k) {
    const float* wk = w.row(k).data();
    for (std::size_t j = j0; j < j1; ++j) o[j] += a[k] * wk[j];
  }
  if (!bias.empty()) {
    for (std::size_t j = j0; j < j1; ++j) o[j] += bias[j];
  }
}

template <std::size_t NR>
void linear_rows(const Matrix& x, const Matrix& w, std::span<const float> bias, Matrix& out,
                 std::size_t r0, std::size_t j0, std::size_t j1) {
  // Eight accumulator registers: 16 columns for one or two rows, 8 for more.
  constexpr std::size_t kVectors = NR <= 2 ? 4 : 2;
  constexpr std::size_t kWidth = 4 * kVectors;
  std::size_t j = j0;
  for (; j + kWidth <= j1; j += kWidth) linear_block<NR, kVectors>(x, w, bias, out, r0, j);
  if (j < j1) {
    for (std::size_t r = 0; r < NR; ++r) linear_scalar(x, w, bias, out, r0 + r, j, j1);
  }
}

}  // namespace

Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias) {
  if (x.cols() != w.rows()) {
    throw ContractViolation("linear: inner dimension mismatch " + std::to_string(x.cols()) +
                            " vs " + std::to_string(w.rows()));
  }
  if (!bias.empty() && bias.size() != w.cols()) {
    throw ContractViolation("linear: bias length mismatch");
  }
  const std::size_t rows = x.rows();
  const std::size_t inner = x.cols();
  const std::size_t cols = w.cols();
  Matrix out(rows, cols);
  const bool parallel = rows * inner * cols >= kParallelWork;
  // Whole row blocks when there are enough of them, otherwise split the
  // columns too. Tiling only changes which thread owns an element.
  const std::size_t row_blocks = (rows + kRowBlock - 1) / kRowBlock;
  std::size_t tile = cols;
  const std::size_t threads = parallel ? static_cast<std::size_t>(omp_get_max_threads()) : 1;
  if (row_blocks < threads) {
    const std::size_t splits = (threads + row_blocks - 1) / row_blocks;
    tile = std::max(kMinColTile, (cols + splits - 1) / splits);
  }
  const std::size_t tiles = (cols + tile - 1) / tile;
  const long total = static_cast<long>(row_blocks * tiles);

#pragma omp parallel for schedule(static) if (parallel)
  for (long t = 0; t < total; ++t) {
    const std::size_t r0 = static_cast<std::size_t>(t) / tiles * kRowBlock;
    const std::size_t j0 = (static_cast<std::size_t>(t) % tiles) * tile;
    const std::size_t j1 = std::min(cols, j0 + tile);
    switch (std::min(kRowBlock, rows - r0)) {
      case 4: linear_rows<4>(x, w, bias, out, r0, j0, j1); break;
      case 3: linear_rows<3>(x, w, bias, out, r0, j0, j1); break;
      case 2: linear_rows<2>(x, w, bias, out, r0, j0, j1); break;
      default: linear_rows<1>(x, w, bias, out, r0, j0, j1); break;
    }
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) { return linear(a, b, {}); }

Vector softmax(std::span<const float> v) {
  check_nonempty(v, "softmax");
  const float m = *std::max_element(v.begin(), v.end());
  std::vector<double> e(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(static_cast<double>(v[i]) - static_cast<double>(m));
    sum += e[i];
  }
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
  return out;
}

std::vector<double> log_softmax(std::span<const float> v) {
  check_nonempty(v, "log_softmax");
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (float x : v) sum += std::exp(static_cast<double>(x) - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) - lse;
  return out;
}

namespace {

void layer_norm_into(std::span<const float> v, std::span<const float> gain,
                     std::span<const float> bias, float eps, std::span<float> out) {
  const std::size_t n = v.size();
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float x : v) {
    const double d = x - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>((v[i] - mean) * inv) * gain[i] + bias[i];
  }
}

void check_norm_args(std::size_t n, std::span<const float> gain, std::span<const float> bias,
                     float eps) {
  if (gain.size() != n || bias.size() != n) {
    throw ContractViolation("layer_norm: length mismatch (input " + std::to_string(n) +
                            ", gain " + std::to_string(gain.size()) + ", bias " +
                            std::to_string(bias.size()) + ")");
  }
  if (!(eps > 0.0f)) throw ContractViolation("layer_norm: eps must be positive");
}

}  // namespace

Vector layer_norm(std::span<const float> v, std::span<const float> gain,
                  std::span<const float> bias, float eps) {
  check_nonempty(v, "layer_norm");
  check_norm_args(v.size(), gain, bias, eps);
  Vector out(v.size());
  layer_norm_into(v, gain, bias, eps, out);
  return out;
}

Matrix layer_norm_rows(const Matrix& x, std::span<const float> gain,
                       std::span<const float> bias, float eps) {
  check_norm_args(x.cols(), gain, bias, eps);
  Matrix out(x.rows(), x.cols());
  const long rows = static_cast<long>(x.rows());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelWork)
  for (long r = 0; r < rows; ++r) layer_norm_into(x.row(r), gain, bias, eps, out.row(r));
  return out;
}

float gelu(float x) {
  return 0.5f * x * (1.0f + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

void gelu_inplace(std::span<float> v) {
  const long n = static_cast<long>(v.size());
#pragma omp parallel for schedule(static) if (v.size() >= kParallelWork)
  for (long i = 0; i < n; ++i) v[i] = gelu(v[i]);
}

Vector gelu(std::span<const float> v) {
  Vector out(v.begin(), v.end());
  gelu_inplace(out);
  return out;
}

void add_inplace(std::span<float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ContractViolation("add_inplace: length mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

std::size_t argmax(std::span<const float> v) {
  if (v.empty()) throw ContractViolation("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ContractViolation("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

namespace serial {

Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias) {
  if (x.cols() != w.rows()) throw ContractViolation("serial::linear: inner dimension mismatch");
  if (!bias.empty() && bias.size() != w.cols()) {
    throw ContractViolation("serial::linear: bias length mismatch");
  }
  Matrix out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < x.cols(); ++k) {
      for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) += x(i, k) * w(k, j);
    }
    if (!bias.empty()) {
      for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) += bias[j];
    }
  }
  return out;
}

Matrix layer_norm_rows(const Matrix& x, std::span<const float> gain,
                       std::span<const float> bias, float eps) {
  check_norm_args(x.cols(), gain, bias, eps);
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) layer_norm_into(x.row(r), gain, bias, eps, out.row(r));
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) { return serial::linear(a, b, {}); }

void gelu_inplace(std::span<float> v) {
  for (float& x : v) x = gelu(x);
}

}  // namespace serial

}  // namespace prunecd
