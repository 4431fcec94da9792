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

#include <omp.h>

#include <cmath>
#include <random>

#include "doctest.h"
#include "prunecd/errors.hpp"
#include "prunecd/numerics.hpp"

using namespace prunecd;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Matrix m(r, c);
  for (auto& v : m.data()) v = n(rng);
  return m;
}

// Thread count is raised for these checks so the parallel branch really runs
// on several threads even on a single-core host.
struct Threads {
  explicit Threads(int n) : saved(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~Threads() { omp_set_num_threads(saved); }
  int saved;
};

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("matmul small cases") {
  Matrix id(2, 2);
  id(0, 0) = id(1, 1) = 1.0f;
  Matrix b(2, 2);
  b(0, 0) = 1; b(0, 1) = 2; b(1, 0) = 3; b(1, 1) = 4;
  CHECK(matmul(id, b) == b);

  Matrix row(1, 2), col(2, 1);
  row(0, 0) = 1; row(0, 1) = 2;
  col(0, 0) = 3; col(1, 0) = 4;
  const Matrix r = matmul(row, col);
  CHECK(r.rows() == 1);
  CHECK(r(0, 0) == 11.0f);
}

TEST_CASE("matmul agrees with a triple loop") {
  const Matrix a = random_matrix(5, 7, 1);
  const Matrix b = random_matrix(7, 3, 2);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += double(a(i, k)) * double(b(k, j));
      CHECK(std::abs(c(i, j) - s) < 1e-6);
    }
  }
}

TEST_CASE("matmul shape mismatch") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ContractViolation);
}

TEST_CASE("softmax") {
  const float zero[] = {0.0f, 0.0f};
  auto p = softmax(zero);
  CHECK(p[0] == 0.5f);
  CHECK(p[1] == 0.5f);

  const float big[] = {1000.0f, 1000.0f};
  p = softmax(big);
  CHECK(p[0] == 0.5f);
  CHECK(p[1] == 0.5f);

  const float v[] = {1.0f, 2.0f, 3.0f};
  p = softmax(v);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(p[i] - std::exp(i + 1.0) / z) < 1e-7);

  const auto lp = log_softmax(v);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(lp[i] - (i + 1.0 - std::log(z))) < 1e-12);
}

TEST_CASE("softmax rejects empty input") {
  CHECK_THROWS_AS(softmax(std::span<const float>{}), ContractViolation);
}

TEST_CASE("layer norm") {
  const Vector ones(4, 1.0f), zeros(4, 0.0f);
  const float constant[] = {3.0f, 3.0f, 3.0f, 3.0f};
  for (float x : layer_norm(constant, ones, zeros)) CHECK(x == 0.0f);

  const float pm[] = {1.0f, -1.0f};
  const Vector g2(2, 1.0f), b2(2, 0.0f);
  const auto y = layer_norm(pm, g2, b2);
  CHECK(std::abs(y[0] - 1.0) < 1e-5);
  CHECK(std::abs(y[1] + 1.0) < 1e-5);

  std::mt19937 rng(3);
  std::normal_distribution<float> n(0.5f, 2.0f);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  Vector v(17), g(17), b(17);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = n(rng);
    g[i] = 1.0f + u(rng);
    b[i] = u(rng);
  }
  const auto out = layer_norm(v, g, b);
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= 17.0;
  double var = 0.0;
  for (float x : v) var += (x - mean) * (x - mean);
  var /= 17.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double ref = (v[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
    CHECK(std::abs(out[i] - ref) < 1e-6);
  }
}

TEST_CASE("gelu") {
  CHECK(gelu(0.0f) == 0.0f);
  CHECK(std::abs(gelu(20.0f) - 20.0f) < 1e-5);
  const double x = 1.0;
  const double ref = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
  CHECK(std::abs(gelu(1.0f) - ref) < 1e-6);
}

TEST_CASE("argmax takes the lowest index on ties") {
  const float v[] = {1.0f, 3.0f, 3.0f, 2.0f};
  CHECK(argmax(v) == 1);
  const double d[] = {-1.0, -1.0};
  CHECK(argmax(d) == 0);
}

TEST_CASE("parallel kernels match the serial reference bit for bit") {
  Threads threads(4);
  const Matrix x = random_matrix(48, 64, 10);
  const Matrix w = random_matrix(64, 259, 11);
  Vector bias(259);
  for (std::size_t j = 0; j < bias.size(); ++j) bias[j] = 0.01f * float(j);

  CHECK(linear(x, w, bias) == serial::linear(x, w, bias));
  CHECK(matmul(x, w) == serial::matmul(x, w));

  Vector g(64, 1.5f), b(64, -0.25f);
  CHECK(layer_norm_rows(x, g, b) == serial::layer_norm_rows(x, g, b));

  Matrix p = linear(x, w, bias), s = p;
  gelu_inplace(p.data());
  serial::gelu_inplace(s.data());
  CHECK(p == s);
}

TEST_CASE("linear matches the serial reference on ragged shapes") {
  Threads threads(3);
  for (std::size_t rows : {1, 2, 3, 4, 5, 7, 9}) {
    for (std::size_t cols : {1, 3, 8, 15, 17, 65, 259}) {
      const Matrix x = random_matrix(rows, 12, 30 + rows);
      const Matrix w = random_matrix(12, cols, 40 + cols);
      Vector bias(cols, 0.5f);
      CAPTURE(rows);
      CAPTURE(cols);
      CHECK(linear(x, w, bias) == serial::linear(x, w, bias));
      CHECK(linear(x, w, {}) == serial::linear(x, w, {}));
    }
  }
}

TEST_CASE("parallel kernels do not depend on the thread count") {
  const Matrix x = random_matrix(40, 64, 20);
  const Matrix w = random_matrix(64, 256, 21);
  Matrix one, many;
  {
    Threads t(1);
    one = linear(x, w, {});
  }
  {
    Threads t(3);
    many = linear(x, w, {});
  }
  CHECK(one == many);
}

}  // TEST_SUITE
