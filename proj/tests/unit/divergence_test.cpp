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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "prunecd/divergence.hpp"
#include "prunecd/errors.hpp"

using namespace prunecd;

namespace {

double entropy_oracle(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0) h -= x * std::log(x);
  }
  return h;
}

double jsd_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double r = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (p[i] + q[i]) / 2;
    if (p[i] > 0) r += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0) r += 0.5 * q[i] * std::log(q[i] / m);
  }
  return r;
}

std::vector<double> random_dist(std::mt19937& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(n);
  for (auto& x : p) x = u(rng);
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& x : p) x /= s;
  return p;
}

}  // namespace

TEST_SUITE("divergence") {

TEST_CASE("entropy") {
  const std::vector<double> one_hot{0.0, 1.0, 0.0};
  CHECK(entropy(one_hot) == 0.0);
  const std::vector<double> u4(4, 0.25);
  CHECK(std::abs(entropy(u4) - std::log(4.0)) < 1e-12);
  const std::vector<double> p{0.5, 0.25, 0.25};
  CHECK(std::abs(entropy(p) - entropy_oracle(p)) < 1e-12);
  CHECK(std::abs(entropy(p) - 1.0397) < 1e-4);
  const std::vector<double> bad{0.5, 0.6};
  CHECK_THROWS_AS(entropy(bad), ContractViolation);
}

TEST_CASE("entropy is permutation invariant and peaks at uniform") {
  std::mt19937 rng(2);
  const std::size_t n = 10;
  const std::vector<double> uniform(n, 1.0 / n);
  const double hu = entropy(uniform);
  for (int i = 0; i < 1000; ++i) {
    auto p = random_dist(rng, n);
    const double h = entropy(p);
    CHECK(h < hu);
    std::shuffle(p.begin(), p.end(), rng);
    CHECK(std::abs(entropy(p) - h) < 1e-12);
  }
}

TEST_CASE("top-k overlap") {
  const std::vector<float> z{0.3f, 2.0f, -1.0f, 0.7f, 0.7f, 5.0f};
  CHECK(topk_overlap(z, z, 3) == 3);
  CHECK(topk_indices(z, 3) == std::vector<std::size_t>{5, 1, 3});  // 3 beats 4 on the tie

  std::vector<float> rev(z.size());
  std::vector<float> asc{1, 2, 3, 4, 5, 6};
  std::vector<float> desc{6, 5, 4, 3, 2, 1};
  CHECK(topk_overlap(asc, desc, 6) == 6);
  CHECK(topk_overlap(asc, desc, 2) == 0);
  CHECK_THROWS_AS(topk_overlap(asc, desc, 7), ContractViolation);

  std::mt19937 rng(3);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> a(20), b(20);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    auto top = [](const std::vector<float>& v) {
      std::vector<std::size_t> idx(v.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] > v[j]; });
      return std::set<std::size_t>(idx.begin(), idx.begin() + 5);
    };
    const auto ta = top(a), tb = top(b);
    std::size_t common = 0;
    for (auto i : ta) common += tb.count(i);
    CHECK(topk_overlap(a, b, 5) == common);
    CHECK(topk_overlap(b, a, 5) == common);
  }
}

TEST_CASE("jsd") {
  const std::vector<double> p{0.5, 0.5}, q{0.9, 0.1};
  CHECK(std::abs(jsd(p, q) - jsd_oracle(p, q)) < 1e-12);
  CHECK(std::abs(jsd(p, q) - 0.1017492) < 1e-6);
  CHECK(jsd(p, p) == 0.0);
  const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
  CHECK(std::abs(jsd(a, b) - std::log(2.0)) < 1e-9);

  std::mt19937 rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto x = random_dist(rng, 16), y = random_dist(rng, 16);
    CHECK(std::abs(jsd(x, y) - jsd(y, x)) < 1e-12);
    CHECK(jsd(x, y) <= std::log(2.0));
    CHECK(jsd(x, y) >= 0.0);
  }
}

}  // TEST_SUITE
