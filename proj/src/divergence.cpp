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

#include "prunecd/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "prunecd/errors.hpp"

namespace prunecd {

namespace {

template <typename T>
double entropy_impl(std::span<const T> p) {
  require(!p.empty(), "entropy: empty distribution");
  double sum = 0.0;
  for (T x : p) sum += static_cast<double>(x);
  if (std::abs(sum - 1.0) > 1e-4) {
    throw ContractViolation("entropy: input sums to " + std::to_string(sum) + ", not 1");
  }
  double h = 0.0;
  for (T x : p) {
    const double v = static_cast<double>(x);
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

template <typename T>
double jsd_impl(std::span<const T> p, std::span<const T> q) {
  require(p.size() == q.size(), "jsd: length mismatch");
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = static_cast<double>(p[i]);
    const double b = static_cast<double>(q[i]);
    const double m = 0.5 * (a + b);
    if (a > 0.0) kl_p += a * std::log(a / m);
    if (b > 0.0) kl_q += b * std::log(b / m);
  }
  // Rounding can push an identical pair a hair below zero.
  return std::max(0.0, 0.5 * kl_p + 0.5 * kl_q);
}

}  // namespace

double entropy(std::span<const float> p) { return entropy_impl(p); }
double entropy(std::span<const double> p) { return entropy_impl(p); }

double jsd(std::span<const float> p, std::span<const float> q) { return jsd_impl(p, q); }
double jsd(std::span<const double> p, std::span<const double> q) { return jsd_impl(p, q); }

std::vector<std::size_t> topk_indices(std::span<const float> v, std::size_t k) {
  if (k > v.size()) {
    throw ContractViolation("top-k: k=" + std::to_string(k) + " exceeds length " +
                            std::to_string(v.size()));
  }
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return v[a] > v[b] || (v[a] == v[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

std::size_t topk_overlap(std::span<const float> a, std::span<const float> b, std::size_t k) {
  require(a.size() == b.size(), "topk_overlap: length mismatch");
  auto ta = topk_indices(a, k);
  auto tb = topk_indices(b, k);
  std::sort(ta.begin(), ta.end());
  std::sort(tb.begin(), tb.end());
  std::vector<std::size_t> common;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
  return common.size();
}

}  // namespace prunecd
