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

// Distribution measures shared by the decoders and the diagnostics sweeps.
// All logs are natural; 0 * log 0 is taken as 0.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace prunecd {

// Shannon entropy. Throws ContractViolation if p does not sum to 1 within 1e-4.
double entropy(std::span<const float> p);
double entropy(std::span<const double> p);

// |Top_k(a) ∩ Top_k(b)|. Top-k ties go to the lower index. k > size or
// mismatched lengths throw ContractViolation.
std::size_t topk_overlap(std::span<const float> a, std::span<const float> b, std::size_t k);

// Indices of the k largest entries, largest first, lower index on ties.
std::vector<std::size_t> topk_indices(std::span<const float> v, std::size_t k);

// Jensen-Shannon divergence, bounded by ln 2.
double jsd(std::span<const float> p, std::span<const float> q);
double jsd(std::span<const double> p, std::span<const double> q);

}  // namespace prunecd
