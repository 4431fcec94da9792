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

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

#include "json.hpp"

#include "prunecd/errors.hpp"
#include "prunecd/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "PCDW files are little-endian; big-endian hosts need a byte-swapping reader");

namespace prunecd {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'P', 'C', 'D', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

struct TensorSlot {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<float> data;
};

// Canonical tensor order; also the order tensor bytes are laid out on disk.
std::vector<TensorSlot> tensor_slots(const ModelConfig& c, Weights& w, bool include_unemb) {
  std::vector<TensorSlot> slots;
  auto mat = [&](std::string name, Matrix& m) {
    slots.push_back({std::move(name), {m.rows(), m.cols()}, m.data()});
  };
  auto vec = [&](std::string name, Vector& v) {
    slots.push_back({std::move(name), {v.size()}, std::span<float>(v)});
  };
  mat("tok_emb", w.tok_emb);
  mat("pos_emb", w.pos_emb);
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    auto& L = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    vec(p + "ln1.g", L.ln1_g);
    vec(p + "ln1.b", L.ln1_b);
    mat(p + "attn.wq", L.wq);
    mat(p + "attn.wk", L.wk);
    mat(p + "attn.wv", L.wv);
    mat(p + "attn.wo", L.wo);
    vec(p + "attn.bq", L.bq);
    vec(p + "attn.bk", L.bk);
    vec(p + "attn.bv", L.bv);
    vec(p + "attn.bo", L.bo);
    vec(p + "ln2.g", L.ln2_g);
    vec(p + "ln2.b", L.ln2_b);
    mat(p + "mlp.w_in", L.w_in);
    vec(p + "mlp.b_in", L.b_in);
    mat(p + "mlp.w_out", L.w_out);
    vec(p + "mlp.b_out", L.b_out);
  }
  vec("final_ln.g", w.final_ln_g);
  vec("final_ln.b", w.final_ln_b);
  if (include_unemb) mat("unemb", w.unemb);
  return slots;
}

json config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},     {"d_model", c.d_model},       {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
              {"tie_unembedding", c.tie_unembedding}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.tie_unembedding = j.value("tie_unembedding", false);
  } catch (const json::exception& e) {
    throw FormatError(std::string("PCDW header config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace

Weights make_zero_weights(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model;
  Weights w;
  w.tok_emb = Matrix(c.vocab_size, d);
  w.pos_emb = Matrix(c.max_seq, d);
  w.layers.resize(c.n_layers);
  for (auto& L : w.layers) {
    L.ln1_g.assign(d, 0.0f);
    L.ln1_b.assign(d, 0.0f);
    L.wq = Matrix(d, d);
    L.wk = Matrix(d, d);
    L.wv = Matrix(d, d);
    L.wo = Matrix(d, d);
    L.bq.assign(d, 0.0f);
    L.bk.assign(d, 0.0f);
    L.bv.assign(d, 0.0f);
    L.bo.assign(d, 0.0f);
    L.ln2_g.assign(d, 0.0f);
    L.ln2_b.assign(d, 0.0f);
    L.w_in = Matrix(d, c.d_ff);
    L.b_in.assign(c.d_ff, 0.0f);
    L.w_out = Matrix(c.d_ff, d);
    L.b_out.assign(d, 0.0f);
  }
  w.final_ln_g.assign(d, 0.0f);
  w.final_ln_b.assign(d, 0.0f);
  w.unemb = Matrix(d, c.vocab_size);
  return w;
}

Weights make_random_weights(const ModelConfig& c, std::uint32_t seed, float stddev) {
  Weights w = make_zero_weights(c);
  std::mt19937 gen(seed);
  // Box-Muller over raw 32-bit draws; both outputs of each pair are used.
  bool have_spare = false;
  double spare = 0.0;
  auto normal = [&]() -> float {
    if (have_spare) {
      have_spare = false;
      return static_cast<float>(spare * stddev);
    }
    const double u1 = (static_cast<double>(gen()) + 0.5) / 4294967296.0;
    const double u2 = (static_cast<double>(gen()) + 0.5) / 4294967296.0;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare = r * std::sin(theta);
    have_spare = true;
    return static_cast<float>(r * std::cos(theta) * stddev);
  };
  for (auto& slot : tensor_slots(c, w, !c.tie_unembedding)) {
    const bool is_gain = slot.name.ends_with("ln1.g") || slot.name.ends_with("ln2.g") ||
                         slot.name == "final_ln.g";
    const bool is_norm_bias = slot.name.ends_with("ln1.b") || slot.name.ends_with("ln2.b") ||
                              slot.name == "final_ln.b";
    for (float& x : slot.data) x = is_gain ? 1.0f : is_norm_bias ? 0.0f : normal();
  }
  if (c.tie_unembedding) w.unemb = Matrix();
  return w;
}

void save_weights(const std::filesystem::path& path, const ModelConfig& config,
                  const Weights& weights) {
  config.validate();
  Weights copy = weights;
  if (config.tie_unembedding) copy.unemb = Matrix();
  const auto slots = tensor_slots(config, copy, !config.tie_unembedding);

  json tensors = json::object();
  std::uint64_t offset = 0;
  for (const auto& s : slots) {
    tensors[s.name] = json{{"dtype", "f32"}, {"shape", s.shape}, {"offset", offset}};
    offset += s.data.size() * sizeof(float);
  }
  const json header{{"config", config_to_json(config)}, {"tensors", tensors}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const std::uint32_t version = kVersion;
  const std::uint64_t header_len = header_text.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& s : slots) {
    out.write(reinterpret_cast<const char*>(s.data.data()),
              static_cast<std::streamsize>(s.data.size() * sizeof(float)));
  }
  if (!out) throw Error("write failed for " + path.string());
}

LoadedWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weight file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";

  if (bytes.size() < kPreambleBytes) {
    throw FormatError(where + "truncated preamble: expected at least " +
                      std::to_string(kPreambleBytes) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(where + "bad magic, not a PCDW file");
  const auto version = read_le<std::uint32_t>(bytes.data() + 4);
  if (version != kVersion) {
    throw FormatError(where + "unsupported PCDW version " + std::to_string(version));
  }
  const auto header_len = read_le<std::uint64_t>(bytes.data() + 8);
  if (bytes.size() - kPreambleBytes < header_len) {
    throw FormatError(where + "truncated header: expected " +
                      std::to_string(kPreambleBytes + header_len) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  json header;
  try {
    header = json::parse(bytes.begin() + kPreambleBytes,
                         bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes + header_len));
  } catch (const json::exception& e) {
    throw FormatError(where + "header is not valid JSON: " + e.what());
  }
  if (!header.contains("config") || !header.contains("tensors")) {
    throw FormatError(where + "header lacks \"config\" or \"tensors\"");
  }
  const ModelConfig config = config_from_json(header["config"]);
  const json& tensors = header["tensors"];
  const std::size_t data_start = kPreambleBytes + header_len;
  const std::size_t data_bytes = bytes.size() - data_start;

  Weights weights = make_zero_weights(config);
  auto slots = tensor_slots(config, weights, !config.tie_unembedding);

  // Size check first so a truncated file reports byte counts, not a shape error.
  std::uint64_t needed = 0;
  for (const auto& s : slots) {
    if (!tensors.contains(s.name)) throw ValidationError(where + "missing tensor " + s.name);
    const json& t = tensors[s.name];
    if (!t.contains("offset")) throw FormatError(where + "tensor " + s.name + " lacks offset");
    needed = std::max<std::uint64_t>(needed, t["offset"].get<std::uint64_t>() +
                                                 s.data.size() * sizeof(float));
  }
  if (data_bytes < needed) {
    throw FormatError(where + "truncated tensor data: expected " +
                      std::to_string(data_start + needed) + " bytes, got " +
                      std::to_string(bytes.size()));
  }

  for (auto& s : slots) {
    const json& t = tensors[s.name];
    if (t.value("dtype", std::string{}) != "f32") {
      throw ValidationError(where + "tensor " + s.name + " has unsupported dtype");
    }
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    if (shape != s.shape) {
      std::string got, want;
      for (auto x : shape) got += std::to_string(x) + ",";
      for (auto x : s.shape) want += std::to_string(x) + ",";
      throw ValidationError(where + "tensor " + s.name + " has shape [" + got +
                            "] but the config implies [" + want + "]");
    }
    const auto off = t["offset"].get<std::uint64_t>();
    std::memcpy(s.data.data(), bytes.data() + data_start + off, s.data.size() * sizeof(float));
    for (float x : s.data) {
      if (!std::isfinite(x)) throw ValidationError(where + "tensor " + s.name + " has non-finite values");
    }
  }
  if (config.tie_unembedding) weights.unemb = Matrix();
  return LoadedWeights{config, std::move(weights)};
}

Model load_model(const std::filesystem::path& path) {
  LoadedWeights lw = load_weights(path);
  return Model(std::move(lw.config), std::move(lw.weights));
}

}  // namespace prunecd
