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

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prunecd/model.hpp"

namespace prunecd {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::vector<TokenId> encode(std::string_view text, bool add_bos) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::optional<TokenId> bos() const = 0;
  virtual std::optional<TokenId> eos() const = 0;
  virtual std::string name() const = 0;
};

// Ids 0..255 are raw bytes; 256 = BOS, 257 = EOS, 258 = PAD.
class ByteTokenizer final : public Tokenizer {
 public:
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kPad = 258;
  static constexpr std::size_t kVocabSize = 259;

  std::vector<TokenId> encode(std::string_view text, bool add_bos) const override;
  // Special ids decode to nothing.
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return kVocabSize; }
  std::optional<TokenId> bos() const override { return kBos; }
  std::optional<TokenId> eos() const override { return kEos; }
  std::string name() const override { return "byte"; }
};

// Byte-level BPE in the GPT-2 style: bytes are mapped to printable code
// points, text is pre-split into word-like chunks, and within each chunk the
// lowest-ranked adjacent pair is merged until no ranked pair remains.
class BpeTokenizer final : public Tokenizer {
 public:
  // vocab: token string -> id. merges: ranked pairs, rank 0 first.
  BpeTokenizer(std::unordered_map<std::string, TokenId> vocab,
               std::vector<std::pair<std::string, std::string>> merges);

  // Reads vocab.json and merges.txt. A leading "#version" line in merges.txt
  // is skipped; any other line without exactly two fields is a FormatError.
  static BpeTokenizer load(const std::filesystem::path& vocab_json,
                           const std::filesystem::path& merges_txt);

  std::vector<TokenId> encode(std::string_view text, bool add_bos) const override;
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return id_to_token_.size(); }
  std::optional<TokenId> bos() const override { return bos_; }
  std::optional<TokenId> eos() const override { return eos_; }
  std::string name() const override { return "bpe"; }

  // Merged symbols for one pre-split chunk (already byte-mapped).
  std::vector<std::string> apply_merges(const std::string& mapped_chunk) const;

  // GPT-2 byte -> code point table, exposed for tests.
  static const std::vector<std::string>& byte_symbols();
  // Pre-tokenizer: contractions, optional-space letter runs, optional-space
  // digit runs, optional-space punctuation runs, whitespace runs. Bytes >= 0x80
  // count as letters.
  static std::vector<std::string> pre_split(std::string_view text);

 private:
  std::unordered_map<std::string, TokenId> vocab_;
  std::vector<std::string> id_to_token_;
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
  std::unordered_map<std::string, unsigned char> symbol_to_byte_;
  std::optional<TokenId> bos_;
  std::optional<TokenId> eos_;
};

// Byte tokenizer when `dir` is empty, otherwise BPE from dir/vocab.json and
// dir/merges.txt.
std::unique_ptr<Tokenizer> make_tokenizer(const std::filesystem::path& dir);

}  // namespace prunecd
