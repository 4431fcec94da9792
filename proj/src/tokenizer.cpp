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

#include "prunecd/tokenizer.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "prunecd/errors.hpp"

namespace prunecd {

// ---------------------------------------------------------------------------
// ByteTokenizer

std::vector<TokenId> ByteTokenizer::encode(std::string_view text, bool add_bos) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size() + 1);
  if (add_bos) ids.push_back(kBos);
  for (char c : text) ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
  return ids;
}

std::string ByteTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// BpeTokenizer

namespace {

std::string utf8(std::uint32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return s;
}

// Splits a UTF-8 string into code point substrings.
std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, s.size() - i);
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
bool is_letter(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

enum class CharClass { letter, digit, punct, space };

CharClass classify(unsigned char c) {
  if (is_space(c)) return CharClass::space;
  if (is_letter(c)) return CharClass::letter;
  if (is_digit(c)) return CharClass::digit;
  return CharClass::punct;
}

}  // namespace

const std::vector<std::string>& BpeTokenizer::byte_symbols() {
  static const std::vector<std::string> table = [] {
    std::vector<std::string> t(256);
    std::vector<bool> direct(256, false);
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    std::uint32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      t[b] = utf8(direct[b] ? static_cast<std::uint32_t>(b) : next++);
    }
    return t;
  }();
  return table;
}

std::vector<std::string> BpeTokenizer::pre_split(std::string_view text) {
  static constexpr std::string_view kContractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
  std::vector<std::string> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '\'') {
      bool matched = false;
      for (auto k : kContractions) {
        if (text.substr(i, k.size()) == k) {
          out.emplace_back(k);
          i += k.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    std::size_t start = i;
    std::size_t j = i;
    if (c == ' ' && i + 1 < n && !is_space(static_cast<unsigned char>(text[i + 1]))) ++j;
    const CharClass cls = classify(static_cast<unsigned char>(text[j]));
    if (cls != CharClass::space) {
      while (j < n && classify(static_cast<unsigned char>(text[j])) == cls) ++j;
      out.emplace_back(text.substr(start, j - start));
      i = j;
      continue;
    }
    while (j < n && is_space(static_cast<unsigned char>(text[j]))) ++j;
    // Before a non-space, the last whitespace character is left for the next
    // chunk.
    const std::size_t stop = (j < n && j - i >= 2) ? j - 1 : j;
    out.emplace_back(text.substr(i, stop - i));
    i = stop;
  }
  return out;
}

BpeTokenizer::BpeTokenizer(std::unordered_map<std::string, TokenId> vocab,
                           std::vector<std::pair<std::string, std::string>> merges)
    : vocab_(std::move(vocab)) {
  TokenId max_id = -1;
  for (const auto& [tok, id] : vocab_) {
    if (id < 0) throw FormatError("vocab: negative id for token \"" + tok + "\"");
    max_id = std::max(max_id, id);
  }
  id_to_token_.assign(static_cast<std::size_t>(max_id + 1), std::string{});
  for (const auto& [tok, id] : vocab_) id_to_token_[static_cast<std::size_t>(id)] = tok;
  for (std::size_t r = 0; r < merges.size(); ++r) ranks_.emplace(merges[r], r);
  const auto& symbols = byte_symbols();
  for (int b = 0; b < 256; ++b) symbol_to_byte_[symbols[b]] = static_cast<unsigned char>(b);
  auto find = [&](const char* name) -> std::optional<TokenId> {
    auto it = vocab_.find(name);
    if (it == vocab_.end()) return std::nullopt;
    return it->second;
  };
  bos_ = find("<|endoftext|>");
  eos_ = bos_;
  if (!bos_) bos_ = find("<s>");
  if (!eos_) eos_ = find("</s>");
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& vocab_json,
                                const std::filesystem::path& merges_txt) {
  std::ifstream vf(vocab_json);
  if (!vf) throw Error("cannot open " + vocab_json.string());
  nlohmann::json j;
  try {
    vf >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(vocab_json.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError(vocab_json.string() + ": expected a token->id object");
  std::unordered_map<std::string, TokenId> vocab;
  for (const auto& [tok, id] : j.items()) {
    if (!id.is_number_integer()) {
      throw FormatError(vocab_json.string() + ": id of \"" + tok + "\" is not an integer");
    }
    vocab.emplace(tok, id.get<TokenId>());
  }

  std::ifstream mf(merges_txt);
  if (!mf) throw Error("cannot open " + merges_txt.string());
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(mf, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.starts_with("#version")) continue;
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() ||
        line.find(' ', sp + 1) != std::string::npos) {
      throw FormatError(merges_txt.string() + ":" + std::to_string(lineno) +
                        ": expected two space-separated symbols, got \"" + line + "\"");
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return BpeTokenizer(std::move(vocab), std::move(merges));
}

std::vector<std::string> BpeTokenizer::apply_merges(const std::string& mapped_chunk) const {
  std::vector<std::string> symbols = utf8_chars(mapped_chunk);
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks_.find({symbols[i], symbols[i + 1]});
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const std::string left = symbols[best_pos];
    const std::string right = symbols[best_pos + 1];
    // Merge every non-overlapping occurrence of the winning pair, left to right.
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        next.push_back(left + right);
        i += 2;
      } else {
        next.push_back(symbols[i]);
        ++i;
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

std::vector<TokenId> BpeTokenizer::encode(std::string_view text, bool add_bos) const {
  std::vector<TokenId> ids;
  if (add_bos) {
    if (!bos_) throw ContractViolation("BPE vocabulary has no BOS token");
    ids.push_back(*bos_);
  }
  const auto& table = byte_symbols();
  for (const auto& chunk : pre_split(text)) {
    std::string mapped;
    for (char c : chunk) mapped += table[static_cast<unsigned char>(c)];
    for (const auto& sym : apply_merges(mapped)) {
      auto it = vocab_.find(sym);
      if (it != vocab_.end()) {
        ids.push_back(it->second);
        continue;
      }
      // Unranked symbol: fall back to its single-byte pieces.
      for (const auto& piece : utf8_chars(sym)) {
        auto pit = vocab_.find(piece);
        if (pit == vocab_.end()) {
          throw ContractViolation("BPE vocabulary lacks symbol \"" + piece + "\"");
        }
        ids.push_back(pit->second);
      }
    }
  }
  return ids;
}

std::string BpeTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) continue;
    if ((bos_ && id == *bos_) || (eos_ && id == *eos_)) continue;
    for (const auto& ch : utf8_chars(id_to_token_[static_cast<std::size_t>(id)])) {
      auto it = symbol_to_byte_.find(ch);
      if (it != symbol_to_byte_.end()) {
        out.push_back(static_cast<char>(it->second));
      } else {
        out += ch;
      }
    }
  }
  return out;
}

std::unique_ptr<Tokenizer> make_tokenizer(const std::filesystem::path& dir) {
  if (dir.empty()) return std::make_unique<ByteTokenizer>();
  return std::make_unique<BpeTokenizer>(
      BpeTokenizer::load(dir / "vocab.json", dir / "merges.txt"));
}

}  // namespace prunecd
