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

#include <fstream>
#include <random>

#include "doctest.h"
#include "prunecd/errors.hpp"
#include "prunecd/tokenizer.hpp"
#include "reference.hpp"

using namespace prunecd;

namespace {

BpeTokenizer toy() {
  return BpeTokenizer::load(reftest::fixture("bpe/vocab.json"), reftest::fixture("bpe/merges.txt"));
}

}  // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("byte tokenizer") {
  ByteTokenizer t;
  CHECK(t.encode("Hi", true) == std::vector<TokenId>{256, 72, 105});
  CHECK(t.encode("Hi", false) == std::vector<TokenId>{72, 105});
  const std::vector<TokenId> with_specials{256, 72, 257, 105, 258};
  CHECK(t.decode(with_specials) == "Hi");

  std::mt19937 rng(1);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s(static_cast<std::size_t>(trial), '\0');
    for (auto& c : s) c = static_cast<char>(byte(rng));
    CHECK(t.decode(t.encode(s, true)) == s);
  }
}

TEST_CASE("GPT-2 byte symbols") {
  const auto& sym = BpeTokenizer::byte_symbols();
  REQUIRE(sym.size() == 256);
  CHECK(sym['a'] == "a");
  CHECK(sym[' '] == "\xC4\xA0");   // U+0120
  CHECK(sym['\n'] == "\xC4\x8A");  // U+010A
}

TEST_CASE("pre-split") {
  using V = std::vector<std::string>;
  CHECK(BpeTokenizer::pre_split("Hello world") == V{"Hello", " world"});
  CHECK(BpeTokenizer::pre_split("it's 42!") == V{"it", "'s", " 42", "!"});
  CHECK(BpeTokenizer::pre_split("a  b") == V{"a", " ", " b"});
}

TEST_CASE("toy merges follow the hand trace") {
  const BpeTokenizer t = toy();
  // l o w e s t -> lo w e s t -> low e s t -> low es t -> low est -> lowest
  CHECK(t.apply_merges("lowest") == std::vector<std::string>{"lowest"});
  CHECK(t.apply_merges("lower") == std::vector<std::string>{"low", "e", "r"});
  CHECK(t.apply_merges("slow") == std::vector<std::string>{"s", "low"});

  const auto ids = t.encode("lowest lowest", false);
  REQUIRE(ids.size() == 3);
  CHECK(t.decode(ids) == "lowest lowest");
  CHECK(t.bos().has_value());
  CHECK(t.encode("low", true).front() == *t.bos());
}

TEST_CASE("malformed merges are reported with the line number") {
  const auto path = std::filesystem::temp_directory_path() / "prunecd_bad_merges.txt";
  {
    std::ofstream out(path);
    out << "#version: 0.2\nl o\nlo w extra\n";
  }
  try {
    BpeTokenizer::load(reftest::fixture("bpe/vocab.json"), path);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("factory picks the byte tokenizer without a directory") {
  CHECK(make_tokenizer("")->name() == "byte");
  CHECK(make_tokenizer(reftest::fixture("bpe"))->name() == "bpe");
}

}  // TEST_SUITE
