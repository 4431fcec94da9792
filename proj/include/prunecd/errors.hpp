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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prunecd {

// Base of every error the engine raises. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape mismatch, id out of range).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Bytes on disk do not follow the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Structurally valid file whose contents disagree with its own header.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Request exceeds a hard limit (sequence length, enumeration budget).
class CapacityError : public Error {
 public:
  using Error::Error;
};

// JSON-lines schema violation; carries the 1-based line and offending field.
class ParseError : public Error {
 public:
  ParseError(std::string path, std::size_t line, std::string field, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": field \"" + field + "\": " + what),
        path_(std::move(path)),
        line_(line),
        field_(std::move(field)) {}

  const std::string& path() const { return path_; }
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::string path_;
  std::size_t line_;
  std::string field_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace prunecd
