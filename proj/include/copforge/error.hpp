// Copyright 2026 The CopForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace copforge {

enum class ErrorKind {
  kValidation,
  kFormat,
  kBackend,
  kTransport,
  kCache,
  kIo,
  kStatistics,
  kExhausted,
  kConfig,
};

std::string_view ErrorKindName(ErrorKind kind);

// Base for every failure the library reports. `kind()` is stable and is what
// the CLI prints in its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Corpus and line-delimited file errors carry the 1-based line number.
class LineError : public Error {
 public:
  LineError(ErrorKind kind, std::size_t line, const std::string& reason);

  std::size_t line() const noexcept { return line_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

class BackendError : public Error {
 public:
  BackendError(int status, std::string body_excerpt, int attempts);

  int status() const noexcept { return status_; }
  const std::string& body_excerpt() const noexcept { return body_excerpt_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int status_;
  std::string body_excerpt_;
  int attempts_;
};

}  // namespace copforge
