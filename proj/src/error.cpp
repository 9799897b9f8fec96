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

#include "copforge/error.hpp"

#include <utility>

namespace copforge {

std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kBackend: return "backend";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kCache: return "cache";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kStatistics: return "statistics";
    case ErrorKind::kExhausted: return "exhausted";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

LineError::LineError(ErrorKind kind, std::size_t line, const std::string& reason)
    : Error(kind, reason + " at line " + std::to_string(line)),
      line_(line),
      reason_(reason) {}

BackendError::BackendError(int status, std::string body_excerpt, int attempts)
    : Error(ErrorKind::kBackend,
            "backend returned status " + std::to_string(status) + " after " +
                std::to_string(attempts) + " attempt(s): " + body_excerpt),
      status_(status),
      body_excerpt_(std::move(body_excerpt)),
      attempts_(attempts) {}

}  // namespace copforge
