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
#include <string>
#include <string_view>
#include <vector>

namespace copforge::text {

// Number of Unicode scalar values in a UTF-8 string (continuation bytes are
// not counted).
std::size_t CountScalars(std::string_view utf8);

std::string_view Trim(std::string_view s);

// Splits on '\n'; a trailing '\r' on each line is dropped.
std::vector<std::string_view> SplitLines(std::string_view s);

bool StartsWithIgnoreCase(std::string_view s, std::string_view prefix);

bool EqualsIgnoreCase(std::string_view a, std::string_view b);

// Non-overlapping occurrence count.
std::size_t CountOccurrences(std::string_view haystack, std::string_view needle);

std::string Join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace copforge::text
