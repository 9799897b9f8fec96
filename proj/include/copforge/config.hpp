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

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "copforge/gateway.hpp"
#include "copforge/source.hpp"

namespace copforge {

// Settings for one CLI invocation. Every scalar key has a COPFORGE_<KEY>
// environment variable.
struct RunConfig {
  std::string backend_url;
  std::string api_key;
  std::string cache_dir;
  CachePolicy cache_policy = CachePolicy::kReadWrite;
  std::size_t budget = 4096;
  std::size_t parallelism = 4;
  std::uint64_t seed = 0;
  bool strict = false;
  std::string mode = "mixed";
  std::string out;
  std::string model;  // overrides the model of the subcommand's role
  std::string annotator_model = "gpt-3.5-turbo";
  std::string judge_model = "gpt-4";
  std::map<SourceVariant, std::string> models;  // counselor variants
  double temperature = kGenerationTemperature;
  int max_output_units = kDefaultMaxOutputUnits;
  double max_failure_rate = 0.1;
  double requests_per_second = 0;
  int max_attempts = 5;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  bool expose_analysis = false;

  // Throws Error(kConfig) on a violated invariant.
  void Validate() const;
  nlohmann::json ToJson() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup ProcessEnv();

// Layers defaults < config file < environment < flags. `file` and `flags`
// are flat objects keyed like RunConfig's JSON form.
RunConfig ResolveConfig(const nlohmann::json& file, const EnvLookup& env,
                        const nlohmann::json& flags);

nlohmann::json LoadConfigFile(const std::string& path);

}  // namespace copforge
