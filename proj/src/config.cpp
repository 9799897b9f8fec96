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

#include "copforge/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "copforge/error.hpp"

namespace copforge {

using nlohmann::json;

namespace {

std::string EnvName(const std::string& key) {
  std::string out = "COPFORGE_";
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

// Converts an environment string to the JSON type of the default value.
json Coerce(const std::string& key, const std::string& raw, const json& like) {
  try {
    if (like.is_boolean()) {
      if (raw == "1" || raw == "true" || raw == "yes" || raw == "on") return true;
      if (raw == "0" || raw == "false" || raw == "no" || raw == "off" || raw.empty()) return false;
      throw std::invalid_argument("not a boolean");
    }
    std::size_t used = 0;
    if (like.is_number_unsigned()) {
      if (!raw.empty() && raw[0] == '-') throw std::invalid_argument("negative");
      json v = std::stoull(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (like.is_number_integer()) {
      json v = std::stoll(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (like.is_number_float()) {
      json v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
  } catch (const std::exception&) {
    throw Error(ErrorKind::kConfig, "invalid value '" + raw + "' for " + EnvName(key));
  }
  return raw;
}

template <typename T>
T Get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::kConfig, std::string("invalid type for config key '") + key + "'");
  }
}

}  // namespace

void RunConfig::Validate() const {
  if (budget < 1) throw Error(ErrorKind::kConfig, "budget must be >= 1");
  if (parallelism < 1) throw Error(ErrorKind::kConfig, "parallelism must be >= 1");
  if (max_output_units < 1) throw Error(ErrorKind::kConfig, "max_output_units must be >= 1");
  if (max_attempts < 1) throw Error(ErrorKind::kConfig, "max_attempts must be >= 1");
  if (!(max_failure_rate >= 0.0 && max_failure_rate <= 1.0)) {
    throw Error(ErrorKind::kConfig, "max_failure_rate must be in [0, 1]");
  }
  if (port < 0 || port > 65535) throw Error(ErrorKind::kConfig, "port out of range");
}

json RunConfig::ToJson() const {
  json m = json::object();
  for (const auto& [v, id] : models) m[std::string(SourceName(v))] = id;
  const char* policy = cache_policy == CachePolicy::kReadWrite  ? "read-write"
                       : cache_policy == CachePolicy::kReadOnly ? "read-only"
                                                                : "bypass";
  return {{"backend_url", backend_url},
          {"api_key", api_key},
          {"cache_dir", cache_dir},
          {"cache_policy", policy},
          {"budget", budget},
          {"parallelism", parallelism},
          {"seed", seed},
          {"strict", strict},
          {"mode", mode},
          {"out", out},
          {"model", model},
          {"annotator_model", annotator_model},
          {"judge_model", judge_model},
          {"models", m},
          {"temperature", temperature},
          {"max_output_units", max_output_units},
          {"max_failure_rate", max_failure_rate},
          {"requests_per_second", requests_per_second},
          {"max_attempts", max_attempts},
          {"host", host},
          {"port", port},
          {"static_dir", static_dir},
          {"expose_analysis", expose_analysis}};
}

EnvLookup ProcessEnv() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

RunConfig ResolveConfig(const json& file, const EnvLookup& env, const json& flags) {
  const RunConfig defaults;
  json merged = defaults.ToJson();
  // Counselor model defaults live in the runtime; an empty map keeps them.
  auto apply = [&](const json& layer, const char* origin) {
    if (layer.is_null()) return;
    if (!layer.is_object()) throw Error(ErrorKind::kConfig, std::string(origin) + " must be an object");
    for (const auto& [key, value] : layer.items()) {
      if (!merged.contains(key)) {
        throw Error(ErrorKind::kConfig, "unknown config key '" + key + "' in " + origin);
      }
      if (key == "models") {
        if (!value.is_object()) throw Error(ErrorKind::kConfig, "models must be an object");
        for (const auto& [name, id] : value.items()) merged["models"][name] = id;
      } else {
        merged[key] = value;
      }
    }
  };
  apply(file, "config file");
  if (env) {
    json layer = json::object();
    for (const auto& [key, like] : merged.items()) {
      if (like.is_object()) continue;
      if (auto raw = env(EnvName(key))) layer[key] = Coerce(key, *raw, like);
    }
    apply(layer, "environment");
  }
  apply(flags, "flags");

  RunConfig c;
  c.backend_url = Get<std::string>(merged, "backend_url");
  c.api_key = Get<std::string>(merged, "api_key");
  c.cache_dir = Get<std::string>(merged, "cache_dir");
  const auto policy = Get<std::string>(merged, "cache_policy");
  auto parsed = ParseCachePolicy(policy);
  if (!parsed) throw Error(ErrorKind::kConfig, "unknown cache policy '" + policy + "'");
  c.cache_policy = *parsed;
  const auto budget = Get<std::int64_t>(merged, "budget");
  const auto parallelism = Get<std::int64_t>(merged, "parallelism");
  if (budget < 1) throw Error(ErrorKind::kConfig, "budget must be >= 1");
  if (parallelism < 1) throw Error(ErrorKind::kConfig, "parallelism must be >= 1");
  c.budget = static_cast<std::size_t>(budget);
  c.parallelism = static_cast<std::size_t>(parallelism);
  c.seed = Get<std::uint64_t>(merged, "seed");
  c.strict = Get<bool>(merged, "strict");
  c.mode = Get<std::string>(merged, "mode");
  c.out = Get<std::string>(merged, "out");
  c.model = Get<std::string>(merged, "model");
  c.annotator_model = Get<std::string>(merged, "annotator_model");
  c.judge_model = Get<std::string>(merged, "judge_model");
  for (const auto& [name, id] : merged["models"].items()) {
    auto v = ParseSource(name);
    if (!v || *v == SourceVariant::kGroundTruth) {
      throw Error(ErrorKind::kConfig, "models: '" + name + "' is not a generating variant");
    }
    if (!id.is_string()) throw Error(ErrorKind::kConfig, "models: id for '" + name + "' must be a string");
    c.models[*v] = id.get<std::string>();
  }
  c.temperature = Get<double>(merged, "temperature");
  c.max_output_units = Get<int>(merged, "max_output_units");
  c.max_failure_rate = Get<double>(merged, "max_failure_rate");
  c.requests_per_second = Get<double>(merged, "requests_per_second");
  c.max_attempts = Get<int>(merged, "max_attempts");
  c.host = Get<std::string>(merged, "host");
  c.port = Get<int>(merged, "port");
  c.static_dir = Get<std::string>(merged, "static_dir");
  c.expose_analysis = Get<bool>(merged, "expose_analysis");
  c.Validate();
  return c;
}

json LoadConfigFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, "config file " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace copforge
