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

#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "copforge/dialogue.hpp"
#include "copforge/eval.hpp"
#include "copforge/gateway.hpp"
#include "copforge/runtime.hpp"

namespace httplib {
class Server;
}

namespace copforge {

// One respond-all output record.
struct ResponseRecord {
  std::string utterance_id;
  std::string dialogue_id;
  std::size_t target_turn_index = 0;
  SourceVariant source = SourceVariant::kGroundTruth;
  std::string response;
  std::optional<CoPAnalysis> analysis;
  bool analysis_missing = false;
  std::size_t length = 0;

  nlohmann::json ToJson() const;
  static ResponseRecord FromJson(const nlohmann::json& j);
};

std::vector<ResponseRecord> ParseResponses(std::string_view content);
std::string SerializeResponses(const std::vector<ResponseRecord>& records);
LengthMap LengthsOf(const std::vector<ResponseRecord>& records);

// Server side of the blind evaluation flow. Candidates are addressed by
// opaque per-evaluator tokens; variant names never leave this class.
class EvalStore {
 public:
  EvalStore(const std::vector<Dialogue>& corpus, const std::vector<ResponseRecord>& responses,
            PresentationPlan plan, std::string ratings_path, std::string token_secret);

  // First unrated step of `dialogue_id` (or of the first dialogue with one)
  // for `evaluator_id`; {"done": true} when nothing is left.
  nlohmann::json NextStep(const std::string& evaluator_id,
                          const std::optional<std::string>& dialogue_id) const;
  // Body: {"evaluator_id", "ratings": [{"utterance_id", "source_token", "score"}]}.
  // The ratings must cover every candidate of the evaluator's next step.
  nlohmann::json Submit(const nlohmann::json& body);
  nlohmann::json Dialogues() const;

  std::vector<RatingRecord> ratings() const;

 private:
  struct Step {
    std::string utterance_id;
    DialogueContext context;
    std::vector<std::pair<SourceVariant, std::string>> candidates;  // plan order
  };
  std::string TokenFor(const std::string& evaluator, const std::string& utterance,
                       SourceVariant source) const;
  const Step* NextFor(const std::string& evaluator, const std::string& dialogue) const;
  nlohmann::json StepJson(const std::string& evaluator, const std::string& dialogue,
                          const Step& step) const;

  std::vector<std::pair<std::string, std::vector<Step>>> dialogues_;
  std::string ratings_path_;
  std::string secret_;
  mutable std::mutex mu_;
  std::vector<RatingRecord> ratings_;
  std::set<std::pair<std::string, std::string>> rated_;  // (evaluator, utterance)
};

struct ServerOptions {
  bool expose_analysis = false;
  std::string static_dir;
  std::vector<SourceVariant> sources{kAllSources.begin(), kAllSources.end()};
};

// Background-capable wrapper over an httplib server.
class HttpService {
 public:
  HttpService();
  virtual ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int Start(const std::string& host, int port);
  // Binds and serves on the calling thread until Stop().
  void Run(const std::string& host, int port);
  void Stop();

 protected:
  httplib::Server& server() { return *server_; }

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

// Chat, batch and evaluation JSON API.
class ApiServer final : public HttpService {
 public:
  ApiServer(CounselorRuntime& runtime, ServerOptions options,
            std::shared_ptr<EvalStore> eval = nullptr);

 private:
  CounselorRuntime& runtime_;
  ServerOptions options_;
  std::shared_ptr<EvalStore> eval_;
};

// OpenAI-compatible chat-completion endpoint over a ChatBackend.
class MockBackendServer final : public HttpService {
 public:
  explicit MockBackendServer(std::shared_ptr<ChatBackend> backend);

 private:
  std::shared_ptr<ChatBackend> backend_;
};

}  // namespace copforge
