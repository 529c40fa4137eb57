// Copyright 2026 The flseq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Client for model servers speaking the generation protocol:
//
//   GET  /v1/info      -> {"name": str, "context_length": int}
//   POST /v1/generate  {"id", "input_text", "num_candidates", "max_new_tokens"}
//                      -> {"candidates": [{"text": str, "log_prob": float}]}
//
// The server runs its own beam search; log_prob is a finite double <= 0.

#ifndef FLSEQ_REMOTE_HPP
#define FLSEQ_REMOTE_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "flseq/error.hpp"
#include "flseq/sgcodec.hpp"
#include "httplib.h"
#include "json.hpp"

// <resolv.h> (via httplib) defines _res, which collides with Eigen internals.
#ifdef _res
#undef _res
#endif

namespace flseq {

struct RemoteOptions {
  int max_attempts = 3;
  /// Delay before the second attempt; doubles for each further attempt.
  std::chrono::milliseconds backoff{250};
  std::chrono::seconds connect_timeout{5};
  std::chrono::seconds read_timeout{300};
};

struct RemoteInfo {
  std::string name;
  std::size_t context_length = 0;
};

namespace detail {

inline nlohmann::json parse_protocol_body(const std::string& body, const char* what) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Protocol, std::string(what) + " is not JSON: " + e.what());
  }
}

}  // namespace detail

/// Validates a /v1/generate response body and returns its candidates sorted
/// by log_prob descending (server order kept among equal scores), truncated
/// to `num_candidates` and passed through parse_patch.
inline std::vector<PatchCandidate> parse_generate_response(const nlohmann::json& body,
                                                           std::size_t num_candidates) {
  if (!body.is_object() || !body.contains("candidates") || !body["candidates"].is_array())
    throw Error(ErrorKind::Protocol, "response lacks a 'candidates' array");
  std::vector<PatchCandidate> out;
  for (const auto& c : body["candidates"]) {
    if (!c.is_object() || !c.contains("text") || !c["text"].is_string() || !c.contains("log_prob") ||
        !c["log_prob"].is_number())
      throw Error(ErrorKind::Protocol, "candidate must carry string 'text' and numeric 'log_prob'");
    const double lp = c["log_prob"].get<double>();
    if (!std::isfinite(lp) || lp > 0.0)
      throw Error(ErrorKind::Protocol, "log_prob " + std::to_string(lp) + " is not a finite value <= 0");
    out.push_back(parse_patch(c["text"].get<std::string>(), lp));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const PatchCandidate& a, const PatchCandidate& b) { return a.log_prob > b.log_prob; });
  if (out.size() > num_candidates) out.resize(num_candidates);
  return out;
}

inline nlohmann::json make_generate_request(const std::string& id, const std::string& input_text,
                                            std::size_t num_candidates, std::size_t max_new_tokens) {
  return {{"id", id},
          {"input_text", input_text},
          {"num_candidates", num_candidates},
          {"max_new_tokens", max_new_tokens}};
}

class RemoteClient {
 public:
  explicit RemoteClient(std::string endpoint, RemoteOptions options = {})
      : endpoint_(std::move(endpoint)), options_(options) {
    if (!endpoint_.starts_with("http://"))
      throw Error(ErrorKind::InvalidConfig, "endpoint must be an http:// URL, got '" + endpoint_ + "'");
    while (endpoint_.ends_with("/")) endpoint_.pop_back();
    const auto path_start = endpoint_.find('/', 7);
    if (path_start != std::string::npos) {
      base_path_ = endpoint_.substr(path_start);
      host_ = endpoint_.substr(0, path_start);
    } else {
      host_ = endpoint_;
    }
    if (options_.max_attempts < 1) options_.max_attempts = 1;
  }

  const std::string& endpoint() const { return endpoint_; }

  RemoteInfo info() const {
    const auto res = with_retries([&](httplib::Client& cli) { return cli.Get(base_path_ + "/v1/info"); });
    const auto body = detail::parse_protocol_body(res.body, "/v1/info response");
    if (!body.is_object() || !body.contains("name") || !body["name"].is_string() ||
        !body.contains("context_length") || !body["context_length"].is_number_integer())
      throw Error(ErrorKind::Protocol, "/v1/info response must carry 'name' and integer 'context_length'");
    return {body["name"].get<std::string>(), body["context_length"].get<std::size_t>()};
  }

  std::vector<PatchCandidate> generate(const std::string& id, const std::string& input_text,
                                       std::size_t num_candidates, std::size_t max_new_tokens) const {
    const auto request = make_generate_request(id, input_text, num_candidates, max_new_tokens).dump();
    const auto res = with_retries([&](httplib::Client& cli) {
      return cli.Post(base_path_ + "/v1/generate", request, "application/json");
    });
    return parse_generate_response(detail::parse_protocol_body(res.body, "/v1/generate response"),
                                   num_candidates);
  }

 private:
  struct Response {
    int status;
    std::string body;
  };

  /// Connection failures are retried with exponential backoff; any HTTP
  /// response ends the loop. 5xx maps to ServerError, other non-200 codes
  /// to Protocol.
  template <typename Call>
  Response with_retries(Call&& call) const {
    std::string last_error;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
      httplib::Client cli(host_);
      cli.set_connection_timeout(options_.connect_timeout);
      cli.set_read_timeout(options_.read_timeout);
      if (auto res = call(cli)) {
        if (res->status >= 500)
          throw Error(ErrorKind::ServerError, "HTTP " + std::to_string(res->status) + ": " + res->body);
        if (res->status != 200)
          throw Error(ErrorKind::Protocol, "HTTP " + std::to_string(res->status) + ": " + res->body);
        return {res->status, res->body};
      } else {
        last_error = httplib::to_string(res.error());
      }
      if (attempt < options_.max_attempts)
        std::this_thread::sleep_for(options_.backoff * (1 << (attempt - 1)));
    }
    throw Error(ErrorKind::Transport, endpoint_ + " unreachable after " +
                                          std::to_string(options_.max_attempts) + " attempts (" +
                                          last_error + ")");
  }

  std::string endpoint_;
  std::string host_;
  std::string base_path_;
  RemoteOptions options_;
};

inline std::vector<PatchCandidate> remote_generate(const std::string& endpoint, const std::string& input_text,
                                                   std::size_t num_candidates, std::size_t max_new_tokens,
                                                   const std::string& id = {}, RemoteOptions options = {}) {
  return RemoteClient(endpoint, options).generate(id, input_text, num_candidates, max_new_tokens);
}

}  // namespace flseq

#endif  // FLSEQ_REMOTE_HPP
