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

// Glue shared by the command-line stages: candidate files, run manifests,
// atomic output and batch evaluation.

#ifndef FLSEQ_PIPELINE_HPP
#define FLSEQ_PIPELINE_HPP

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flseq/corpus.hpp"
#include "flseq/error.hpp"
#include "flseq/eval.hpp"
#include "flseq/sgcodec.hpp"
#include "json.hpp"

namespace flseq {

inline constexpr const char* kToolVersion = "flseq 0.1.0";

/// Generated candidates of one example.
struct CandidateRecord {
  std::string id;
  std::vector<PatchCandidate> candidates;
};

/// Byte models can emit invalid UTF-8; such bytes are written as U+FFFD.
inline void write_candidates(std::ostream& out, const std::vector<CandidateRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : r.candidates) cands.push_back(to_json(c));
    out << nlohmann::json{{"id", r.id}, {"candidates", cands}}.dump(-1, ' ', false,
                                                                    nlohmann::json::error_handler_t::replace)
        << '\n';
  }
}

inline std::vector<CandidateRecord> read_candidates(std::istream& in) {
  std::vector<CandidateRecord> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (text::trim(raw).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(raw);
      CandidateRecord r;
      r.id = j.at("id").get<std::string>();
      for (const auto& c : j.at("candidates"))
        r.candidates.push_back(parse_patch(c.at("text").get<std::string>(), c.at("log_prob").get<double>()));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MalformedRecord,
                  "candidate record at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<CandidateRecord> read_candidates(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return read_candidates(in);
}

/// Ranks every pair against its candidates (absent candidates = miss), in
/// pair-file order.
inline EvalReport evaluate(const std::vector<CandidateRecord>& records, const std::vector<FunctionPair>& pairs,
                           MatchMode mode, std::string run_tag = {}) {
  std::map<std::string, const CandidateRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  static const std::vector<PatchCandidate> kNone;
  std::vector<ExampleResult> results;
  for (const auto& pair : pairs) {
    const auto it = by_id.find(pair.id);
    results.push_back({pair.id, hit_rank(it == by_id.end() ? kNone : it->second->candidates, pair, mode)});
  }
  return top_n_report(std::move(results), mode, std::move(run_tag));
}

/// Writes via a sibling temporary and rename, so a failed run leaves no
/// partial file behind.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
    out << content;
    if (!out.flush()) throw Error(ErrorKind::Io, "short write to '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::Io, "cannot move output into place at '" + path + "'");
  }
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Record of one CLI invocation, written next to its primary output as
/// `<output>.manifest.json`. `argv` alone is enough to replay the run.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string started_at = utc_timestamp();
  nlohmann::json results = nlohmann::json::object();

  nlohmann::json to_json() const {
    return {{"command", command}, {"argv", argv},     {"config", config},
            {"inputs", inputs},   {"outputs", outputs}, {"seed", seed},
            {"tool_version", kToolVersion}, {"started_at", started_at},
            {"finished_at", utc_timestamp()}, {"results", results}};
  }

  static std::string path_for(const std::string& output) { return output + ".manifest.json"; }

  void write(const std::string& primary_output) const {
    write_file_atomic(path_for(primary_output), to_json().dump(2) + "\n");
  }
};

}  // namespace flseq

#endif  // FLSEQ_PIPELINE_HPP
