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

// Top-N evaluation: matching candidates against ground truth, counting,
// multi-run aggregation and dataset splits.

#ifndef FLSEQ_EVAL_HPP
#define FLSEQ_EVAL_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "flseq/baseline.hpp"
#include "flseq/corpus.hpp"
#include "flseq/error.hpp"
#include "flseq/rng.hpp"
#include "flseq/sgcodec.hpp"
#include "flseq/text.hpp"
#include "json.hpp"

namespace flseq {

enum class MatchMode { LineNumber, Sequence, NumberOnly };

inline std::string_view to_string(MatchMode m) {
  switch (m) {
    case MatchMode::LineNumber: return "line_number";
    case MatchMode::Sequence: return "sequence";
    case MatchMode::NumberOnly: return "number_only";
  }
  return "?";
}

inline std::optional<MatchMode> parse_match_mode(std::string_view s) {
  for (auto m : {MatchMode::LineNumber, MatchMode::Sequence, MatchMode::NumberOnly})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

using Rank = std::optional<std::size_t>;  // 1-based; nullopt = miss

/// 1-based position of the first candidate that identifies a fault line.
///
///  * line_number: the parsed k is one of the fault lines; the text after the
///    tab is ignored.
///  * sequence: the candidate text (line_text when parsed, raw_text
///    otherwise), stripped of leading/trailing whitespace, equals some
///    stripped faulty line of the buggy source.
///  * number_only: the whole raw text, stripped, is a bare decimal naming a
///    fault line.
inline Rank hit_rank(const std::vector<PatchCandidate>& candidates, const FunctionPair& pair,
                     MatchMode mode) {
  std::vector<std::string_view> faulty_texts;
  std::vector<std::string> lines;
  if (mode == MatchMode::Sequence) {
    lines = text::split_lines(pair.buggy);
    for (auto k : pair.fault_lines)
      if (k >= 1 && static_cast<std::size_t>(k) <= lines.size())
        faulty_texts.push_back(text::trim(lines[static_cast<std::size_t>(k - 1)]));
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    bool hit = false;
    switch (mode) {
      case MatchMode::LineNumber:
        hit = c.line_number && pair.fault_lines.contains(*c.line_number);
        break;
      case MatchMode::Sequence: {
        const auto predicted = text::trim(c.line_text ? *c.line_text : c.raw_text);
        hit = std::find(faulty_texts.begin(), faulty_texts.end(), predicted) != faulty_texts.end();
        break;
      }
      case MatchMode::NumberOnly: {
        const auto k = text::parse_decimal(text::trim(c.raw_text));
        hit = k && *k <= std::numeric_limits<LineNumber>::max() &&
              pair.fault_lines.contains(static_cast<LineNumber>(*k));
        break;
      }
    }
    if (hit) return i + 1;
  }
  return std::nullopt;
}

/// Presents a baseline ranking as candidates so it flows through the same
/// hit_rank/top_n path: line id becomes the line number, and the pseudo
/// log-probability is minus the rank index (order-preserving).
inline std::vector<PatchCandidate> ranking_as_candidates(const SuspiciousnessRanking& ranking) {
  std::vector<PatchCandidate> out;
  for (std::size_t i = 0; i < ranking.entries.size(); ++i) {
    PatchCandidate c;
    c.line_number = ranking.entries[i].line_id;
    c.line_text = "";
    c.raw_text = std::to_string(ranking.entries[i].line_id) + "\t";
    c.log_prob = -static_cast<double>(i);
    out.push_back(std::move(c));
  }
  return out;
}

inline constexpr std::array<std::size_t, 3> kTopN = {1, 3, 5};

struct ExampleResult {
  std::string id;
  Rank rank;
};

struct EvalReport {
  MatchMode mode = MatchMode::LineNumber;
  std::string run_tag;
  std::size_t total = 0;
  /// Keyed by N. Fractional after aggregation.
  std::map<std::size_t, double> top_n;
  std::vector<ExampleResult> per_example;

  double top(std::size_t n) const {
    const auto it = top_n.find(n);
    return it == top_n.end() ? 0.0 : it->second;
  }
  double percent(std::size_t n) const {
    return total == 0 ? 0.0 : 100.0 * top(n) / static_cast<double>(total);
  }
};

inline EvalReport top_n_report(std::vector<ExampleResult> results, MatchMode mode,
                               std::string run_tag = {}) {
  EvalReport report;
  report.mode = mode;
  report.run_tag = std::move(run_tag);
  report.total = results.size();
  for (auto n : kTopN) {
    std::size_t count = 0;
    for (const auto& r : results) count += r.rank && *r.rank <= n;
    report.top_n[n] = static_cast<double>(count);
  }
  report.per_example = std::move(results);
  return report;
}

/// Mean Top-N over the three best runs. Runs are ordered by Top-1, then
/// Top-3, then Top-5 (all descending), then run_tag ascending.
inline EvalReport aggregate_runs(const std::vector<EvalReport>& reports, std::size_t keep = 3) {
  if (reports.size() < keep)
    throw Error(ErrorKind::TooFew, "need at least " + std::to_string(keep) + " runs, got " +
                                       std::to_string(reports.size()));
  for (const auto& r : reports) {
    if (r.total != reports.front().total)
      throw Error(ErrorKind::MixedTotals, "runs disagree on the example count (" +
                                              std::to_string(r.total) + " vs " +
                                              std::to_string(reports.front().total) + ")");
    if (r.mode != reports.front().mode)
      throw Error(ErrorKind::MixedTotals, "runs were evaluated in different match modes");
  }
  std::vector<const EvalReport*> order;
  for (const auto& r : reports) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const EvalReport* a, const EvalReport* b) {
    return std::make_tuple(-a->top(1), -a->top(3), -a->top(5), a->run_tag) <
           std::make_tuple(-b->top(1), -b->top(3), -b->top(5), b->run_tag);
  });
  EvalReport out;
  out.mode = reports.front().mode;
  out.total = reports.front().total;
  for (std::size_t i = 0; i < keep; ++i) {
    if (i) out.run_tag += ",";
    out.run_tag += order[i]->run_tag;
  }
  out.run_tag = "mean-of-top" + std::to_string(keep) + "(" + out.run_tag + ")";
  for (auto n : kTopN) {
    double sum = 0.0;
    for (std::size_t i = 0; i < keep; ++i) sum += order[i]->top(n);
    out.top_n[n] = sum / static_cast<double>(keep);
  }
  return out;
}

/// One decimal place, the way result tables print fractional averages.
inline std::string format_one_decimal(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", value);
  return buf;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json top = nlohmann::json::object(), pct = nlohmann::json::object();
  for (const auto& [n, v] : r.top_n) {
    top[std::to_string(n)] = v;
    pct[std::to_string(n)] = format_one_decimal(r.percent(n));
  }
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : r.per_example)
    per.push_back({{"id", e.id}, {"rank", e.rank ? nlohmann::json(*e.rank) : nlohmann::json(nullptr)}});
  return {{"mode", std::string(to_string(r.mode))},
          {"run_tag", r.run_tag},
          {"total", r.total},
          {"top_n", top},
          {"top_n_percent", pct},
          {"per_example", per}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    const auto mode = parse_match_mode(j.at("mode").get<std::string>());
    if (!mode) throw Error(ErrorKind::MalformedRecord, "report has unknown mode");
    r.mode = *mode;
    r.run_tag = j.value("run_tag", std::string());
    r.total = j.at("total").get<std::size_t>();
    for (const auto& [key, value] : j.at("top_n").items()) r.top_n[std::stoul(key)] = value.get<double>();
    if (j.contains("per_example"))
      for (const auto& e : j.at("per_example"))
        r.per_example.push_back(
            {e.at("id").get<std::string>(),
             e.at("rank").is_null() ? Rank{} : Rank{e.at("rank").get<std::size_t>()}});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, std::string("report: ") + e.what());
  }
  return r;
}

inline void write_report_csv(std::ostream& out, const EvalReport& r) {
  out << "id,rank\n";
  for (const auto& e : r.per_example) {
    // RFC 4180 quoting for ids that need it.
    if (e.id.find_first_of(",\"\n") != std::string::npos) {
      out << '"';
      for (char c : e.id) out << (c == '"' ? "\"\"" : std::string(1, c));
      out << '"';
    } else {
      out << e.id;
    }
    out << ',' << (e.rank ? std::to_string(*e.rank) : "") << '\n';
  }
}

/// Human-readable one-line summary, e.g. "Top-1 653.3 (50.6%)".
inline std::string summarize(const EvalReport& r) {
  std::string s;
  for (auto n : kTopN) {
    if (!s.empty()) s += "  ";
    s += "Top-" + std::to_string(n) + " " + format_one_decimal(r.top(n)) + " (" +
         format_one_decimal(r.percent(n)) + "%)";
  }
  return s + " of " + std::to_string(r.total);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitScheme {
  enum class Kind { Ratio811, KFold } kind = Kind::Ratio811;
  std::size_t k = 5;
};

/// Fold index per id, in input order. For the 8:1:1 scheme folds are
/// 0 = train, 1 = valid, 2 = test; for k-fold they are 0..k-1.
///
/// Ids are shuffled with the seed and then cut into contiguous slices. In the
/// ratio scheme valid and test each get floor(n/10) and train keeps the
/// remainder; k-fold hands the n mod k extra ids to the first folds.
inline std::vector<std::size_t> split(const std::vector<std::string>& ids, SplitScheme scheme,
                                      std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (scheme.kind == SplitScheme::Kind::KFold) {
    if (scheme.k < 2) throw Error(ErrorKind::InvalidConfig, "k-fold needs k >= 2");
    if (n < scheme.k) throw Error(ErrorKind::TooFew, std::to_string(n) + " ids for " +
                                                         std::to_string(scheme.k) + " folds");
  } else if (n < 10) {
    throw Error(ErrorKind::TooFew, "8:1:1 split needs at least 10 ids");
  }

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);

  std::vector<std::size_t> sizes;
  if (scheme.kind == SplitScheme::Kind::Ratio811) {
    const std::size_t tenth = n / 10;
    sizes = {n - 2 * tenth, tenth, tenth};
  } else {
    for (std::size_t f = 0; f < scheme.k; ++f) sizes.push_back(n / scheme.k + (f < n % scheme.k ? 1 : 0));
  }

  std::vector<std::size_t> fold(n);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < sizes.size(); ++f)
    for (std::size_t i = 0; i < sizes[f]; ++i) fold[perm[pos++]] = f;
  return fold;
}

}  // namespace flseq

#endif  // FLSEQ_EVAL_HPP
