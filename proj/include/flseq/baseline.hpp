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

// Spectrum-based (Ochiai, Jaccard, Tarantula, DStar2) and mutation-based
// (MUSE, Metallaxis) suspiciousness over coverage and kill matrices.

#ifndef FLSEQ_BASELINE_HPP
#define FLSEQ_BASELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "flseq/corpus.hpp"
#include "flseq/error.hpp"
#include "json.hpp"

namespace flseq {

struct TestOutcome {
  std::string test_id;
  bool passed = true;
};

struct CoverageMatrix {
  std::vector<LineNumber> line_ids;
  std::vector<TestOutcome> tests;
  /// cover[t][j] != 0 when test t executes line_ids[j].
  std::vector<std::vector<std::uint8_t>> cover;

  void validate() const {
    if (cover.size() != tests.size())
      throw Error(ErrorKind::InvalidMatrix, "cover has " + std::to_string(cover.size()) +
                                                " rows for " + std::to_string(tests.size()) + " tests");
    for (const auto& row : cover) {
      if (row.size() != line_ids.size())
        throw Error(ErrorKind::InvalidMatrix, "cover row width does not match line_ids");
      for (auto v : row)
        if (v > 1) throw Error(ErrorKind::InvalidMatrix, "cover entries must be 0 or 1");
    }
    if (std::set<LineNumber>(line_ids.begin(), line_ids.end()).size() != line_ids.size())
      throw Error(ErrorKind::InvalidMatrix, "duplicate line id");
  }
};

struct Mutant {
  std::string mutant_id;
  LineNumber line = 0;
  /// Failing tests that pass on the mutant.
  std::size_t f2p = 0;
  /// Passing tests that fail on the mutant.
  std::size_t p2f = 0;
};

struct KillMatrix {
  std::vector<Mutant> mutants;
  std::size_t failing = 0;  // F
  std::size_t passing = 0;  // P
  /// Lines to rank; defaults to the lines that carry mutants. Lines without
  /// mutants score 0.
  std::vector<LineNumber> line_ids;

  void validate() const {
    for (const auto& m : mutants) {
      if (m.f2p > failing || m.p2f > passing)
        throw Error(ErrorKind::InvalidMatrix, "mutant '" + m.mutant_id + "' flips more tests than exist");
      if (m.line < 1) throw Error(ErrorKind::InvalidMatrix, "mutant '" + m.mutant_id + "' has no line");
    }
  }
};

enum class SbflFormula { Ochiai, Jaccard, Tarantula, DStar2 };
enum class MbflFormula { Muse, Metallaxis };

inline std::string_view to_string(SbflFormula f) {
  switch (f) {
    case SbflFormula::Ochiai: return "ochiai";
    case SbflFormula::Jaccard: return "jaccard";
    case SbflFormula::Tarantula: return "tarantula";
    case SbflFormula::DStar2: return "dstar2";
  }
  return "?";
}

inline std::string_view to_string(MbflFormula f) {
  return f == MbflFormula::Muse ? "muse" : "metallaxis";
}

inline std::optional<SbflFormula> parse_sbfl_formula(std::string_view s) {
  for (auto f : {SbflFormula::Ochiai, SbflFormula::Jaccard, SbflFormula::Tarantula, SbflFormula::DStar2})
    if (to_string(f) == s) return f;
  return std::nullopt;
}

inline std::optional<MbflFormula> parse_mbfl_formula(std::string_view s) {
  for (auto f : {MbflFormula::Muse, MbflFormula::Metallaxis})
    if (to_string(f) == s) return f;
  return std::nullopt;
}

struct ScoredLine {
  LineNumber line_id;
  double score;
};

struct SuspiciousnessRanking {
  std::vector<ScoredLine> entries;
  std::string formula_tag;
};

/// Per-line spectrum counts.
struct Spectrum {
  std::size_t ef = 0, ep = 0, nf = 0, np = 0;
};

/// Score for one line. Zero-numerator lines score 0; DStar2 with a zero
/// denominator and ef > 0 is +inf (ranked above every finite score).
inline double sbfl_line_score(const Spectrum& s, SbflFormula formula) {
  const double ef = static_cast<double>(s.ef), ep = static_cast<double>(s.ep);
  const double nf = static_cast<double>(s.nf), np = static_cast<double>(s.np);
  if (s.ef == 0) return 0.0;
  switch (formula) {
    case SbflFormula::Ochiai: {
      const double denom = std::sqrt((ef + nf) * (ef + ep));
      return denom == 0.0 ? 0.0 : ef / denom;
    }
    case SbflFormula::Jaccard: {
      const double denom = ef + nf + ep;
      return denom == 0.0 ? 0.0 : ef / denom;
    }
    case SbflFormula::Tarantula: {
      const double fail_ratio = ef / (ef + nf);
      const double pass_ratio = ep + np == 0.0 ? 0.0 : ep / (ep + np);
      const double denom = fail_ratio + pass_ratio;
      return denom == 0.0 ? 0.0 : fail_ratio / denom;
    }
    case SbflFormula::DStar2: {
      const double denom = ep + nf;
      return denom == 0.0 ? std::numeric_limits<double>::infinity() : ef * ef / denom;
    }
  }
  return 0.0;
}

/// Sorts by score descending, ties by ascending line id.
inline void sort_ranking(SuspiciousnessRanking& ranking) {
  std::sort(ranking.entries.begin(), ranking.entries.end(), [](const ScoredLine& a, const ScoredLine& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.line_id < b.line_id;
  });
}

inline SuspiciousnessRanking sbfl_score(const CoverageMatrix& matrix, SbflFormula formula) {
  matrix.validate();
  std::size_t failing = 0, passing = 0;
  for (const auto& t : matrix.tests) (t.passed ? passing : failing)++;
  if (failing == 0) throw Error(ErrorKind::NoFailingTests, "SBFL needs at least one failing test");

  SuspiciousnessRanking ranking;
  ranking.formula_tag = std::string(to_string(formula));
  for (std::size_t j = 0; j < matrix.line_ids.size(); ++j) {
    Spectrum s;
    for (std::size_t t = 0; t < matrix.tests.size(); ++t) {
      const bool covered = matrix.cover[t][j] != 0;
      if (matrix.tests[t].passed)
        (covered ? s.ep : s.np)++;
      else
        (covered ? s.ef : s.nf)++;
    }
    ranking.entries.push_back({matrix.line_ids[j], sbfl_line_score(s, formula)});
  }
  sort_ranking(ranking);
  return ranking;
}

/// MUSE: mean over a line's mutants of f2p/F - alpha * p2f/P, with
/// alpha = (sum f2p / F) / (sum p2f / P) (0 when no mutant breaks a passing
/// test). Metallaxis: per-mutant Ochiai with ef = f2p, nf = F - f2p,
/// ep = p2f; a line takes the max over its mutants.
inline SuspiciousnessRanking mbfl_score(const KillMatrix& kill, MbflFormula formula) {
  kill.validate();
  if (kill.failing == 0) throw Error(ErrorKind::NoFailingTests, "MBFL needs at least one failing test");
  if (kill.mutants.empty()) throw Error(ErrorKind::NoMutants, "kill matrix has no mutants");
  const double F = static_cast<double>(kill.failing);
  const double P = static_cast<double>(kill.passing);

  std::map<LineNumber, std::vector<const Mutant*>> by_line;
  for (LineNumber l : kill.line_ids) by_line[l];
  for (const auto& m : kill.mutants) by_line[m.line].push_back(&m);

  double alpha = 0.0;
  if (formula == MbflFormula::Muse) {
    double sum_f2p = 0.0, sum_p2f = 0.0;
    for (const auto& m : kill.mutants) {
      sum_f2p += static_cast<double>(m.f2p);
      sum_p2f += static_cast<double>(m.p2f);
    }
    if (sum_p2f > 0.0) alpha = (sum_f2p / std::max(F, 1.0)) / (sum_p2f / std::max(P, 1.0));
  }

  SuspiciousnessRanking ranking;
  ranking.formula_tag = std::string(to_string(formula));
  for (const auto& [line, mutants] : by_line) {
    double score = 0.0;
    if (!mutants.empty()) {
      if (formula == MbflFormula::Muse) {
        double sum = 0.0;
        for (const auto* m : mutants) {
          const double p2f_term = P == 0.0 ? 0.0 : static_cast<double>(m->p2f) / P;
          sum += static_cast<double>(m->f2p) / F - alpha * p2f_term;
        }
        score = sum / static_cast<double>(mutants.size());
      } else {
        score = -std::numeric_limits<double>::infinity();
        for (const auto* m : mutants) {
          const Spectrum s{m->f2p, m->p2f, kill.failing - m->f2p, 0};
          score = std::max(score, sbfl_line_score(s, SbflFormula::Ochiai));
        }
      }
    }
    ranking.entries.push_back({line, score});
  }
  sort_ranking(ranking);
  return ranking;
}

inline SuspiciousnessRanking restrict_to_function(const SuspiciousnessRanking& ranking,
                                                  const std::set<LineNumber>& function_lines) {
  if (function_lines.empty()) throw Error(ErrorKind::EmptyResult, "function has no lines");
  SuspiciousnessRanking out;
  out.formula_tag = ranking.formula_tag;
  for (const auto& e : ranking.entries)
    if (function_lines.contains(e.line_id)) out.entries.push_back(e);
  if (out.entries.empty())
    throw Error(ErrorKind::EmptyResult, "no ranked line belongs to the function");
  return out;
}

// File formats.

inline CoverageMatrix coverage_from_json(const nlohmann::json& j) {
  CoverageMatrix m;
  try {
    m.line_ids = j.at("line_ids").get<std::vector<LineNumber>>();
    for (const auto& t : j.at("tests")) m.tests.push_back({t.at("id").get<std::string>(), t.at("passed").get<bool>()});
    m.cover = j.at("cover").get<std::vector<std::vector<std::uint8_t>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, std::string("coverage file: ") + e.what());
  }
  m.validate();
  return m;
}

inline KillMatrix kill_from_json(const nlohmann::json& j) {
  KillMatrix k;
  try {
    k.failing = j.at("F").get<std::size_t>();
    k.passing = j.at("P").get<std::size_t>();
    for (const auto& m : j.at("mutants"))
      k.mutants.push_back({m.at("id").get<std::string>(), m.at("line").get<LineNumber>(),
                           m.at("f2p").get<std::size_t>(), m.at("p2f").get<std::size_t>()});
    if (j.contains("line_ids")) k.line_ids = j.at("line_ids").get<std::vector<LineNumber>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, std::string("kill file: ") + e.what());
  }
  k.validate();
  return k;
}

inline nlohmann::json to_json(const SuspiciousnessRanking& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    nlohmann::json score = std::isinf(e.score) ? nlohmann::json("inf") : nlohmann::json(e.score);
    entries.push_back({{"line", e.line_id}, {"score", score}});
  }
  return {{"formula", r.formula_tag}, {"ranking", entries}};
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::MalformedRecord, "'" + path + "': " + e.what());
  }
}

}  // namespace flseq

#endif  // FLSEQ_BASELINE_HPP
