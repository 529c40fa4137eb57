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

// Ground truth for fault localization: (buggy, fixed) function pairs, the
// line diff that labels faulty lines, and a small line-level fault injector
// for building synthetic corpora.

#ifndef FLSEQ_CORPUS_HPP
#define FLSEQ_CORPUS_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flseq/error.hpp"
#include "flseq/rng.hpp"
#include "flseq/text.hpp"
#include "json.hpp"

namespace flseq {

using LineNumber = int;
using LineSet = std::set<LineNumber>;

struct FunctionPair {
  std::string id;
  std::string buggy;
  /// Absent when the record carried explicit fault_lines instead.
  std::optional<std::string> fixed;
  std::string language;
  LineSet fault_lines;
};

// ---------------------------------------------------------------------------
// Line diff
// ---------------------------------------------------------------------------

/// Labels the buggy-side lines touched by the edit buggy -> fixed.
///
/// Common leading and trailing lines are peeled off first, then the middle is
/// aligned with a longest-common-subsequence over whole lines. Buggy lines
/// outside the alignment are faulty. A gap that only inserts lines in `fixed`
/// marks the buggy line just before the insertion point (line 1 when the
/// insertion is at the top).
inline LineSet diff_fault_lines(std::string_view buggy, std::string_view fixed) {
  const auto a = text::split_lines(buggy);
  const auto b = text::split_lines(fixed);
  if (a.empty()) throw Error(ErrorKind::EmptySource, "buggy source has no lines");
  if (a == b) throw Error(ErrorKind::NoDifference, "buggy and fixed are line-identical");

  std::size_t prefix = 0;
  while (prefix < a.size() && prefix < b.size() && a[prefix] == b[prefix]) ++prefix;
  std::size_t suffix = 0;
  while (suffix < a.size() - prefix && suffix < b.size() - prefix &&
         a[a.size() - 1 - suffix] == b[b.size() - 1 - suffix])
    ++suffix;

  const std::size_t n = a.size() - prefix - suffix;
  const std::size_t m = b.size() - prefix - suffix;

  // lcs[i][j] = LCS length of a[prefix+i ..] and b[prefix+j ..] (middle only).
  std::vector<std::vector<std::uint32_t>> lcs(n + 1, std::vector<std::uint32_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      lcs[i][j] = a[prefix + i] == b[prefix + j]
                      ? lcs[i + 1][j + 1] + 1
                      : std::max(lcs[i + 1][j], lcs[i][j + 1]);

  LineSet faults;
  // Walk the alignment gap by gap. `anchor` is the 1-based buggy line that
  // precedes the current gap (0 = top of function).
  std::size_t i = 0, j = 0;
  std::size_t anchor = prefix;
  bool gap_deletes = false, gap_inserts = false;
  auto close_gap = [&] {
    if (gap_inserts && !gap_deletes)
      faults.insert(static_cast<LineNumber>(std::max<std::size_t>(anchor, 1)));
    gap_deletes = gap_inserts = false;
  };
  while (i < n || j < m) {
    if (i < n && j < m && a[prefix + i] == b[prefix + j] &&
        lcs[i][j] == lcs[i + 1][j + 1] + 1) {
      close_gap();
      ++i, ++j;
      anchor = prefix + i;
    } else if (i < n && (j == m || lcs[i + 1][j] >= lcs[i][j + 1])) {
      faults.insert(static_cast<LineNumber>(prefix + i + 1));
      gap_deletes = true;
      ++i;
    } else {
      gap_inserts = true;
      ++j;
    }
  }
  close_gap();
  return faults;
}

// ---------------------------------------------------------------------------
// Mutators
// ---------------------------------------------------------------------------

enum class MutatorKind { ArithOpSwap, RelationalOpSwap, ConstantPerturb, BooleanNegate };

inline constexpr MutatorKind kAllMutators[] = {
    MutatorKind::ArithOpSwap, MutatorKind::RelationalOpSwap,
    MutatorKind::ConstantPerturb, MutatorKind::BooleanNegate};

inline std::string_view to_string(MutatorKind kind) {
  switch (kind) {
    case MutatorKind::ArithOpSwap: return "arith-op-swap";
    case MutatorKind::RelationalOpSwap: return "relational-op-swap";
    case MutatorKind::ConstantPerturb: return "constant-perturb";
    case MutatorKind::BooleanNegate: return "boolean-negate";
  }
  return "?";
}

inline std::optional<MutatorKind> parse_mutator(std::string_view name) {
  for (auto kind : kAllMutators)
    if (to_string(kind) == name) return kind;
  return std::nullopt;
}

/// One in-place rewrite of a line: replace [pos, pos+len) by `replacement`.
struct MutationSite {
  MutatorKind kind;
  std::size_t pos;
  std::size_t len;
  std::string replacement;

  std::string apply(std::string_view line) const {
    std::string out(line.substr(0, pos));
    out += replacement;
    out += line.substr(pos + len);
    return out;
  }
};

namespace detail {

inline bool is_ident_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || text::is_digit(c) || c == '_';
}

/// Marks which characters of a line are code: string/char literal bodies and
/// trailing `//` or `#` comments are excluded, as are lines that look like
/// the inside of a block comment.
inline std::vector<bool> code_mask(std::string_view line) {
  std::vector<bool> mask(line.size(), false);
  const auto trimmed = text::trim(line);
  if (trimmed.starts_with("/*") || trimmed.starts_with("*")) return mask;
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      quote = c;
      continue;
    }
    if (c == '#' || (c == '/' && i + 1 < line.size() && (line[i + 1] == '/' || line[i + 1] == '*')))
      break;
    mask[i] = true;
  }
  return mask;
}

inline char prev_non_space(std::string_view line, std::size_t pos) {
  while (pos > 0) {
    --pos;
    if (!text::is_space(line[pos])) return line[pos];
  }
  return 0;
}

inline char at(std::string_view line, std::size_t pos) {
  return pos < line.size() ? line[pos] : '\0';
}

inline bool operand_end(char c) { return is_ident_char(c) || c == ')' || c == ']'; }

inline void arith_sites(std::string_view line, const std::vector<bool>& code,
                        std::vector<MutationSite>& out) {
  constexpr std::string_view kGlue = "+-*/=<>&|%!^";
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (!code[i] || (c != '+' && c != '-' && c != '*' && c != '/')) continue;
    const char before = i > 0 ? line[i - 1] : '\0';
    const char after = at(line, i + 1);
    if (kGlue.find(before) != std::string_view::npos && before != '\0') continue;
    if (kGlue.find(after) != std::string_view::npos && after != '\0') continue;
    if (!operand_end(prev_non_space(line, i))) continue;
    // `*` and `/` also appear in declarations and paths; demand spacing.
    if ((c == '*' || c == '/') && !(text::is_space(before) && text::is_space(after))) continue;
    const char swapped = c == '+' ? '-' : c == '-' ? '+' : c == '*' ? '/' : '*';
    out.push_back({MutatorKind::ArithOpSwap, i, 1, std::string(1, swapped)});
  }
}

inline void relational_sites(std::string_view line, const std::vector<bool>& code,
                             std::vector<MutationSite>& out) {
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (!code[i]) continue;
    const char c = line[i];
    const char before = i > 0 ? line[i - 1] : '\0';
    const char next = at(line, i + 1);
    const char next2 = at(line, i + 2);
    if ((c == '=' || c == '!') && next == '=') {
      if (next2 == '=' || before == '=' || before == '<' || before == '>' || before == '!') continue;
      out.push_back({MutatorKind::RelationalOpSwap, i, 2, c == '=' ? "!=" : "=="});
      ++i;
    } else if ((c == '<' || c == '>') && next == '=') {
      if (before == c || next2 == '>') continue;  // <<=, >>=, <=>
      out.push_back({MutatorKind::RelationalOpSwap, i, 2, std::string(1, c)});
      ++i;
    } else if (c == '<' || c == '>') {
      if (next == c || before == c || before == '-' || before == '=' || next == '>') continue;
      // Bare angle brackets are generics unless spaced like a comparison.
      if (!text::is_space(before) || !text::is_space(next)) continue;
      out.push_back({MutatorKind::RelationalOpSwap, i, 1, std::string(1, c) + "="});
    }
  }
}

inline std::string increment_decimal(std::string digits) {
  for (std::size_t i = digits.size(); i-- > 0;) {
    if (digits[i] != '9') {
      ++digits[i];
      return digits;
    }
    digits[i] = '0';
  }
  return "1" + digits;
}

inline void constant_sites(std::string_view line, const std::vector<bool>& code,
                           std::vector<MutationSite>& out) {
  std::size_t i = 0;
  while (i < line.size()) {
    if (!code[i] || !text::is_digit(line[i])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < line.size() && text::is_digit(line[end])) ++end;
    const char before = i > 0 ? line[i - 1] : '\0';
    const char after = at(line, end);
    const bool standalone = !is_ident_char(before) && before != '.' &&
                            !is_ident_char(after) && after != '.';
    bool all_code = true;
    for (std::size_t k = i; k < end; ++k) all_code = all_code && code[k];
    if (standalone && all_code)
      out.push_back({MutatorKind::ConstantPerturb, i, end - i,
                     increment_decimal(std::string(line.substr(i, end - i)))});
    i = end;
  }
}

inline void boolean_sites(std::string_view line, const std::vector<bool>& code,
                          std::vector<MutationSite>& out) {
  static constexpr std::pair<std::string_view, std::string_view> kSwaps[] = {
      {"true", "false"}, {"false", "true"}, {"True", "False"}, {"False", "True"}};
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (!code[i] || (i > 0 && is_ident_char(line[i - 1]))) continue;
    for (const auto& [word, swapped] : kSwaps) {
      if (line.substr(i).starts_with(word) && !is_ident_char(at(line, i + word.size()))) {
        out.push_back({MutatorKind::BooleanNegate, i, word.size(), std::string(swapped)});
        break;
      }
    }
  }
}

}  // namespace detail

/// All places in `line` where `kind` can rewrite. Each site preserves the line
/// count and produces a line that differs textually from the original.
inline std::vector<MutationSite> mutation_sites(std::string_view line, MutatorKind kind) {
  std::vector<MutationSite> sites;
  const auto code = detail::code_mask(line);
  switch (kind) {
    case MutatorKind::ArithOpSwap: detail::arith_sites(line, code, sites); break;
    case MutatorKind::RelationalOpSwap: detail::relational_sites(line, code, sites); break;
    case MutatorKind::ConstantPerturb: detail::constant_sites(line, code, sites); break;
    case MutatorKind::BooleanNegate: detail::boolean_sites(line, code, sites); break;
  }
  return sites;
}

struct MutatorSpec {
  MutatorKind kind;

  bool applies(std::string_view line) const { return !mutation_sites(line, kind).empty(); }
};

inline std::vector<MutatorSpec> parse_mutator_list(std::string_view csv) {
  std::vector<MutatorSpec> specs;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto end = csv.find(',', start);
    if (end == std::string_view::npos) end = csv.size();
    const auto name = text::trim(csv.substr(start, end - start));
    if (!name.empty()) {
      const auto kind = parse_mutator(name);
      if (!kind) throw Error(ErrorKind::InvalidConfig, "unknown mutator '" + std::string(name) + "'");
      specs.push_back({*kind});
    }
    start = end + 1;
  }
  return specs;
}

/// Mutates one uniformly chosen site among every site offered by `mutators`
/// across all lines of `clean`. The returned pair is labeled with the
/// mutated line; `diff_fault_lines(buggy, fixed)` recovers exactly that line.
inline FunctionPair inject_fault(std::string_view clean, const std::vector<MutatorSpec>& mutators,
                                 std::uint64_t seed, std::string id = {},
                                 std::string language = {}) {
  auto lines = text::split_lines(text::normalize_newlines(clean));
  if (lines.empty()) throw Error(ErrorKind::EmptySource, "clean source has no lines");

  struct Candidate {
    std::size_t line;
    MutationSite site;
  };
  std::vector<Candidate> candidates;
  for (std::size_t l = 0; l < lines.size(); ++l)
    for (const auto& mutator : mutators)
      for (auto& site : mutation_sites(lines[l], mutator.kind)) candidates.push_back({l, std::move(site)});
  if (candidates.empty())
    throw Error(ErrorKind::NoApplicableSite, "no line accepts any of the requested mutators");

  Rng rng(seed);
  const auto& chosen = candidates[rng.uniform_index(candidates.size())];

  FunctionPair pair;
  pair.id = id.empty() ? "injected-" + std::to_string(seed) : std::move(id);
  pair.language = std::move(language);
  pair.fixed = text::join_lines(lines);
  lines[chosen.line] = chosen.site.apply(lines[chosen.line]);
  pair.buggy = text::join_lines(lines);
  pair.fault_lines = {static_cast<LineNumber>(chosen.line + 1)};
  return pair;
}

/// A small straight-line Java-style function with pairwise-distinct lines,
/// each body line carrying at least one mutable operator or constant. Each of
/// the `steps` assignments takes one or two lines.
inline std::string synthesize_function(std::uint64_t seed, std::size_t steps) {
  Rng rng(seed);
  static constexpr std::string_view kArith[] = {"+", "-", "*", "/"};
  static constexpr std::string_view kRel[] = {"<", ">", "<=", ">=", "==", "!="};
  std::vector<std::string> lines;
  lines.push_back("int f" + std::to_string(seed % 100000) + "(int a, int b) {");
  for (std::size_t v = 1; v <= steps; ++v) {
    const std::string lhs = "v" + std::to_string(v);
    const std::string x = v == 1 ? "a" : "v" + std::to_string(v - 1);
    const std::string y = rng.uniform_index(2) ? "b" : std::to_string(1 + rng.uniform_index(9));
    const auto op = kArith[rng.uniform_index(4)];
    switch (rng.uniform_index(3)) {
      case 0:
        lines.push_back("  int " + lhs + " = " + x + " " + std::string(op) + " " + y + ";");
        break;
      case 1:
        lines.push_back("  int " + lhs + " = (" + x + " " + std::string(kRel[rng.uniform_index(6)]) +
                        " " + std::to_string(rng.uniform_index(20)) + ") ? " + x + " : " + y + ";");
        break;
      default:
        lines.push_back("  boolean " + lhs + "_ok = " + x + " " + std::string(kRel[rng.uniform_index(6)]) +
                        " " + y + " && " + (rng.uniform_index(2) ? "true" : "false") + ";");
        lines.push_back("  int " + lhs + " = " + lhs + "_ok ? " + x + " : " + x + " " +
                        std::string(op) + " 1;");
        break;
    }
  }
  lines.push_back("  return v" + std::to_string(steps) + ";");
  lines.push_back("}");
  return text::join_lines(lines);
}

// ---------------------------------------------------------------------------
// Record files
// ---------------------------------------------------------------------------

struct SkippedRecord {
  std::size_t record_line;
  std::string id;
  std::string reason;
};

struct IngestResult {
  std::vector<FunctionPair> pairs;
  std::vector<SkippedRecord> skipped;
};

namespace detail {

inline Error malformed(std::size_t line_no, const std::string& what) {
  return Error(ErrorKind::MalformedRecord, "record at line " + std::to_string(line_no) + ": " + what);
}

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line_no) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw malformed(line_no, std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace detail

/// Reads the line-delimited pair record format. Blank lines are ignored.
/// Structural problems abort with MalformedRecord; pairs whose diff cannot be
/// labeled (identical texts, empty buggy source) are skipped and reported.
inline IngestResult ingest_pairs(std::istream& in) {
  IngestResult result;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (text::trim(raw).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
      throw detail::malformed(line_no, e.what());
    }
    if (!obj.is_object()) throw detail::malformed(line_no, "record is not an object");

    FunctionPair pair;
    pair.id = detail::required_string(obj, "id", line_no);
    pair.buggy = text::normalize_newlines(detail::required_string(obj, "buggy", line_no));
    if (auto it = obj.find("language"); it != obj.end()) {
      if (!it->is_string()) throw detail::malformed(line_no, "field 'language' must be a string");
      pair.language = it->get<std::string>();
    }
    const bool has_fixed = obj.contains("fixed");
    const bool has_lines = obj.contains("fault_lines");
    if (has_fixed == has_lines)
      throw detail::malformed(line_no, "exactly one of 'fixed' or 'fault_lines' must be present");

    if (has_fixed) {
      pair.fixed = text::normalize_newlines(detail::required_string(obj, "fixed", line_no));
      try {
        pair.fault_lines = diff_fault_lines(pair.buggy, *pair.fixed);
      } catch (const Error& e) {
        result.skipped.push_back({line_no, pair.id, e.what()});
        continue;
      }
    } else {
      const auto& lines = obj["fault_lines"];
      if (!lines.is_array()) throw detail::malformed(line_no, "field 'fault_lines' must be an array");
      const auto n = text::line_count(pair.buggy);
      if (n == 0) {
        result.skipped.push_back({line_no, pair.id, "EmptySource: buggy source has no lines"});
        continue;
      }
      for (const auto& v : lines) {
        if (!v.is_number_integer()) throw detail::malformed(line_no, "fault_lines entries must be integers");
        const auto k = v.get<std::int64_t>();
        if (k < 1 || static_cast<std::size_t>(k) > n)
          throw detail::malformed(line_no, "fault line " + std::to_string(k) + " outside [1, " +
                                               std::to_string(n) + "]");
        pair.fault_lines.insert(static_cast<LineNumber>(k));
      }
      if (pair.fault_lines.empty()) throw detail::malformed(line_no, "fault_lines is empty");
    }
    result.pairs.push_back(std::move(pair));
  }
  return result;
}

inline IngestResult ingest_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return ingest_pairs(in);
}

inline nlohmann::json to_json(const FunctionPair& pair) {
  nlohmann::json obj{{"id", pair.id}, {"buggy", pair.buggy}};
  if (pair.fixed)
    obj["fixed"] = *pair.fixed;
  else
    obj["fault_lines"] = pair.fault_lines;
  if (!pair.language.empty()) obj["language"] = pair.language;
  return obj;
}

inline void write_pairs(std::ostream& out, const std::vector<FunctionPair>& pairs) {
  for (const auto& pair : pairs) out << to_json(pair).dump() << '\n';
}

}  // namespace flseq

#endif  // FLSEQ_CORPUS_HPP
