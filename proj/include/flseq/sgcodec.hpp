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

// Sequence-generation codec. A function is presented to the model with every
// line prefixed by "<m>\t"; the model answers "<k>\t<line k verbatim>".

#ifndef FLSEQ_SGCODEC_HPP
#define FLSEQ_SGCODEC_HPP

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "flseq/corpus.hpp"
#include "flseq/error.hpp"
#include "flseq/text.hpp"
#include "json.hpp"

namespace flseq {

/// Which input/target layout to produce. `Numbered` is the main format; the
/// other two exist for ablation runs.
enum class SgVariant {
  Numbered,       // input "m\tl_m" lines, target "k\tl_k"
  Unnumbered,     // raw input, target "l_k"
  NumberOnly,     // numbered input, target "k"
};

inline std::string_view to_string(SgVariant v) {
  switch (v) {
    case SgVariant::Numbered: return "numbered";
    case SgVariant::Unnumbered: return "unnumbered";
    case SgVariant::NumberOnly: return "number-only";
  }
  return "?";
}

inline std::optional<SgVariant> parse_sg_variant(std::string_view name) {
  for (auto v : {SgVariant::Numbered, SgVariant::Unnumbered, SgVariant::NumberOnly})
    if (to_string(v) == name) return v;
  return std::nullopt;
}

struct SGExample {
  std::string id;
  /// Id of the FunctionPair this example was built from; examples expanded
  /// from a multi-line fault share it.
  std::string pair_id;
  std::string input_text;
  std::string target_text;
  LineSet fault_lines;
  std::size_t n_lines = 0;
};

struct PatchCandidate {
  std::string raw_text;
  std::optional<LineNumber> line_number;
  std::optional<std::string> line_text;
  double log_prob = 0.0;
};

inline std::string add_line_numbers(std::string_view source) {
  const auto lines = text::split_lines(source);
  if (lines.empty()) throw Error(ErrorKind::EmptySource, "cannot number an empty source");
  std::string out;
  for (std::size_t m = 0; m < lines.size(); ++m) {
    if (m) out.push_back('\n');
    out += std::to_string(m + 1);
    out.push_back('\t');
    out += lines[m];
  }
  return out;
}

/// Inverse of add_line_numbers: drops the leading "m\t" of every line.
inline std::string strip_line_numbers(std::string_view numbered) {
  auto lines = text::split_lines(numbered);
  for (auto& line : lines) {
    const auto tab = line.find('\t');
    if (tab != std::string::npos) line.erase(0, tab + 1);
  }
  return text::join_lines(lines);
}

inline std::string make_target(std::string_view source, LineNumber k) {
  const auto lines = text::split_lines(source);
  if (k < 1 || static_cast<std::size_t>(k) > lines.size())
    throw Error(ErrorKind::OutOfRange, "line " + std::to_string(k) + " not in [1, " +
                                           std::to_string(lines.size()) + "]");
  return std::to_string(k) + '\t' + lines[static_cast<std::size_t>(k - 1)];
}

/// Never throws: output that does not start with "<digits>\t" is kept as an
/// unparsed candidate so sequence-mode matching can still use it.
inline PatchCandidate parse_patch(std::string raw, double log_prob) {
  PatchCandidate c;
  c.log_prob = log_prob;
  const auto tab = raw.find('\t');
  if (tab != std::string::npos) {
    if (const auto k = text::parse_decimal(std::string_view(raw).substr(0, tab));
        k && *k <= std::numeric_limits<LineNumber>::max()) {
      c.line_number = static_cast<LineNumber>(*k);
      c.line_text = raw.substr(tab + 1);
    }
  }
  c.raw_text = std::move(raw);
  return c;
}

inline SGExample make_sg_example(const FunctionPair& pair, LineNumber k,
                                 SgVariant variant = SgVariant::Numbered) {
  SGExample ex;
  ex.pair_id = pair.id;
  ex.id = pair.fault_lines.size() > 1 ? pair.id + "#" + std::to_string(k) : pair.id;
  ex.fault_lines = pair.fault_lines;
  ex.n_lines = text::line_count(pair.buggy);
  switch (variant) {
    case SgVariant::Numbered:
      ex.input_text = add_line_numbers(pair.buggy);
      ex.target_text = make_target(pair.buggy, k);
      break;
    case SgVariant::Unnumbered: {
      if (ex.n_lines == 0) throw Error(ErrorKind::EmptySource, "buggy source has no lines");
      ex.input_text = text::join_lines(text::split_lines(pair.buggy));
      const auto target = make_target(pair.buggy, k);
      ex.target_text = target.substr(target.find('\t') + 1);
      break;
    }
    case SgVariant::NumberOnly:
      ex.input_text = add_line_numbers(pair.buggy);
      make_target(pair.buggy, k);  // range check
      ex.target_text = std::to_string(k);
      break;
  }
  return ex;
}

/// One example per fault line, all sharing the same input text.
inline std::vector<SGExample> build_sg_examples(const FunctionPair& pair,
                                                SgVariant variant = SgVariant::Numbered) {
  if (text::line_count(pair.buggy) == 0)
    throw Error(ErrorKind::EmptySource, "pair '" + pair.id + "' has an empty buggy source");
  std::vector<SGExample> out;
  for (const auto k : pair.fault_lines) out.push_back(make_sg_example(pair, k, variant));
  return out;
}

// SG dataset file: one JSON object per line.

inline nlohmann::json to_json(const SGExample& ex) {
  return {{"id", ex.id},
          {"pair_id", ex.pair_id},
          {"input_text", ex.input_text},
          {"target_text", ex.target_text},
          {"fault_lines", ex.fault_lines},
          {"n_lines", ex.n_lines}};
}

inline SGExample sg_example_from_json(const nlohmann::json& obj) {
  SGExample ex;
  ex.id = obj.at("id").get<std::string>();
  ex.pair_id = obj.value("pair_id", ex.id);
  ex.input_text = obj.at("input_text").get<std::string>();
  ex.target_text = obj.at("target_text").get<std::string>();
  ex.fault_lines = obj.at("fault_lines").get<LineSet>();
  ex.n_lines = obj.at("n_lines").get<std::size_t>();
  return ex;
}

inline void write_sg_dataset(std::ostream& out, const std::vector<SGExample>& examples) {
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
}

inline std::vector<SGExample> read_sg_dataset(std::istream& in) {
  std::vector<SGExample> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (text::trim(raw).empty()) continue;
    try {
      out.push_back(sg_example_from_json(nlohmann::json::parse(raw)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MalformedRecord,
                  "SG record at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<SGExample> read_sg_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return read_sg_dataset(in);
}

inline nlohmann::json to_json(const PatchCandidate& c) {
  nlohmann::json obj{{"text", c.raw_text}, {"log_prob", c.log_prob}};
  if (c.line_number) obj["line_number"] = *c.line_number;
  return obj;
}

}  // namespace flseq

#endif  // FLSEQ_SGCODEC_HPP
