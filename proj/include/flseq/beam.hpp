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

#ifndef FLSEQ_BEAM_HPP
#define FLSEQ_BEAM_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "flseq/error.hpp"
#include "flseq/model.hpp"
#include "flseq/sgcodec.hpp"

namespace flseq {

struct BeamConfig {
  std::size_t beam_width = 10;
  std::size_t num_return = 5;
  std::size_t max_new_tokens = 64;

  void validate() const {
    if (beam_width == 0 || num_return == 0 || max_new_tokens == 0)
      throw Error(ErrorKind::InvalidConfig, "beam_width, num_return and max_new_tokens must be positive");
    if (num_return > beam_width) throw Error(ErrorKind::InvalidConfig, "num_return exceeds beam_width");
  }
};

/// A decoded continuation. `tokens` excludes the prompt and ends with EOS
/// when the hypothesis terminated that way.
struct Hypothesis {
  std::vector<TokenId> tokens;
  double score = 0.0;
};

/// Ranking order used everywhere: higher score first, then the
/// lexicographically smaller token sequence.
inline bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

/// Beam search with raw (unnormalized) log-probability sums.
///
/// Each step expands every live hypothesis by every token of finite
/// log-probability and keeps the `beam_width` best expansions overall.
/// Expansions ending in EOS leave the beam as finished hypotheses; live ones
/// are finished when they reach `max_new_tokens` (or the context fills).
/// Because scores never increase, decoding stops as soon as no live
/// hypothesis can outrank the current top `num_return` finished ones.
template <NextTokenBackend Backend>
std::vector<Hypothesis> beam_decode(Backend& backend, std::span<const TokenId> prefix,
                                    const BeamConfig& config) {
  config.validate();
  const std::size_t context = backend.context_length();
  if (prefix.size() + 1 > context)
    throw Error(ErrorKind::ContextOverflow, "prompt of " + std::to_string(prefix.size()) +
                                                " tokens leaves no room in a context of " +
                                                std::to_string(context));
  const std::size_t max_new = std::min(config.max_new_tokens, context - prefix.size());

  std::vector<Hypothesis> live{{}};
  std::vector<Hypothesis> finished;
  std::vector<TokenId> buffer(prefix.begin(), prefix.end());

  auto top_finished_bound = [&]() -> const Hypothesis* {
    if (finished.size() < config.num_return) return nullptr;
    std::nth_element(finished.begin(), finished.begin() + static_cast<std::ptrdiff_t>(config.num_return - 1),
                     finished.end(), hypothesis_before);
    return &finished[config.num_return - 1];
  };

  for (std::size_t step = 0; step < max_new && !live.empty(); ++step) {
    std::vector<Hypothesis> expansions;
    for (const auto& hyp : live) {
      buffer.resize(prefix.size());
      buffer.insert(buffer.end(), hyp.tokens.begin(), hyp.tokens.end());
      const auto dist = backend.next_token(std::span<const TokenId>(buffer));
      for (std::size_t t = 0; t < dist.log_probs.size(); ++t) {
        const double lp = dist.log_probs[t];
        if (!std::isfinite(lp)) continue;
        Hypothesis next{hyp.tokens, hyp.score + lp};
        next.tokens.push_back(static_cast<TokenId>(t));
        expansions.push_back(std::move(next));
      }
    }
    const std::size_t keep = std::min(config.beam_width, expansions.size());
    std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep),
                      expansions.end(), hypothesis_before);
    expansions.resize(keep);

    live.clear();
    for (auto& hyp : expansions) {
      if (hyp.tokens.back() == vocab::kEos || step + 1 == max_new)
        finished.push_back(std::move(hyp));
      else
        live.push_back(std::move(hyp));
    }
    if (const auto* bound = top_finished_bound(); bound && !live.empty()) {
      const bool any_can_compete = std::any_of(live.begin(), live.end(), [&](const Hypothesis& h) {
        return h.score >= bound->score;
      });
      if (!any_can_compete) live.clear();
    }
  }

  if (finished.empty())
    throw Error(ErrorKind::NoHypotheses, "backend assigned zero probability to every continuation");
  std::sort(finished.begin(), finished.end(), hypothesis_before);
  if (finished.size() > config.num_return) finished.resize(config.num_return);
  return finished;
}

/// Best candidate per line number (unparsed candidates keyed by raw text),
/// sorted by log-probability descending. Input order breaks score ties.
inline std::vector<PatchCandidate> dedup_candidates(std::vector<PatchCandidate> candidates) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const PatchCandidate& a, const PatchCandidate& b) { return a.log_prob > b.log_prob; });
  std::set<LineNumber> seen_lines;
  std::set<std::string> seen_raw;
  std::vector<PatchCandidate> out;
  for (auto& c : candidates) {
    const bool fresh = c.line_number ? seen_lines.insert(*c.line_number).second
                                     : seen_raw.insert(c.raw_text).second;
    if (fresh) out.push_back(std::move(c));
  }
  return out;
}

/// Decodes from [BOS] input [SEP] and turns every finished hypothesis into a
/// PatchCandidate (EOS and other special tokens dropped).
template <NextTokenBackend Backend>
std::vector<PatchCandidate> generate_patches(Backend& backend, std::string_view input_text,
                                             const BeamConfig& config, bool dedup = true) {
  const auto prompt = encode_prompt(input_text);
  const auto hyps = beam_decode(backend, prompt, config);
  std::vector<PatchCandidate> candidates;
  candidates.reserve(hyps.size());
  for (const auto& h : hyps) candidates.push_back(parse_patch(decode_bytes(h.tokens), h.score));
  if (dedup) return dedup_candidates(std::move(candidates));
  return candidates;
}

}  // namespace flseq

#endif  // FLSEQ_BEAM_HPP
