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

// Shared vocabulary, training-sequence layout and the backend concept that
// the beam decoder is written against. The memorizing oracle lives here too;
// the transformer backend is in tiny_lm.hpp and the HTTP client in remote.hpp.

#ifndef FLSEQ_MODEL_HPP
#define FLSEQ_MODEL_HPP

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flseq/error.hpp"
#include "flseq/sgcodec.hpp"

namespace flseq {

using TokenId = std::int32_t;

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by three specials.
namespace vocab {
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kSep = 257;
inline constexpr TokenId kEos = 258;
inline constexpr std::size_t kSize = 259;

inline bool is_byte(TokenId t) { return t >= 0 && t < 256; }
}  // namespace vocab

struct NextTokenDistribution {
  /// One log-probability per token id. Impossible tokens carry -inf.
  std::vector<double> log_probs;

  double total_probability() const {
    double s = 0.0;
    for (double lp : log_probs) s += std::exp(lp);
    return s;
  }
};

/// Numerically stable log-softmax, accumulated in double.
template <typename T>
NextTokenDistribution log_softmax(std::span<const T> logits) {
  double max = -std::numeric_limits<double>::infinity();
  for (T v : logits) max = std::max(max, static_cast<double>(v));
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - max);
  const double log_z = max + std::log(sum);
  NextTokenDistribution d;
  d.log_probs.reserve(logits.size());
  for (T v : logits) d.log_probs.push_back(static_cast<double>(v) - log_z);
  return d;
}

/// Anything that maps a token prefix to a next-token distribution.
template <typename B>
concept NextTokenBackend = requires(B& b, std::span<const TokenId> prefix) {
  { b.vocab_size() } -> std::convertible_to<std::size_t>;
  { b.context_length() } -> std::convertible_to<std::size_t>;
  { b.next_token(prefix) } -> std::same_as<NextTokenDistribution>;
};

inline void append_bytes(std::vector<TokenId>& out, std::string_view s) {
  for (unsigned char c : s) out.push_back(static_cast<TokenId>(c));
}

/// [BOS] input [SEP]: the prompt every backend decodes from.
inline std::vector<TokenId> encode_prompt(std::string_view input_text) {
  std::vector<TokenId> ids;
  ids.reserve(input_text.size() + 2);
  ids.push_back(vocab::kBos);
  append_bytes(ids, input_text);
  ids.push_back(vocab::kSep);
  return ids;
}

struct EncodedExample {
  std::vector<TokenId> tokens;
  /// loss_mask[i] != 0 when the prediction made at position i (of token i+1)
  /// is trained on. Covers the target bytes and the final EOS.
  std::vector<std::uint8_t> loss_mask;
};

/// Layout: [BOS] input [SEP] target [EOS].
inline EncodedExample encode_example(const SGExample& example, std::size_t context_len) {
  if (example.target_text.empty())
    throw Error(ErrorKind::EmptyTarget, "example '" + example.id + "' has an empty target");
  const std::size_t required = example.input_text.size() + example.target_text.size() + 3;
  if (required > context_len)
    throw Error(ErrorKind::TooLong, "example '" + example.id + "' needs " + std::to_string(required) +
                                        " tokens, context holds " + std::to_string(context_len));
  EncodedExample enc;
  enc.tokens = encode_prompt(example.input_text);
  const std::size_t sep = enc.tokens.size() - 1;
  append_bytes(enc.tokens, example.target_text);
  enc.tokens.push_back(vocab::kEos);
  enc.loss_mask.assign(enc.tokens.size(), 0);
  for (std::size_t i = sep; i + 1 < enc.tokens.size(); ++i) enc.loss_mask[i] = 1;
  return enc;
}

inline std::string decode_bytes(std::span<const TokenId> ids) {
  std::string out;
  for (TokenId t : ids)
    if (vocab::is_byte(t)) out.push_back(static_cast<char>(t));
  return out;
}

/// Replays its training sequences verbatim. Given a prefix of some training
/// sequence it puts all mass on the continuations seen after that prefix
/// (split by frequency); off-corpus prefixes get EOS with probability 1.
class MemorizingOracle {
 public:
  explicit MemorizingOracle(std::size_t context_len = std::numeric_limits<std::size_t>::max())
      : context_len_(context_len), nodes_(1) {}

  MemorizingOracle(const std::vector<SGExample>& examples,
                   std::size_t context_len = std::numeric_limits<std::size_t>::max())
      : MemorizingOracle(context_len) {
    for (const auto& ex : examples) add(ex);
  }

  void add(const SGExample& example) {
    const auto enc = encode_example(example, context_len_);
    std::uint32_t node = 0;
    for (TokenId t : enc.tokens) {
      ++nodes_[node].count;
      auto it = nodes_[node].children.find(t);
      if (it == nodes_[node].children.end()) {
        nodes_.push_back({});
        it = nodes_[node].children.emplace(t, static_cast<std::uint32_t>(nodes_.size() - 1)).first;
      }
      node = it->second;
    }
    ++nodes_[node].count;
    examples_.push_back(example);
  }

  const std::vector<SGExample>& examples() const { return examples_; }

  std::size_t vocab_size() const { return vocab::kSize; }
  std::size_t context_length() const { return context_len_; }

  NextTokenDistribution next_token(std::span<const TokenId> prefix) const {
    if (prefix.size() >= context_len_)
      throw Error(ErrorKind::ContextOverflow, "prefix of " + std::to_string(prefix.size()) +
                                                  " tokens fills the context");
    NextTokenDistribution d;
    d.log_probs.assign(vocab::kSize, -std::numeric_limits<double>::infinity());
    std::uint32_t node = 0;
    for (TokenId t : prefix) {
      const auto it = nodes_[node].children.find(t);
      if (it == nodes_[node].children.end()) {
        d.log_probs[vocab::kEos] = 0.0;
        return d;
      }
      node = it->second;
    }
    const auto& children = nodes_[node].children;
    if (children.empty()) {
      d.log_probs[vocab::kEos] = 0.0;
      return d;
    }
    std::uint64_t total = 0;
    for (const auto& [tok, child] : children) total += nodes_[child].count;
    for (const auto& [tok, child] : children)
      d.log_probs[static_cast<std::size_t>(tok)] =
          nodes_[child].count == total ? 0.0
                                       : std::log(static_cast<double>(nodes_[child].count) /
                                                  static_cast<double>(total));
    return d;
  }

 private:
  struct Node {
    std::map<TokenId, std::uint32_t> children;
    std::uint32_t count = 0;
  };

  std::size_t context_len_;
  std::vector<Node> nodes_;
  std::vector<SGExample> examples_;
};

}  // namespace flseq

#endif  // FLSEQ_MODEL_HPP
