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

// Model files: a single JSON header line followed by a kind-specific body.
//   tiny-lm:  param_count little-endian float32 values
//   memorize: one SG record per line

#ifndef FLSEQ_MODEL_IO_HPP
#define FLSEQ_MODEL_IO_HPP

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "flseq/error.hpp"
#include "flseq/model.hpp"
#include "flseq/tiny_lm.hpp"
#include "json.hpp"

namespace flseq {

using LoadedModel = std::variant<MemorizingOracle, TinyLM<float>>;

inline constexpr const char* kModelFormat = "flseq-model";

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

}  // namespace detail

inline void save_model(std::ostream& out, const TinyLM<float>& model) {
  nlohmann::json header{{"format", kModelFormat},
                        {"version", 1},
                        {"kind", "tiny-lm"},
                        {"config", model.config()},
                        {"param_count", model.params().size()},
                        {"dtype", "f32le"}};
  out << header.dump() << '\n';
  for (float p : model.params()) {
    std::uint32_t bits;
    std::memcpy(&bits, &p, sizeof bits);
    bits = detail::to_le(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

inline void save_model(std::ostream& out, const MemorizingOracle& model) {
  nlohmann::json header{{"format", kModelFormat},
                        {"version", 1},
                        {"kind", "memorize"},
                        {"examples", model.examples().size()}};
  out << header.dump() << '\n';
  write_sg_dataset(out, model.examples());
}

inline LoadedModel load_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::MalformedRecord, "model file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::MalformedRecord, std::string("model header: ") + e.what());
  }
  if (header.value("format", "") != kModelFormat)
    throw Error(ErrorKind::MalformedRecord, "not a flseq model file");
  const auto kind = header.value("kind", "");
  if (kind == "memorize") {
    return MemorizingOracle(read_sg_dataset(in));
  }
  if (kind == "tiny-lm") {
    const auto config = header.at("config").get<TinyLMConfig>();
    const auto count = header.at("param_count").get<std::size_t>();
    std::vector<float> params(count);
    for (auto& p : params) {
      std::uint32_t bits;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
        throw Error(ErrorKind::MalformedRecord, "model file truncated");
      bits = detail::to_le(bits);
      std::memcpy(&p, &bits, sizeof p);
    }
    return TinyLM<float>(config, std::move(params));
  }
  throw Error(ErrorKind::MalformedRecord, "unknown model kind '" + kind + "'");
}

inline LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return load_model(in);
}

}  // namespace flseq

#endif  // FLSEQ_MODEL_IO_HPP
