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

#ifndef FLSEQ_ERROR_HPP
#define FLSEQ_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace flseq {

enum class ErrorKind {
  // corpus
  EmptySource,
  NoDifference,
  NoApplicableSite,
  MalformedRecord,
  Io,
  // sgcodec
  OutOfRange,
  // model
  TooLong,
  EmptyTarget,
  NoTrainableExamples,
  NonFiniteLoss,
  ContextOverflow,
  InvalidConfig,
  Transport,
  Protocol,
  ServerError,
  // beam
  NoHypotheses,
  // baseline
  NoFailingTests,
  NoMutants,
  InvalidMatrix,
  EmptyResult,
  // eval
  MixedTotals,
  TooFew,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptySource: return "EmptySource";
    case ErrorKind::NoDifference: return "NoDifference";
    case ErrorKind::NoApplicableSite: return "NoApplicableSite";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::Io: return "Io";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::TooLong: return "TooLong";
    case ErrorKind::EmptyTarget: return "EmptyTarget";
    case ErrorKind::NoTrainableExamples: return "NoTrainableExamples";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::ContextOverflow: return "ContextOverflow";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Transport: return "Transport";
    case ErrorKind::Protocol: return "Protocol";
    case ErrorKind::ServerError: return "ServerError";
    case ErrorKind::NoHypotheses: return "NoHypotheses";
    case ErrorKind::NoFailingTests: return "NoFailingTests";
    case ErrorKind::NoMutants: return "NoMutants";
    case ErrorKind::InvalidMatrix: return "InvalidMatrix";
    case ErrorKind::EmptyResult: return "EmptyResult";
    case ErrorKind::MixedTotals: return "MixedTotals";
    case ErrorKind::TooFew: return "TooFew";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace flseq

#endif  // FLSEQ_ERROR_HPP
