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

#ifndef FLSEQ_FLSEQ_HPP
#define FLSEQ_FLSEQ_HPP

#include "flseq/baseline.hpp"
#include "flseq/beam.hpp"
#include "flseq/corpus.hpp"
#include "flseq/error.hpp"
#include "flseq/eval.hpp"
#include "flseq/model.hpp"
#include "flseq/model_io.hpp"
#include "flseq/pipeline.hpp"
#include "flseq/remote.hpp"
#include "flseq/sgcodec.hpp"
#include "flseq/tiny_lm.hpp"

#endif  // FLSEQ_FLSEQ_HPP
