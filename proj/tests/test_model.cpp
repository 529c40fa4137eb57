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


#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "flseq/model.hpp"
#include "flseq/model_io.hpp"
#include "flseq/tiny_lm.hpp"
#include "oracles.hpp"

namespace {

using flseq::EncodedExample;
using flseq::ErrorKind;
using flseq::SGExample;
using flseq::TinyLM;
using flseq::TinyLMConfig;
using flseq::TokenId;
namespace vocab = flseq::vocab;

SGExample example(std::string input, std::string target, std::string id = "e") {
  return {id, id, std::move(input), std::move(target), {1}, 1};
}

TinyLMConfig small_config(std::uint64_t seed = 5) {
  TinyLMConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.context_len = 48;
  c.seed = seed;
  return c;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const flseq::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an flseq::Error";
  return ErrorKind::Io;
}

TEST(Encode, Layout) {
  const auto enc = flseq::encode_example(example("1\tx", "1\tx"), 512);
  ASSERT_EQ(enc.tokens.size(), 9u);
  EXPECT_EQ(enc.tokens.front(), vocab::kBos);
  EXPECT_EQ(enc.tokens[4], vocab::kSep);
  EXPECT_EQ(enc.tokens.back(), vocab::kEos);
  EXPECT_EQ(enc.tokens[1], '1');
  EXPECT_EQ(enc.tokens[2], '\t');
  // Positions 4..7 predict the three target bytes and EOS.
  EXPECT_EQ(enc.loss_mask, (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1, 1, 0}));
}

TEST(Encode, Rejections) {
  EXPECT_EQ(kind_of([] { flseq::encode_example(example("abc", ""), 512); }), ErrorKind::EmptyTarget);
  const auto long_ex = example(std::string(590, 'x'), std::string(10, 'y'));
  try {
    flseq::encode_example(long_ex, 512);
    FAIL();
  } catch (const flseq::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooLong);
    EXPECT_NE(std::string(e.what()).find("603"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("512"), std::string::npos) << e.what();
  }
}

TEST(Encode, BytesRoundTrip) {
  std::string all;
  for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
  std::vector<TokenId> ids;
  flseq::append_bytes(ids, all);
  ids.push_back(vocab::kEos);
  EXPECT_EQ(flseq::decode_bytes(ids), all);
}

TEST(LogSoftmax, NormalizedAndStable) {
  std::vector<double> logits{1000.0, 999.0, -1000.0, 0.0};
  const auto d = flseq::log_softmax(std::span<const double>(logits));
  EXPECT_NEAR(d.total_probability(), 1.0, 1e-12);
  EXPECT_NEAR(d.log_probs[0] - d.log_probs[1], 1.0, 1e-12);
}

TEST(MemorizingOracle, PutsAllMassOnTarget) {
  const auto ex = example("1\ta = b;\n2\treturn a;", "2\treturn a;");
  flseq::MemorizingOracle oracle({ex});
  const auto prompt = flseq::encode_prompt(ex.input_text);
  const auto d = oracle.next_token(prompt);
  EXPECT_EQ(d.log_probs['2'], 0.0);
  EXPECT_NEAR(d.total_probability(), 1.0, 1e-12);

  // Greedy decoding reproduces the target.
  const auto g = oracle::greedy(oracle, prompt, 64);
  EXPECT_EQ(flseq::decode_bytes(g.tokens), ex.target_text);
  EXPECT_EQ(g.tokens.back(), vocab::kEos);
  EXPECT_EQ(g.score, 0.0);
}

TEST(MemorizingOracle, SplitsMassByCount) {
  flseq::MemorizingOracle oracle({example("in", "1\ta", "x"), example("in", "2\tb", "y"), example("in", "2\tb", "z")});
  const auto d = oracle.next_token(flseq::encode_prompt("in"));
  EXPECT_NEAR(std::exp(d.log_probs['1']), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(std::exp(d.log_probs['2']), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(d.total_probability(), 1.0, 1e-12);
}

TEST(MemorizingOracle, OffCorpusEndsImmediately) {
  flseq::MemorizingOracle oracle({example("in", "1\ta")});
  const auto d = oracle.next_token(flseq::encode_prompt("other"));
  EXPECT_EQ(d.log_probs[vocab::kEos], 0.0);
  EXPECT_NEAR(d.total_probability(), 1.0, 1e-12);
}

TEST(MemorizingOracle, GreedyReproducesEveryTarget) {
  std::vector<SGExample> exs;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto src = flseq::synthesize_function(s, 5);
    const auto k = static_cast<int>(1 + s % 7);
    exs.push_back(example(flseq::add_line_numbers(src), flseq::make_target(src, k), "s" + std::to_string(s)));
  }
  flseq::MemorizingOracle oracle(exs);
  for (const auto& ex : exs) {
    const auto g = oracle::greedy(oracle, flseq::encode_prompt(ex.input_text), 200);
    EXPECT_EQ(flseq::decode_bytes(g.tokens), ex.target_text) << ex.id;
  }
}

TEST(MemorizingOracle, ContextOverflow) {
  flseq::MemorizingOracle oracle({example("ab", "1\tx")}, 16);
  std::vector<TokenId> prefix(16, 'a');
  EXPECT_EQ(kind_of([&] { oracle.next_token(prefix); }), ErrorKind::ContextOverflow);
}

TEST(TinyLMConfig, Validation) {
  auto c = small_config();
  c.n_heads = 3;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::InvalidConfig);
  EXPECT_THROW((void)nlohmann::json({{"d_model", 8}, {"bogus", 1}}).get<TinyLMConfig>(), flseq::Error);
  const auto parsed = nlohmann::json({{"d_model", 32}, {"epochs", 3}}).get<TinyLMConfig>();
  EXPECT_EQ(parsed.d_model, 32u);
  EXPECT_EQ(parsed.epochs, 3u);
  EXPECT_EQ(parsed.n_heads, 4u);
}

TEST(TinyLM, DistributionIsNormalized) {
  TinyLM<float> model(small_config());
  std::vector<TokenId> prefix = flseq::encode_prompt("1\tint x = 1;");
  const auto d = model.next_token(prefix);
  ASSERT_EQ(d.log_probs.size(), vocab::kSize);
  for (double v : d.log_probs) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(d.total_probability(), 1.0, 1e-6);
}

TEST(TinyLM, ContextOverflow) {
  TinyLM<float> model(small_config());
  std::vector<TokenId> prefix(48, 'a');
  EXPECT_EQ(kind_of([&] { model.next_token(prefix); }), ErrorKind::ContextOverflow);
}

// Incremental decoding with the KV cache must agree with a full forward pass.
TEST(TinyLM, IncrementalMatchesFullForward) {
  auto cfg = small_config(9);
  TinyLM<double> model(cfg);
  const auto tokens = flseq::encode_prompt("1\tif (a < b) {\n2\t  x++;");
  ASSERT_LT(tokens.size(), cfg.context_len);
  const auto full = model.logits(tokens);
  auto state = model.start_state();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto row = model.step(state, tokens[i]);
    for (Eigen::Index v = 0; v < row.size(); ++v)
      ASSERT_NEAR(row(v), full(static_cast<Eigen::Index>(i), v), 1e-10) << "pos " << i;
  }

  flseq::TinyLMSession<double> session(model);
  const auto a = session.next_token(tokens);
  const auto b = model.next_token(tokens);
  for (std::size_t v = 0; v < a.log_probs.size(); ++v) ASSERT_NEAR(a.log_probs[v], b.log_probs[v], 1e-10);
}

// Central differences in double precision on 20 parameters drawn from the
// tensors that influence the loss of the batch.
TEST(TinyLM, GradientCheck) {
  auto cfg = small_config(17);
  TinyLM<double> base(cfg);
  std::mt19937_64 gen(99);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<double> params(base.params().begin(), base.params().end());
  for (auto& p : params) p += noise(gen);
  TinyLM<double> model(cfg, params);

  std::vector<EncodedExample> batch_data{flseq::encode_example(example("1\ta+b", "1\ta-b"), cfg.context_len),
                                         flseq::encode_example(example("xy\nz", "2\tz;"), cfg.context_len)};
  std::vector<const EncodedExample*> batch{&batch_data[0], &batch_data[1]};
  std::set<TokenId> used_tokens;
  std::size_t max_len = 0;
  for (const auto& e : batch_data) {
    used_tokens.insert(e.tokens.begin(), e.tokens.end());
    max_len = std::max(max_len, e.tokens.size());
  }

  std::vector<double> grad;
  model.loss_and_grad(batch, &grad);
  const auto& layout = model.layout();
  // Key biases have an identically zero gradient (softmax shift invariance).
  auto is_key_bias = [&](const auto& t, std::size_t col) {
    return t.name.ends_with("b_qkv") && col >= cfg.d_model && col < 2 * cfg.d_model;
  };
  std::vector<std::size_t> picks;
  for (const auto& t : layout.tensors)
    for (std::size_t col = 0; col < t.cols; ++col)
      if (is_key_bias(t, col)) {
        EXPECT_LT(std::fabs(grad[t.offset + col]), 1e-12);
      }
  while (picks.size() < 20) {
    const auto& t = layout.tensors[gen() % layout.tensors.size()];
    std::size_t row = gen() % t.rows;
    if (t.name == "tok_emb") row = static_cast<std::size_t>(*std::next(used_tokens.begin(), gen() % used_tokens.size()));
    if (t.name == "pos_emb") row = gen() % max_len;
    const std::size_t col = gen() % t.cols;
    if (!is_key_bias(t, col)) picks.push_back(t.offset + row * t.cols + col);
  }
  constexpr double h = 1e-4;
  for (auto idx : picks) {
    auto plus = params, minus = params;
    plus[idx] += h;
    minus[idx] -= h;
    const double numeric =
        (TinyLM<double>(cfg, plus).loss(batch) - TinyLM<double>(cfg, minus).loss(batch)) / (2 * h);
    const double rel = std::fabs(grad[idx] - numeric) / std::max({std::fabs(grad[idx]), std::fabs(numeric), 1e-8});
    EXPECT_LT(rel, 1e-4) << "param " << idx << " analytic " << grad[idx] << " numeric " << numeric;
  }
}

TEST(TinyLM, GeluDerivative) {
  for (double x = -4; x <= 4; x += 0.37) {
    const double numeric = (TinyLM<double>::gelu(x + 1e-6) - TinyLM<double>::gelu(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(TinyLM<double>::gelu_grad(x), numeric, 1e-8);
  }
}

std::vector<SGExample> toy_corpus(std::size_t n) {
  std::vector<SGExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = "a" + std::to_string(i) + "\nb\nc";
    out.push_back(example(flseq::add_line_numbers(src), flseq::make_target(src, 1 + static_cast<int>(i % 3)),
                          "t" + std::to_string(i)));
  }
  return out;
}

TEST(TinyLMTrain, DeterministicAndDecreasing) {
  auto cfg = small_config(3);
  cfg.epochs = 8;
  cfg.learning_rate = 3e-3;
  const auto corpus = toy_corpus(6);
  const auto a = flseq::tiny_lm_train(corpus, cfg);
  const auto b = flseq::tiny_lm_train(corpus, cfg);
  ASSERT_EQ(a.epoch_losses.size(), 8u);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_TRUE(std::equal(a.model.params().begin(), a.model.params().end(), b.model.params().begin()));
  EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());
  for (double l : a.epoch_losses) EXPECT_TRUE(std::isfinite(l));
}

TEST(TinyLMTrain, RejectsTooLongAndNothingTrainable) {
  auto cfg = small_config();
  auto corpus = toy_corpus(2);
  corpus.push_back(example(std::string(100, 'q'), "1\tq"));
  EXPECT_EQ(flseq::tiny_lm_train(corpus, cfg).rejected, 1u);
  EXPECT_EQ(kind_of([&] { flseq::tiny_lm_train({example(std::string(100, 'q'), "1\tq")}, cfg); }),
            ErrorKind::NoTrainableExamples);
}

TEST(TinyLMTrain, NonFiniteLossIsReported) {
  auto cfg = small_config();
  cfg.epochs = 1;
  cfg.learning_rate = 1e30;
  cfg.grad_clip = 0.0;
  try {
    flseq::tiny_lm_train(toy_corpus(6), cfg);
    FAIL() << "training with a huge step stayed finite";
  } catch (const flseq::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

// Same seed, two processes, bit-identical distribution.
TEST(TinyLM, CrossProcessDeterminism) {
  const auto prefix = flseq::encode_prompt("1\treturn a;");
  auto compute = [&] {
    TinyLM<float> model(small_config(1234));
    return model.next_token(prefix).log_probs;
  };
  int fds[2];
  ASSERT_EQ(pipe(fds), 0);
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    close(fds[0]);
    const auto lp = compute();
    const auto bytes = lp.size() * sizeof(double);
    const bool ok = write(fds[1], lp.data(), bytes) == static_cast<ssize_t>(bytes);
    close(fds[1]);
    _exit(ok ? 0 : 1);
  }
  close(fds[1]);
  std::vector<double> child(vocab::kSize);
  std::size_t got = 0;
  auto* dst = reinterpret_cast<char*>(child.data());
  while (got < child.size() * sizeof(double)) {
    const auto n = read(fds[0], dst + got, child.size() * sizeof(double) - got);
    if (n <= 0) break;
    got += static_cast<std::size_t>(n);
  }
  close(fds[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0);
  ASSERT_EQ(got, child.size() * sizeof(double));
  const auto mine = compute();
  EXPECT_EQ(std::memcmp(mine.data(), child.data(), got), 0);
}

TEST(ModelIo, TinyLMRoundTrip) {
  TinyLM<float> model(small_config(77));
  std::stringstream io(std::ios::in | std::ios::out | std::ios::binary);
  flseq::save_model(io, model);
  const auto loaded = flseq::load_model(io);
  const auto* back = std::get_if<TinyLM<float>>(&loaded);
  ASSERT_NE(back, nullptr);
  EXPECT_EQ(back->config().d_model, 16u);
  EXPECT_TRUE(std::equal(model.params().begin(), model.params().end(), back->params().begin(),
                         back->params().end()));
}

TEST(ModelIo, MemorizeRoundTrip) {
  flseq::MemorizingOracle oracle(toy_corpus(4));
  std::stringstream io;
  flseq::save_model(io, oracle);
  const auto loaded = flseq::load_model(io);
  const auto* back = std::get_if<flseq::MemorizingOracle>(&loaded);
  ASSERT_NE(back, nullptr);
  EXPECT_EQ(back->examples().size(), 4u);
}

TEST(ModelIo, TruncatedAndForeignFiles) {
  TinyLM<float> model(small_config());
  std::stringstream io;
  flseq::save_model(io, model);
  auto bytes = io.str();
  bytes.resize(bytes.size() - 3);
  std::istringstream truncated(bytes);
  EXPECT_EQ(kind_of([&] { flseq::load_model(truncated); }), ErrorKind::MalformedRecord);
  std::istringstream foreign("{\"format\":\"other\"}\n");
  EXPECT_EQ(kind_of([&] { flseq::load_model(foreign); }), ErrorKind::MalformedRecord);
}

}  // namespace
