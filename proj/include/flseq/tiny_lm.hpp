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

// A small decoder-only transformer over the byte vocabulary, trained from
// scratch with a hand-written backward pass.
//
// Architecture per layer (pre-norm):
//   x += Attn(LN1(x)) ; x += FFN(LN2(x))     FFN = W2 gelu(W1 . + b1) + b2
// followed by a final LayerNorm and an untied output projection. All
// parameters live in one flat buffer so the optimizer, serialization and the
// gradient checker can treat them uniformly.

#ifndef FLSEQ_TINY_LM_HPP
#define FLSEQ_TINY_LM_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "flseq/error.hpp"
#include "flseq/model.hpp"
#include "flseq/rng.hpp"
#include "json.hpp"

namespace flseq {

struct TinyLMConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t context_len = 512;
  double learning_rate = 3e-4;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  /// Examples per optimizer step.
  std::size_t batch_size = 1;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || context_len == 0 || epochs == 0 ||
        batch_size == 0)
      fail("d_model, n_heads, n_layers, context_len, epochs and batch_size must be positive");
    if (d_model % n_heads != 0) fail("n_heads must divide d_model");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (grad_clip < 0.0) fail("grad_clip must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const TinyLMConfig& c) {
  j = {{"d_model", c.d_model},       {"n_heads", c.n_heads},
       {"n_layers", c.n_layers},     {"context_len", c.context_len},
       {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
       {"seed", c.seed},             {"batch_size", c.batch_size},
       {"grad_clip", c.grad_clip}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TinyLMConfig& c) {
  static const char* kKeys[] = {"d_model", "n_heads", "n_layers", "context_len", "learning_rate",
                                "epochs",  "seed",    "batch_size", "grad_clip"};
  for (const auto& [key, value] : j.items())
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) ==
        std::end(kKeys))
      throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.context_len = j.value("context_len", c.context_len);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
}

/// Offsets of every tensor inside the flat parameter buffer.
struct ParamLayout {
  struct Tensor {
    std::string name;
    std::size_t offset;
    std::size_t rows;
    std::size_t cols;
    std::size_t size() const { return rows * cols; }
  };
  struct Layer {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2;
  };

  std::size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0, total = 0;
  std::vector<Layer> layers;
  std::vector<Tensor> tensors;

  explicit ParamLayout(const TinyLMConfig& c) {
    const std::size_t d = c.d_model, v = vocab::kSize, f = 4 * c.d_model;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
      tensors.push_back({std::move(name), total, rows, cols});
      total += rows * cols;
      return tensors.back().offset;
    };
    tok_emb = add("tok_emb", v, d);
    pos_emb = add("pos_emb", c.context_len, d);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const auto p = "layer" + std::to_string(l) + ".";
      Layer L{};
      L.ln1_g = add(p + "ln1_g", 1, d);
      L.ln1_b = add(p + "ln1_b", 1, d);
      L.w_qkv = add(p + "w_qkv", d, 3 * d);
      L.b_qkv = add(p + "b_qkv", 1, 3 * d);
      L.w_o = add(p + "w_o", d, d);
      L.b_o = add(p + "b_o", 1, d);
      L.ln2_g = add(p + "ln2_g", 1, d);
      L.ln2_b = add(p + "ln2_b", 1, d);
      L.w_ff1 = add(p + "w_ff1", d, f);
      L.b_ff1 = add(p + "b_ff1", 1, f);
      L.w_ff2 = add(p + "w_ff2", f, d);
      L.b_ff2 = add(p + "b_ff2", 1, d);
      layers.push_back(L);
    }
    lnf_g = add("lnf_g", 1, d);
    lnf_b = add("lnf_b", 1, d);
    w_out = add("w_out", d, v);
    b_out = add("b_out", 1, v);
  }
};

template <typename T>
class TinyLM {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;
  using MapRow = Eigen::Map<Row>;
  using CMapRow = Eigen::Map<const Row>;

  /// Seeded initialization: N(0, 0.02) for weights and embeddings, residual
  /// output projections scaled down by sqrt(2 * n_layers), unit LayerNorm
  /// gains, zero biases.
  explicit TinyLM(const TinyLMConfig& config) : config_(config), layout_(config) {
    config_.validate();
    params_.assign(layout_.total, T(0));
    Rng rng(config_.seed);
    const double residual_std = 0.02 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
    auto fill_normal = [&](std::size_t offset, std::size_t count, double stddev) {
      for (std::size_t i = 0; i < count; ++i) params_[offset + i] = static_cast<T>(rng.normal(0.0, stddev));
    };
    auto fill_ones = [&](std::size_t offset) {
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(offset), config_.d_model, T(1));
    };
    const std::size_t d = config_.d_model, v = vocab::kSize;
    fill_normal(layout_.tok_emb, v * d, 0.02);
    fill_normal(layout_.pos_emb, config_.context_len * d, 0.02);
    for (const auto& L : layout_.layers) {
      fill_ones(L.ln1_g);
      fill_ones(L.ln2_g);
      fill_normal(L.w_qkv, d * 3 * d, 0.02);
      fill_normal(L.w_o, d * d, residual_std);
      fill_normal(L.w_ff1, d * 4 * d, 0.02);
      fill_normal(L.w_ff2, 4 * d * d, residual_std);
    }
    fill_ones(layout_.lnf_g);
    fill_normal(layout_.w_out, d * v, 0.02);
  }

  TinyLM(const TinyLMConfig& config, std::vector<T> params) : TinyLM(config) {
    if (params.size() != layout_.total)
      throw Error(ErrorKind::InvalidConfig, "parameter count " + std::to_string(params.size()) +
                                                " does not match config (" +
                                                std::to_string(layout_.total) + ")");
    params_ = std::move(params);
  }

  const TinyLMConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const T> params() const { return params_; }
  std::span<T> mutable_params() { return params_; }

  std::size_t vocab_size() const { return vocab::kSize; }
  std::size_t context_length() const { return config_.context_len; }

  /// Mean cross-entropy over the masked positions of the batch. When `grad`
  /// is non-null it is overwritten with d(loss)/d(params).
  T loss_and_grad(std::span<const EncodedExample* const> batch, std::vector<T>* grad) const {
    std::size_t masked = 0;
    for (const auto* ex : batch)
      for (auto m : ex->loss_mask) masked += m != 0;
    if (grad) grad->assign(layout_.total, T(0));
    if (masked == 0) return T(0);
    const T inv_masked = T(1) / static_cast<T>(masked);
    T total = T(0);
    for (const auto* ex : batch) {
      if (ex->tokens.size() > config_.context_len)
        throw Error(ErrorKind::ContextOverflow, "sequence longer than context");
      SeqCache cache;
      forward(ex->tokens, cache);
      const auto L = static_cast<Eigen::Index>(ex->tokens.size());
      Mat dlogits = Mat::Zero(L, static_cast<Eigen::Index>(vocab::kSize));
      for (Eigen::Index i = 0; i + 1 < L; ++i) {
        if (!ex->loss_mask[static_cast<std::size_t>(i)]) continue;
        const auto row = cache.logits.row(i);
        const T max = row.maxCoeff();
        const T log_z = max + std::log((row.array() - max).exp().sum());
        const auto target = ex->tokens[static_cast<std::size_t>(i + 1)];
        total -= row(target) - log_z;
        if (grad) {
          dlogits.row(i) = (row.array() - log_z).exp() * inv_masked;
          dlogits(i, target) -= inv_masked;
        }
      }
      if (grad) backward(ex->tokens, cache, dlogits, *grad);
    }
    return total * inv_masked;
  }

  T loss(std::span<const EncodedExample* const> batch) const { return loss_and_grad(batch, nullptr); }

  /// Logits at every position of `tokens`.
  Mat logits(std::span<const TokenId> tokens) const {
    SeqCache cache;
    forward(tokens, cache);
    return cache.logits;
  }

  /// Stateless inference: full forward over the prefix.
  NextTokenDistribution next_token(std::span<const TokenId> prefix) const {
    check_prefix(prefix);
    SeqCache cache;
    forward(prefix, cache, /*last_row_only=*/true);
    const auto last = cache.logits.row(cache.logits.rows() - 1);
    return log_softmax(std::span<const T>(last.data(), static_cast<std::size_t>(last.size())));
  }

  /// Per-layer keys and values of every position processed so far.
  struct KvState {
    std::vector<std::vector<T>> keys, values;  // [layer][pos * d + c]
    std::size_t length = 0;
  };

  KvState start_state() const {
    KvState s;
    s.keys.resize(config_.n_layers);
    s.values.resize(config_.n_layers);
    return s;
  }

  /// Feeds one token at position `state.length`, returning the logits for the
  /// next position.
  Row step(KvState& state, TokenId token) const {
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto dh = d / static_cast<Eigen::Index>(config_.n_heads);
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    if (state.length >= config_.context_len)
      throw Error(ErrorKind::ContextOverflow, "KV state is full");
    const auto pos = static_cast<Eigen::Index>(state.length);
    Row x = row_of(layout_.tok_emb, token, d) + row_of(layout_.pos_emb, pos, d);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const auto& P = layout_.layers[l];
      Row a = layer_norm_row(x, P.ln1_g, P.ln1_b);
      Row qkv = a * cmat(P.w_qkv, d, 3 * d) + crow(P.b_qkv, 3 * d);
      auto& keys = state.keys[l];
      auto& values = state.values[l];
      keys.insert(keys.end(), qkv.data() + d, qkv.data() + 2 * d);
      values.insert(values.end(), qkv.data() + 2 * d, qkv.data() + 3 * d);
      const Eigen::Index n = pos + 1;
      CMapMat K(keys.data(), n, d), V(values.data(), n, d);
      Row attn(d);
      for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(config_.n_heads); ++h) {
        Row scores = (K.middleCols(h * dh, dh) * qkv.segment(h * dh, dh).transpose()).transpose() * scale;
        const T max = scores.maxCoeff();
        scores = (scores.array() - max).exp();
        scores /= scores.sum();
        attn.segment(h * dh, dh) = scores * V.middleCols(h * dh, dh);
      }
      x += attn * cmat(P.w_o, d, d) + crow(P.b_o, d);
      Row b = layer_norm_row(x, P.ln2_g, P.ln2_b);
      Row hidden = b * cmat(P.w_ff1, d, 4 * d) + crow(P.b_ff1, 4 * d);
      hidden = hidden.unaryExpr([](T v) { return gelu(v); });
      x += hidden * cmat(P.w_ff2, 4 * d, d) + crow(P.b_ff2, d);
    }
    ++state.length;
    Row xf = layer_norm_row(x, layout_.lnf_g, layout_.lnf_b);
    return xf * cmat(layout_.w_out, d, static_cast<Eigen::Index>(vocab::kSize)) +
           crow(layout_.b_out, static_cast<Eigen::Index>(vocab::kSize));
  }

  static T gelu(T x) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
  }

  static T gelu_grad(T x) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    const T t = std::tanh(c * (x + T(0.044715) * x * x * x));
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * T(0.044715) * x * x);
  }

 private:
  static constexpr double kLnEps = 1e-5;

  struct LayerCache {
    Mat x_in, ln1_xhat, a, qkv, attn, x_mid, ln2_xhat, b, h_pre, h_act;
    std::vector<T> ln1_rstd, ln2_rstd;
    std::vector<Mat> probs;  // per head, L x L
  };
  struct SeqCache {
    std::vector<LayerCache> layers;
    Mat x_final, lnf_xhat, xf, logits;
    std::vector<T> lnf_rstd;
  };

  CMapMat cmat(std::size_t offset, Eigen::Index rows, Eigen::Index cols) const {
    return CMapMat(params_.data() + offset, rows, cols);
  }
  CMapRow crow(std::size_t offset, Eigen::Index n) const { return CMapRow(params_.data() + offset, n); }
  CMapRow row_of(std::size_t offset, Eigen::Index r, Eigen::Index d) const {
    return CMapRow(params_.data() + offset + static_cast<std::size_t>(r * d), d);
  }
  static MapMat gmat(std::vector<T>& g, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
    return MapMat(g.data() + offset, rows, cols);
  }
  static MapRow grow(std::vector<T>& g, std::size_t offset, Eigen::Index n) {
    return MapRow(g.data() + offset, n);
  }

  void check_prefix(std::span<const TokenId> prefix) const {
    if (prefix.empty()) throw Error(ErrorKind::OutOfRange, "empty prefix");
    if (prefix.size() >= config_.context_len)
      throw Error(ErrorKind::ContextOverflow, "prefix of " + std::to_string(prefix.size()) +
                                                  " tokens leaves no room in a context of " +
                                                  std::to_string(config_.context_len));
    for (TokenId t : prefix)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab::kSize)
        throw Error(ErrorKind::OutOfRange, "token id " + std::to_string(t) + " outside vocabulary");
  }

  Row layer_norm_row(const Row& x, std::size_t g, std::size_t b) const {
    const auto d = x.size();
    const T mean = x.mean();
    const T var = (x.array() - mean).square().mean();
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    return ((x.array() - mean) * rstd * crow(g, d).array() + crow(b, d).array()).matrix();
  }

  void layer_norm(const Mat& x, std::size_t g, std::size_t b, Mat& xhat, std::vector<T>& rstd,
                  Mat& y) const {
    const auto d = x.cols();
    xhat.resize(x.rows(), d);
    y.resize(x.rows(), d);
    rstd.resize(static_cast<std::size_t>(x.rows()));
    const auto gain = crow(g, d).array();
    const auto bias = crow(b, d).array();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const T mean = x.row(i).mean();
      const T var = (x.row(i).array() - mean).square().mean();
      const T r = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
      rstd[static_cast<std::size_t>(i)] = r;
      xhat.row(i) = (x.row(i).array() - mean) * r;
      y.row(i) = xhat.row(i).array() * gain + bias;
    }
  }

  /// Returns d(loss)/d(x) and accumulates gain/bias gradients.
  Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const std::vector<T>& rstd, std::size_t g,
                          std::size_t b, std::vector<T>& grad) const {
    const auto d = dy.cols();
    grow(grad, g, d) += (dy.array() * xhat.array()).colwise().sum().matrix();
    grow(grad, b, d) += dy.colwise().sum();
    const auto gain = crow(g, d).array();
    Mat dx(dy.rows(), d);
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const Row dxhat = (dy.row(i).array() * gain).matrix();
      const T mean_dxhat = dxhat.mean();
      const T mean_dxhat_xhat = (dxhat.array() * xhat.row(i).array()).mean();
      dx.row(i) = (dxhat.array() - mean_dxhat - xhat.row(i).array() * mean_dxhat_xhat) *
                  rstd[static_cast<std::size_t>(i)];
    }
    return dx;
  }

  void forward(std::span<const TokenId> tokens, SeqCache& c, bool last_row_only = false) const {
    const auto L = static_cast<Eigen::Index>(tokens.size());
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto H = static_cast<Eigen::Index>(config_.n_heads);
    const auto dh = d / H;
    const auto V = static_cast<Eigen::Index>(vocab::kSize);
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Mat x(L, d);
    for (Eigen::Index t = 0; t < L; ++t)
      x.row(t) = row_of(layout_.tok_emb, tokens[static_cast<std::size_t>(t)], d) +
                 row_of(layout_.pos_emb, t, d);

    c.layers.resize(config_.n_layers);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const auto& P = layout_.layers[l];
      auto& lc = c.layers[l];
      lc.x_in = x;
      layer_norm(x, P.ln1_g, P.ln1_b, lc.ln1_xhat, lc.ln1_rstd, lc.a);
      lc.qkv = lc.a * cmat(P.w_qkv, d, 3 * d);
      lc.qkv.rowwise() += crow(P.b_qkv, 3 * d);
      lc.attn.resize(L, d);
      lc.probs.resize(static_cast<std::size_t>(H));
      for (Eigen::Index h = 0; h < H; ++h) {
        const auto Q = lc.qkv.middleCols(h * dh, dh);
        const auto K = lc.qkv.middleCols(d + h * dh, dh);
        const auto Vh = lc.qkv.middleCols(2 * d + h * dh, dh);
        Mat& p = lc.probs[static_cast<std::size_t>(h)];
        p.noalias() = (Q * K.transpose()) * scale;
        for (Eigen::Index i = 0; i < L; ++i) {
          const T max = p.row(i).head(i + 1).maxCoeff();
          p.row(i).head(i + 1) = (p.row(i).head(i + 1).array() - max).exp();
          p.row(i).head(i + 1) /= p.row(i).head(i + 1).sum();
          p.row(i).tail(L - i - 1).setZero();
        }
        lc.attn.middleCols(h * dh, dh).noalias() = p * Vh;
      }
      lc.x_mid = x + lc.attn * cmat(P.w_o, d, d);
      lc.x_mid.rowwise() += crow(P.b_o, d);
      layer_norm(lc.x_mid, P.ln2_g, P.ln2_b, lc.ln2_xhat, lc.ln2_rstd, lc.b);
      lc.h_pre = lc.b * cmat(P.w_ff1, d, 4 * d);
      lc.h_pre.rowwise() += crow(P.b_ff1, 4 * d);
      lc.h_act = lc.h_pre.unaryExpr([](T v) { return gelu(v); });
      x = lc.x_mid + lc.h_act * cmat(P.w_ff2, 4 * d, d);
      x.rowwise() += crow(P.b_ff2, d);
    }
    c.x_final = x;
    layer_norm(x, layout_.lnf_g, layout_.lnf_b, c.lnf_xhat, c.lnf_rstd, c.xf);
    if (last_row_only) {
      c.logits = c.xf.bottomRows(1) * cmat(layout_.w_out, d, V);
    } else {
      c.logits = c.xf * cmat(layout_.w_out, d, V);
    }
    c.logits.rowwise() += crow(layout_.b_out, V);
  }

  void backward(std::span<const TokenId> tokens, const SeqCache& c, const Mat& dlogits,
                std::vector<T>& grad) const {
    const auto L = static_cast<Eigen::Index>(tokens.size());
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto H = static_cast<Eigen::Index>(config_.n_heads);
    const auto dh = d / H;
    const auto V = static_cast<Eigen::Index>(vocab::kSize);
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    gmat(grad, layout_.w_out, d, V).noalias() += c.xf.transpose() * dlogits;
    grow(grad, layout_.b_out, V) += dlogits.colwise().sum();
    Mat dxf = dlogits * cmat(layout_.w_out, d, V).transpose();
    Mat dx = layer_norm_backward(dxf, c.lnf_xhat, c.lnf_rstd, layout_.lnf_g, layout_.lnf_b, grad);

    for (std::size_t l = config_.n_layers; l-- > 0;) {
      const auto& P = layout_.layers[l];
      const auto& lc = c.layers[l];

      // x_out = x_mid + gelu(b W1 + b1) W2 + b2
      gmat(grad, P.w_ff2, 4 * d, d).noalias() += lc.h_act.transpose() * dx;
      grow(grad, P.b_ff2, d) += dx.colwise().sum();
      Mat dh_pre = dx * cmat(P.w_ff2, 4 * d, d).transpose();
      dh_pre.array() *= lc.h_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
      gmat(grad, P.w_ff1, d, 4 * d).noalias() += lc.b.transpose() * dh_pre;
      grow(grad, P.b_ff1, 4 * d) += dh_pre.colwise().sum();
      const Mat db = dh_pre * cmat(P.w_ff1, d, 4 * d).transpose();
      Mat dx_mid = dx + layer_norm_backward(db, lc.ln2_xhat, lc.ln2_rstd, P.ln2_g, P.ln2_b, grad);

      // x_mid = x_in + attn W_o + b_o
      gmat(grad, P.w_o, d, d).noalias() += lc.attn.transpose() * dx_mid;
      grow(grad, P.b_o, d) += dx_mid.colwise().sum();
      const Mat dattn = dx_mid * cmat(P.w_o, d, d).transpose();

      Mat dqkv(L, 3 * d);
      for (Eigen::Index h = 0; h < H; ++h) {
        const auto Q = lc.qkv.middleCols(h * dh, dh);
        const auto K = lc.qkv.middleCols(d + h * dh, dh);
        const auto Vh = lc.qkv.middleCols(2 * d + h * dh, dh);
        const Mat& p = lc.probs[static_cast<std::size_t>(h)];
        const auto dO = dattn.middleCols(h * dh, dh);
        const Mat dp = dO * Vh.transpose();
        dqkv.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * dO;
        const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = (dp.array() * p.array()).rowwise().sum();
        const Mat ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
        dqkv.middleCols(h * dh, dh).noalias() = ds * K;
        dqkv.middleCols(d + h * dh, dh).noalias() = ds.transpose() * Q;
      }
      gmat(grad, P.w_qkv, d, 3 * d).noalias() += lc.a.transpose() * dqkv;
      grow(grad, P.b_qkv, 3 * d) += dqkv.colwise().sum();
      const Mat da = dqkv * cmat(P.w_qkv, d, 3 * d).transpose();
      dx = dx_mid + layer_norm_backward(da, lc.ln1_xhat, lc.ln1_rstd, P.ln1_g, P.ln1_b, grad);
    }

    for (Eigen::Index t = 0; t < L; ++t) {
      grow(grad, layout_.tok_emb + static_cast<std::size_t>(tokens[static_cast<std::size_t>(t)] * d), d) +=
          dx.row(t);
      grow(grad, layout_.pos_emb + static_cast<std::size_t>(t * d), d) += dx.row(t);
    }
  }

  TinyLMConfig config_;
  ParamLayout layout_;
  std::vector<T> params_;
};

/// Decoding session over an immutable model: caches the KV state of every
/// prefix it has been asked about, so extending a beam hypothesis by one
/// token costs one incremental step. States two or more tokens shorter than
/// the latest request are evicted.
template <typename T>
class TinyLMSession {
 public:
  explicit TinyLMSession(const TinyLM<T>& model) : model_(model) {}

  std::size_t vocab_size() const { return model_.vocab_size(); }
  std::size_t context_length() const { return model_.context_length(); }

  NextTokenDistribution next_token(std::span<const TokenId> prefix) {
    if (prefix.empty()) throw Error(ErrorKind::OutOfRange, "empty prefix");
    if (prefix.size() >= model_.context_length())
      throw Error(ErrorKind::ContextOverflow, "prefix fills the context");
    std::vector<TokenId> key(prefix.begin(), prefix.end());
    typename TinyLM<T>::KvState state;
    std::vector<TokenId> parent(key.begin(), key.end() - 1);
    if (auto it = cache_.find(parent); it != cache_.end()) {
      state = it->second.state;
    } else {
      state = model_.start_state();
      for (TokenId t : parent) model_.step(state, t);
    }
    const auto logits = model_.step(state, key.back());
    evict_shorter_than(key.size() - 1);
    cache_[key] = Entry{std::move(state)};
    return log_softmax(std::span<const T>(logits.data(), static_cast<std::size_t>(logits.size())));
  }

 private:
  struct Entry {
    typename TinyLM<T>::KvState state;
  };

  void evict_shorter_than(std::size_t length) {
    std::erase_if(cache_, [&](const auto& kv) { return kv.first.size() < length; });
  }

  const TinyLM<T>& model_;
  std::map<std::vector<TokenId>, Entry> cache_;
};

struct TrainResult {
  TinyLM<float> model;
  std::vector<double> epoch_losses;
  std::size_t rejected = 0;  // examples longer than the context
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) over shuffled mini-batches, loss
/// restricted to target positions. Bit-deterministic for a fixed seed.
inline TrainResult tiny_lm_train(const std::vector<SGExample>& examples, const TinyLMConfig& config) {
  config.validate();
  std::vector<EncodedExample> encoded;
  std::size_t rejected = 0;
  for (const auto& ex : examples) {
    try {
      encoded.push_back(encode_example(ex, config.context_len));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::TooLong && e.kind() != ErrorKind::EmptyTarget) throw;
      ++rejected;
    }
  }
  if (encoded.empty())
    throw Error(ErrorKind::NoTrainableExamples,
                std::to_string(rejected) + " examples given, none fit the context");

  TrainResult result{TinyLM<float>(config), {}, rejected};
  auto& model = result.model;
  auto params = model.mutable_params();
  std::vector<float> grad, m(params.size(), 0.0f), v(params.size(), 0.0f);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Rng order_rng(mix_seed(config.seed, 0x5eed));
  std::vector<std::size_t> order(encoded.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::uint64_t step = 0;
  std::size_t batch_id = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_id) {
      std::vector<const EncodedExample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
        batch.push_back(&encoded[order[i]]);
      const float loss = model.loss_and_grad(batch, &grad);
      if (!std::isfinite(loss))
        throw Error(ErrorKind::NonFiniteLoss, "batch " + std::to_string(batch_id) + " (epoch " +
                                                  std::to_string(epoch) + ") produced loss " +
                                                  std::to_string(loss));
      if (config.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (float g : grad) norm2 += static_cast<double>(g) * g;
        const double norm = std::sqrt(norm2);
        if (norm > config.grad_clip) {
          const auto s = static_cast<float>(config.grad_clip / norm);
          for (float& g : grad) g *= s;
        }
      }
      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      const auto lr = static_cast<float>(config.learning_rate * std::sqrt(bc2) / bc1);
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = static_cast<float>(beta1) * m[i] + static_cast<float>(1 - beta1) * grad[i];
        v[i] = static_cast<float>(beta2) * v[i] + static_cast<float>(1 - beta2) * grad[i] * grad[i];
        params[i] -= lr * m[i] / (std::sqrt(v[i]) + static_cast<float>(eps));
      }
      epoch_loss += loss;
      ++batches;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
  }
  return result;
}

}  // namespace flseq

#endif  // FLSEQ_TINY_LM_HPP
