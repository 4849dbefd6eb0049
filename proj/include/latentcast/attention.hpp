#pragma once

#include <random>
#include <vector>

#include "latentcast/tensor.hpp"

namespace latentcast {

// Shapes of one attention block. d_qk/d_v default to d_out/heads.
struct AttentionConfig {
  int q_in = 0;          // channel width of the query input
  int kv_in = 0;         // channel width of the key/value input
  int d_out = 0;         // channel width of the block output
  int heads = 4;
  int d_qk = 0;
  int d_v = 0;
  bool attn_residual = true;  // add the query input to the attention output

  AttentionConfig resolved() const {
    AttentionConfig c = *this;
    if (c.heads < 1) throw ConfigError("attention heads must be >= 1");
    if (c.d_qk == 0) c.d_qk = c.d_out / c.heads;
    if (c.d_v == 0) c.d_v = c.d_out / c.heads;
    if (c.d_qk < 1 || c.d_v < 1 || c.heads * c.d_v != c.d_out) {
      throw ConfigError("attention width " + std::to_string(c.d_out) +
                        " is not divisible into " + std::to_string(c.heads) + " heads");
    }
    if (c.attn_residual && c.q_in != c.d_out) {
      throw ConfigError("attention residual requires q_in == d_out");
    }
    return c;
  }
};

template <typename T>
struct LayerNormWeights {
  Tensor<T> scale;
  Tensor<T> offset;
};

template <typename T>
struct MlpWeights {
  Tensor<T> w1, b1, w2, b2;
};

// Per-head projections, output projection, residual MLP and the
// pre-normalization parameters of one transformer block.
template <typename T>
struct AttentionWeights {
  AttentionConfig cfg;
  std::vector<Tensor<T>> wq, wk, wv;  // heads x [in x d]
  Tensor<T> wo;                       // [heads*d_v x d_out]
  MlpWeights<T> mlp;                  // hidden width == d_out
  LayerNormWeights<T> ln_q, ln_kv, ln_mlp;
};

// softmax(Qp Kp^T / sqrt(d_k)) Vp with optional key-validity mask.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& qp, const Tensor<T>& kp, const Tensor<T>& vp,
                               const std::vector<std::uint8_t>* mask = nullptr,
                               Tape<T>* tape = nullptr) {
  if (qp.rank() != 2 || kp.rank() != 2 || qp.shape()[1] != kp.shape()[1]) {
    throw ShapeError("attention: query/key width mismatch " + qp.shape_string() + " vs " +
                     kp.shape_string());
  }
  if (vp.rank() != 2 || kp.shape()[0] != vp.shape()[0]) {
    throw ShapeError("attention: key/value token count mismatch " + kp.shape_string() + " vs " +
                     vp.shape_string());
  }
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(qp.shape()[1]));
  Tensor<T> scores = scale(matmul_nt(qp, kp, tape), inv_sqrt_dk, tape);
  Tensor<T> weights = softmax_rows(scores, tape, mask);
  return matmul(weights, vp, tape);
}

// Eq.-style multi-head attention: per-head projections of Q, K, V, head
// outputs concatenated and combined by the output projection.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const AttentionWeights<T>& w,
                               const std::vector<std::uint8_t>* mask = nullptr,
                               Tape<T>* tape = nullptr) {
  const auto& cfg = w.cfg;
  if (q.shape()[1] != cfg.q_in || k.shape()[1] != cfg.kv_in || v.shape()[1] != cfg.kv_in) {
    throw ConfigError("multi_head_attention: input widths " + q.shape_string() + "/" +
                      k.shape_string() + " do not match configuration q_in=" +
                      std::to_string(cfg.q_in) + " kv_in=" + std::to_string(cfg.kv_in));
  }
  if (static_cast<int>(w.wq.size()) != cfg.heads) {
    throw ConfigError("multi_head_attention: head count mismatch");
  }
  std::vector<Tensor<T>> heads;
  heads.reserve(w.wq.size());
  for (std::size_t h = 0; h < w.wq.size(); ++h) {
    Tensor<T> qh = matmul(q, w.wq[h], tape);
    Tensor<T> kh = matmul(k, w.wk[h], tape);
    Tensor<T> vh = matmul(v, w.wv[h], tape);
    heads.push_back(scaled_dot_attention(qh, kh, vh, mask, tape));
  }
  return matmul(concat_cols(heads, tape), w.wo, tape);
}

template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const MlpWeights<T>& m, Tape<T>* tape) {
  Tensor<T> h = gelu(add_rowvec(matmul(x, m.w1, tape), m.b1, tape), tape);
  return add_rowvec(matmul(h, m.w2, tape), m.b2, tape);
}

// Pre-normalized transformer block: Q/K/V are normalized before attention,
// the attention output (plus the query residual when configured) is
// normalized again and passed through the residual MLP.
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const AttentionWeights<T>& w,
                            const std::vector<std::uint8_t>* mask = nullptr,
                            Tape<T>* tape = nullptr) {
  Tensor<T> qn = layer_norm_rows(q, w.ln_q.scale, w.ln_q.offset, tape);
  Tensor<T> kn = layer_norm_rows(k, w.ln_kv.scale, w.ln_kv.offset, tape);
  Tensor<T> vn = layer_norm_rows(v, w.ln_kv.scale, w.ln_kv.offset, tape);
  Tensor<T> attn = multi_head_attention(qn, kn, vn, w, mask, tape);
  Tensor<T> h = w.cfg.attn_residual ? add(attn, q, tape) : attn;
  Tensor<T> hn = layer_norm_rows(h, w.ln_mlp.scale, w.ln_mlp.offset, tape);
  return add(mlp_forward(hn, w.mlp, tape), hn, tape);
}

// Self-attention convenience: Q = K = V = x.
template <typename T>
Tensor<T> self_attention_block(const Tensor<T>& x, const AttentionWeights<T>& w,
                               Tape<T>* tape = nullptr) {
  return transformer_block(x, x, x, w, nullptr, tape);
}

template <typename T>
AttentionWeights<T> make_attention_weights(const AttentionConfig& raw, std::mt19937& rng) {
  const AttentionConfig cfg = raw.resolved();
  AttentionWeights<T> w;
  w.cfg = cfg;
  for (int h = 0; h < cfg.heads; ++h) {
    w.wq.push_back(glorot_uniform<T>(cfg.q_in, cfg.d_qk, rng));
    w.wk.push_back(glorot_uniform<T>(cfg.kv_in, cfg.d_qk, rng));
    w.wv.push_back(glorot_uniform<T>(cfg.kv_in, cfg.d_v, rng));
  }
  w.wo = glorot_uniform<T>(cfg.heads * cfg.d_v, cfg.d_out, rng);
  w.mlp.w1 = glorot_uniform<T>(cfg.d_out, cfg.d_out, rng);
  w.mlp.b1 = Tensor<T>::zeros({cfg.d_out});
  w.mlp.w2 = glorot_uniform<T>(cfg.d_out, cfg.d_out, rng);
  w.mlp.b2 = Tensor<T>::zeros({cfg.d_out});
  auto ones = [](std::int64_t n) {
    Tensor<T> t = Tensor<T>::zeros({n});
    for (auto& x : t.values()) x = T(1);
    return t;
  };
  w.ln_q = {ones(cfg.q_in), Tensor<T>::zeros({cfg.q_in})};
  w.ln_kv = {ones(cfg.kv_in), Tensor<T>::zeros({cfg.kv_in})};
  w.ln_mlp = {ones(cfg.d_out), Tensor<T>::zeros({cfg.d_out})};
  return w;
}

}  // namespace latentcast
