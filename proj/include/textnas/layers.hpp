#pragma once

// Candidate layer operators and shared building blocks. Sequence tensors are
// channel-first: <batch, dim, len>.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "textnas/error.hpp"
#include "textnas/layer_op.hpp"
#include "textnas/ops.hpp"
#include "textnas/params.hpp"

namespace textnas::nn {

struct AttentionConfig {
  std::size_t num_heads = 8;
  bool use_positional_embedding = false;  // fixed: positions would break pooling invariance
};

struct EncoderConfig {
  std::size_t num_layers = 24;
  std::size_t dim = 32;
  std::size_t emb_dim = 300;
  std::size_t max_len = 64;
  std::size_t batch_size = 128;
  double dropout_ratio = 0.5;
  AttentionConfig attention;

  void validate() const {
    if (num_layers < 1) throw ParameterError("num_layers must be >= 1");
    if (max_len < 1) throw ParameterError("max_len must be >= 1");
    if (dim < 1 || emb_dim < 1) throw ParameterError("dim and emb_dim must be positive");
    if (attention.num_heads == 0 || dim % attention.num_heads != 0) {
      throw ParameterError("dim " + std::to_string(dim) + " not divisible by " +
                           std::to_string(attention.num_heads) + " attention heads");
    }
    if (!(dropout_ratio >= 0.0 && dropout_ratio < 1.0)) throw ParameterError("dropout must be in [0,1)");
  }
};

/// Per-forward-pass settings shared by all layers.
template <typename T>
struct Context {
  Tape<T>& tape;
  bool training = false;  // dropout active
  ops::NormMode norm = ops::NormMode::kEval;
  Rng* rng = nullptr;
  double dropout = 0.0;

  Tensor<T> drop(const Tensor<T>& x) const { return ops::dropout(tape, x, dropout, training, rng); }
};

/// Validity flags (1 = real token) for a [batch, len] batch with row lengths.
inline std::vector<std::uint8_t> valid_mask(std::span<const std::size_t> lengths, std::size_t len) {
  std::vector<std::uint8_t> m(lengths.size() * len, 0);
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (std::size_t t = 0; t < std::min(lengths[b], len); ++t) m[b * len + t] = 1;
  return m;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear create(ParameterStore<T>& store, const std::string& prefix, std::size_t in,
                       std::size_t out, Rng& rng) {
    Linear l;
    l.weight = store.add(prefix + ".weight", init::fan_in_uniform<T>({in, out}, in, rng));
    l.bias = store.add(prefix + ".bias", Tensor<T>({out}));
    return l;
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::add_bias(tape, ops::matmul(tape, x, weight), bias);
  }

  std::vector<Tensor<T>> parameters() const { return {weight, bias}; }
};

/// Plain stride-1 SAME convolution (used as the input projection).
template <typename T>
struct Conv1d {
  Tensor<T> weight;  // [out, in, width]
  Tensor<T> bias;

  static Conv1d create(ParameterStore<T>& store, const std::string& prefix, std::size_t in,
                       std::size_t out, std::size_t width, Rng& rng) {
    if (width % 2 == 0) throw ParameterError("convolution width must be odd");
    Conv1d c;
    c.weight = store.add(prefix + ".weight", init::fan_in_uniform<T>({out, in, width}, in * width, rng));
    c.bias = store.add(prefix + ".bias", Tensor<T>({out}));
    return c;
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::conv1d(tape, x, weight, bias);
  }

  std::vector<Tensor<T>> parameters() const { return {weight, bias}; }
};

/// relu -> conv -> batchnorm candidate unit.
template <typename T>
struct ConvUnit {
  Conv1d<T> conv;
  ops::BatchNormState<T> bn;

  static ConvUnit create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                         std::size_t width, Rng& rng) {
    ConvUnit u;
    u.conv = Conv1d<T>::create(store, prefix, dim, dim, width, rng);
    u.bn = ops::BatchNormState<T>::create(dim);
    u.bn.scale = store.add(prefix + ".bn_scale", u.bn.scale);
    u.bn.shift = store.add(prefix + ".bn_shift", u.bn.shift);
    u.bn.running_mean = store.add_buffer(prefix + ".bn_mean", u.bn.running_mean);
    u.bn.running_var = store.add_buffer(prefix + ".bn_var", u.bn.running_var);
    return u;
  }

  Tensor<T> forward(const Context<T>& ctx, const Tensor<T>& x) {
    auto h = ops::relu(ctx.tape, x);
    h = conv.forward(ctx.tape, h);
    return ops::batchnorm1d(ctx.tape, h, bn, ctx.norm);
  }

  std::vector<Tensor<T>> parameters() const {
    return {conv.weight, conv.bias, bn.scale, bn.shift};
  }
};

template <typename T>
Tensor<T> pool_layer(const Context<T>& ctx, const Tensor<T>& x, ops::PoolKind kind) {
  if (x.rank() != 3 || x.dim(2) == 0) throw DimensionError("pooling needs a non-empty sequence");
  return ops::pool1d(ctx.tape, x, kind);
}

// ---------------------------------------------------------------------------

template <typename T>
struct GruDirection {
  Tensor<T> w_input;   // [dim, 3 dim]: update | reset | candidate
  Tensor<T> b_input;   // [3 dim]
  Tensor<T> u_gates;   // [dim, 2 dim]: update | reset
  Tensor<T> u_cand;    // [dim, dim]

  static GruDirection create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                             Rng& rng) {
    GruDirection d;
    d.w_input = store.add(prefix + ".w_input", init::fan_in_uniform<T>({dim, 3 * dim}, dim, rng));
    d.b_input = store.add(prefix + ".b_input", Tensor<T>({3 * dim}));
    d.u_gates = store.add(prefix + ".u_gates", init::fan_in_uniform<T>({dim, 2 * dim}, dim, rng));
    d.u_cand = store.add(prefix + ".u_cand", init::fan_in_uniform<T>({dim, dim}, dim, rng));
    return d;
  }

  void check(std::size_t dim) const {
    if (w_input.shape() != Shape{dim, 3 * dim} || u_gates.shape() != Shape{dim, 2 * dim} ||
        u_cand.shape() != Shape{dim, dim} || b_input.numel() != 3 * dim) {
      throw DimensionError("GRU weight shapes do not match dim " + std::to_string(dim));
    }
  }

  /// x_time_major: [len * batch, dim] rows ordered by time. Returns per-step
  /// hidden states in input time order.
  std::vector<Tensor<T>> run(Tape<T>& tape, const Tensor<T>& x_time_major, std::size_t batch,
                             std::size_t len, bool reverse) const {
    const std::size_t dim = u_cand.dim(0);
    auto proj = ops::add_bias(tape, ops::matmul(tape, x_time_major, w_input), b_input);
    std::vector<Tensor<T>> outs(len);
    Tensor<T> h({batch, dim});
    for (std::size_t step = 0; step < len; ++step) {
      const std::size_t t = reverse ? len - 1 - step : step;
      auto xp = ops::slice(tape, proj, 0, t * batch, batch);
      auto x_gates = ops::slice(tape, xp, 1, 0, 2 * dim);
      auto x_cand = ops::slice(tape, xp, 1, 2 * dim, dim);
      auto gates = ops::sigmoid(tape, ops::add(tape, x_gates, ops::matmul(tape, h, u_gates)));
      auto z = ops::slice(tape, gates, 1, 0, dim);
      auto r = ops::slice(tape, gates, 1, dim, dim);
      auto cand = ops::tanh(tape, ops::add(tape, x_cand, ops::matmul(tape, ops::mul(tape, r, h), u_cand)));
      h = ops::add(tape, h, ops::mul(tape, z, ops::sub(tape, cand, h)));
      outs[t] = h;
    }
    return outs;
  }
};

/// Bidirectional GRU whose two direction outputs are summed. Runs over the
/// full padded length from a zero initial state.
template <typename T>
struct BiGru {
  GruDirection<T> fwd;
  GruDirection<T> bwd;

  static BiGru create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim, Rng& rng) {
    BiGru g;
    g.fwd = GruDirection<T>::create(store, prefix + ".fwd", dim, rng);
    g.bwd = GruDirection<T>::create(store, prefix + ".bwd", dim, rng);
    return g;
  }

  Tensor<T> forward(const Context<T>& ctx, const Tensor<T>& x_in) const {
    if (x_in.rank() != 3) throw DimensionError("GRU expects <batch, dim, len>");
    const std::size_t B = x_in.dim(0), D = x_in.dim(1), L = x_in.dim(2);
    fwd.check(D);
    bwd.check(D);
    auto& tape = ctx.tape;
    auto x = ctx.drop(x_in);
    auto tm = ops::reshape(tape, ops::permute(tape, x, {2, 0, 1}), {L * B, D});
    auto hf = fwd.run(tape, tm, B, L, false);
    auto hb = bwd.run(tape, tm, B, L, true);
    std::vector<Tensor<T>> summed(L);
    for (std::size_t t = 0; t < L; ++t) summed[t] = ops::add(tape, hf[t], hb[t]);
    auto out = ops::permute(tape, ops::stack(tape, summed), {1, 2, 0});  // [B, D, L]
    return ctx.drop(out);
  }

  /// Directions separately, for tests: each [B, D, L].
  std::pair<Tensor<T>, Tensor<T>> directions(Tape<T>& tape, const Tensor<T>& x) const {
    const std::size_t B = x.dim(0), D = x.dim(1), L = x.dim(2);
    auto tm = ops::reshape(tape, ops::permute(tape, x, {2, 0, 1}), {L * B, D});
    auto hf = fwd.run(tape, tm, B, L, false);
    auto hb = bwd.run(tape, tm, B, L, true);
    return {ops::permute(tape, ops::stack(tape, hf), {1, 2, 0}),
            ops::permute(tape, ops::stack(tape, hb), {1, 2, 0})};
  }

  std::vector<Tensor<T>> parameters() const {
    return {fwd.w_input, fwd.b_input, fwd.u_gates, fwd.u_cand,
            bwd.w_input, bwd.b_input, bwd.u_gates, bwd.u_cand};
  }
};

// ---------------------------------------------------------------------------

/// Multi-head self-attention block without positional information:
/// layernorm(x + drop(W_o concat_h softmax(Q_h K_h^T / sqrt(d_h)) V_h)).
template <typename T>
struct SelfAttention {
  Linear<T> q, k, v, o;
  Tensor<T> ln_scale, ln_shift;
  std::size_t heads = 8;

  static SelfAttention create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                              const AttentionConfig& cfg, Rng& rng) {
    if (cfg.num_heads == 0 || dim % cfg.num_heads != 0) {
      throw ParameterError("attention dim " + std::to_string(dim) + " not divisible by heads");
    }
    SelfAttention a;
    a.heads = cfg.num_heads;
    a.q = Linear<T>::create(store, prefix + ".q", dim, dim, rng);
    a.k = Linear<T>::create(store, prefix + ".k", dim, dim, rng);
    a.v = Linear<T>::create(store, prefix + ".v", dim, dim, rng);
    a.o = Linear<T>::create(store, prefix + ".o", dim, dim, rng);
    a.ln_scale = store.add(prefix + ".ln_scale", Tensor<T>({dim}, T(1)));
    a.ln_shift = store.add(prefix + ".ln_shift", Tensor<T>({dim}, T(0)));
    return a;
  }

  /// key_valid: batch x len flags. attention_out, when given, receives the
  /// [batch * heads, len, len] weights.
  Tensor<T> forward(const Context<T>& ctx, const Tensor<T>& x, std::span<const std::uint8_t> key_valid,
                    Tensor<T>* attention_out = nullptr) const {
    if (x.rank() != 3) throw DimensionError("attention expects <batch, dim, len>");
    const std::size_t B = x.dim(0), D = x.dim(1), L = x.dim(2);
    if (D % heads != 0) throw DimensionError("attention dim not divisible by heads");
    const std::size_t dh = D / heads;
    auto& tape = ctx.tape;
    auto flat = ops::reshape(tape, ops::permute(tape, x, {0, 2, 1}), {B * L, D});
    auto split = [&](const Linear<T>& proj) {
      auto p = ops::reshape(tape, proj.forward(tape, flat), {B, L, heads, dh});
      return ops::reshape(tape, ops::permute(tape, p, {0, 2, 1, 3}), {B * heads, L, dh});
    };
    auto Q = split(q), K = split(k), V = split(v);
    auto scores = ops::scale(tape, ops::matmul(tape, Q, ops::permute(tape, K, {0, 2, 1})),
                             static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto A = ops::masked_softmax(tape, scores, key_valid, heads);
    if (attention_out) *attention_out = A;
    auto ctxv = ops::reshape(tape, ops::matmul(tape, A, V), {B, heads, L, dh});
    auto merged = ops::reshape(tape, ops::permute(tape, ctxv, {0, 2, 1, 3}), {B * L, D});
    auto projected = ctx.drop(o.forward(tape, merged));
    auto normed = ops::layernorm(tape, ops::add(tape, flat, projected), ln_scale, ln_shift);
    return ops::permute(tape, ops::reshape(tape, normed, {B, L, D}), {0, 2, 1});
  }

  std::vector<Tensor<T>> parameters() const {
    return {q.weight, q.bias, k.weight, k.bias, v.weight, v.bias, o.weight, o.bias, ln_scale, ln_shift};
  }
};

// ---------------------------------------------------------------------------

template <typename T>
struct Embedding {
  Tensor<T> table;  // [vocab, emb_dim]; row 0 is the pad token

  Tensor<T> forward(const Context<T>& ctx, std::span<const std::int32_t> ids, std::size_t batch,
                    std::size_t len) const {
    return ctx.drop(ops::embedding_lookup(ctx.tape, ids, batch, len, table));
  }
};

/// Learned queries attending over positions; each query yields a dim-vector
/// (a convex combination of the input columns).
template <typename T>
struct AttentionPooling {
  Linear<T> key;
  Tensor<T> queries;  // [num_queries, dim]

  static AttentionPooling create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                                 std::size_t num_queries, Rng& rng) {
    AttentionPooling p;
    p.key = Linear<T>::create(store, prefix + ".key", dim, dim, rng);
    p.queries = store.add(prefix + ".queries", init::fan_in_uniform<T>({num_queries, dim}, dim, rng));
    return p;
  }

  std::size_t num_queries() const { return queries.dim(0); }

  struct Output {
    Tensor<T> pooled;     // [batch, dim * num_queries]
    Tensor<T> attention;  // [batch, num_queries, len]
  };

  Output forward(Tape<T>& tape, const Tensor<T>& x, std::span<const std::uint8_t> valid) const {
    if (x.rank() != 3) throw DimensionError("attention pooling expects <batch, dim, len>");
    const std::size_t B = x.dim(0), D = x.dim(1), L = x.dim(2), nq = num_queries();
    if (valid.size() != B * L) throw DimensionError("attention pooling: mask size mismatch");
    for (std::size_t b = 0; b < B; ++b) {
      bool any = false;
      for (std::size_t t = 0; t < L; ++t) any = any || valid[b * L + t];
      if (!any) throw DataError("attention pooling over fully padded row " + std::to_string(b));
    }
    auto xt = ops::permute(tape, x, {0, 2, 1});  // [B, L, D]
    auto flat = ops::reshape(tape, xt, {B * L, D});
    auto keys = ops::tanh(tape, key.forward(tape, flat));
    auto scores = ops::matmul(tape, keys, ops::permute(tape, queries, {1, 0}));  // [B*L, nq]
    scores = ops::permute(tape, ops::reshape(tape, scores, {B, L, nq}), {0, 2, 1});
    auto A = ops::masked_softmax(tape, scores, valid, 1);
    auto pooled = ops::reshape(tape, ops::matmul(tape, A, xt), {B, nq * D});
    return {pooled, A};
  }

  /// Batch mean of ||A A^T - I||_F^2.
  static Tensor<T> penalty(Tape<T>& tape, const Tensor<T>& A) {
    const std::size_t B = A.dim(0), nq = A.dim(1);
    auto aat = ops::matmul(tape, A, ops::permute(tape, A, {0, 2, 1}));
    std::vector<T> eye(B * nq * nq, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < nq; ++i) eye[(b * nq + i) * nq + i] = T(1);
    auto diff = ops::sub(tape, aat, ops::constant<T>({B, nq, nq}, std::move(eye)));
    return ops::scale(tape, ops::sum_squares(tape, diff), T(1) / static_cast<T>(B));
  }

  std::vector<Tensor<T>> parameters() const { return {key.weight, key.bias, queries}; }
};

}  // namespace textnas::nn
