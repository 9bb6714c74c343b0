#pragma once

// Weight-shared supergraph over all (position, operator) pairs, child
// assembly, and the classification / sentence-pair heads.
//
// Parameter names: embed, proj.{weight,bias}, pos{i}.{op}.{...}, head.{...}.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "textnas/arch.hpp"
#include "textnas/data.hpp"
#include "textnas/layers.hpp"
#include "textnas/params.hpp"

namespace textnas {

enum class HeadKind { kClassification, kNli };

struct SuperNetConfig {
  nn::EncoderConfig encoder;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 2;
  HeadKind head = HeadKind::kClassification;
  std::size_t pool_queries = 4;  // sentence-pair attention pooling
  std::size_t fc_dim = 2400;
  std::size_t fc_layers = 3;

  void validate() const {
    encoder.validate();
    if (vocab_size < 2) throw ParameterError("vocab_size must cover pad and unk");
    if (head == HeadKind::kClassification && num_classes < 2) throw ParameterError("need >= 2 classes");
    if (head == HeadKind::kNli && (pool_queries == 0 || fc_dim == 0)) {
      throw ParameterError("pool_queries and fc_dim must be positive");
    }
  }
};

/// One (position, operator) slot of the supergraph.
template <typename T>
struct OpSlot {
  LayerOpKind op = LayerOpKind::kConv1;
  std::optional<nn::ConvUnit<T>> conv;
  std::optional<nn::BiGru<T>> gru;
  std::optional<nn::SelfAttention<T>> attention;

  std::vector<Tensor<T>> parameters() const {
    if (conv) return conv->parameters();
    if (gru) return gru->parameters();
    if (attention) return attention->parameters();
    return {};
  }
};

template <typename T>
class SuperNet {
 public:
  /// All slots, or only those an encoding selects when `only` is given. Each
  /// slot draws its initial weights from its own labeled substream, so the
  /// same slot starts identical either way.
  SuperNet(const SuperNetConfig& cfg, std::uint64_t seed, const ArchitectureEncoding* only = nullptr)
      : cfg_(cfg) {
    cfg_.validate();
    const auto& e = cfg_.encoder;
    const Rng base(seed);
    {
      Rng r = base.substream("embed");
      Tensor<T> table({cfg_.vocab_size, e.emb_dim});
      for (std::size_t i = e.emb_dim; i < table.numel(); ++i) table[i] = static_cast<T>(r.uniform(-0.05, 0.05));
      embed_.table = store_.add("embed", table);
    }
    {
      Rng r = base.substream("proj");
      proj_ = nn::Conv1d<T>::create(store_, "proj", e.emb_dim, e.dim, 1, r);
    }
    slots_.resize(e.num_layers + 1);
    for (std::size_t i = 1; i <= e.num_layers; ++i) {
      slots_[i].resize(kNumLayerOps);
      for (auto op : kAllLayerOps) {
        if (only && only->layer(i).op != op) continue;
        allocate(i, op, base);
      }
    }
    Rng hr = base.substream("head");
    combine_ = store_.add("head.combine", Tensor<T>({e.num_layers + 1}));
    if (cfg_.head == HeadKind::kClassification) {
      fc_.push_back(nn::Linear<T>::create(store_, "head.fc", e.dim, cfg_.num_classes, hr));
    } else {
      pool_ = nn::AttentionPooling<T>::create(store_, "head.pool", e.dim, cfg_.pool_queries, hr);
      std::size_t width = 4 * e.dim * cfg_.pool_queries;
      for (std::size_t l = 0; l < cfg_.fc_layers; ++l) {
        fc_.push_back(nn::Linear<T>::create(store_, "head.fc" + std::to_string(l), width, cfg_.fc_dim, hr));
        width = cfg_.fc_dim;
      }
      fc_.push_back(nn::Linear<T>::create(store_, "head.out", width, 3, hr));
    }
  }

  const SuperNetConfig& config() const { return cfg_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  std::size_t num_layers() const { return cfg_.encoder.num_layers; }

  bool has_slot(std::size_t i, LayerOpKind op) const {
    return i >= 1 && i < slots_.size() && slots_[i][op_code(op)].has_value();
  }

  OpSlot<T>& slot(std::size_t i, LayerOpKind op) {
    if (!has_slot(i, op)) {
      throw UsageError("no weights for " + std::string(op_name(op)) + " at position " + std::to_string(i));
    }
    return *slots_[i][op_code(op)];
  }
  const OpSlot<T>& slot(std::size_t i, LayerOpKind op) const { return const_cast<SuperNet*>(this)->slot(i, op); }

  const nn::Embedding<T>& embedding() const { return embed_; }
  const nn::Conv1d<T>& projection() const { return proj_; }
  const Tensor<T>& combine_weights() const { return combine_; }
  const std::vector<nn::Linear<T>>& fc_layers() const { return fc_; }
  const nn::AttentionPooling<T>& pooling() const { return pool_; }

  /// Overwrites the embedding table (rows x emb_dim must match).
  void set_embeddings(const EmbeddingMatrix& m) {
    if (m.rows != embed_.table.dim(0) || m.width != embed_.table.dim(1)) {
      throw DimensionError("embedding matrix " + std::to_string(m.rows) + "x" + std::to_string(m.width) +
                           " vs table " + shape_str(embed_.table.shape()));
    }
    for (std::size_t i = 0; i < m.values.size(); ++i) embed_.table[i] = static_cast<T>(m.values[i]);
  }

  /// Parameters a child touches: embedding, projection, its slots, the head.
  std::vector<Tensor<T>> child_parameters(const ArchitectureEncoding& enc) const {
    std::vector<Tensor<T>> ps = {embed_.table, proj_.weight, proj_.bias};
    for (std::size_t i = 1; i <= enc.num_layers(); ++i)
      for (auto& p : slot(i, enc.layer(i).op).parameters()) ps.push_back(p);
    for (auto& p : head_parameters()) ps.push_back(p);
    return ps;
  }

  std::vector<Tensor<T>> head_parameters() const {
    std::vector<Tensor<T>> ps = {combine_};
    if (cfg_.head == HeadKind::kNli)
      for (auto& p : pool_.parameters()) ps.push_back(p);
    for (const auto& l : fc_) {
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    return ps;
  }

  void check_encoding(const ArchitectureEncoding& enc) const {
    if (enc.num_layers() != num_layers()) {
      throw DimensionError("encoding has " + std::to_string(enc.num_layers()) + " layers, supernet " +
                           std::to_string(num_layers()));
    }
    for (std::size_t i = 1; i <= enc.num_layers(); ++i) {
      const auto& l = enc.layer(i);
      if (l.input >= i) throw DimensionError("layer " + std::to_string(i) + " input is not an earlier layer");
      for (auto s : l.skips)
        if (s >= i) throw DimensionError("layer " + std::to_string(i) + " skip is not an earlier layer");
    }
  }

  /// All N+1 layer outputs, each <batch, dim, len>, for the given id matrix.
  std::vector<Tensor<T>> child_forward(const nn::Context<T>& ctx, const ArchitectureEncoding& enc,
                                       std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                                       std::span<const std::uint8_t> valid) {
    check_encoding(enc);
    if (len != cfg_.encoder.max_len) {
      throw DimensionError("batch max_len " + std::to_string(len) + " vs configured " +
                           std::to_string(cfg_.encoder.max_len));
    }
    std::vector<Tensor<T>> outs;
    outs.reserve(enc.num_layers() + 1);
    outs.push_back(proj_.forward(ctx.tape, embed_.forward(ctx, ids, batch, len)));
    for (std::size_t i = 1; i <= enc.num_layers(); ++i) {
      const auto& l = enc.layer(i);
      auto& s = slot(i, l.op);
      const auto& x = outs[l.input];
      Tensor<T> y;
      switch (l.op) {
        case LayerOpKind::kMaxPool3: y = nn::pool_layer(ctx, x, ops::PoolKind::kMax); break;
        case LayerOpKind::kAvgPool3: y = nn::pool_layer(ctx, x, ops::PoolKind::kAvg); break;
        case LayerOpKind::kGru: y = s.gru->forward(ctx, x); break;
        case LayerOpKind::kSelfAttention: y = s.attention->forward(ctx, x, valid); break;
        default: y = s.conv->forward(ctx, x); break;
      }
      std::vector<std::size_t> skips = l.skips;
      std::sort(skips.begin(), skips.end());
      for (auto j : skips) y = ops::add(ctx.tape, y, outs[j]);
      outs.push_back(y);
    }
    return outs;
  }

  /// sum_i softmax(combine)_i * layer_i.
  Tensor<T> combine(Tape<T>& tape, const std::vector<Tensor<T>>& layers) const {
    if (layers.size() != combine_.numel()) throw DimensionError("combine: wrong number of layer outputs");
    auto w = ops::softmax(tape, combine_, 0);
    Tensor<T> mixed = ops::mul(tape, ops::pick(tape, w, 0), layers[0]);
    for (std::size_t i = 1; i < layers.size(); ++i)
      mixed = ops::add(tape, mixed, ops::mul(tape, ops::pick(tape, w, i), layers[i]));
    return mixed;
  }

  /// Classification pooling path up to the per-sequence <batch, dim> vector.
  Tensor<T> encode(const nn::Context<T>& ctx, const ArchitectureEncoding& enc, std::span<const std::int32_t> ids,
                   std::size_t batch, std::size_t len, std::span<const std::size_t> lengths) {
    const auto valid = nn::valid_mask(lengths, len);
    auto layers = child_forward(ctx, enc, ids, batch, len, valid);
    return ops::masked_max_time(ctx.tape, combine(ctx.tape, layers), valid);
  }

  Tensor<T> classify(const nn::Context<T>& ctx, const Tensor<T>& pooled) const {
    if (cfg_.head != HeadKind::kClassification) throw UsageError("supernet has a sentence-pair head");
    return fc_[0].forward(ctx.tape, ctx.drop(pooled));
  }

  Tensor<T> logits(const nn::Context<T>& ctx, const ArchitectureEncoding& enc, const TextBatch& b) {
    return classify(ctx, encode(ctx, enc, b.ids, b.batch, b.max_len, b.lengths));
  }

  struct PairOutput {
    Tensor<T> logits;
    Tensor<T> penalty;  // mean of both sides' pooling penalties
    Tensor<T> u, v;
  };

  /// Siamese sentence-pair path: shared encoder, attention pooling, features
  /// [u; v; |u-v|; u*v], fc_layers x (FC + relu), 3 logits.
  PairOutput pair_logits(const nn::Context<T>& ctx, const ArchitectureEncoding& enc, const TextBatch& b) {
    if (cfg_.head != HeadKind::kNli) throw UsageError("supernet has a classification head");
    if (!b.paired()) throw DataError("sentence-pair head needs paired batches");
    auto side = [&](const std::vector<std::int32_t>& ids, const std::vector<std::size_t>& lengths) {
      const auto valid = nn::valid_mask(lengths, b.max_len);
      auto layers = child_forward(ctx, enc, ids, b.batch, b.max_len, valid);
      return pool_.forward(ctx.tape, combine(ctx.tape, layers), valid);
    };
    auto pu = side(b.ids, b.lengths);
    auto pv = side(b.ids_b, b.lengths_b);
    auto& tape = ctx.tape;
    auto feat = ops::concat(tape,
                            {pu.pooled, pv.pooled, ops::abs(tape, ops::sub(tape, pu.pooled, pv.pooled)),
                             ops::mul(tape, pu.pooled, pv.pooled)},
                            1);
    Tensor<T> h = ctx.drop(feat);
    for (std::size_t l = 0; l + 1 < fc_.size(); ++l) h = ops::relu(tape, fc_[l].forward(tape, h));
    auto out = fc_.back().forward(tape, h);
    auto pen = ops::scale(tape,
                          ops::add(tape, nn::AttentionPooling<T>::penalty(tape, pu.attention),
                                   nn::AttentionPooling<T>::penalty(tape, pv.attention)),
                          T(0.5));
    return {out, pen, pu.pooled, pv.pooled};
  }

 private:
  void allocate(std::size_t i, LayerOpKind op, const Rng& base) {
    const auto& e = cfg_.encoder;
    const std::string prefix = "pos" + std::to_string(i) + "." + std::string(op_name(op));
    Rng r = base.substream(prefix);
    OpSlot<T> s;
    s.op = op;
    if (is_conv(op)) {
      s.conv = nn::ConvUnit<T>::create(store_, prefix, e.dim, conv_width(op), r);
    } else if (op == LayerOpKind::kGru) {
      s.gru = nn::BiGru<T>::create(store_, prefix, e.dim, r);
    } else if (op == LayerOpKind::kSelfAttention) {
      s.attention = nn::SelfAttention<T>::create(store_, prefix, e.dim, e.attention, r);
    }
    slots_[i][op_code(op)] = std::move(s);
  }

  SuperNetConfig cfg_;
  ParameterStore<T> store_;
  nn::Embedding<T> embed_;
  nn::Conv1d<T> proj_;
  std::vector<std::vector<std::optional<OpSlot<T>>>> slots_;
  Tensor<T> combine_;
  nn::AttentionPooling<T> pool_;
  std::vector<nn::Linear<T>> fc_;
};

/// Index of the largest logit per row; ties go to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (logits[b * C + c] > logits[b * C + best]) best = c;
    out[b] = static_cast<int>(best);
  }
  return out;
}

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Argmax accuracy over batches without dropout. `norm` selects stored
/// statistics (kEval) or read-only batch statistics (kBatchStats).
template <typename T>
EvalResult evaluate(SuperNet<T>& net, const ArchitectureEncoding& enc, const std::vector<TextBatch>& batches,
                    ops::NormMode norm = ops::NormMode::kEval) {
  if (norm == ops::NormMode::kTrain) throw UsageError("evaluate must not update statistics");
  const std::size_t C = net.config().head == HeadKind::kNli ? 3 : net.config().num_classes;
  EvalResult r;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (const auto& b : batches) {
    Tape<T> tape(false);
    nn::Context<T> ctx{tape, false, norm};
    const auto lg = net.config().head == HeadKind::kNli ? net.pair_logits(ctx, enc, b).logits
                                                          : net.logits(ctx, enc, b);
    const auto pred = argmax_rows(lg);
    for (std::size_t i = 0; i < b.batch; ++i) {
      const int y = b.labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= C) throw DataError("label " + std::to_string(y) + " out of range");
      ++r.confusion[y][pred[i]];
      r.correct += pred[i] == y ? 1 : 0;
      ++r.total;
    }
  }
  if (r.total == 0) throw UsageError("evaluate on an empty slice");
  return r;
}

}  // namespace textnas
