#pragma once

// The three stages: weight-shared search, hyper-parameter grid search and
// from-scratch training; plus sliding-window encoding of long texts and
// sentence-pair training.

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "textnas/controller.hpp"
#include "textnas/data.hpp"
#include "textnas/optim.hpp"
#include "textnas/schedule.hpp"
#include "textnas/supernet.hpp"

namespace textnas {

/// Runs f(0..n-1) on up to `workers` threads. Each index owns its output
/// slot, so results do not depend on scheduling. The first failing index (in
/// index order) rethrows.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Task data

struct TaskData {
  EncodedCorpus train, valid, test;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 2;
  const EmbeddingMatrix* embeddings = nullptr;  // initial table, random when null
};

struct PreparedTask {
  Vocabulary vocab;
  TaskData data;
};

/// Vocabulary from the training split, every split encoded with it.
inline PreparedTask prepare_task(const Corpus& train, const Corpus& valid, const Corpus& test,
                                 std::size_t num_classes, std::size_t min_freq = 1) {
  if (train.empty()) throw DataError("training split is empty");
  PreparedTask p;
  p.vocab = Vocabulary::build(train.token_docs(), min_freq);
  p.data.train = EncodedCorpus::from(train, p.vocab);
  p.data.valid = EncodedCorpus::from(valid, p.vocab);
  p.data.test = EncodedCorpus::from(test, p.vocab);
  p.data.vocab_size = p.vocab.size();
  p.data.num_classes = num_classes;
  for (const auto* c : {&p.data.train, &p.data.valid, &p.data.test})
    for (int y : c->labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw DataError("label " + std::to_string(y) + " outside [0," + std::to_string(num_classes) + ")");
      }
  return p;
}

struct ToySplits {
  Corpus train, valid, test;
};

/// Synthetic corpus split 70/10/20 into train/valid/test.
inline ToySplits toy_splits(const ToySpec& spec) {
  const auto all = make_toy(spec);
  auto [rest, test] = split_validation(all, 0.2, spec.seed ^ 0x7E57);
  auto [train, valid] = split_validation(rest, 0.125, spec.seed ^ 0x7A11D);
  return {std::move(train), std::move(valid), std::move(test)};
}

inline PreparedTask toy_task(const ToySpec& spec) {
  const auto s = toy_splits(spec);
  const std::size_t classes = spec.kind == ToyKind::kNli ? 3 : spec.num_classes;
  return prepare_task(s.train, s.valid, s.test, classes);
}

// ---------------------------------------------------------------------------
// Model construction and one training step

struct TrainHyper {
  double lr = 0.02;
  std::size_t batch_size = 128;
  std::size_t max_len = 64;
  double l2 = 2e-6;
  double dropout = 0.5;
  std::size_t dim = 32;
};

struct ModelSpec {
  std::size_t emb_dim = 300;
  std::size_t num_heads = 8;
};

inline SuperNetConfig classifier_config(std::size_t layers, const TrainHyper& hp, const ModelSpec& m,
                                        const TaskData& data) {
  SuperNetConfig c;
  c.encoder.num_layers = layers;
  c.encoder.dim = hp.dim;
  c.encoder.emb_dim = data.embeddings ? data.embeddings->width : m.emb_dim;
  c.encoder.max_len = hp.max_len;
  c.encoder.batch_size = hp.batch_size;
  c.encoder.dropout_ratio = hp.dropout;
  c.encoder.attention.num_heads = std::min(m.num_heads, hp.dim);
  c.vocab_size = data.vocab_size;
  c.num_classes = data.num_classes;
  return c;
}

namespace detail {

template <typename T>
void prepare_grads(const std::vector<Tensor<T>>& active) {
  for (auto p : active) p.zero_grad();
}

template <typename T>
void finish_grads(const std::vector<Tensor<T>>& active) {
  for (auto p : active) p.ensure_grad();
}

}  // namespace detail

/// One minibatch of cross-entropy training on `enc`, stepping only the
/// parameters the child touches. Returns the batch loss.
template <typename T>
double train_step(SuperNet<T>& net, const ArchitectureEncoding& enc, const TextBatch& b, Optimizer<T>& opt,
                  double lr, double dropout, Rng& rng) {
  const auto active = net.child_parameters(enc);
  detail::prepare_grads(active);
  Tape<T> tape;
  nn::Context<T> ctx{tape, true, ops::NormMode::kTrain, &rng, dropout};
  auto loss = ops::cross_entropy(tape, net.logits(ctx, enc, b), b.labels);
  detail::finish_grads(active);
  tape.backward(loss);
  opt.step(lr, active);
  return static_cast<double>(loss.item());
}

template <typename T>
double batch_loss(SuperNet<T>& net, const ArchitectureEncoding& enc, const TextBatch& b) {
  Tape<T> tape(false);
  nn::Context<T> ctx{tape, false, ops::NormMode::kEval};
  return static_cast<double>(ops::cross_entropy(tape, net.logits(ctx, enc, b), b.labels).item());
}

// ---------------------------------------------------------------------------
// Stage 1: weight-shared search

struct SearchConfig {
  SpaceConfig space;  // N = 24, k = 5
  TrainHyper hp{0.005, 128, 64, 2e-6, 0.5, 32};
  ModelSpec model;
  std::size_t epochs = 150;
  std::size_t candidates = 10;
  std::size_t eval_batch = 128;
  CosineSchedule cosine;
  ControllerConfig controller;
  std::size_t workers = 1;
  std::uint64_t seed = 1;

  void validate() const {
    space.validate();
    if (epochs == 0 || candidates == 0 || eval_batch == 0 || hp.batch_size == 0) {
      throw ParameterError("search epochs, candidates and batch sizes must be positive");
    }
  }
};

struct SearchRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t candidate = 0;
  ArchitectureEncoding encoding;
  double reward = 0;
};

struct SearchResult {
  ArchitectureEncoding best;
  double best_reward = -1;
  std::vector<SearchRecord> history;
  std::vector<double> train_loss;  // per epoch, mean over minibatches
};

struct SearchHooks {
  /// Replaces the validation-batch reward (controller tests).
  std::function<double(const ArchitectureEncoding&)> reward;
  /// Called after each epoch with that epoch's records.
  std::function<void(std::size_t epoch, const std::vector<SearchRecord>&)> on_epoch;
};

inline SuperNetConfig search_net_config(const SearchConfig& cfg, const TaskData& data) {
  return classifier_config(cfg.space.num_layers, cfg.hp, cfg.model, data);
}

inline ControllerConfig search_controller_config(const SearchConfig& cfg) {
  ControllerConfig c = cfg.controller;
  c.space = cfg.space;
  return c;
}

/// Alternates one pass of shared-weight training (a fresh child per
/// minibatch, Adam with cosine lr) with one controller update from
/// `candidates` children, each rewarded by its accuracy on an independently
/// drawn validation batch. The best logged reward wins; ties go to the
/// earliest record.
inline SearchResult search(SuperNet<float>& net, Controller<double>& ctrl, const TaskData& data,
                           const SearchConfig& cfg, const SearchHooks& hooks = {}) {
  cfg.validate();
  if (data.train.empty() || data.valid.empty()) throw DataError("search needs non-empty train and validation splits");
  if (net.num_layers() != cfg.space.num_layers) throw DimensionError("supernet depth differs from the search space");
  OptimizerConfig oc;
  oc.kind = OptimizerKind::kAdam;
  oc.weight_decay = cfg.hp.l2;
  Optimizer<float> opt(oc, net.store().parameter_tensors());
  const Rng root = Rng(cfg.seed).substream("search");
  Rng sampler = root.substream("controller");
  SearchResult out;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.cosine, static_cast<double>(epoch - 1));
    Rng order = root.substream("order", epoch);
    Rng drop = root.substream("dropout", epoch);
    const auto batches = make_batches(data.train, cfg.hp.batch_size, cfg.hp.max_len, &order);
    double loss = 0;
    for (const auto& b : batches) {
      const auto enc = ctrl.sample(sampler).encoding;
      loss += train_step(net, enc, b, opt, lr, cfg.hp.dropout, drop);
    }
    out.train_loss.push_back(loss / static_cast<double>(batches.size()));

    Rng valid_rng = root.substream("valid", epoch);
    std::vector<SampleTrace> traces;
    std::vector<TextBatch> vbatches;
    for (std::size_t c = 0; c < cfg.candidates; ++c) {
      traces.push_back(ctrl.sample(sampler));
      vbatches.push_back(random_batch(data.valid, cfg.eval_batch, cfg.hp.max_len, valid_rng));
    }
    std::vector<double> rewards(cfg.candidates);
    parallel_for(cfg.candidates, cfg.workers, [&](std::size_t c) {
      rewards[c] = hooks.reward ? hooks.reward(traces[c].encoding)
                                : evaluate(net, traces[c].encoding, {vbatches[c]}, ops::NormMode::kBatchStats)
                                      .accuracy();
    });
    ctrl.reinforce_update(traces, rewards);
    std::vector<SearchRecord> records;
    for (std::size_t c = 0; c < cfg.candidates; ++c) {
      records.push_back({epoch, c, traces[c].encoding, rewards[c]});
      if (rewards[c] > out.best_reward) {
        out.best_reward = rewards[c];
        out.best = traces[c].encoding;
      }
    }
    out.history.insert(out.history.end(), records.begin(), records.end());
    if (hooks.on_epoch) hooks.on_epoch(epoch, records);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 3: from-scratch training

enum class ScheduleKind { kAutoDecay, kCosine };

struct FinalConfig {
  ScheduleKind schedule = ScheduleKind::kAutoDecay;  // SGD momentum 0.9; cosine uses Adam
  AutoDecayConfig auto_decay;                        // init_rate comes from hp.lr
  double cosine_lr_min = 0.0001;
  std::size_t epochs = 30;       // cosine schedule length
  std::size_t max_epochs = 200;  // hard cap for auto-decay
  bool finish_phase = true;      // false: stop before training on train + valid
  ModelSpec model;
  std::uint64_t seed = 1;
  const SuperNet<float>* warm_start = nullptr;  // off by default: retrain from scratch
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string phase;
  double lr = 0;
  double train_loss = 0;
  double valid_acc = 0;
};

struct FinalResult {
  std::vector<EpochMetrics> metrics;
  double init_loss = 0;  // first minibatch, before any update
  EvalResult test;
  double valid_acc = 0;  // last epoch
  std::uint64_t init_checksum = 0;
  std::unique_ptr<SuperNet<float>> model;
};

/// Fresh parameters for `enc` only. The seed stream is separate from the
/// search's, so no weights carry over from the supernet unless `warm_start`
/// is set, in which case every tensor is copied by name and must match in
/// shape (the supernet's dim and max_len must equal hp's).
inline FinalResult train_final(const ArchitectureEncoding& enc, const TrainHyper& hp, const TaskData& data,
                               const FinalConfig& cfg) {
  if (data.train.empty()) throw DataError("training split is empty");
  const Rng root = Rng(cfg.seed).substream("final");
  auto net_cfg = classifier_config(enc.num_layers(), hp, cfg.model, data);
  FinalResult r;
  r.model = std::make_unique<SuperNet<float>>(net_cfg, root.substream("init").next_u64(), &enc);
  auto& net = *r.model;
  if (data.embeddings) net.set_embeddings(*data.embeddings);
  if (cfg.warm_start) {
    for (auto& [name, t] : net.store().all()) {
      const auto* src = cfg.warm_start->store().find(name);
      if (!src) throw DimensionError("warm-start supernet lacks " + name);
      if (src->shape() != t.shape()) {
        throw DimensionError("warm-start tensor " + name + " is " + shape_str(src->shape()) + ", model needs " +
                             shape_str(t.shape()));
      }
      auto d = Tensor<float>(t).data();
      const auto from = src->data();
      std::copy(from.begin(), from.end(), d.begin());
    }
  }
  r.init_checksum = net.store().checksum();
  OptimizerConfig oc;
  oc.kind = cfg.schedule == ScheduleKind::kCosine ? OptimizerKind::kAdam : OptimizerKind::kSgdMomentum;
  oc.momentum = 0.9;
  oc.weight_decay = hp.l2;
  Optimizer<float> opt(oc, net.store().parameter_tensors());
  const auto valid_batches = data.valid.empty() ? std::vector<TextBatch>{}
                                                : make_batches(data.valid, hp.batch_size, hp.max_len);
  const auto combined = data.train.concat(data.valid);
  AutoDecayConfig ad = cfg.auto_decay;
  ad.init_rate = hp.lr;
  const CosineSchedule cs{hp.lr, cfg.cosine_lr_min, static_cast<double>(std::max<std::size_t>(cfg.epochs, 1))};
  std::vector<double> accs;
  bool first = true;
  for (std::size_t epoch = 1;; ++epoch) {
    double lr;
    DecayPhase phase = DecayPhase::kMain;
    if (cfg.schedule == ScheduleKind::kCosine) {
      if (epoch > cfg.epochs) break;
      lr = cosine_lr(cs, static_cast<double>(epoch - 1));
    } else {
      if (epoch > cfg.max_epochs) break;
      const auto st = auto_decay_lr(ad, epoch, accs);
      phase = st.phase;
      if (phase == DecayPhase::kDone || (phase == DecayPhase::kFinish && !cfg.finish_phase)) break;
      lr = st.lr;
    }
    const auto& source = phase == DecayPhase::kFinish ? combined : data.train;
    Rng order = root.substream("order", epoch);
    Rng drop = root.substream("dropout", epoch);
    const auto batches = make_batches(source, hp.batch_size, hp.max_len, &order);
    if (first) {
      r.init_loss = batch_loss(net, enc, batches.front());
      first = false;
    }
    double loss = 0;
    for (const auto& b : batches) loss += train_step(net, enc, b, opt, lr, hp.dropout, drop);
    EpochMetrics m;
    m.epoch = epoch;
    m.phase = cfg.schedule == ScheduleKind::kCosine ? "cosine" : phase_name(phase);
    m.lr = lr;
    m.train_loss = loss / static_cast<double>(batches.size());
    m.valid_acc = valid_batches.empty() ? 0.0 : evaluate(net, enc, valid_batches).accuracy();
    accs.push_back(m.valid_acc);
    r.valid_acc = m.valid_acc;
    r.metrics.push_back(m);
  }
  if (!data.test.empty()) r.test = evaluate(net, enc, make_batches(data.test, hp.batch_size, hp.max_len));
  return r;
}

// ---------------------------------------------------------------------------
// Stage 2: grid search

struct GridSpec {
  std::vector<double> lr{0.08, 0.05, 0.02};
  std::vector<std::size_t> batch_size{64, 128};
  std::vector<std::size_t> max_len{64, 256, 512};
  std::vector<double> l2{2e-9, 2e-7, 1e-6, 2e-6};
  std::vector<double> dropout{0.0, 0.2, 0.5};
  std::vector<std::size_t> dim{32, 64, 128, 256};

  static GridSpec single(const TrainHyper& hp) {
    return {{hp.lr}, {hp.batch_size}, {hp.max_len}, {hp.l2}, {hp.dropout}, {hp.dim}};
  }

  std::size_t size() const {
    return lr.size() * batch_size.size() * max_len.size() * l2.size() * dropout.size() * dim.size();
  }

  /// Axis-major order: lr varies slowest, dim fastest.
  TrainHyper point(std::size_t idx) const {
    if (idx >= size()) throw UsageError("grid index out of range");
    TrainHyper hp;
    hp.dim = dim[idx % dim.size()];
    idx /= dim.size();
    hp.dropout = dropout[idx % dropout.size()];
    idx /= dropout.size();
    hp.l2 = l2[idx % l2.size()];
    idx /= l2.size();
    hp.max_len = max_len[idx % max_len.size()];
    idx /= max_len.size();
    hp.batch_size = batch_size[idx % batch_size.size()];
    idx /= batch_size.size();
    hp.lr = lr[idx];
    return hp;
  }
};

struct GridConfig {
  std::size_t budget = 15;  // epochs per point
  FinalConfig final;
  std::size_t workers = 1;
};

struct GridPoint {
  TrainHyper hp;
  double valid_acc = 0;
};

struct GridResult {
  std::vector<GridPoint> points;
  std::size_t best = 0;
};

/// Short from-scratch run per point on the training split, scored by final
/// validation accuracy. Ties go to the earlier point.
inline GridResult grid_search(const ArchitectureEncoding& enc, const GridSpec& grid, const TaskData& data,
                              const GridConfig& cfg) {
  if (cfg.budget == 0) throw ParameterError("grid search budget must be >= 1 epoch");
  if (grid.size() == 0) throw ParameterError("grid has an empty axis");
  if (data.valid.empty()) throw DataError("grid search needs a validation split");
  GridResult r;
  r.points.resize(grid.size());
  FinalConfig fc = cfg.final;
  fc.epochs = cfg.budget;
  fc.max_epochs = cfg.budget;
  fc.finish_phase = false;
  TaskData no_test = data;
  no_test.test = {};
  parallel_for(grid.size(), cfg.workers, [&](std::size_t i) {
    r.points[i].hp = grid.point(i);
    r.points[i].valid_acc = train_final(enc, r.points[i].hp, no_test, fc).valid_acc;
  });
  for (std::size_t i = 1; i < r.points.size(); ++i)
    if (r.points[i].valid_acc > r.points[r.best].valid_acc) r.best = i;
  return r;
}

// ---------------------------------------------------------------------------
// Long texts

struct SlidingWindowConfig {
  std::size_t window = 64;
  std::size_t stride = 32;

  void validate() const {
    if (window == 0 || stride == 0 || stride > window) throw ParameterError("need 0 < stride <= window");
  }
};

inline std::size_t window_count(std::size_t len, const SlidingWindowConfig& c) {
  c.validate();
  if (len <= c.window) return 1;
  return (len - c.window + c.stride - 1) / c.stride + 1;
}

template <typename T>
struct SlidingResult {
  Tensor<T> vector;  // [1, dim]
  std::size_t windows = 0;
};

/// Encodes each window through the classification pooling path (eval mode)
/// and takes the elementwise max. The last window may be truncated.
template <typename T>
SlidingResult<T> encode_sliding(SuperNet<T>& net, const ArchitectureEncoding& enc,
                                const std::vector<std::int32_t>& tokens, const SlidingWindowConfig& cfg) {
  cfg.validate();
  if (tokens.empty()) throw DataError("cannot encode an empty text");
  if (net.config().encoder.max_len != cfg.window) {
    throw DimensionError("model max_len " + std::to_string(net.config().encoder.max_len) + " differs from window " +
                         std::to_string(cfg.window));
  }
  SlidingResult<T> r;
  r.windows = window_count(tokens.size(), cfg);
  for (std::size_t w = 0; w < r.windows; ++w) {
    const std::size_t begin = w * cfg.stride;
    const std::size_t n = std::min(cfg.window, tokens.size() - begin);
    std::vector<std::int32_t> ids(cfg.window, Vocabulary::kPad);
    std::copy_n(tokens.begin() + static_cast<std::ptrdiff_t>(begin), n, ids.begin());
    const std::vector<std::size_t> lengths{n};
    Tape<T> tape(false);
    nn::Context<T> ctx{tape, false, ops::NormMode::kEval};
    auto v = net.encode(ctx, enc, ids, 1, cfg.window, lengths);
    if (w == 0) {
      r.vector = v.clone();
    } else {
      for (std::size_t i = 0; i < v.numel(); ++i) r.vector[i] = std::max(r.vector[i], v[i]);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Sentence pairs

struct NliConfig {
  TrainHyper hp{1e-3, 32, 128, 1e-6, 0.1, 512};
  double penalty = 0.0;  // attention-pooling penalty coefficient
  std::size_t epochs = 10;
  double lr_min = 1e-5;
  std::size_t pool_queries = 4;
  std::size_t fc_dim = 2400;
  std::size_t fc_layers = 3;
  ModelSpec model;
  std::uint64_t seed = 1;
};

struct NliResult {
  std::vector<EpochMetrics> metrics;
  EvalResult test;
  std::unique_ptr<SuperNet<float>> model;
};

inline SuperNetConfig nli_config(std::size_t layers, const NliConfig& cfg, const TaskData& data) {
  auto c = classifier_config(layers, cfg.hp, cfg.model, data);
  c.head = HeadKind::kNli;
  c.num_classes = 3;
  c.pool_queries = cfg.pool_queries;
  c.fc_dim = cfg.fc_dim;
  c.fc_layers = cfg.fc_layers;
  return c;
}

/// cross-entropy + 0.5 * l2 * sum ||p||^2 + coef * pooling penalty.
template <typename T>
Tensor<T> nli_loss(Tape<T>& tape, const typename SuperNet<T>::PairOutput& out, std::span<const int> labels,
                   const std::vector<Tensor<T>>& params, double l2, double coef) {
  auto loss = ops::cross_entropy(tape, out.logits, labels);
  if (l2 != 0.0) {
    Tensor<T> reg;
    for (const auto& p : params) reg = reg.defined() ? ops::add(tape, reg, ops::sum_squares(tape, p)) : ops::sum_squares(tape, p);
    loss = ops::add(tape, loss, ops::scale(tape, reg, static_cast<T>(0.5 * l2)));
  }
  if (coef != 0.0) loss = ops::add(tape, loss, ops::scale(tape, out.penalty, static_cast<T>(coef)));
  return loss;
}

/// Siamese training with Adam, cosine lr decay and a linear warm-up over the
/// first epoch.
inline NliResult nli_train(const ArchitectureEncoding& enc, const TaskData& data, const NliConfig& cfg) {
  if (data.train.empty()) throw DataError("training split is empty");
  if (!data.train.paired) throw DataError("sentence-pair training needs a paired dataset");
  const Rng root = Rng(cfg.seed).substream("nli");
  NliResult r;
  r.model = std::make_unique<SuperNet<float>>(nli_config(enc.num_layers(), cfg, data),
                                              root.substream("init").next_u64(), &enc);
  auto& net = *r.model;
  if (data.embeddings) net.set_embeddings(*data.embeddings);
  Optimizer<float> opt(OptimizerConfig{}, net.store().parameter_tensors());
  const auto params = net.child_parameters(enc);
  const CosineSchedule cs{cfg.hp.lr, cfg.lr_min, static_cast<double>(std::max<std::size_t>(cfg.epochs, 1))};
  const auto valid_batches = data.valid.empty() ? std::vector<TextBatch>{}
                                                : make_batches(data.valid, cfg.hp.batch_size, cfg.hp.max_len);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng order = root.substream("order", epoch);
    Rng drop = root.substream("dropout", epoch);
    const auto batches = make_batches(data.train, cfg.hp.batch_size, cfg.hp.max_len, &order);
    const double base = cosine_lr(cs, static_cast<double>(epoch - 1));
    double total = 0;
    for (std::size_t s = 0; s < batches.size(); ++s) {
      const double lr = epoch == 1 ? base * static_cast<double>(s + 1) / static_cast<double>(batches.size()) : base;
      detail::prepare_grads(params);
      Tape<float> tape;
      nn::Context<float> ctx{tape, true, ops::NormMode::kTrain, &drop, cfg.hp.dropout};
      auto out = net.pair_logits(ctx, enc, batches[s]);
      auto loss = nli_loss(tape, out, batches[s].labels, params, cfg.hp.l2, cfg.penalty);
      detail::finish_grads(params);
      tape.backward(loss);
      opt.step(lr, params);
      total += loss.item();
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.phase = epoch == 1 ? "warmup" : "cosine";
    m.lr = base;
    m.train_loss = total / static_cast<double>(batches.size());
    m.valid_acc = valid_batches.empty() ? 0.0 : evaluate(net, enc, valid_batches).accuracy();
    r.metrics.push_back(m);
  }
  if (!data.test.empty()) r.test = evaluate(net, enc, make_batches(data.test, cfg.hp.batch_size, cfg.hp.max_len));
  return r;
}

}  // namespace textnas
