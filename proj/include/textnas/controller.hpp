#pragma once

// LSTM policy over architecture decisions, trained with REINFORCE.
//
// Per layer i three LSTM steps emit, in order: the input id (softmax over
// the lookback window), i skip bits (independent sigmoids), the operator
// (softmax over 8). Each decision's embedding is the next step's input.
// Logits are squashed as c * tanh(raw / temperature).

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "textnas/arch.hpp"
#include "textnas/ops.hpp"
#include "textnas/optim.hpp"
#include "textnas/params.hpp"

namespace textnas {

struct ControllerConfig {
  SpaceConfig space;
  std::size_t hidden = 64;
  double lr = 3.5e-4;
  double temperature = 5.0;
  double tanh_constant = 2.5;
  double entropy_weight = 1e-4;
  double baseline_decay = 0.999;
  double init_bound = 0.1;

  void validate() const {
    space.validate();
    if (hidden == 0) throw ParameterError("controller hidden size must be positive");
    if (!(temperature > 0)) throw ParameterError("controller temperature must be positive");
    if (!(baseline_decay >= 0 && baseline_decay < 1)) throw ParameterError("baseline decay must be in [0,1)");
  }
};

struct SampleTrace {
  ArchitectureEncoding encoding;
  std::vector<double> decision_log_probs;
  double log_prob = 0.0;
  double entropy = 0.0;
};

/// Exponential moving average of rewards. The first observed batch sets the
/// value to its mean.
struct BaselineState {
  double value = 0.0;
  double decay = 0.999;
  bool initialized = false;

  void observe(const std::vector<double>& rewards) {
    if (rewards.empty()) return;
    double m = 0;
    for (double r : rewards) m += r;
    m /= static_cast<double>(rewards.size());
    if (!initialized) {
      value = m;
      initialized = true;
      return;
    }
    for (double r : rewards) value = decay * value + (1.0 - decay) * r;
  }
};

template <typename T>
class Controller {
 public:
  Controller(const ControllerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t H = cfg_.hidden, N = cfg_.space.num_layers;
    Rng rng = Rng(seed).substream("controller");
    const double b = cfg_.init_bound;
    lstm_wx_ = store_.add("ctrl.lstm.wx", init::uniform<T>({H, 4 * H}, b, rng));
    lstm_wh_ = store_.add("ctrl.lstm.wh", init::uniform<T>({H, 4 * H}, b, rng));
    lstm_b_ = store_.add("ctrl.lstm.b", Tensor<T>({4 * H}));
    start_ = store_.add("ctrl.start", init::uniform<T>({1, H}, b, rng));
    input_embed_ = store_.add("ctrl.input_embed", init::uniform<T>({N, H}, b, rng));
    skip_embed_ = store_.add("ctrl.skip_embed", init::uniform<T>({N, H}, b, rng));
    op_embed_ = store_.add("ctrl.op_embed", init::uniform<T>({kNumLayerOps, H}, b, rng));
    w_input_ = store_.add("ctrl.w_input", init::uniform<T>({H, N}, b, rng));
    w_skip_ = store_.add("ctrl.w_skip", init::uniform<T>({H, N}, b, rng));
    w_op_ = store_.add("ctrl.w_op", init::uniform<T>({H, kNumLayerOps}, b, rng));
    optimizer_.emplace(OptimizerConfig{.kind = OptimizerKind::kAdam}, store_.parameter_tensors());
    baseline_.decay = cfg_.baseline_decay;
  }

  const ControllerConfig& config() const { return cfg_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  BaselineState& baseline() { return baseline_; }
  const BaselineState& baseline() const { return baseline_; }

  std::vector<Tensor<T>> parameters() const { return store_.parameter_tensors(); }

  /// Replaces parameter handles (same order and shapes as parameters()).
  /// Used by gradient checks that evaluate the policy in another precision.
  void bind(const std::vector<Tensor<T>>& ps) {
    std::vector<Tensor<T>*> slots = {&lstm_wx_,    &lstm_wh_,   &lstm_b_,   &start_,  &input_embed_,
                                     &skip_embed_, &op_embed_,  &w_input_,  &w_skip_, &w_op_};
    if (ps.size() != slots.size()) throw UsageError("controller bind: wrong parameter count");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i].shape() != slots[i]->shape()) throw DimensionError("controller bind: shape mismatch");
      *slots[i] = ps[i];
    }
  }

  /// Sets every output projection to zero (uniform decisions).
  void zero_projections() {
    for (auto* t : {&w_input_, &w_skip_, &w_op_})
      for (auto& v : t->data()) v = T(0);
  }

  SampleTrace sample(Rng& rng) const {
    Tape<T> tape(false);
    return run(tape, nullptr, &rng).trace;
  }

  /// Teacher-forced log-probability of a valid encoding.
  double log_prob(const ArchitectureEncoding& enc) const {
    check(enc);
    Tape<T> tape(false);
    return run(tape, &enc, nullptr).trace.log_prob;
  }

  struct Graph {
    SampleTrace trace;
    Tensor<T> log_prob;  // scalar on the tape
    Tensor<T> entropy;
  };

  /// Teacher-forced pass recording on `tape`.
  Graph log_prob_graph(Tape<T>& tape, const ArchitectureEncoding& enc) const {
    check(enc);
    return run(tape, &enc, nullptr);
  }

  /// One Adam step on -mean((R - b) log p) - beta * mean(H); the baseline is
  /// updated after use. Returns the loss value.
  double reinforce_update(const std::vector<SampleTrace>& traces, const std::vector<double>& rewards) {
    if (traces.size() != rewards.size()) {
      throw UsageError("reinforce_update: " + std::to_string(traces.size()) + " traces vs " +
                       std::to_string(rewards.size()) + " rewards");
    }
    if (traces.empty()) throw UsageError("reinforce_update needs at least one trace");
    if (!baseline_.initialized) baseline_.observe(rewards);
    const double b = baseline_.value;
    Tape<T> tape;
    Tensor<T> loss;
    const T inv = T(1) / static_cast<T>(traces.size());
    for (std::size_t k = 0; k < traces.size(); ++k) {
      auto g = run(tape, &traces[k].encoding, nullptr);
      auto term = ops::add(tape, ops::scale(tape, g.log_prob, static_cast<T>(-(rewards[k] - b)) * inv),
                           ops::scale(tape, g.entropy, static_cast<T>(-cfg_.entropy_weight) * inv));
      loss = k == 0 ? term : ops::add(tape, loss, term);
    }
    store_.zero_grad();
    for (auto& p : store_.parameter_tensors()) p.ensure_grad();
    const double value = loss.item();
    if (loss.requires_grad()) tape.backward(loss);
    optimizer_->step(cfg_.lr);
    baseline_.observe(rewards);
    return value;
  }

 private:
  void check(const ArchitectureEncoding& enc) const {
    const auto v = validate(enc, cfg_.space);
    if (!v.empty()) throw DataError("encoding violates the search space:\n" + describe(v));
  }

  Tensor<T> squash(Tape<T>& tape, const Tensor<T>& raw) const {
    return ops::scale(tape, ops::tanh(tape, ops::scale(tape, raw, static_cast<T>(1.0 / cfg_.temperature))),
                      static_cast<T>(cfg_.tanh_constant));
  }

  struct LstmState {
    Tensor<T> h, c;
  };

  LstmState lstm(Tape<T>& tape, const Tensor<T>& x, const LstmState& s) const {
    const std::size_t H = cfg_.hidden;
    auto gates = ops::add_bias(
        tape, ops::add(tape, ops::matmul(tape, x, lstm_wx_), ops::matmul(tape, s.h, lstm_wh_)), lstm_b_);
    auto i = ops::sigmoid(tape, ops::slice(tape, gates, 1, 0, H));
    auto f = ops::sigmoid(tape, ops::slice(tape, gates, 1, H, H));
    auto g = ops::tanh(tape, ops::slice(tape, gates, 1, 2 * H, H));
    auto o = ops::sigmoid(tape, ops::slice(tape, gates, 1, 3 * H, H));
    auto c = ops::add(tape, ops::mul(tape, f, s.c), ops::mul(tape, i, g));
    return {ops::mul(tape, o, ops::tanh(tape, c)), c};
  }

  // Categorical decision over `logits` [1, n]: returns chosen index.
  std::size_t categorical(Tape<T>& tape, const Tensor<T>& logits, std::size_t forced, Rng* rng,
                          std::vector<Tensor<T>>& logps, std::vector<Tensor<T>>& ents,
                          std::vector<double>& trace_lp) const {
    const std::size_t n = logits.numel();
    auto lsm = ops::log_softmax(tape, logits, 1);
    std::size_t choice = forced;
    if (rng) {
      const double u = rng->uniform();
      double acc = 0;
      choice = n - 1;
      for (std::size_t j = 0; j < n; ++j) {
        acc += std::exp(static_cast<double>(lsm[j]));
        if (u < acc) {
          choice = j;
          break;
        }
      }
    }
    auto lp = ops::pick(tape, lsm, choice);
    trace_lp.push_back(static_cast<double>(lp.item()));
    logps.push_back(lp);
    if (n > 1) ents.push_back(ops::scale(tape, ops::sum(tape, ops::mul(tape, ops::exp(tape, lsm), lsm)), T(-1)));
    return choice;
  }

  Graph run(Tape<T>& tape, const ArchitectureEncoding* forced, Rng* rng) const {
    const std::size_t N = cfg_.space.num_layers, H = cfg_.hidden;
    Graph out;
    out.trace.encoding.layers.resize(N);
    std::vector<Tensor<T>> logps, ents;
    LstmState s{Tensor<T>({1, H}), Tensor<T>({1, H})};
    Tensor<T> x = start_;
    for (std::size_t i = 1; i <= N; ++i) {
      auto& d = out.trace.encoding.layer(i);
      // input id
      s = lstm(tape, x, s);
      const std::size_t lo = cfg_.space.window_begin(i), w = cfg_.space.window_size(i);
      auto in_logits = squash(tape, ops::matmul(tape, s.h, ops::slice(tape, w_input_, 1, lo, w)));
      const std::size_t in_forced = forced ? forced->layer(i).input - lo : 0;
      d.input = lo + categorical(tape, in_logits, in_forced, rng, logps, ents, out.trace.decision_log_probs);
      x = ops::slice(tape, input_embed_, 0, d.input, 1);
      // skip bits
      s = lstm(tape, x, s);
      auto sk_logits = squash(tape, ops::matmul(tape, s.h, ops::slice(tape, w_skip_, 1, 0, i)));
      std::vector<std::uint8_t> bits(i, 0);
      if (forced) {
        for (auto j : forced->layer(i).skips) bits[j] = 1;
      } else {
        for (std::size_t j = 0; j < i; ++j) {
          const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(sk_logits[j])));
          bits[j] = rng->uniform() < p ? 1 : 0;
        }
      }
      std::vector<T> sign(i);
      for (std::size_t j = 0; j < i; ++j) sign[j] = bits[j] ? T(1) : T(-1);
      // log p(bit) = log_sigmoid(+-logit)
      auto signed_logits = ops::mul(tape, sk_logits, ops::constant<T>({1, i}, sign));
      auto bit_lp = ops::log_sigmoid(tape, signed_logits);
      for (std::size_t j = 0; j < i; ++j) out.trace.decision_log_probs.push_back(static_cast<double>(bit_lp[j]));
      logps.push_back(ops::sum(tape, bit_lp));
      {
        // H = -(p log p + (1 - p) log(1 - p)), p = sigmoid(l)
        auto lp_pos = ops::log_sigmoid(tape, sk_logits);
        auto lp_neg = ops::log_sigmoid(tape, ops::scale(tape, sk_logits, T(-1)));
        auto ent = ops::add(tape, ops::mul(tape, ops::exp(tape, lp_pos), lp_pos),
                            ops::mul(tape, ops::exp(tape, lp_neg), lp_neg));
        ents.push_back(ops::scale(tape, ops::sum(tape, ent), T(-1)));
      }
      d.skips.clear();
      std::vector<Tensor<T>> rows;
      for (std::size_t j = 0; j < i; ++j)
        if (bits[j]) {
          d.skips.push_back(j);
          rows.push_back(ops::slice(tape, skip_embed_, 0, j, 1));
        }
      if (rows.empty()) {
        x = Tensor<T>({1, H});
      } else {
        Tensor<T> acc = rows[0];
        for (std::size_t r = 1; r < rows.size(); ++r) acc = ops::add(tape, acc, rows[r]);
        x = ops::scale(tape, acc, T(1) / static_cast<T>(rows.size()));
      }
      // operator
      s = lstm(tape, x, s);
      auto op_logits = squash(tape, ops::matmul(tape, s.h, w_op_));
      const std::size_t op_forced = forced ? op_code(forced->layer(i).op) : 0;
      const std::size_t op = categorical(tape, op_logits, op_forced, rng, logps, ents, out.trace.decision_log_probs);
      d.op = kAllLayerOps[op];
      x = ops::slice(tape, op_embed_, 0, op, 1);
    }
    Tensor<T> lp = logps[0];
    for (std::size_t k = 1; k < logps.size(); ++k) lp = ops::add(tape, lp, logps[k]);
    Tensor<T> ent = ents[0];
    for (std::size_t k = 1; k < ents.size(); ++k) ent = ops::add(tape, ent, ents[k]);
    out.log_prob = lp;
    out.entropy = ent;
    double total = 0;
    for (double v : out.trace.decision_log_probs) total += v;
    out.trace.log_prob = total;
    out.trace.entropy = static_cast<double>(ent.item());
    return out;
  }

  ControllerConfig cfg_;
  ParameterStore<T> store_;
  Tensor<T> lstm_wx_, lstm_wh_, lstm_b_, start_, input_embed_, skip_embed_, op_embed_, w_input_, w_skip_, w_op_;
  std::optional<Optimizer<T>> optimizer_;
  BaselineState baseline_;
};

}  // namespace textnas
