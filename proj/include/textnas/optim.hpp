#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "textnas/error.hpp"
#include "textnas/tensor.hpp"

namespace textnas {

enum class OptimizerKind { kSgdMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 coefficient, added to the gradient
};

/// SGD with momentum or Adam over a fixed registered parameter set.
///
/// SGD:  v <- m v + g + wd p ;  p <- p - lr v
/// Adam: g' = g + wd p, bias-corrected moments, p <- p - lr m^ / (sqrt(v^) + eps)
///
/// Moment buffers and step counters are per parameter, so a step over a
/// subset (one sampled child of a shared supernet) leaves the rest untouched.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<Tensor<T>> params) : cfg_(cfg) {
    for (auto& p : params) {
      State s;
      s.param = p;
      s.m.assign(p.numel(), 0.0);
      if (cfg_.kind == OptimizerKind::kAdam) s.v.assign(p.numel(), 0.0);
      index_[p.impl().get()] = states_.size();
      states_.push_back(std::move(s));
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t size() const { return states_.size(); }

  void step(double lr) {
    for (auto& s : states_) update(s, lr);
  }

  void step(double lr, const std::vector<Tensor<T>>& active) {
    for (const auto& p : active) {
      auto it = index_.find(p.impl().get());
      if (it == index_.end()) throw UsageError("optimizer step on unregistered parameter");
      update(states_[it->second], lr);
    }
  }

  void zero_grad() {
    for (auto& s : states_) s.param.zero_grad();
  }

  /// Adam first-moment buffer (or SGD velocity) for a registered parameter.
  const std::vector<double>& moment(const Tensor<T>& p) const {
    return states_.at(index_.at(p.impl().get())).m;
  }

 private:
  struct State {
    Tensor<T> param;
    std::vector<double> m;  // Adam first moment, or SGD velocity
    std::vector<double> v;
    long steps = 0;
  };

  void update(State& s, double lr) {
    if (!s.param.has_grad()) throw UsageError("optimizer step on a parameter without gradient");
    auto data = s.param.data();
    auto grad = s.param.grad();
    ++s.steps;
    if (cfg_.kind == OptimizerKind::kSgdMomentum) {
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = static_cast<double>(grad[i]) + cfg_.weight_decay * data[i];
        s.m[i] = cfg_.momentum * s.m[i] + g;
        data[i] = static_cast<T>(data[i] - lr * s.m[i]);
      }
      return;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.steps));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.steps));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = static_cast<double>(grad[i]) + cfg_.weight_decay * data[i];
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mh = s.m[i] / bc1;
      const double vh = s.v[i] / bc2;
      data[i] = static_cast<T>(data[i] - lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }

  OptimizerConfig cfg_;
  std::vector<State> states_;
  std::unordered_map<const void*, std::size_t> index_;
};

}  // namespace textnas
