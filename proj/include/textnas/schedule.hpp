#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>

#include "textnas/error.hpp"

namespace textnas {

struct CosineSchedule {
  double lr_max = 0.005;
  double lr_min = 0.0001;
  double period = 10;  // epochs per cycle
};

/// lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2, with t taken mod T so the
/// cycle restarts. t == T itself maps to the cycle end.
inline double cosine_lr(const CosineSchedule& s, double t_cur) {
  if (!(s.period > 0)) throw ParameterError("cosine cycle length must be positive");
  if (t_cur < 0) throw ParameterError("cosine schedule epoch must be non-negative");
  double t = t_cur;
  if (t > s.period) t = std::fmod(t, s.period);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * t / s.period));
}

enum class DecayPhase { kWarmup, kMain, kFinish, kDone };

inline const char* phase_name(DecayPhase p) {
  switch (p) {
    case DecayPhase::kWarmup: return "warmup";
    case DecayPhase::kMain: return "main";
    case DecayPhase::kFinish: return "finish";
    default: return "done";
  }
}

struct AutoDecayConfig {
  double init_rate = 0.02;
  std::size_t warmup_epochs = 5;
  double warmup_factor = 0.1;
  double decay_factor = 0.2;
  std::size_t window = 7;
  std::size_t max_decays = 4;
  std::size_t finish_epochs = 6;

  void validate() const {
    if (!(init_rate > 0)) throw ParameterError("init_rate must be positive");
    if (window == 0) throw ParameterError("moving-average window must be >= 1");
    if (!(decay_factor > 0 && decay_factor < 1)) throw ParameterError("decay factor must be in (0,1)");
  }
};

struct AutoDecayStep {
  double lr = 0;
  DecayPhase phase = DecayPhase::kWarmup;
  std::size_t decays = 0;
};

/// Learning rate for 1-based `epoch`, given the validation accuracies of
/// epochs 1..epoch-1. A decay fires after a post-warm-up epoch whose
/// `window`-epoch mean falls below the previous window's mean; the check needs
/// window + 1 post-warm-up accuracies. After the last decay come
/// `finish_epochs` epochs (train + valid) at the final rate, then kDone.
inline AutoDecayStep auto_decay_lr(const AutoDecayConfig& c, std::size_t epoch, std::span<const double> history) {
  c.validate();
  if (epoch == 0) throw ParameterError("epochs are 1-based");
  if (epoch <= c.warmup_epochs) return {c.warmup_factor * c.init_rate, DecayPhase::kWarmup, 0};
  const std::size_t seen = std::min(history.size(), epoch - 1);
  std::size_t d = 0, finish_start = 0;
  auto mean = [&](std::size_t end) {  // mean of history[end - window, end)
    double s = 0;
    for (std::size_t i = end - c.window; i < end; ++i) s += history[i];
    return s / static_cast<double>(c.window);
  };
  for (std::size_t n = c.warmup_epochs; n < seen && d < c.max_decays; ++n) {
    // history[n] is epoch n + 1
    if (n + 1 - c.warmup_epochs < c.window + 1) continue;
    if (mean(n + 1) < mean(n)) {
      ++d;
      if (d == c.max_decays) finish_start = n + 2;
    }
  }
  const double rate = c.init_rate * std::pow(c.decay_factor, static_cast<double>(d));
  if (d < c.max_decays) return {rate, DecayPhase::kMain, d};
  if (epoch < finish_start + c.finish_epochs) return {rate, DecayPhase::kFinish, d};
  return {rate, DecayPhase::kDone, d};
}

}  // namespace textnas
