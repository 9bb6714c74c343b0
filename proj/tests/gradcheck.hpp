#pragma once

// Central finite-difference oracle. The function under test is a generic
// callable f(tape, inputs) -> scalar tensor, instantiated once in the
// precision being checked (analytic gradient) and once in double on a
// disabled tape (numeric gradient), i.e. an f64 shadow evaluation.

#include <algorithm>
#include <cmath>
#include <vector>

#include "textnas/ops.hpp"
#include "textnas/rng.hpp"
#include "textnas/tensor.hpp"

namespace textnas::testing {

template <typename T>
std::vector<Tensor<T>> cast_all(const std::vector<Tensor<double>>& xs, bool requires_grad) {
  std::vector<Tensor<T>> out;
  for (const auto& x : xs) {
    auto t = x.template cast<T>();
    t.set_requires_grad(requires_grad);
    out.push_back(t);
  }
  return out;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// sum(w * y) with fixed pseudo-random weights, so every output coordinate
/// contributes to the checked gradient.
template <typename T>
Tensor<T> project(Tape<T>& tape, const Tensor<T>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<T> w(y.numel());
  for (auto& v : w) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return ops::sum(tape, ops::mul(tape, y, ops::constant<T>(y.shape(), std::move(w))));
}

struct GradCheckOptions {
  double h = 1e-3;
  std::size_t max_coords_per_input = 0;  // 0 = all coordinates
  std::uint64_t seed = 7;
};

/// Normwise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over the checked coordinates of all inputs.
template <typename T, typename F>
double grad_check(F f, const std::vector<Tensor<double>>& inputs, GradCheckOptions opt = {}) {
  auto xs = cast_all<T>(inputs, true);
  {
    Tape<T> tape;
    auto loss = f(tape, xs);
    tape.backward(loss);
  }
  Rng pick(opt.seed);
  double diff2 = 0, a2 = 0, n2 = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_input && coords.size() > opt.max_coords_per_input) {
      pick.shuffle(coords.begin(), coords.end());
      coords.resize(opt.max_coords_per_input);
    }
    for (auto c : coords) {
      auto eval = [&](double delta) {
        auto ys = cast_all<double>(inputs, false);
        ys[k][c] += delta;
        Tape<double> off(false);
        return f(off, ys).item();
      };
      const double numeric = (eval(opt.h) - eval(-opt.h)) / (2 * opt.h);
      const double analytic = xs[k].has_grad() ? static_cast<double>(xs[k].grad()[c]) : 0.0;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return std::sqrt(diff2) / denom;
}

}  // namespace textnas::testing
