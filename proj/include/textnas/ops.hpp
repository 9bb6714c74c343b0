#pragma once

// Differentiable primitives. Every op takes the tape it records onto; on a
// disabled tape outputs never require gradients and nothing is recorded.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "textnas/error.hpp"
#include "textnas/rng.hpp"
#include "textnas/tensor.hpp"

namespace textnas::ops {

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
Tensor<T> result(Tape<T>& tape, Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  Tensor<T> out(std::move(shape));
  out.set_requires_grad(tape.enabled() && any_requires_grad(inputs));
  return out;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Splits a shape into (outer, axis, inner) extents around `axis`.
inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& len,
                       std::size_t& inner) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

template <typename T>
Tensor<T> constant(Shape shape, std::vector<T> values) {
  return Tensor<T>::from(std::move(shape), std::move(values), false);
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n], or batched [B,m,k] x [B,k,n] -> [B,m,n].
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool ok2 = sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0];
  const bool ok3 = sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1];
  if (!ok2 && !ok3) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const std::size_t batch = ok3 ? sa[0] : 1;
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  Shape so = ok3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> out = detail::result(tape, so, {&a, &b});
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data().data();
    for (std::size_t bt = 0; bt < batch; ++bt) {
      const T* A = pa + bt * m * k;
      const T* B = pb + bt * k * n;
      T* C = po + bt * m * n;
      for (std::size_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T av = A[i * k + p];
          if (av == T(0)) continue;
          const T* brow = B + p * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
  detail::check_finite(out, "matmul");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), ai = a.impl(), bi = b.impl(), batch, m, k, n] {
      if (oi->grad.empty()) return;
      const T* G = oi->grad.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (std::size_t bt = 0; bt < batch; ++bt) {
          const T* g = G + bt * m * n;
          const T* B = bi->data.data() + bt * k * n;
          T* dA = ai->grad.data() + bt * m * k;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T acc = 0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
              dA[i * k + p] += acc;
            }
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t bt = 0; bt < batch; ++bt) {
          const T* g = G + bt * m * n;
          const T* A = ai->data.data() + bt * m * k;
          T* dB = bi->grad.data() + bt * k * n;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T av = A[i * k + p];
              if (av == T(0)) continue;
              for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * g[i * n + j];
            }
        }
      }
    });
  }
  return out;
}

/// Adds a vector along the last axis: x[..., j] + bias[j].
template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.shape().back();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  Tensor<T> out = detail::result(tape, x.shape(), {&x, &bias});
  const std::size_t rows = x.numel() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + bias[j];
  detail::check_finite(out, "add_bias");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), bi = bias.impl(), rows, n] {
      if (oi->grad.empty()) return;
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (std::size_t i = 0; i < rows * n; ++i) xi->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) bi->grad[j] += oi->grad[r * n + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

enum class Elementwise { kRelu, kSigmoid, kTanh, kAdd, kMul, kSub, kAbs };

namespace detail {

// Unary map with derivative expressed through (input, output).
template <typename T, typename F, typename D>
Tensor<T> unary(Tape<T>& tape, const Tensor<T>& x, const char* name, F f, D df) {
  Tensor<T> out = result(tape, x.shape(), {&x});
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  check_finite(out, name);
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), df] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += oi->grad[i] * df(xi->data[i], oi->data[i]);
    });
  }
  return out;
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind,
                 const char* name) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar) require_same_shape(a, b, name);
  const Shape shape = a_scalar ? b.shape() : a.shape();
  Tensor<T> out = result(tape, shape, {&a, &b});
  const std::size_t n = out.numel();
  auto av = [&](std::size_t i) { return a_scalar ? a[0] : a[i]; };
  auto bv = [&](std::size_t i) { return b_scalar ? b[0] : b[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case BinaryKind::kAdd: out[i] = av(i) + bv(i); break;
      case BinaryKind::kSub: out[i] = av(i) - bv(i); break;
      case BinaryKind::kMul: out[i] = av(i) * bv(i); break;
    }
  }
  check_finite(out, name);
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), ai = a.impl(), bi = b.impl(), kind, a_scalar, b_scalar, n] {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T d = g[i];
          if (kind == BinaryKind::kMul) d *= b_scalar ? bi->data[0] : bi->data[i];
          ai->grad[a_scalar ? 0 : i] += d;
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T d = g[i];
          if (kind == BinaryKind::kSub) d = -d;
          if (kind == BinaryKind::kMul) d *= a_scalar ? ai->data[0] : ai->data[i];
          bi->grad[b_scalar ? 0 : i] += d;
        }
      }
    });
  }
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(tape, a, b, detail::BinaryKind::kAdd, "add");
}
template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(tape, a, b, detail::BinaryKind::kSub, "sub");
}
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(tape, a, b, detail::BinaryKind::kMul, "mul");
}

/// relu'(0) is 0.
template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary(
      tape, x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}
template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary(
      tape, x, "sigmoid", [](T v) { return detail::stable_sigmoid(v); },
      [](T, T y) { return y * (T(1) - y); });
}
template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary(
      tape, x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}
template <typename T>
Tensor<T> abs(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary(
      tape, x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}
template <typename T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary(
      tape, x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
/// log(sigmoid(x)), stable for large |x|.
template <typename T>
Tensor<T> log_sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary(
      tape, x, "log_sigmoid",
      [](T v) { return v >= T(0) ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); },
      [](T v, T) { return T(1) - detail::stable_sigmoid(v); });
}
template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  return detail::unary(
      tape, x, "scale", [factor](T v) { return v * factor; },
      [factor](T, T) { return factor; });
}
template <typename T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& x, T c) {
  return detail::unary(
      tape, x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

/// Dispatcher over the named pointwise ops.
template <typename T>
Tensor<T> elementwise(Tape<T>& tape, Elementwise op, std::span<const Tensor<T>> args) {
  const bool binary = op == Elementwise::kAdd || op == Elementwise::kMul || op == Elementwise::kSub;
  if (args.size() != (binary ? 2u : 1u)) throw UsageError("elementwise: wrong argument count");
  switch (op) {
    case Elementwise::kRelu: return relu(tape, args[0]);
    case Elementwise::kSigmoid: return sigmoid(tape, args[0]);
    case Elementwise::kTanh: return tanh(tape, args[0]);
    case Elementwise::kAbs: return abs(tape, args[0]);
    case Elementwise::kAdd: return add(tape, args[0], args[1]);
    case Elementwise::kSub: return sub(tape, args[0], args[1]);
    case Elementwise::kMul: return mul(tape, args[0], args[1]);
  }
  throw UsageError("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = detail::result(tape, {1}, {&x});
  T acc = 0;
  for (T v : x.data()) acc += v;
  out[0] = acc;
  detail::check_finite(out, "sum");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl()] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (auto& g : xi->grad) g += oi->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  return scale(tape, sum(tape, x), T(1) / static_cast<T>(x.numel()));
}

/// Sum of squared entries.
template <typename T>
Tensor<T> sum_squares(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = detail::result(tape, {1}, {&x});
  T acc = 0;
  for (T v : x.data()) acc += v * v;
  out[0] = acc;
  detail::check_finite(out, "sum_squares");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl()] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += T(2) * xi->data[i] * oi->grad[0];
    });
  }
  return out;
}

/// Single element as a scalar tensor.
template <typename T>
Tensor<T> pick(Tape<T>& tape, const Tensor<T>& x, std::size_t index) {
  if (index >= x.numel()) throw DimensionError("pick: index out of range");
  Tensor<T> out = detail::result(tape, {1}, {&x});
  out[0] = x[index];
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), index] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      xi->grad[index] += oi->grad[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
  std::size_t outer, len, inner;
  detail::split_axis(x.shape(), axis, outer, len, inner);
  Tensor<T> out = detail::result(tape, x.shape(), {&x});
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
      T z = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(x[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= z;
    }
  detail::check_finite(out, "softmax");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), outer, len, inner] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t i = 0; i < len; ++i)
            dot += oi->grad[base + i * inner] * oi->data[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t p = base + i * inner;
            xi->grad[p] += oi->data[p] * (oi->grad[p] - dot);
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
  std::size_t outer, len, inner;
  detail::split_axis(x.shape(), axis, outer, len, inner);
  Tensor<T> out = detail::result(tape, x.shape(), {&x});
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
      T z = 0;
      for (std::size_t i = 0; i < len; ++i) z += std::exp(x[base + i * inner] - mx);
      const T lz = std::log(z);
      for (std::size_t i = 0; i < len; ++i)
        out[base + i * inner] = x[base + i * inner] - mx - lz;
    }
  detail::check_finite(out, "log_softmax");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), outer, len, inner] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T gs = 0;
          for (std::size_t i = 0; i < len; ++i) gs += oi->grad[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t p = base + i * inner;
            xi->grad[p] += oi->grad[p] - std::exp(oi->data[p]) * gs;
          }
        }
    });
  }
  return out;
}

/// Softmax over the last axis of [B, Lq, Lk] scores where key positions with
/// key_valid == 0 are excluded. key_valid holds (B / group) x Lk flags and
/// batch row b uses flags row b / group. A row with no valid key yields zeros.
template <typename T>
Tensor<T> masked_softmax(Tape<T>& tape, const Tensor<T>& x, std::span<const std::uint8_t> key_valid,
                         std::size_t group = 1) {
  if (x.rank() != 3) throw DimensionError("masked_softmax expects rank 3, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), Lq = x.dim(1), Lk = x.dim(2);
  if (group == 0 || B % group != 0 || key_valid.size() != (B / group) * Lk) {
    throw DimensionError("masked_softmax: mask size does not match scores " + shape_str(x.shape()));
  }
  std::vector<std::uint8_t> mask(key_valid.begin(), key_valid.end());
  Tensor<T> out = detail::result(tape, x.shape(), {&x});
  for (std::size_t b = 0; b < B; ++b) {
    const std::uint8_t* valid = mask.data() + (b / group) * Lk;
    for (std::size_t q = 0; q < Lq; ++q) {
      const std::size_t base = (b * Lq + q) * Lk;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < Lk; ++k)
        if (valid[k]) mx = std::max(mx, x[base + k]);
      if (!std::isfinite(mx)) continue;  // fully masked, stays zero
      T z = 0;
      for (std::size_t k = 0; k < Lk; ++k) {
        if (!valid[k]) continue;
        const T e = std::exp(x[base + k] - mx);
        out[base + k] = e;
        z += e;
      }
      for (std::size_t k = 0; k < Lk; ++k) out[base + k] /= z;
    }
  }
  detail::check_finite(out, "masked_softmax");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), rows = B * Lq, Lk] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * Lk;
        T dot = 0;
        for (std::size_t k = 0; k < Lk; ++k) dot += oi->grad[base + k] * oi->data[base + k];
        for (std::size_t k = 0; k < Lk; ++k)
          xi->grad[base + k] += oi->data[base + k] * (oi->grad[base + k] - dot);
      }
    });
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t i = 0; i < B; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= C) {
      throw DataError("cross_entropy: label " + std::to_string(lab[i]) + " at row " +
                      std::to_string(i) + " outside [0," + std::to_string(C) + ")");
    }
  }
  std::vector<T> probs(B * C);
  T total = 0;
  for (std::size_t i = 0; i < B; ++i) {
    const T* row = logits.data().data() + i * C;
    const T mx = *std::max_element(row, row + C);
    T z = 0;
    for (std::size_t c = 0; c < C; ++c) {
      probs[i * C + c] = std::exp(row[c] - mx);
      z += probs[i * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) probs[i * C + c] /= z;
    total += -(row[lab[i]] - mx - std::log(z));
  }
  Tensor<T> out = detail::result(tape, {1}, {&logits});
  out[0] = total / static_cast<T>(B);
  detail::check_finite(out, "cross_entropy");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), li = logits.impl(), probs = std::move(probs),
                 lab = std::move(lab), B, C] {
      if (oi->grad.empty()) return;
      li->ensure_grad();
      const T g = oi->grad[0] / static_cast<T>(B);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t c = 0; c < C; ++c) {
          const T onehot = static_cast<int>(c) == lab[i] ? T(1) : T(0);
          li->grad[i * C + c] += g * (probs[i * C + c] - onehot);
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out = detail::result(tape, std::move(shape), {&x});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl()] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

/// out.shape[i] = x.shape[perm[i]].
template <typename T>
Tensor<T> permute(Tape<T>& tape, const Tensor<T>& x, std::vector<std::size_t> perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape so(r);
  for (std::size_t i = 0; i < r; ++i) so[i] = x.dim(perm[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // source offset for each output element
  std::vector<std::size_t> src(x.numel());
  {
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
      src[flat] = off;
      for (std::size_t i = r; i-- > 0;) {
        if (++idx[i] < so[i]) break;
        idx[i] = 0;
      }
    }
  }
  Tensor<T> out = detail::result(tape, so, {&x});
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x[src[i]];
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), src = std::move(src)] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < src.size(); ++i) xi->grad[src[i]] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw UsageError("concat of zero tensors");
  Shape so = xs[0].shape();
  std::size_t outer, len0, inner;
  detail::split_axis(so, axis, outer, len0, inner);
  std::size_t total = 0;
  for (const auto& t : xs) {
    Shape s = t.shape();
    if (s.size() != so.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != so[i]) {
        throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(so));
      }
    }
    total += s[axis];
  }
  so[axis] = total;
  Tensor<T> out(so);
  bool needs = false;
  for (const auto& t : xs) needs = needs || t.requires_grad();
  out.set_requires_grad(tape.enabled() && needs);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t len = t.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.data().data() + o * len * inner, len * inner,
                  out.data().data() + (o * total + off) * inner);
    off += len;
  }
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    for (const auto& t : xs) impls.push_back(t.impl());
    tape.record([oi = out.impl(), impls = std::move(impls), offsets = std::move(offsets), outer,
                 inner, total, axis] {
      if (oi->grad.empty()) return;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        auto& ti = impls[k];
        if (!ti->requires_grad) continue;
        ti->ensure_grad();
        const std::size_t len = ti->shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < len * inner; ++j)
            ti->grad[o * len * inner + j] += oi->grad[(o * total + offsets[k]) * inner + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t length) {
  std::size_t outer, len, inner;
  detail::split_axis(x.shape(), axis, outer, len, inner);
  if (length == 0 || begin + length > len) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(begin + length) +
                         ") out of range for " + shape_str(x.shape()));
  }
  Shape so = x.shape();
  so[axis] = length;
  Tensor<T> out = detail::result(tape, so, {&x});
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + (o * len + begin) * inner, length * inner,
                out.data().data() + o * length * inner);
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), outer, len, inner, begin, length] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < length * inner; ++j)
          xi->grad[(o * len + begin) * inner + j] += oi->grad[o * length * inner + j];
    });
  }
  return out;
}

/// Stacks equal-shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(Tape<T>& tape, const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw UsageError("stack of zero tensors");
  std::vector<Tensor<T>> expanded;
  expanded.reserve(xs.size());
  for (const auto& t : xs) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(tape, t, s));
  }
  return concat(tape, expanded, 0);
}

// ---------------------------------------------------------------------------
// Sequence ops over <batch, channels, len>

/// Stride-1 convolution with zero SAME padding. x: [b, cin, L], weight:
/// [cout, cin, width] (odd width), bias: [cout] or undefined.
template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 3) throw DimensionError("conv1d: weight must be [cout, cin, width]");
  const std::size_t width = weight.dim(2);
  if (width % 2 == 0) throw ParameterError("conv1d: width must be odd, got " + std::to_string(width));
  if (x.rank() != 3 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2), Cout = weight.dim(0);
  if (bias.defined() && bias.numel() != Cout) throw DimensionError("conv1d: bias size mismatch");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(width / 2);
  Tensor<T> out = detail::result(tape, {B, Cout, L}, {&x, &weight, &bias});
  const T* X = x.data().data();
  const T* W = weight.data().data();
  T* Y = out.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Cout; ++o) {
      T* yrow = Y + (b * Cout + o) * L;
      if (bias.defined()) std::fill_n(yrow, L, bias[o]);
      for (std::size_t c = 0; c < Cin; ++c) {
        const T* xrow = X + (b * Cin + c) * L;
        const T* w = W + (o * Cin + c) * width;
        for (std::size_t j = 0; j < width; ++j) {
          const T wv = w[j];
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - half;
          const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
          const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(L, static_cast<std::ptrdiff_t>(L) - shift);
          for (std::ptrdiff_t t = t0; t < t1; ++t) yrow[t] += wv * xrow[t + shift];
        }
      }
    }
  detail::check_finite(out, "conv1d");
  if (out.requires_grad()) {
    auto bi = bias.defined() ? bias.impl() : nullptr;
    tape.record([oi = out.impl(), xi = x.impl(), wi = weight.impl(), bi, B, Cin, Cout, L, width,
                 half] {
      if (oi->grad.empty()) return;
      const T* G = oi->grad.data();
      if (bi && bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t o = 0; o < Cout; ++o)
            for (std::size_t t = 0; t < L; ++t) bi->grad[o] += G[(b * Cout + o) * L + t];
      }
      const bool dx = xi->requires_grad, dw = wi->requires_grad;
      if (dx) xi->ensure_grad();
      if (dw) wi->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Cout; ++o) {
          const T* grow = G + (b * Cout + o) * L;
          for (std::size_t c = 0; c < Cin; ++c) {
            const T* xrow = xi->data.data() + (b * Cin + c) * L;
            for (std::size_t j = 0; j < width; ++j) {
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - half;
              const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
              const std::ptrdiff_t t1 =
                  std::min<std::ptrdiff_t>(L, static_cast<std::ptrdiff_t>(L) - shift);
              const std::size_t widx = (o * Cin + c) * width + j;
              if (dw) {
                T acc = 0;
                for (std::ptrdiff_t t = t0; t < t1; ++t) acc += grow[t] * xrow[t + shift];
                wi->grad[widx] += acc;
              }
              if (dx) {
                const T wv = wi->data[widx];
                T* dxrow = xi->grad.data() + (b * Cin + c) * L;
                for (std::ptrdiff_t t = t0; t < t1; ++t) dxrow[t + shift] += wv * grow[t];
              }
            }
          }
        }
    });
  }
  return out;
}

enum class PoolKind { kMax, kAvg };

/// Width-3, stride-1 SAME pooling along the last axis. Padded positions never
/// win a max and are excluded from the average divisor.
template <typename T>
Tensor<T> pool1d(Tape<T>& tape, const Tensor<T>& x, PoolKind kind) {
  if (x.rank() != 3) throw DimensionError("pool1d expects <batch, dim, len>, got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), L = x.dim(2);
  Tensor<T> out = detail::result(tape, x.shape(), {&x});
  std::vector<std::uint32_t> argmax;
  if (kind == PoolKind::kMax) argmax.resize(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * L;
    T* yr = out.data().data() + r * L;
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t lo = t == 0 ? 0 : t - 1;
      const std::size_t hi = std::min(L - 1, t + 1);
      if (kind == PoolKind::kMax) {
        std::size_t best = lo;
        for (std::size_t s = lo + 1; s <= hi; ++s)
          if (xr[s] > xr[best]) best = s;
        yr[t] = xr[best];
        argmax[r * L + t] = static_cast<std::uint32_t>(best);
      } else {
        T acc = 0;
        for (std::size_t s = lo; s <= hi; ++s) acc += xr[s];
        yr[t] = acc / static_cast<T>(hi - lo + 1);
      }
    }
  }
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), argmax = std::move(argmax), kind, rows, L] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < L; ++t) {
          const T g = oi->grad[r * L + t];
          if (kind == PoolKind::kMax) {
            xi->grad[r * L + argmax[r * L + t]] += g;
          } else {
            const std::size_t lo = t == 0 ? 0 : t - 1;
            const std::size_t hi = std::min(L - 1, t + 1);
            const T share = g / static_cast<T>(hi - lo + 1);
            for (std::size_t s = lo; s <= hi; ++s) xi->grad[r * L + s] += share;
          }
        }
    });
  }
  return out;
}

/// Max over the time axis of [b, d, L] restricted to valid positions.
/// valid has b x L flags; a row without any valid position is a data error.
template <typename T>
Tensor<T> masked_max_time(Tape<T>& tape, const Tensor<T>& x, std::span<const std::uint8_t> valid) {
  if (x.rank() != 3) throw DimensionError("masked_max_time expects rank 3");
  const std::size_t B = x.dim(0), D = x.dim(1), L = x.dim(2);
  if (valid.size() != B * L) throw DimensionError("masked_max_time: mask size mismatch");
  Tensor<T> out = detail::result(tape, {B, D}, {&x});
  std::vector<std::size_t> arg(B * D);
  for (std::size_t b = 0; b < B; ++b) {
    const auto* vb = valid.data() + b * L;
    if (std::none_of(vb, vb + L, [](std::uint8_t f) { return f != 0; })) {
      throw DataError("all-pad sequence at batch row " + std::to_string(b));
    }
    for (std::size_t d = 0; d < D; ++d) {
      const T* row = x.data().data() + (b * D + d) * L;
      std::size_t best = L;
      for (std::size_t t = 0; t < L; ++t)
        if (vb[t] && (best == L || row[t] > row[best])) best = t;
      out[b * D + d] = row[best];
      arg[b * D + d] = (b * D + d) * L + best;
    }
  }
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), arg = std::move(arg)] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < arg.size(); ++i) xi->grad[arg[i]] += oi->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and regularization

enum class NormMode {
  kTrain,       // batch statistics, running statistics updated
  kBatchStats,  // batch statistics, running statistics untouched (read-only)
  kEval,        // running statistics
};

template <typename T>
struct BatchNormState {
  Tensor<T> scale;  // per channel, trainable
  Tensor<T> shift;  // per channel, trainable
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  static BatchNormState create(std::size_t channels) {
    BatchNormState s;
    s.scale = Tensor<T>({channels}, T(1), true);
    s.shift = Tensor<T>({channels}, T(0), true);
    s.running_mean = Tensor<T>({channels}, T(0));
    s.running_var = Tensor<T>({channels}, T(1));
    return s;
  }
};

/// Per-channel normalization of [b, dim, len] over batch x len.
template <typename T>
Tensor<T> batchnorm1d(Tape<T>& tape, const Tensor<T>& x, BatchNormState<T>& st, NormMode mode) {
  if (x.rank() != 3 || x.dim(1) != st.scale.numel()) {
    throw DimensionError("batchnorm1d: input " + shape_str(x.shape()) + " vs " +
                         std::to_string(st.scale.numel()) + " channels");
  }
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2), n = B * L;
  const bool batch_stats = mode != NormMode::kEval;
  if (batch_stats && n < 2) {
    throw DimensionError("batchnorm1d: degenerate statistics (batch x len = " + std::to_string(n) + ")");
  }
  Tensor<T> out = detail::result(tape, x.shape(), {&x, &st.scale, &st.shift});
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    T mu, var;
    if (batch_stats) {
      T acc = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) acc += x[(b * C + c) * L + t];
      mu = acc / static_cast<T>(n);
      T sq = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) {
          const T d = x[(b * C + c) * L + t] - mu;
          sq += d * d;
        }
      var = sq / static_cast<T>(n);
      if (mode == NormMode::kTrain) {
        const T m = static_cast<T>(st.momentum);
        st.running_mean[c] = m * st.running_mean[c] + (T(1) - m) * mu;
        st.running_var[c] = m * st.running_var[c] + (T(1) - m) * var * static_cast<T>(n) /
                                                        static_cast<T>(n - 1);
      }
    } else {
      mu = st.running_mean[c];
      var = st.running_var[c];
    }
    inv_std[c] = T(1) / std::sqrt(var + static_cast<T>(st.eps));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t p = (b * C + c) * L + t;
        xhat[p] = (x[p] - mu) * inv_std[c];
        out[p] = st.scale[c] * xhat[p] + st.shift[c];
      }
  }
  detail::check_finite(out, "batchnorm1d");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), gi = st.scale.impl(), bi = st.shift.impl(),
                 xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, L, n, batch_stats] {
      if (oi->grad.empty()) return;
      const auto& G = oi->grad;
      if (gi->requires_grad || bi->requires_grad) {
        gi->ensure_grad();
        bi->ensure_grad();
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < L; ++t) {
              const std::size_t p = (b * C + c) * L + t;
              gi->grad[c] += G[p] * xhat[p];
              bi->grad[c] += G[p];
            }
      }
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) {
        const T g = gi->data[c];
        if (!batch_stats) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < L; ++t) {
              const std::size_t p = (b * C + c) * L + t;
              xi->grad[p] += G[p] * g * inv_std[c];
            }
          continue;
        }
        T sum_d = 0, sum_dx = 0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < L; ++t) {
            const std::size_t p = (b * C + c) * L + t;
            sum_d += G[p] * g;
            sum_dx += G[p] * g * xhat[p];
          }
        const T nn = static_cast<T>(n);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < L; ++t) {
            const std::size_t p = (b * C + c) * L + t;
            xi->grad[p] += inv_std[c] / nn * (nn * G[p] * g - sum_d - xhat[p] * sum_dx);
          }
      }
    });
  }
  return out;
}

/// Normalizes every position over the last (feature) axis, then scale/shift.
template <typename T>
Tensor<T> layernorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& scale_p,
                    const Tensor<T>& shift_p, double eps = 1e-5) {
  const std::size_t D = x.shape().back();
  if (scale_p.numel() != D || shift_p.numel() != D) {
    throw DimensionError("layernorm: parameters do not match feature size " + std::to_string(D));
  }
  const std::size_t rows = x.numel() / D;
  Tensor<T> out = detail::result(tape, x.shape(), {&x, &scale_p, &shift_p});
  std::vector<T> xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * D;
    T mu = 0;
    for (std::size_t j = 0; j < D; ++j) mu += xr[j];
    mu /= static_cast<T>(D);
    T var = 0;
    for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(D);
    inv_std[r] = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < D; ++j) {
      xhat[r * D + j] = (xr[j] - mu) * inv_std[r];
      out[r * D + j] = scale_p[j] * xhat[r * D + j] + shift_p[j];
    }
  }
  detail::check_finite(out, "layernorm");
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), gi = scale_p.impl(), bi = shift_p.impl(),
                 xhat = std::move(xhat), inv_std = std::move(inv_std), rows, D] {
      if (oi->grad.empty()) return;
      const auto& G = oi->grad;
      if (gi->requires_grad || bi->requires_grad) {
        gi->ensure_grad();
        bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < D; ++j) {
            gi->grad[j] += G[r * D + j] * xhat[r * D + j];
            bi->grad[j] += G[r * D + j];
          }
      }
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      const T nn = static_cast<T>(D);
      for (std::size_t r = 0; r < rows; ++r) {
        T sum_d = 0, sum_dx = 0;
        for (std::size_t j = 0; j < D; ++j) {
          const T d = G[r * D + j] * gi->data[j];
          sum_d += d;
          sum_dx += d * xhat[r * D + j];
        }
        for (std::size_t j = 0; j < D; ++j) {
          const T d = G[r * D + j] * gi->data[j];
          xi->grad[r * D + j] += inv_std[r] / nn * (nn * d - sum_d - xhat[r * D + j] * sum_dx);
        }
      }
    });
  }
  return out;
}

/// Inverted dropout. Identity when not training or ratio == 0.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double ratio, bool training, Rng* rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ParameterError("dropout ratio must be in [0, 1), got " + std::to_string(ratio));
  }
  if (!training || ratio == 0.0) return x;
  if (rng == nullptr) throw UsageError("dropout in training mode needs a random stream");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - ratio));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng->uniform() < ratio ? T(0) : keep_scale;
  Tensor<T> out = detail::result(tape, x.shape(), {&x});
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * mask[i];
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), xi = x.impl(), mask = std::move(mask)] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < mask.size(); ++i) xi->grad[i] += oi->grad[i] * mask[i];
    });
  }
  return out;
}

/// Gathers table rows for a [batch, len] id matrix into channel-first
/// [batch, emb_dim, len].
template <typename T>
Tensor<T> embedding_lookup(Tape<T>& tape, std::span<const std::int32_t> ids, std::size_t batch,
                           std::size_t len, const Tensor<T>& table) {
  if (ids.size() != batch * len) throw DimensionError("embedding_lookup: id matrix size mismatch");
  if (table.rank() != 2) throw DimensionError("embedding table must be [vocab, emb_dim]");
  const std::size_t V = table.dim(0), E = table.dim(1);
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= V) {
      throw DataError("token id " + std::to_string(idv[i]) + " out of range at row " +
                      std::to_string(i / len) + ", position " + std::to_string(i % len));
    }
  }
  Tensor<T> out = detail::result(tape, {batch, E, len}, {&table});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t) {
      const T* row = table.data().data() + static_cast<std::size_t>(idv[b * len + t]) * E;
      for (std::size_t e = 0; e < E; ++e) out[(b * E + e) * len + t] = row[e];
    }
  if (out.requires_grad()) {
    tape.record([oi = out.impl(), ti = table.impl(), idv = std::move(idv), batch, len, E] {
      if (oi->grad.empty()) return;
      ti->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t) {
          T* row = ti->grad.data() + static_cast<std::size_t>(idv[b * len + t]) * E;
          for (std::size_t e = 0; e < E; ++e) row[e] += oi->grad[(b * E + e) * len + t];
        }
    });
  }
  return out;
}

}  // namespace textnas::ops
