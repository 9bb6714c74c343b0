#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "textnas/error.hpp"
#include "textnas/rng.hpp"
#include "textnas/tensor.hpp"

namespace textnas {

/// Named registry of trainable parameters and non-trainable buffers. The
/// registry holds handles, so modules and the store alias the same storage.
template <typename T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T> add(std::string name, Tensor<T> t) {
    check_unique(name);
    t.set_requires_grad(true);
    params_.emplace_back(std::move(name), t);
    return t;
  }

  Tensor<T> add_buffer(std::string name, Tensor<T> t) {
    check_unique(name);
    t.set_requires_grad(false);
    buffers_.emplace_back(std::move(name), t);
    return t;
  }

  const std::vector<Entry>& parameters() const { return params_; }
  const std::vector<Entry>& buffers() const { return buffers_; }

  std::vector<Tensor<T>> parameter_tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }

  /// Parameters followed by buffers.
  std::vector<Entry> all() const {
    std::vector<Entry> out = params_;
    out.insert(out.end(), buffers_.begin(), buffers_.end());
    return out;
  }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& e : params_)
      if (e.first == name) return &e.second;
    for (const auto& e : buffers_)
      if (e.first == name) return &e.second;
    return nullptr;
  }

  Tensor<T> at(const std::string& name) const {
    const auto* t = find(name);
    if (!t) throw UsageError("unknown parameter " + name);
    return *t;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  /// FNV-1a over the raw bytes of every parameter value.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& [_, t] : params_) {
      for (T v : t.data()) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        for (unsigned char b : bytes) {
          h ^= b;
          h *= 0x100000001B3ULL;
        }
      }
    }
    return h;
  }

 private:
  void check_unique(const std::string& name) const {
    if (find(name)) throw UsageError("duplicate parameter name " + name);
  }

  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
};

namespace init {

/// U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> uniform(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace init

}  // namespace textnas
