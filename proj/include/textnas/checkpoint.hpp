#pragma once

// Binary checkpoint layout (little-endian):
//
//   "TNAS"                      4-byte magic
//   u32 version                 kCheckpointVersion
//   u32 n_meta, then n_meta x { u32 len, key bytes, u32 len, value bytes }
//   u32 n_tensors, then n_tensors x
//       { u32 len, name bytes, u8 dtype (0 = f32, 1 = f64),
//         u32 rank, rank x u64 dims, values }

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "textnas/error.hpp"
#include "textnas/params.hpp"
#include "textnas/tensor.hpp"

namespace textnas {

inline constexpr char kCheckpointMagic[4] = {'T', 'N', 'A', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  /// Snapshot of every parameter and buffer in a store.
  template <typename T>
  void add_store(const ParameterStore<T>& store) {
    for (const auto& [name, t] : store.all()) {
      tensors.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
    }
  }

  /// Copies values into a store by name; shapes must agree and every entry of
  /// the store must be present.
  template <typename T>
  void apply_to(ParameterStore<T>& store) const {
    for (const auto& [name, t] : store.all()) {
      const auto* src = find(name);
      if (!src) throw FormatError("checkpoint is missing tensor " + name);
      if (src->shape != t.shape()) {
        throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(src->shape) +
                          ", expected " + shape_str(t.shape()));
      }
      auto dst = Tensor<T>(t);
      for (std::size_t i = 0; i < src->values.size(); ++i) dst[i] = static_cast<T>(src->values[i]);
    }
  }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void get_bytes(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (!is) throw FormatError("truncated checkpoint");
}
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v;
  get_bytes(is, &v, 4);
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v;
  get_bytes(is, &v, 8);
  return v;
}
inline std::string get_str(std::istream& is) {
  const auto n = get_u32(is);
  if (n > (1u << 30)) throw FormatError("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (n) get_bytes(is, s.data(), n);
  return s;
}

}  // namespace detail

/// Values are written as f32 unless `wide` is set.
inline void write_checkpoint(const std::string& path, const Checkpoint& ck, bool wide = false) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::put_str(os, k);
    detail::put_str(os, v);
  }
  detail::put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::put_str(os, t.name);
    const std::uint8_t dtype = wide ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_u64(os, d);
    for (double v : t.values) {
      if (wide) {
        os.write(reinterpret_cast<const char*>(&v), 8);
      } else {
        const float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  if (!os) throw DataError("failed writing " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  detail::get_bytes(is, magic, 4);
  if (std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw FormatError(path + " is not a checkpoint (bad magic)");
  }
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const auto n_meta = detail::get_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = detail::get_str(is);
    ck.meta[k] = detail::get_str(is);
  }
  const auto n_tensors = detail::get_u32(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    CheckpointTensor t;
    t.name = detail::get_str(is);
    std::uint8_t dtype;
    detail::get_bytes(is, &dtype, 1);
    if (dtype > 1) throw FormatError("unknown dtype in checkpoint tensor " + t.name);
    const auto rank = detail::get_u32(is);
    if (rank > 8) throw FormatError("corrupt rank in checkpoint tensor " + t.name);
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(detail::get_u64(is));
    t.values.resize(shape_numel(t.shape));
    for (auto& v : t.values) {
      if (dtype == 1) {
        detail::get_bytes(is, &v, 8);
      } else {
        float f;
        detail::get_bytes(is, &f, 4);
        v = f;
      }
    }
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

}  // namespace textnas
