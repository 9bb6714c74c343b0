#pragma once

// Macro DAG search space: layer i (1-based) picks an operator, one input
// layer from the lookback window [max(0, i-k), i-1], and a set of skip
// sources from {0, ..., i-1} whose outputs are summed with its own output.

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "textnas/error.hpp"
#include "textnas/layer_op.hpp"
#include "textnas/rng.hpp"

namespace textnas {

using BigCount = boost::multiprecision::cpp_int;

struct SpaceConfig {
  std::size_t num_layers = 24;
  std::optional<std::size_t> lookback = 5;  // nullopt = unbounded

  void validate() const {
    if (num_layers < 1) throw ParameterError("num_layers must be >= 1");
    if (lookback && *lookback < 1) throw ParameterError("lookback must be >= 1");
  }

  /// Lowest admissible input id for layer i.
  std::size_t window_begin(std::size_t i) const {
    if (!lookback || *lookback >= i) return 0;
    return i - *lookback;
  }
  std::size_t window_size(std::size_t i) const { return i - window_begin(i); }
};

struct LayerDecision {
  LayerOpKind op = LayerOpKind::kConv1;
  std::size_t input = 0;
  std::vector<std::size_t> skips;  // ascending after normalize()

  bool operator==(const LayerDecision&) const = default;
};

struct ArchitectureEncoding {
  std::vector<LayerDecision> layers;  // layers[i - 1] holds layer i

  std::size_t num_layers() const { return layers.size(); }
  const LayerDecision& layer(std::size_t i) const { return layers.at(i - 1); }
  LayerDecision& layer(std::size_t i) { return layers.at(i - 1); }

  /// Sorts skip lists (skips are a set).
  ArchitectureEncoding& normalize() {
    for (auto& l : layers) std::sort(l.skips.begin(), l.skips.end());
    return *this;
  }

  bool operator==(const ArchitectureEncoding& other) const {
    ArchitectureEncoding a = *this, b = other;
    return a.normalize().layers == b.normalize().layers;
  }
};

struct Violation {
  std::size_t layer;
  std::string message;
};

inline std::string describe(const std::vector<Violation>& vs) {
  std::ostringstream os;
  for (const auto& v : vs) os << "layer " << v.layer << ": " << v.message << '\n';
  return os.str();
}

/// Every violated constraint, with its layer index. Empty means valid.
inline std::vector<Violation> validate(const ArchitectureEncoding& enc, const SpaceConfig& cfg) {
  std::vector<Violation> out;
  if (enc.num_layers() != cfg.num_layers) {
    out.push_back({0, "expected " + std::to_string(cfg.num_layers) + " layers, found " +
                          std::to_string(enc.num_layers())});
  }
  for (std::size_t i = 1; i <= enc.num_layers(); ++i) {
    const auto& l = enc.layer(i);
    if (op_code(l.op) >= kNumLayerOps) out.push_back({i, "unknown operator code"});
    const std::size_t lo = cfg.window_begin(i);
    if (l.input >= i) {
      out.push_back({i, "input " + std::to_string(l.input) + " is not an earlier layer"});
    } else if (l.input < lo) {
      out.push_back({i, "input " + std::to_string(l.input) + " outside lookback window [" +
                            std::to_string(lo) + "," + std::to_string(i - 1) + "]"});
    }
    std::vector<std::size_t> sorted = l.skips;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t s = 0; s < sorted.size(); ++s) {
      if (sorted[s] == i) {
        out.push_back({i, "skip to itself (self-loop)"});
      } else if (sorted[s] > i) {
        out.push_back({i, "skip from later layer " + std::to_string(sorted[s])});
      }
      if (s > 0 && sorted[s] == sorted[s - 1]) {
        out.push_back({i, "duplicate skip " + std::to_string(sorted[s])});
      }
    }
  }
  return out;
}

inline bool is_valid(const ArchitectureEncoding& enc, const SpaceConfig& cfg) {
  return validate(enc, cfg).empty();
}

/// prod_{i=1..N} min(i, k) * 2^i * m.
inline BigCount count_encodings(const SpaceConfig& cfg, std::size_t num_ops = kNumLayerOps) {
  BigCount total = 1;
  for (std::size_t i = 1; i <= cfg.num_layers; ++i) {
    BigCount layer = cfg.window_size(i);
    layer <<= static_cast<unsigned>(i);
    layer *= num_ops;
    total *= layer;
  }
  return total;
}

/// Visits every valid encoding once, in lexicographic decision order (layer 1
/// most significant; within a layer: input id, then skip bitmask, then op).
/// Throws ResourceError when the space is larger than `cap`.
inline void for_each_encoding(const SpaceConfig& cfg, std::span<const LayerOpKind> ops,
                              std::uint64_t cap,
                              const std::function<void(const ArchitectureEncoding&)>& visit) {
  cfg.validate();
  if (ops.empty()) throw ParameterError("enumeration needs at least one operator");
  const BigCount count = count_encodings(cfg, ops.size());
  if (count > cap) {
    throw ResourceError("space has " + count.str() + " encodings, above the cap of " +
                        std::to_string(cap));
  }
  const std::size_t N = cfg.num_layers;
  // digits per layer: input offset, skip mask, op index
  std::vector<std::size_t> in_off(N + 1, 0), op_idx(N + 1, 0);
  std::vector<std::uint64_t> mask(N + 1, 0);
  ArchitectureEncoding enc;
  enc.layers.resize(N);
  auto materialize = [&](std::size_t i) {
    auto& l = enc.layer(i);
    l.input = cfg.window_begin(i) + in_off[i];
    l.op = ops[op_idx[i]];
    l.skips.clear();
    for (std::size_t j = 0; j < i; ++j)
      if (mask[i] >> j & 1u) l.skips.push_back(j);
  };
  for (std::size_t i = 1; i <= N; ++i) materialize(i);
  while (true) {
    visit(enc);
    // odometer increment from the least significant digit (last layer, op)
    std::size_t i = N;
    for (; i >= 1; --i) {
      if (++op_idx[i] < ops.size()) break;
      op_idx[i] = 0;
      if (++mask[i] < (std::uint64_t{1} << i)) break;
      mask[i] = 0;
      if (++in_off[i] < cfg.window_size(i)) break;
      in_off[i] = 0;
    }
    if (i == 0) return;
    for (std::size_t j = i; j <= N; ++j) materialize(j);
  }
}

inline std::vector<ArchitectureEncoding> enumerate(const SpaceConfig& cfg,
                                                   std::span<const LayerOpKind> ops,
                                                   std::uint64_t cap) {
  std::vector<ArchitectureEncoding> out;
  for_each_encoding(cfg, ops, cap, [&](const ArchitectureEncoding& e) { out.push_back(e); });
  return out;
}

/// Each decision drawn uniformly and independently.
inline ArchitectureEncoding sample_uniform(const SpaceConfig& cfg, Rng& rng) {
  cfg.validate();
  ArchitectureEncoding enc;
  enc.layers.resize(cfg.num_layers);
  for (std::size_t i = 1; i <= cfg.num_layers; ++i) {
    auto& l = enc.layer(i);
    l.input = cfg.window_begin(i) + rng.below(cfg.window_size(i));
    for (std::size_t j = 0; j < i; ++j)
      if (rng.bernoulli(0.5)) l.skips.push_back(j);
    l.op = kAllLayerOps[rng.below(kNumLayerOps)];
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Text formats

/// One line per layer: `layer <i>: op=<name> input=<j> skips=[a,b,...]`.
inline std::string serialize(const ArchitectureEncoding& enc) {
  std::ostringstream os;
  for (std::size_t i = 1; i <= enc.num_layers(); ++i) {
    auto l = enc.layer(i);
    std::sort(l.skips.begin(), l.skips.end());
    os << "layer " << i << ": op=" << op_name(l.op) << " input=" << l.input << " skips=[";
    for (std::size_t s = 0; s < l.skips.size(); ++s) os << (s ? "," : "") << l.skips[s];
    os << "]\n";
  }
  return os.str();
}

/// Parses the line format above. Blank lines and `#` comments are ignored.
/// Constraint checks are left to validate().
inline ArchitectureEncoding deserialize(const std::string& text) {
  static const std::regex line_re(
      R"(^\s*layer\s+(\d+):\s+op=([A-Za-z0-9_]+)\s+input=(\d+)\s+skips=\[\s*((?:\d+\s*(?:,\s*\d+\s*)*)?)\]\s*$)");
  ArchitectureEncoding enc;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) {
      throw FormatError("line " + std::to_string(line_no) + ": malformed layer line");
    }
    const std::size_t idx = std::stoul(m[1].str());
    if (idx != enc.num_layers() + 1) {
      throw FormatError("line " + std::to_string(line_no) + ": expected layer " +
                        std::to_string(enc.num_layers() + 1) + ", found " + std::to_string(idx));
    }
    const auto op = op_from_name(m[2].str());
    if (!op) throw FormatError("line " + std::to_string(line_no) + ": unknown op '" + m[2].str() + "'");
    LayerDecision d;
    d.op = *op;
    d.input = std::stoul(m[3].str());
    std::string skips = m[4].str();
    std::replace(skips.begin(), skips.end(), ',', ' ');
    std::istringstream ss(skips);
    std::size_t s;
    while (ss >> s) d.skips.push_back(s);
    std::sort(d.skips.begin(), d.skips.end());
    enc.layers.push_back(std::move(d));
  }
  if (enc.layers.empty()) throw FormatError("architecture text has no layers");
  return enc;
}

/// Single-line form for CSV cells: `op:input:s1.s2` per layer, joined by `;`.
inline std::string to_compact(const ArchitectureEncoding& enc) {
  std::ostringstream os;
  for (std::size_t i = 1; i <= enc.num_layers(); ++i) {
    auto l = enc.layer(i);
    std::sort(l.skips.begin(), l.skips.end());
    if (i > 1) os << ';';
    os << op_name(l.op) << ':' << l.input << ':';
    for (std::size_t s = 0; s < l.skips.size(); ++s) os << (s ? "." : "") << l.skips[s];
  }
  return os.str();
}

inline ArchitectureEncoding from_compact(const std::string& text) {
  ArchitectureEncoding enc;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto a = item.find(':');
    const auto b = a == std::string::npos ? a : item.find(':', a + 1);
    if (b == std::string::npos) throw FormatError("malformed compact layer '" + item + "'");
    const auto op = op_from_name(item.substr(0, a));
    if (!op) throw FormatError("unknown op in compact layer '" + item + "'");
    LayerDecision d;
    d.op = *op;
    try {
      d.input = std::stoul(item.substr(a + 1, b - a - 1));
      std::istringstream ss(item.substr(b + 1));
      std::string s;
      while (std::getline(ss, s, '.'))
        if (!s.empty()) d.skips.push_back(std::stoul(s));
    } catch (const std::logic_error&) {
      throw FormatError("malformed number in compact layer '" + item + "'");
    }
    enc.layers.push_back(std::move(d));
  }
  return enc;
}

/// Graphviz digraph: op-labeled nodes, solid input edges, dashed skip edges.
inline std::string export_dot(const ArchitectureEncoding& enc) {
  std::ostringstream os;
  os << "digraph architecture {\n";
  os << "  node [shape=box];\n";
  os << "  n0 [label=\"input\"];\n";
  for (std::size_t i = 1; i <= enc.num_layers(); ++i)
    os << "  n" << i << " [label=\"" << op_name(enc.layer(i).op) << "\"];\n";
  for (std::size_t i = 1; i <= enc.num_layers(); ++i) {
    auto l = enc.layer(i);
    std::sort(l.skips.begin(), l.skips.end());
    os << "  n" << l.input << " -> n" << i << ";\n";
    for (auto s : l.skips) os << "  n" << s << " -> n" << i << " [style=dashed];\n";
  }
  os << "}\n";
  return os.str();
}

/// Operator counts keyed by op name.
inline std::map<std::string, std::size_t> op_histogram(const ArchitectureEncoding& enc) {
  std::map<std::string, std::size_t> h;
  for (const auto& l : enc.layers) ++h[std::string(op_name(l.op))];
  return h;
}

}  // namespace textnas
