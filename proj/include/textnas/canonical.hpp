#pragma once

// Canonical form of the semantic DAG behind an encoding, so that different
// construction orders of one network compare equal.
//
// Nodes are layer applications labeled by operator (layer 0 carries its own
// label). Each node has exactly one typed input edge and an unordered set of
// typed skip edges; node indices carry no meaning. The canonical labeling is
// found by colour refinement plus individualization with automorphism
// pruning, taking the lexicographically smallest relabeled adjacency.

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "textnas/arch.hpp"
#include "textnas/error.hpp"

namespace textnas {

struct CanonicalDag {
  // Canonical position order. input[p] == -1 only for the root.
  std::vector<int> labels;
  std::vector<int> input;
  std::vector<std::vector<int>> skips;

  std::string key() const {
    std::string s;
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (p) s += '|';
      s += std::to_string(labels[p]) + ':' + std::to_string(input[p]) + ':';
      for (std::size_t j = 0; j < skips[p].size(); ++j) {
        if (j) s += '.';
        s += std::to_string(skips[p][j]);
      }
    }
    return s;
  }

  bool operator==(const CanonicalDag&) const = default;
};

namespace detail {

class Canonizer {
 public:
  static constexpr int kRootLabel = static_cast<int>(kNumLayerOps);

  explicit Canonizer(const ArchitectureEncoding& enc) : n_(enc.num_layers() + 1) {
    label_.assign(n_, 0);
    parent_.assign(n_, -1);
    skips_.assign(n_, {});
    children_.assign(n_, {});
    skip_out_.assign(n_, {});
    label_[0] = kRootLabel;
    for (std::size_t i = 1; i < n_; ++i) {
      const auto& l = enc.layer(i);
      if (l.input >= i) throw std::logic_error("canonicalize: input edge does not point backwards");
      label_[i] = static_cast<int>(op_code(l.op));
      parent_[i] = static_cast<int>(l.input);
      children_[l.input].push_back(static_cast<int>(i));
      std::vector<std::size_t> sk = l.skips;
      std::sort(sk.begin(), sk.end());
      sk.erase(std::unique(sk.begin(), sk.end()), sk.end());
      for (auto s : sk) {
        if (s >= i) throw std::logic_error("canonicalize: skip edge does not point backwards");
        skips_[i].push_back(static_cast<int>(s));
        skip_out_[s].push_back(static_cast<int>(i));
      }
    }
  }

  CanonicalDag run() {
    // Depth-major initial colours: depth is invariant and grows along every
    // edge, so the canonical order is also a topological order.
    std::vector<int> depth(n_, 0), colors(n_);
    for (std::size_t v = 1; v < n_; ++v) {
      depth[v] = depth[parent_[v]] + 1;
      for (int s : skips_[v]) depth[v] = std::max(depth[v], depth[s] + 1);
    }
    for (std::size_t v = 0; v < n_; ++v) colors[v] = depth[v] * (kRootLabel + 1) + label_[v];
    colors = rerank(colors);
    std::vector<int> prefix;
    search(colors, prefix);
    CanonicalDag out;
    const auto& perm = best_perm_;
    std::vector<int> inv(n_);
    for (std::size_t u = 0; u < n_; ++u) inv[perm[u]] = static_cast<int>(u);
    for (std::size_t p = 0; p < n_; ++p) {
      const int u = inv[p];
      out.labels.push_back(label_[u]);
      out.input.push_back(parent_[u] < 0 ? -1 : perm[parent_[u]]);
      std::vector<int> sk;
      for (int s : skips_[u]) sk.push_back(perm[s]);
      std::sort(sk.begin(), sk.end());
      out.skips.push_back(std::move(sk));
    }
    return out;
  }

 private:
  // Dense ranks of arbitrary integer keys, order-preserving.
  static std::vector<int> rerank(const std::vector<int>& keys) {
    std::vector<int> sorted = keys;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<int> out(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i)
      out[i] = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), keys[i]) - sorted.begin());
    return out;
  }

  static int count_colors(const std::vector<int>& c) {
    return c.empty() ? 0 : *std::max_element(c.begin(), c.end()) + 1;
  }

  // Equitable refinement: split cells by typed neighbour colour multisets.
  std::vector<int> refine(std::vector<int> colors) const {
    int k = count_colors(colors);
    while (true) {
      std::vector<std::vector<int>> sigs(n_);
      for (std::size_t v = 0; v < n_; ++v) {
        auto& s = sigs[v];
        s.push_back(colors[v]);
        s.push_back(-1);
        s.push_back(parent_[v] < 0 ? -1 : colors[parent_[v]]);
        auto append_sorted = [&](const std::vector<int>& nbrs, int tag) {
          std::vector<int> c;
          for (int u : nbrs) c.push_back(colors[u]);
          std::sort(c.begin(), c.end());
          s.push_back(tag);
          s.push_back(static_cast<int>(c.size()));
          s.insert(s.end(), c.begin(), c.end());
        };
        append_sorted(skips_[v], -2);
        append_sorted(children_[v], -3);
        append_sorted(skip_out_[v], -4);
      }
      std::vector<std::vector<int>> uniq = sigs;
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      std::vector<int> next(n_);
      for (std::size_t v = 0; v < n_; ++v)
        next[v] = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), sigs[v]) - uniq.begin());
      const int k2 = static_cast<int>(uniq.size());
      colors = std::move(next);
      if (k2 == k) return colors;
      k = k2;
    }
  }

  std::vector<int> leaf_code(const std::vector<int>& perm) const {
    std::vector<int> inv(n_);
    for (std::size_t u = 0; u < n_; ++u) inv[perm[u]] = static_cast<int>(u);
    std::vector<int> code;
    for (std::size_t p = 0; p < n_; ++p) {
      const int u = inv[p];
      code.push_back(label_[u]);
      code.push_back(parent_[u] < 0 ? -1 : perm[parent_[u]]);
      std::vector<int> sk;
      for (int s : skips_[u]) sk.push_back(perm[s]);
      std::sort(sk.begin(), sk.end());
      code.push_back(static_cast<int>(sk.size()));
      code.insert(code.end(), sk.begin(), sk.end());
    }
    return code;
  }

  void search(const std::vector<int>& colors_in, std::vector<int>& prefix) {
    const std::vector<int> colors = refine(colors_in);
    const int k = count_colors(colors);
    if (k == static_cast<int>(n_)) {
      auto code = leaf_code(colors);
      if (!have_best_ || code < best_code_) {
        best_code_ = std::move(code);
        best_perm_ = colors;
        have_best_ = true;
      } else if (code == best_code_) {
        // Same relabeled graph: colors^-1 o best gives an automorphism.
        std::vector<int> best_inv(n_);
        for (std::size_t u = 0; u < n_; ++u) best_inv[best_perm_[u]] = static_cast<int>(u);
        std::vector<int> gamma(n_);
        for (std::size_t u = 0; u < n_; ++u) gamma[u] = best_inv[colors[u]];
        automorphisms_.push_back(std::move(gamma));
      }
      return;
    }
    // First non-singleton cell in colour order.
    std::vector<int> size(k, 0);
    for (int c : colors) ++size[c];
    int target = 0;
    while (size[target] < 2) ++target;
    std::vector<int> cell;
    for (std::size_t v = 0; v < n_; ++v)
      if (colors[v] == target) cell.push_back(static_cast<int>(v));

    std::vector<int> explored;
    for (int v : cell) {
      if (in_explored_orbit(v, explored, prefix)) continue;
      explored.push_back(v);
      std::vector<int> keyed(n_);
      for (std::size_t u = 0; u < n_; ++u) keyed[u] = 2 * colors[u] + (static_cast<int>(u) == v ? 0 : 1);
      prefix.push_back(v);
      search(rerank(keyed), prefix);
      prefix.pop_back();
    }
  }

  // Whether v is in the orbit of an explored vertex under the automorphisms
  // found so far that fix the prefix pointwise.
  bool in_explored_orbit(int v, const std::vector<int>& explored, const std::vector<int>& prefix) const {
    if (explored.empty() || automorphisms_.empty()) return false;
    std::vector<int> uf(n_);
    std::iota(uf.begin(), uf.end(), 0);
    auto find = [&](int x) {
      while (uf[x] != x) x = uf[x] = uf[uf[x]];
      return x;
    };
    for (const auto& g : automorphisms_) {
      bool fixes = std::all_of(prefix.begin(), prefix.end(), [&](int p) { return g[p] == p; });
      if (!fixes) continue;
      for (std::size_t u = 0; u < n_; ++u) uf[find(static_cast<int>(u))] = find(g[u]);
    }
    const int rv = find(v);
    return std::any_of(explored.begin(), explored.end(), [&](int e) { return find(e) == rv; });
  }

  std::size_t n_;
  std::vector<int> label_, parent_;
  std::vector<std::vector<int>> skips_, children_, skip_out_;
  std::vector<int> best_code_, best_perm_;
  bool have_best_ = false;
  std::vector<std::vector<int>> automorphisms_;
};

}  // namespace detail

/// Canonical DAG of a valid encoding. Input and skip edges keep their type;
/// skip sets are unordered. Positions are topologically ordered, so the result
/// reads back as an encoding (see canonical_encoding).
inline CanonicalDag canonicalize(const ArchitectureEncoding& enc) {
  return detail::Canonizer(enc).run();
}

inline ArchitectureEncoding canonical_encoding(const CanonicalDag& c) {
  ArchitectureEncoding e;
  for (std::size_t p = 1; p < c.labels.size(); ++p) {
    LayerDecision d;
    d.op = kAllLayerOps[static_cast<std::size_t>(c.labels[p])];
    d.input = static_cast<std::size_t>(c.input[p]);
    for (int s : c.skips[p]) d.skips.push_back(static_cast<std::size_t>(s));
    e.layers.push_back(std::move(d));
  }
  return e;
}

/// Distinct canonical forms over a whole (small) space.
struct DuplicationStats {
  std::uint64_t encodings = 0;
  std::uint64_t distinct = 0;
};

inline DuplicationStats duplication_stats(const SpaceConfig& cfg, std::span<const LayerOpKind> ops,
                                          std::uint64_t cap) {
  DuplicationStats st;
  std::map<std::string, std::uint64_t> seen;
  for_each_encoding(cfg, ops, cap, [&](const ArchitectureEncoding& e) {
    ++st.encodings;
    ++seen[canonicalize(e).key()];
  });
  st.distinct = seen.size();
  return st;
}

}  // namespace textnas
