#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "qmpnn/csr.hpp"
#include "qmpnn/errors.hpp"
#include "qmpnn/tensor.hpp"

namespace qmpnn {

struct SplitMasks {
  std::vector<std::uint8_t> train;
  std::vector<std::uint8_t> val;
  std::vector<std::uint8_t> test;
};

inline std::vector<std::size_t> mask_indices(const std::vector<std::uint8_t>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

/// Undirected graphs keep both directions in `csr`; self-loops are not
/// stored (normalization adds them where a layer needs them).
struct Graph {
  std::size_t num_nodes = 0;
  Csr csr;
  Tensor features;
  std::vector<int> labels;
  std::optional<Tensor> edge_features;  // one row per stored CSR entry; no layer consumes it
  SplitMasks masks;

  std::size_t num_features() const { return features.cols(); }
  std::size_t num_undirected_edges() const { return csr.nnz() / 2; }
};

struct GraphDataset {
  std::vector<Graph> graphs;
  std::vector<int> graph_labels;
  std::vector<std::uint8_t> split;  // 0 train, 1 val, 2 test

  std::size_t num_classes() const {
    int mx = -1;
    for (int y : graph_labels) mx = std::max(mx, y);
    return static_cast<std::size_t>(mx + 1);
  }
};

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
      throw std::invalid_argument("SplitSpec: fractions must be non-negative and sum to 1");
  }
};

inline std::size_t next_multiple_of_4(std::size_t x) { return (x + 3) / 4 * 4; }

/// Pads the feature width up to a multiple of four, filling each new column
/// with that node's mean original feature, and reports the class count
/// rounded up the same way. The extra classes are never assigned to a node.
inline std::pair<Graph, std::size_t> pad_for_quaternion(const Graph& g, std::size_t num_classes) {
  const std::size_t f = g.num_features();
  const std::size_t fp = next_multiple_of_4(f);
  Graph out = g;
  if (fp != f) {
    Tensor x = Tensor::matrix(g.num_nodes, fp);
    for (std::size_t u = 0; u < g.num_nodes; ++u) {
      double s = 0.0;
      for (std::size_t j = 0; j < f; ++j) s += (x(u, j) = g.features(u, j));
      const double mean = s / static_cast<double>(f);
      for (std::size_t j = f; j < fp; ++j) x(u, j) = mean;
    }
    out.features = std::move(x);
  }
  return {std::move(out), next_multiple_of_4(num_classes)};
}

/// Values of D̃^{-1/2}(A + I)D̃^{-1/2} on the structure of A + I.
inline Csr normalize_adjacency(const Graph& g) {
  const Csr& a = g.csr;
  const std::size_t n = g.num_nodes;
  std::vector<std::size_t> rows, cols;
  rows.reserve(a.nnz() + n);
  cols.reserve(a.nnz() + n);
  for (std::size_t u = 0; u < n; ++u) {
    rows.push_back(u);
    cols.push_back(u);
    for (std::size_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
      rows.push_back(u);
      cols.push_back(a.col[e]);
    }
  }
  Csr out = Csr::from_triples(n, std::move(rows), std::move(cols));
  std::vector<double> inv_sqrt(n);
  for (std::size_t u = 0; u < n; ++u) inv_sqrt[u] = 1.0 / std::sqrt(static_cast<double>(out.degree(u)));
  out.values.resize(out.nnz());
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t e = out.row_ptr[u]; e < out.row_ptr[u + 1]; ++e) out.values[e] = inv_sqrt[u] * inv_sqrt[out.col[e]];
  return out;
}

/// A + I with unit values, the structure attention layers run over.
inline Csr with_self_loops(const Csr& a) {
  std::vector<std::size_t> rows, cols;
  for (std::size_t u = 0; u < a.num_nodes; ++u) {
    rows.push_back(u);
    cols.push_back(u);
    for (std::size_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
      rows.push_back(u);
      cols.push_back(a.col[e]);
    }
  }
  return Csr::from_triples(a.num_nodes, std::move(rows), std::move(cols));
}

/// Row-stochastic mean operator over neighbours (no self-loops); isolated
/// nodes have empty rows.
inline Csr mean_adjacency(const Csr& a) {
  Csr out = a;
  out.values.assign(a.nnz(), 0.0);
  for (std::size_t u = 0; u < a.num_nodes; ++u) {
    const double inv = a.degree(u) ? 1.0 / static_cast<double>(a.degree(u)) : 0.0;
    for (std::size_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) out.values[e] = inv;
  }
  return out;
}

/// Split sizes for `count` items: val and test are floored, train takes the
/// remainder.
struct SplitSizes {
  std::size_t train, val, test;
};

inline SplitSizes split_sizes(std::size_t count, const SplitSpec& spec) {
  spec.validate();
  auto floor_of = [count](double frac) {
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(count) + 1e-9));
  };
  const std::size_t val = floor_of(spec.val), test = floor_of(spec.test);
  return {count - val - test, val, test};
}

inline std::vector<std::size_t> seeded_permutation(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Node split: deterministic shuffle under the seed, then train/val/test
/// partition with the floor rule.
inline SplitMasks make_splits(std::size_t num_items, const SplitSpec& spec) {
  if (num_items < 3) throw std::invalid_argument("make_splits: need at least 3 items");
  const SplitSizes sz = split_sizes(num_items, spec);
  const auto order = seeded_permutation(num_items, spec.seed);
  SplitMasks m{std::vector<std::uint8_t>(num_items, 0), std::vector<std::uint8_t>(num_items, 0),
               std::vector<std::uint8_t>(num_items, 0)};
  for (std::size_t q = 0; q < num_items; ++q) {
    auto& target = q < sz.train ? m.train : (q < sz.train + sz.val ? m.val : m.test);
    target[order[q]] = 1;
  }
  return m;
}

inline SplitMasks make_splits(const Graph& g, const SplitSpec& spec) { return make_splits(g.num_nodes, spec); }

using Edge = std::pair<std::size_t, std::size_t>;

/// Unique undirected edges (u < v) in CSR order.
inline std::vector<Edge> undirected_edges(const Csr& a) {
  std::vector<Edge> out;
  for (std::size_t u = 0; u < a.num_nodes; ++u)
    for (std::size_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e)
      if (u < a.col[e]) out.emplace_back(u, a.col[e]);
  return out;
}

/// Uniformly sampled node pairs (u < v) absent from the graph, without
/// duplicates or self-loops. Pairs listed in `exclude` are also avoided.
inline std::vector<Edge> sample_negative_edges(const Csr& a, std::size_t count, std::uint64_t seed,
                                               const std::vector<Edge>& exclude = {}) {
  const std::size_t n = a.num_nodes;
  const std::size_t pairs = n * (n - (n ? 1 : 0)) / 2;
  std::set<Edge> taken(exclude.begin(), exclude.end());
  std::size_t existing = 0;
  for (const Edge& e : undirected_edges(a))
    if (!taken.count(e)) ++existing;
  const std::size_t available = pairs - std::min(pairs, existing + taken.size());
  if (count > available)
    throw std::invalid_argument("sample_negative_edges: requested " + std::to_string(count) + " negatives but only " +
                                std::to_string(available) + " non-edges exist");
  std::mt19937_64 rng(seed);
  std::vector<Edge> out;
  out.reserve(count);
  auto is_free = [&](std::size_t u, std::size_t v) { return u != v && !a.has_entry(u, v) && !taken.count({u, v}); };
  if (count * 2 <= available) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (out.size() < count) {
      std::size_t u = pick(rng), v = pick(rng);
      if (u > v) std::swap(u, v);
      if (!is_free(u, v)) continue;
      taken.insert({u, v});
      out.emplace_back(u, v);
    }
  } else {
    std::vector<Edge> all;
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = u + 1; v < n; ++v)
        if (is_free(u, v)) all.emplace_back(u, v);
    std::shuffle(all.begin(), all.end(), rng);
    out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
  }
  return out;
}

inline std::vector<Edge> sample_negative_edges(const Graph& g, std::size_t count, std::uint64_t seed) {
  return sample_negative_edges(g.csr, count, seed);
}

/// Symmetric CSR over the given undirected edges.
inline Csr csr_from_undirected(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<std::size_t> rows, cols;
  rows.reserve(2 * edges.size());
  cols.reserve(2 * edges.size());
  for (auto [u, v] : edges) {
    if (u == v) continue;
    rows.push_back(u);
    cols.push_back(v);
    rows.push_back(v);
    cols.push_back(u);
  }
  return Csr::from_triples(n, std::move(rows), std::move(cols));
}

/// Edge-level split for link prediction. Validation and test positives are
/// removed from the message-passing structure; each held-out split gets an
/// equal number of sampled negatives.
struct EdgeSplit {
  std::vector<Edge> train_pos, val_pos, test_pos;
  std::vector<Edge> val_neg, test_neg;
  Csr message_csr;
};

inline EdgeSplit make_edge_splits(const Graph& g, const SplitSpec& spec) {
  auto edges = undirected_edges(g.csr);
  if (edges.size() < 3) throw std::invalid_argument("make_edge_splits: need at least 3 edges");
  const SplitSizes sz = split_sizes(edges.size(), spec);
  const auto order = seeded_permutation(edges.size(), spec.seed);
  EdgeSplit s;
  for (std::size_t q = 0; q < order.size(); ++q) {
    const Edge& e = edges[order[q]];
    if (q < sz.train) s.train_pos.push_back(e);
    else if (q < sz.train + sz.val) s.val_pos.push_back(e);
    else s.test_pos.push_back(e);
  }
  auto negs = sample_negative_edges(g.csr, sz.val + sz.test, spec.seed ^ 0x9e3779b97f4a7c15ULL);
  s.val_neg.assign(negs.begin(), negs.begin() + static_cast<std::ptrdiff_t>(sz.val));
  s.test_neg.assign(negs.begin() + static_cast<std::ptrdiff_t>(sz.val), negs.end());
  s.message_csr = csr_from_undirected(g.num_nodes, s.train_pos);
  return s;
}

/// Assigns each graph of a dataset to train (0) / val (1) / test (2).
inline std::vector<std::uint8_t> make_graph_splits(std::size_t num_graphs, const SplitSpec& spec) {
  const SplitMasks m = make_splits(num_graphs, spec);
  std::vector<std::uint8_t> out(num_graphs, 0);
  for (std::size_t i = 0; i < num_graphs; ++i) out[i] = m.val[i] ? 1 : (m.test[i] ? 2 : 0);
  return out;
}

/// Disjoint union of graphs; `boundaries` delimits each graph's node range.
struct GraphBatch {
  Graph graph;
  std::vector<std::size_t> boundaries{0};
};

inline GraphBatch batch_graphs(const std::vector<const Graph*>& parts) {
  if (parts.empty()) throw std::invalid_argument("batch_graphs: empty batch");
  GraphBatch b;
  const std::size_t f = parts.front()->num_features();
  std::size_t n = 0;
  for (const Graph* g : parts) {
    if (g->num_features() != f) throw ShapeError("batch_graphs: feature width mismatch");
    n += g->num_nodes;
    b.boundaries.push_back(n);
  }
  std::vector<std::size_t> rows, cols;
  std::vector<double> feats;
  feats.reserve(n * f);
  std::size_t off = 0;
  for (const Graph* g : parts) {
    for (std::size_t u = 0; u < g->num_nodes; ++u)
      for (std::size_t e = g->csr.row_ptr[u]; e < g->csr.row_ptr[u + 1]; ++e) {
        rows.push_back(off + u);
        cols.push_back(off + g->csr.col[e]);
      }
    feats.insert(feats.end(), g->features.data().begin(), g->features.data().end());
    off += g->num_nodes;
  }
  b.graph.num_nodes = n;
  b.graph.csr = Csr::from_triples(n, std::move(rows), std::move(cols));
  b.graph.features = Tensor({n, f}, std::move(feats));
  return b;
}

/// Relabels nodes: node u of g becomes perm[u].
inline Graph permute_graph(const Graph& g, const std::vector<std::size_t>& perm) {
  const std::size_t n = g.num_nodes;
  Graph out;
  out.num_nodes = n;
  std::vector<std::size_t> rows, cols;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t e = g.csr.row_ptr[u]; e < g.csr.row_ptr[u + 1]; ++e) {
      rows.push_back(perm[u]);
      cols.push_back(perm[g.csr.col[e]]);
    }
  out.csr = Csr::from_triples(n, std::move(rows), std::move(cols));
  const std::size_t f = g.num_features();
  out.features = Tensor::matrix(n, f);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t j = 0; j < f; ++j) out.features(perm[u], j) = g.features(u, j);
  if (!g.labels.empty()) {
    out.labels.resize(n);
    for (std::size_t u = 0; u < n; ++u) out.labels[perm[u]] = g.labels[u];
  }
  return out;
}

}  // namespace qmpnn
