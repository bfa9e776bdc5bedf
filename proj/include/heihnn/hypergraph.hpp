#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "heihnn/errors.hpp"
#include "heihnn/matrix.hpp"

namespace heihnn {

// One incidence entry: node `node` belongs to hyperedge `edge`.
struct IncidencePair {
  std::uint32_t node;
  std::uint32_t edge;
};

enum class InteractionNorm {
  kRowSum,      // D = diag(row sums of H^T H + I)
  kEdgeDegree,  // D = D_E, the literal hyperedge-degree reading
};

// Immutable hypergraph: n nodes, m hyperedges, 0/1 incidence stored as a
// pair list in edge-major order (nodes ascending within an edge) with a
// per-node index for row traversal. Degrees are cached at construction.
class Hypergraph {
 public:
  Hypergraph(std::size_t n, const std::vector<std::vector<std::uint32_t>>& edges)
      : n_(n), m_(edges.size()) {
    edge_ptr_.reserve(m_ + 1);
    edge_ptr_.push_back(0);
    for (std::size_t j = 0; j < m_; ++j) {
      if (edges[j].empty())
        throw ConfigError("hyperedge " + std::to_string(j) + " is empty");
      std::vector<std::uint32_t> members = edges[j];
      std::sort(members.begin(), members.end());
      for (std::size_t t = 0; t < members.size(); ++t) {
        std::uint32_t v = members[t];
        if (v >= n_)
          throw ConfigError("node id " + std::to_string(v) + " in hyperedge " +
                            std::to_string(j) + " is outside [0, " +
                            std::to_string(n_) + ")");
        if (t > 0 && members[t - 1] == v)
          throw ConfigError("node id " + std::to_string(v) +
                            " duplicated in hyperedge " + std::to_string(j));
        pairs_.push_back({v, static_cast<std::uint32_t>(j)});
      }
      edge_ptr_.push_back(pairs_.size());
    }

    node_degrees_.assign(n_, 0);
    edge_degrees_.assign(m_, 0);
    for (const auto& p : pairs_) {
      ++node_degrees_[p.node];
      ++edge_degrees_[p.edge];
    }
    for (std::size_t v = 0; v < n_; ++v)
      if (node_degrees_[v] == 0)
        throw ConfigError("node " + std::to_string(v) +
                          " belongs to no hyperedge (degree 0)");

    // row-major view: pair indices grouped by node
    node_ptr_.assign(n_ + 1, 0);
    for (const auto& p : pairs_) ++node_ptr_[p.node + 1];
    for (std::size_t v = 0; v < n_; ++v) node_ptr_[v + 1] += node_ptr_[v];
    node_pairs_.resize(pairs_.size());
    std::vector<std::size_t> cursor(node_ptr_.begin(), node_ptr_.end() - 1);
    for (std::size_t k = 0; k < pairs_.size(); ++k)
      node_pairs_[cursor[pairs_[k].node]++] = k;
  }

  std::size_t num_nodes() const { return n_; }
  std::size_t num_edges() const { return m_; }
  std::size_t nnz() const { return pairs_.size(); }

  const std::vector<IncidencePair>& pairs() const { return pairs_; }
  const std::vector<std::uint32_t>& node_degrees() const { return node_degrees_; }
  const std::vector<std::uint32_t>& edge_degrees() const { return edge_degrees_; }

  // Pair indices of hyperedge j (contiguous, node-ascending).
  std::size_t edge_begin(std::size_t j) const { return edge_ptr_[j]; }
  std::size_t edge_end(std::size_t j) const { return edge_ptr_[j + 1]; }

  // Pair indices incident to node v, edge-ascending.
  const std::uint32_t* node_pair_begin(std::size_t v) const {
    return node_pairs_.data() + node_ptr_[v];
  }
  const std::uint32_t* node_pair_end(std::size_t v) const {
    return node_pairs_.data() + node_ptr_[v + 1];
  }

  // Normalization groups over pair indices: one group per hyperedge (its
  // member pairs) or one per node (its incident pairs).
  std::vector<std::vector<std::size_t>> edge_groups() const {
    std::vector<std::vector<std::size_t>> g(m_);
    for (std::size_t j = 0; j < m_; ++j) {
      g[j].reserve(edge_end(j) - edge_begin(j));
      for (std::size_t k = edge_begin(j); k < edge_end(j); ++k) g[j].push_back(k);
    }
    return g;
  }
  std::vector<std::vector<std::size_t>> node_groups() const {
    std::vector<std::vector<std::size_t>> g(n_);
    for (std::size_t v = 0; v < n_; ++v) {
      for (const std::uint32_t* it = node_pair_begin(v); it != node_pair_end(v); ++it)
        g[v].push_back(*it);
    }
    return g;
  }

  std::vector<double> node_deg_inv_sqrt() const {
    std::vector<double> s(n_);
    for (std::size_t v = 0; v < n_; ++v) s[v] = 1.0 / std::sqrt(double(node_degrees_[v]));
    return s;
  }
  std::vector<double> edge_deg_inv_sqrt() const {
    std::vector<double> s(m_);
    for (std::size_t j = 0; j < m_; ++j) s[j] = 1.0 / std::sqrt(double(edge_degrees_[j]));
    return s;
  }
  std::vector<double> edge_deg_inv() const {
    std::vector<double> s(m_);
    for (std::size_t j = 0; j < m_; ++j) s[j] = 1.0 / double(edge_degrees_[j]);
    return s;
  }

  Matrix incidence_dense() const {
    Matrix h(n_, m_);
    for (const auto& p : pairs_) h(p.node, p.edge) = 1.0;
    return h;
  }

 private:
  std::size_t n_;
  std::size_t m_;
  std::vector<IncidencePair> pairs_;     // edge-major
  std::vector<std::size_t> edge_ptr_;    // m+1 offsets into pairs_
  std::vector<std::size_t> node_ptr_;    // n+1 offsets into node_pairs_
  std::vector<std::uint32_t> node_pairs_;  // pair indices grouped by node
  std::vector<std::uint32_t> node_degrees_;
  std::vector<std::uint32_t> edge_degrees_;
};

inline Hypergraph build_hypergraph(std::size_t n,
                                   const std::vector<std::vector<std::uint32_t>>& edges) {
  return Hypergraph(n, edges);
}

// H^T H. Entry (i, j) counts shared nodes of hyperedges i and j; the
// diagonal is the hyperedge degree. Values are exact small integers.
inline Matrix interaction_adjacency(const Hypergraph& h) {
  Matrix a(h.num_edges(), h.num_edges());
  for (std::size_t v = 0; v < h.num_nodes(); ++v) {
    for (const std::uint32_t* p = h.node_pair_begin(v); p != h.node_pair_end(v); ++p) {
      std::uint32_t ei = h.pairs()[*p].edge;
      for (const std::uint32_t* q = h.node_pair_begin(v); q != h.node_pair_end(v); ++q)
        a(ei, h.pairs()[*q].edge) += 1.0;
    }
  }
  return a;
}

// D^(-1/2) (H^T H + I) D^(-1/2). D defaults to the row sums of the
// self-looped interaction matrix; InteractionNorm::kEdgeDegree switches to
// the hyperedge-degree matrix D_E instead.
inline Matrix normalized_interaction_with_self_loop(
    const Hypergraph& h, InteractionNorm norm = InteractionNorm::kRowSum) {
  Matrix a = interaction_adjacency(h);
  const std::size_t m = h.num_edges();
  for (std::size_t i = 0; i < m; ++i) a(i, i) += 1.0;

  std::vector<double> dinv(m);
  if (norm == InteractionNorm::kRowSum) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += a(i, j);
      dinv[i] = 1.0 / std::sqrt(s);  // >= 1, never zero
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      dinv[i] = 1.0 / std::sqrt(double(h.edge_degrees()[i]));
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) a(i, j) *= dinv[i] * dinv[j];
  return a;
}

struct StructureStats {
  std::size_t num_nodes;
  std::size_t num_edges;
  std::size_t max_edge_degree;
};

inline StructureStats structure_stats(const Hypergraph& h) {
  std::size_t mx = 0;
  for (auto d : h.edge_degrees()) mx = std::max<std::size_t>(mx, d);
  return {h.num_nodes(), h.num_edges(), mx};
}

}  // namespace heihnn
