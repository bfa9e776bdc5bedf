#pragma once

// Hyperedge outlier removal. Per hyperedge, members whose feature vector
// points away from the hyperedge's own feature (cosine below tau) are
// masked out of the incidence before propagation. The mask is recomputed
// every forward pass from detached features and never carries gradient;
// apply_mask only rescales the surviving attention weights.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "heihnn/autodiff.hpp"
#include "heihnn/errors.hpp"
#include "heihnn/hypergraph.hpp"
#include "heihnn/matrix.hpp"

namespace heihnn {

struct HorConfig {
  double tau = 0.0;          // keep members with cos >= tau; -1 keeps all
  std::size_t min_keep = 1;  // floor per hyperedge, capped at its degree
  bool renormalize = true;   // rescale surviving weights to sum to 1
};

// cos(x, y) with the zero-vector convention cos(0, .) = 0.
inline double cosine_similarity(const double* x, const double* y, std::size_t d) {
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += x[k] * y[k];
    nx += x[k] * x[k];
    ny += y[k] * y[k];
  }
  const double norms = std::sqrt(nx) * std::sqrt(ny);
  if (norms < 1e-12) return 0.0;
  return dot / norms;
}

inline double cosine_similarity(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw ShapeError("cosine_similarity: lengths " + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  return cosine_similarity(x.data(), y.data(), x.size());
}

// 0/1 keep flags in incidence-pair order. x holds node features, y the
// hyperedge features the members are compared against. When thresholding
// leaves fewer than min_keep members, the highest-similarity ones are
// pulled back in, ties broken toward the lower node id.
inline std::vector<double> hor_mask(const Matrix& x, const Matrix& y,
                                    const Hypergraph& hg, const HorConfig& cfg) {
  if (x.rows() != hg.num_nodes() || y.rows() != hg.num_edges() || x.cols() != y.cols())
    throw ShapeError("hor_mask: features " + x.shape_str() + " / " + y.shape_str() +
                     " for hypergraph " + std::to_string(hg.num_nodes()) + "x" +
                     std::to_string(hg.num_edges()));
  const std::size_t d = x.cols();
  std::vector<double> mask(hg.nnz(), 0.0);
  std::vector<double> sims;
  std::vector<std::size_t> order;
  for (std::size_t e = 0; e < hg.num_edges(); ++e) {
    const std::size_t b = hg.edge_begin(e), sz = hg.edge_end(e) - b;
    sims.resize(sz);
    std::size_t kept = 0;
    for (std::size_t t = 0; t < sz; ++t) {
      sims[t] = cosine_similarity(x.row(hg.pairs()[b + t].node), y.row(e), d);
      if (sims[t] >= cfg.tau) {
        mask[b + t] = 1.0;
        ++kept;
      }
    }
    const std::size_t floor = std::min(cfg.min_keep, sz);
    if (kept < floor) {
      // rank by similarity, lower node id first among equals (members are
      // already node-ascending, so a stable sort does it)
      order.resize(sz);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t l, std::size_t r) { return sims[l] > sims[r]; });
      for (std::size_t t = 0; t < floor; ++t) mask[b + order[t]] = 1.0;
    }
  }
  return mask;
}

// Overlay the mask on per-pair attention weights. With renormalize on,
// each group's survivors are rescaled to unit mass (groups with surviving
// mass below 1e-12 are left as-is). An all-ones mask is the identity.
inline diff::Value apply_mask(const diff::Value& h_att, const std::vector<double>& mask,
                              const std::vector<std::vector<std::size_t>>& groups,
                              bool renormalize = true) {
  return diff::group_renormalize(h_att, mask, groups, renormalize);
}

}  // namespace heihnn
