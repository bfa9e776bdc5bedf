#pragma once

// The three propagation stages and their composition into one layer:
// node->hyperedge aggregation, hyperedge-level convolution over the
// interaction graph (single self-loop step or a Chebyshev filter), and the
// hyperedge->node scatter. Attention rewrites the incidence weights per
// pair; HOR masks pairs out per forward pass.

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "heihnn/autodiff.hpp"
#include "heihnn/errors.hpp"
#include "heihnn/hor.hpp"
#include "heihnn/hypergraph.hpp"
#include "heihnn/matrix.hpp"

namespace heihnn {

enum class Activation { kRelu, kIdentity };
enum class Direction { kN2He, kHe2N };

struct StageConfig {
  bool use_attention = true;
  bool hor_n2he = false;
  bool hor_he2n = false;
  std::size_t chebyshev_k = 0;  // 0 = single self-loop step
  bool residual = true;
  // extensions beyond the ablation axes
  bool bypass_he2he = false;          // reduction mode: stage 2 is the identity
  bool freeze_chebyshev = false;      // keep the filter coefficients at init
  Activation activation = Activation::kRelu;
  InteractionNorm norm = InteractionNorm::kRowSum;
};

// Per-layer learnables plus the two mixing scalars.
struct LayerParameters {
  diff::Value theta1, theta2, theta3;      // stage transforms
  diff::Value wq, wk;                      // stage-1 attention
  diff::Value wq2, wk2;                    // stage-3 attention
  std::vector<diff::Value> cheb_coeffs;    // K+1 scalars when chebyshev_k >= 1
  double alpha = 1.0;
  double beta = 1.0;
};

inline diff::Value activate(const diff::Value& v, Activation act) {
  return act == Activation::kRelu ? diff::relu(v) : v;
}

// Structure-derived constants shared by every stage call on one hypergraph:
// degree scalings, normalization groups, and the stage-2 operator. Build
// once per (hypergraph, config) and reuse across layers and epochs.
struct HypergraphOps {
  const Hypergraph& hg;
  std::vector<double> dv_inv_sqrt, de_inv_sqrt, de_inv;
  std::vector<std::vector<std::size_t>> edge_grps, node_grps;
  Matrix a_norm;        // D^(-1/2)(H^T H + I)D^(-1/2), for the k=0 step
  Matrix cheb_lprime;   // rescaled Laplacian, for k >= 1
  double lambda_max = 0.0;

  explicit HypergraphOps(const Hypergraph& h,
                         InteractionNorm norm = InteractionNorm::kRowSum,
                         std::size_t chebyshev_k = 0)
      : hg(h),
        dv_inv_sqrt(h.node_deg_inv_sqrt()),
        de_inv_sqrt(h.edge_deg_inv_sqrt()),
        de_inv(h.edge_deg_inv()),
        edge_grps(h.edge_groups()),
        node_grps(h.node_groups()) {
    if (chebyshev_k == 0) {
      a_norm = normalized_interaction_with_self_loop(h, norm);
    } else {
      const Matrix a = interaction_adjacency(h);
      cheb_lprime = scaled_laplacian(a, &lambda_max);
    }
  }

  // L' = (2/lambda_max) L - I for L = I - D^(-1/2) A D^(-1/2), lambda_max
  // estimated by power iteration from the all-ones vector (tolerance 1e-6,
  // capped at 1000 steps; the deterministic start keeps relabeled
  // hypergraphs on identical trajectories).
  static Matrix scaled_laplacian(const Matrix& a, double* lambda_out = nullptr) {
    const std::size_t m = a.rows();
    if (a.cols() != m) throw ShapeError("scaled_laplacian: " + a.shape_str());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j)
        if (a(i, j) != a(j, i))
          throw ConfigError("scaled_laplacian: adjacency not symmetric at (" +
                            std::to_string(i) + ", " + std::to_string(j) + ")");
    std::vector<double> dinv(m);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += a(i, j);
      dinv[i] = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
    }
    Matrix lap(m, m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) lap(i, j) = -dinv[i] * a(i, j) * dinv[j];
      lap(i, i) += 1.0;
    }

    std::vector<double> v(m, 1.0 / std::sqrt(double(m))), next(m);
    double lambda = 0.0;
    for (int it = 0; it < 1000; ++it) {
      double norm = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += lap(i, j) * v[j];
        next[i] = s;
        norm += s * s;
      }
      norm = std::sqrt(norm);
      if (norm < 1e-12) { lambda = 0.0; break; }
      for (std::size_t i = 0; i < m; ++i) v[i] = next[i] / norm;
      if (std::fabs(norm - lambda) < 1e-6) { lambda = norm; break; }
      lambda = norm;
    }
    if (lambda_out) *lambda_out = lambda;

    Matrix lp(m, m);
    if (lambda < 1e-9) {
      for (std::size_t i = 0; i < m; ++i) lp(i, i) = -1.0;  // L vanishes
      return lp;
    }
    const double f = 2.0 / lambda;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) lp(i, j) = f * lap(i, j);
      lp(i, i) -= 1.0;
    }
    return lp;
  }
};

// Row j of the result is the mean of the member-node features: the
// hyperedge initialization D_E^(-1) H^T x0.
inline Matrix init_hyperedge_features(const Hypergraph& h, const Matrix& x0) {
  if (x0.rows() != h.num_nodes())
    throw ShapeError("init_hyperedge_features: " + x0.shape_str() + " for " +
                     std::to_string(h.num_nodes()) + " nodes");
  Matrix y(h.num_edges(), x0.cols());
  for (const auto& p : h.pairs())
    for (std::size_t c = 0; c < x0.cols(); ++c) y(p.edge, c) += x0(p.node, c);
  for (std::size_t e = 0; e < h.num_edges(); ++e) {
    const double inv = 1.0 / double(h.edge_degrees()[e]);
    for (std::size_t c = 0; c < x0.cols(); ++c) y(e, c) *= inv;
  }
  return y;
}

// Per-pair weights of the plain 0/1 incidence (the attention-off mode).
inline diff::Value plain_incidence(const HypergraphOps& ops) {
  return diff::constant(Matrix(ops.hg.nnz(), 1, 1.0));
}

// Attention-weighted incidence: logit per incidence pair is
// <wq^T x_i, wk^T y_j>, soft-maxed per hyperedge (n2he) or per node
// (he2n). Pattern of H is untouched; only the surviving weights learn.
inline diff::Value attention_incidence(const diff::Value& x, const diff::Value& y,
                                       const diff::Value& wq, const diff::Value& wk,
                                       const HypergraphOps& ops, Direction dir) {
  diff::Value q = diff::matmul(x, wq);
  diff::Value k = diff::matmul(y, wk);
  diff::Value scores = diff::pair_dot(q, k, ops.hg);
  const auto& groups = dir == Direction::kN2He ? ops.edge_grps : ops.node_grps;
  return diff::masked_softmax(scores, groups);
}

// Stage 1: sigma((alpha * D_E^(-1/2) (hor(H^Att))^T D_V^(-1/2) x + y) theta1).
// alpha = 0 short-circuits so the output provably never reads x.
inline diff::Value n2he(const HypergraphOps& ops, const diff::Value& h_att,
                        const diff::Value& x, const diff::Value& y,
                        const LayerParameters& params, const StageConfig& cfg) {
  diff::Value pre;
  if (params.alpha == 0.0) {
    pre = cfg.residual ? y : diff::constant(Matrix(ops.hg.num_edges(), y->data.cols()));
  } else {
    diff::Value agg = diff::row_scale(x, ops.dv_inv_sqrt);
    agg = diff::scatter_n2he(h_att, agg, ops.hg);
    agg = diff::row_scale(agg, ops.de_inv_sqrt);
    if (params.alpha != 1.0) agg = diff::scale(agg, params.alpha);
    pre = cfg.residual ? diff::add(agg, y) : agg;
  }
  return activate(diff::matmul(pre, params.theta1), cfg.activation);
}

// Chebyshev recursion on an already-rescaled Laplacian:
// sum_i coeffs[i] T_i(L') y, then theta2 and sigma.
inline diff::Value chebyshev_apply(const Matrix& lprime, const diff::Value& y,
                                   const std::vector<diff::Value>& coeffs,
                                   const diff::Value& theta2, std::size_t k,
                                   Activation act = Activation::kRelu) {
  if (k < 1) throw ConfigError("chebyshev filter: order must be >= 1");
  if (coeffs.size() != k + 1)
    throw ConfigError("chebyshev filter: " + std::to_string(coeffs.size()) +
                      " coefficients for order " + std::to_string(k));
  diff::Value lp = diff::constant(lprime);
  diff::Value t_prev = y;
  diff::Value t_cur = diff::matmul(lp, y);
  diff::Value acc = diff::add(diff::scalar_mul(coeffs[0], t_prev),
                              diff::scalar_mul(coeffs[1], t_cur));
  for (std::size_t i = 2; i <= k; ++i) {
    diff::Value t_next = diff::sub(diff::scale(diff::matmul(lp, t_cur), 2.0), t_prev);
    acc = diff::add(acc, diff::scalar_mul(coeffs[i], t_next));
    t_prev = t_cur;
    t_cur = t_next;
  }
  return activate(diff::matmul(acc, theta2), act);
}

// Stage 2, k >= 1, from the raw interaction adjacency: builds the rescaled
// Laplacian (power-iteration lambda_max) and runs the filter.
inline diff::Value chebyshev_he2he(const Matrix& a_he, const diff::Value& y,
                                   const std::vector<diff::Value>& coeffs,
                                   const diff::Value& theta2, std::size_t k,
                                   Activation act = Activation::kRelu) {
  return chebyshev_apply(HypergraphOps::scaled_laplacian(a_he), y, coeffs, theta2, k,
                         act);
}

// Stage 2: k = 0 runs one self-loop GCN step over the interaction graph,
// k >= 1 the Chebyshev filter; reduction mode passes y1 straight through.
inline diff::Value he2he(const HypergraphOps& ops, const diff::Value& y1,
                         const LayerParameters& params, const StageConfig& cfg) {
  if (cfg.bypass_he2he) return y1;
  if (cfg.chebyshev_k >= 1)
    return chebyshev_apply(ops.cheb_lprime, y1, params.cheb_coeffs, params.theta2,
                           cfg.chebyshev_k, cfg.activation);
  diff::Value z = diff::matmul(diff::constant(ops.a_norm), y1);
  return activate(diff::matmul(z, params.theta2), cfg.activation);
}

// Stage 3: sigma((beta * D_V^(-1/2) hor(H^Att') D_E^(-1/2) y2 + x) theta3),
// the mirror of stage 1. beta = 0 never reads y2.
inline diff::Value he2n(const HypergraphOps& ops, const diff::Value& h_att2,
                        const diff::Value& y2, const diff::Value& x,
                        const LayerParameters& params, const StageConfig& cfg) {
  diff::Value pre;
  if (params.beta == 0.0) {
    pre = cfg.residual ? x : diff::constant(Matrix(ops.hg.num_nodes(), x->data.cols()));
  } else {
    diff::Value agg = diff::row_scale(y2, ops.de_inv_sqrt);
    agg = diff::scatter_he2n(h_att2, agg, ops.hg);
    agg = diff::row_scale(agg, ops.dv_inv_sqrt);
    if (params.beta != 1.0) agg = diff::scale(agg, params.beta);
    pre = cfg.residual ? diff::add(agg, x) : agg;
  }
  return activate(diff::matmul(pre, params.theta3), cfg.activation);
}

// One full layer: stage-1 attention -> n2he -> he2he -> stage-3 attention
// -> he2n. Both embeddings come back so layers stack (Y threads through).
// HOR masks are built from the current data (stage 3 compares against the
// freshly convolved hyperedge features) and carry no gradient.
inline std::pair<diff::Value, diff::Value> heihnn_layer(const HypergraphOps& ops,
                                                        const diff::Value& x,
                                                        const diff::Value& y,
                                                        const LayerParameters& params,
                                                        const StageConfig& cfg,
                                                        const HorConfig& hor = {}) {
  diff::Value y1;
  if (params.alpha == 0.0) {
    y1 = n2he(ops, plain_incidence(ops), x, y, params, cfg);  // weights unused
  } else {
    diff::Value w1 = cfg.use_attention
                         ? attention_incidence(x, y, params.wq, params.wk, ops,
                                               Direction::kN2He)
                         : plain_incidence(ops);
    if (cfg.hor_n2he) {
      const std::vector<double> mask = hor_mask(x->data, y->data, ops.hg, hor);
      w1 = apply_mask(w1, mask, ops.edge_grps, hor.renormalize);
    }
    y1 = n2he(ops, w1, x, y, params, cfg);
  }

  diff::Value y2 = he2he(ops, y1, params, cfg);

  diff::Value x_next;
  if (params.beta == 0.0) {
    x_next = he2n(ops, plain_incidence(ops), y2, x, params, cfg);
  } else {
    diff::Value w2 = cfg.use_attention
                         ? attention_incidence(x, y2, params.wq2, params.wk2, ops,
                                               Direction::kHe2N)
                         : plain_incidence(ops);
    if (cfg.hor_he2n) {
      const std::vector<double> mask = hor_mask(x->data, y2->data, ops.hg, hor);
      w2 = apply_mask(w2, mask, ops.node_grps, hor.renormalize);
    }
    x_next = he2n(ops, w2, y2, x, params, cfg);
  }
  return {x_next, y2};
}

// The classical hypergraph convolution
// sigma(beta alpha D_V^(-1/2) H D_E^(-1) H^T D_V^(-1/2) x theta) with
// alpha = beta = 1: the reference the full layer reduces to.
inline diff::Value hgnn_layer(const HypergraphOps& ops, const diff::Value& x,
                              const diff::Value& theta,
                              Activation act = Activation::kRelu) {
  diff::Value ones = plain_incidence(ops);
  diff::Value z = diff::row_scale(x, ops.dv_inv_sqrt);
  z = diff::scatter_n2he(ones, z, ops.hg);
  z = diff::row_scale(z, ops.de_inv);
  z = diff::scatter_he2n(ones, z, ops.hg);
  z = diff::row_scale(z, ops.dv_inv_sqrt);
  return activate(diff::matmul(z, theta), act);
}

}  // namespace heihnn
