#pragma once

// Reverse-mode differentiation on dense 64-bit matrices. Each op builds a
// node holding its result, its parents, and a closure that scatters the
// incoming adjoint; backward() walks the tape in reverse topological order
// and accumulates into .grad. Graphs are rebuilt every forward pass, so
// nodes are plain shared_ptrs with parent edges only (no cycles).

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "heihnn/errors.hpp"
#include "heihnn/hypergraph.hpp"
#include "heihnn/matrix.hpp"
#include "heihnn/rng.hpp"
#include "heihnn/sparse.hpp"

namespace heihnn {
namespace diff {

struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
  Matrix data;
  Matrix grad;
  bool requires_grad;
  std::vector<Value> parents;
  std::function<void(Node&)> backprop;  // scatters this->grad into parents

  explicit Node(Matrix d, bool req)
      : data(std::move(d)), grad(data.rows(), data.cols()), requires_grad(req) {}
};

inline Value constant(Matrix m) { return std::make_shared<Node>(std::move(m), false); }
inline Value param(Matrix m) { return std::make_shared<Node>(std::move(m), true); }

inline Value make_op(Matrix out, std::vector<Value> parents,
                     std::function<void(Node&)> backprop) {
  bool req = false;
  for (const auto& p : parents) req = req || p->requires_grad;
  auto node = std::make_shared<Node>(std::move(out), req);
  if (req) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return node;
}

// ---- arithmetic ----

inline Value add(const Value& a, const Value& b) {
  check_same_shape(a->data, b->data, "add");
  Matrix out = a->data;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b->data[k];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (std::size_t k = 0; k < n.grad.size(); ++k) a->grad[k] += n.grad[k];
    if (b->requires_grad)
      for (std::size_t k = 0; k < n.grad.size(); ++k) b->grad[k] += n.grad[k];
  });
}

inline Value sub(const Value& a, const Value& b) {
  check_same_shape(a->data, b->data, "sub");
  Matrix out = a->data;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= b->data[k];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (std::size_t k = 0; k < n.grad.size(); ++k) a->grad[k] += n.grad[k];
    if (b->requires_grad)
      for (std::size_t k = 0; k < n.grad.size(); ++k) b->grad[k] -= n.grad[k];
  });
}

inline Value scale(const Value& a, double c) {
  Matrix out = a->data;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= c;
  return make_op(std::move(out), {a}, [a, c](Node& n) {
    for (std::size_t k = 0; k < n.grad.size(); ++k) a->grad[k] += c * n.grad[k];
  });
}

inline Value mul(const Value& a, const Value& b) {
  check_same_shape(a->data, b->data, "mul");
  Matrix out = a->data;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= b->data[k];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (std::size_t k = 0; k < n.grad.size(); ++k) a->grad[k] += b->data[k] * n.grad[k];
    if (b->requires_grad)
      for (std::size_t k = 0; k < n.grad.size(); ++k) b->grad[k] += a->data[k] * n.grad[k];
  });
}

// out = s * a where s is a trainable 1x1 (Chebyshev coefficients etc).
inline Value scalar_mul(const Value& s, const Value& a) {
  if (s->data.rows() != 1 || s->data.cols() != 1)
    throw ShapeError("scalar_mul: scale must be 1x1, got " + s->data.shape_str());
  const double c = s->data[0];
  Matrix out = a->data;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= c;
  return make_op(std::move(out), {s, a}, [s, a, c](Node& n) {
    if (a->requires_grad)
      for (std::size_t k = 0; k < n.grad.size(); ++k) a->grad[k] += c * n.grad[k];
    if (s->requires_grad) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n.grad.size(); ++k) acc += a->data[k] * n.grad[k];
      s->grad[0] += acc;
    }
  });
}

inline Value matmul(const Value& a, const Value& b) {
  Matrix out = dense_matmul(a->data, b->data);
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    // dA = G B^T, dB = A^T G
    if (a->requires_grad) {
      const Matrix gbt = dense_matmul(n.grad, transpose(b->data));
      for (std::size_t k = 0; k < gbt.size(); ++k) a->grad[k] += gbt[k];
    }
    if (b->requires_grad) {
      const Matrix atg = dense_matmul(transpose(a->data), n.grad);
      for (std::size_t k = 0; k < atg.size(); ++k) b->grad[k] += atg[k];
    }
  });
}

// s·v with s a structural constant — gradient flows to v only. Products
// against attention-valued incidences go through the scatter ops below
// instead, so their weights stay differentiable.
inline Value sparse_scatter_matmul(const SparseMatrix& s, const Value& v) {
  if (s.cols != v->data.rows())
    throw ShapeError("sparse_scatter_matmul: " + std::to_string(s.rows) + "x" +
                     std::to_string(s.cols) + " times " + v->data.shape_str());
  Matrix out = s.multiply(v->data);
  return make_op(std::move(out), {v}, [v, s](Node& n) {
    const Matrix stg = s.multiply_transposed(n.grad);
    for (std::size_t k = 0; k < stg.size(); ++k) v->grad[k] += stg[k];
  });
}

inline Value relu(const Value& a) {
  Matrix out = a->data;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = out[k] > 0.0 ? out[k] : 0.0;
  return make_op(std::move(out), {a}, [a](Node& n) {
    for (std::size_t k = 0; k < n.grad.size(); ++k)
      if (a->data[k] > 0.0) a->grad[k] += n.grad[k];
  });
}

// out(i, :) = d[i] * a(i, :); the diagonal-degree scalings.
inline Value row_scale(const Value& a, std::vector<double> d) {
  if (d.size() != a->data.rows())
    throw ShapeError("row_scale: " + std::to_string(d.size()) + " factors for " +
                     a->data.shape_str());
  Matrix out = a->data;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= d[i];
  return make_op(std::move(out), {a}, [a, d = std::move(d)](Node& n) {
    for (std::size_t i = 0; i < n.grad.rows(); ++i)
      for (std::size_t j = 0; j < n.grad.cols(); ++j)
        a->grad(i, j) += d[i] * n.grad(i, j);
  });
}

inline Value sum(const Value& a) {
  Matrix out(1, 1);
  for (std::size_t k = 0; k < a->data.size(); ++k) out[0] += a->data[k];
  return make_op(std::move(out), {a}, [a](Node& n) {
    for (std::size_t k = 0; k < a->grad.size(); ++k) a->grad[k] += n.grad[0];
  });
}

inline Value row_l2_norms(const Value& a) {
  Matrix out(a->data.rows(), 1);
  for (std::size_t i = 0; i < a->data.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a->data.cols(); ++j) s += a->data(i, j) * a->data(i, j);
    out(i, 0) = std::sqrt(s);
  }
  return make_op(std::move(out), {a}, [a](Node& n) {
    for (std::size_t i = 0; i < a->data.rows(); ++i) {
      if (n.data(i, 0) < 1e-12) continue;
      const double f = n.grad(i, 0) / n.data(i, 0);
      for (std::size_t j = 0; j < a->data.cols(); ++j)
        a->grad(i, j) += f * a->data(i, j);
    }
  });
}

// Inverted dropout: scales kept entries by 1/(1-p) at train time so eval is
// the identity. The mask is sampled here and baked into the closure.
inline Value dropout(const Value& a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout rate must be < 1");
  const double inv_keep = 1.0 / (1.0 - p);
  std::vector<char> keep(a->data.size());
  for (std::size_t k = 0; k < keep.size(); ++k) keep[k] = rng.uniform01() >= p;
  Matrix out = a->data;
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = keep[k] ? out[k] * inv_keep : 0.0;
  return make_op(std::move(out), {a}, [a, keep = std::move(keep), inv_keep](Node& n) {
    for (std::size_t k = 0; k < n.grad.size(); ++k)
      if (keep[k]) a->grad[k] += inv_keep * n.grad[k];
  });
}

// ---- incidence-structured ops ----
// Pair order everywhere is the hypergraph's edge-major pair list.

// scores[k] = <q.row(node_k), k_.row(edge_k)> for every incidence pair.
inline Value pair_dot(const Value& q, const Value& k_, const Hypergraph& hg) {
  if (q->data.rows() != hg.num_nodes() || k_->data.rows() != hg.num_edges() ||
      q->data.cols() != k_->data.cols())
    throw ShapeError("pair_dot: got " + q->data.shape_str() + " and " +
                     k_->data.shape_str() + " for hypergraph " +
                     std::to_string(hg.num_nodes()) + "x" + std::to_string(hg.num_edges()));
  const std::size_t d = q->data.cols();
  Matrix out(hg.nnz(), 1);
  for (std::size_t t = 0; t < hg.nnz(); ++t) {
    const auto& p = hg.pairs()[t];
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += q->data(p.node, c) * k_->data(p.edge, c);
    out(t, 0) = s;
  }
  const auto* pairs = &hg.pairs();
  return make_op(std::move(out), {q, k_}, [q, k_, pairs, d](Node& n) {
    for (std::size_t t = 0; t < pairs->size(); ++t) {
      const auto& p = (*pairs)[t];
      const double g = n.grad(t, 0);
      if (g == 0.0) continue;
      if (q->requires_grad)
        for (std::size_t c = 0; c < d; ++c) q->grad(p.node, c) += g * k_->data(p.edge, c);
      if (k_->requires_grad)
        for (std::size_t c = 0; c < d; ++c) k_->grad(p.edge, c) += g * q->data(p.node, c);
    }
  });
}

// Softmax over each group of flat positions of a column vector. Positions
// covered by no group pass through as zero. Shift-by-max for stability.
inline Value masked_softmax(const Value& scores,
                            const std::vector<std::vector<std::size_t>>& groups) {
  if (scores->data.cols() != 1)
    throw ShapeError("masked_softmax expects a column vector, got " +
                     scores->data.shape_str());
  Matrix out(scores->data.rows(), 1);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    if (g.empty())
      throw ConfigError("masked_softmax: group " + std::to_string(gi) + " is empty");
    double mx = scores->data[g[0]];
    for (auto k : g) mx = std::max(mx, scores->data[k]);
    double denom = 0.0;
    for (auto k : g) denom += std::exp(scores->data[k] - mx);
    for (auto k : g) out[k] = std::exp(scores->data[k] - mx) / denom;
  }
  return make_op(std::move(out), {scores}, [scores, groups](Node& n) {
    for (const auto& g : groups) {
      double dot = 0.0;
      for (auto k : g) dot += n.grad[k] * n.data[k];
      for (auto k : g) scores->grad[k] += n.data[k] * (n.grad[k] - dot);
    }
  });
}

// Zero out masked-off weights and, when renormalize is set, rescale each
// group's survivors to sum to one. The mask is a fixed overlay: no gradient
// flows through it, and a group whose surviving mass is below 1e-12 is left
// unnormalized. An all-ones mask is the identity (same node handed back
// untouched).
inline Value group_renormalize(const Value& w, const std::vector<double>& mask,
                               const std::vector<std::vector<std::size_t>>& groups,
                               bool renormalize = true) {
  if (mask.size() != w->data.rows() || w->data.cols() != 1)
    throw ShapeError("group_renormalize: mask size " + std::to_string(mask.size()) +
                     " vs weights " + w->data.shape_str());
  bool all_ones = true;
  for (double v : mask)
    if (v != 1.0) { all_ones = false; break; }
  if (all_ones) return w;

  Matrix out(w->data.rows(), 1);
  std::vector<double> gsum(groups.size(), 0.0);
  std::vector<char> renorm(groups.size(), 0);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (auto k : groups[gi]) gsum[gi] += mask[k] * w->data[k];
    renorm[gi] = renormalize && gsum[gi] >= 1e-12;
    const double inv = renorm[gi] ? 1.0 / gsum[gi] : 1.0;
    for (auto k : groups[gi]) out[k] = mask[k] * w->data[k] * inv;
  }
  return make_op(std::move(out), {w},
                 [w, mask, groups, gsum = std::move(gsum),
                  renorm = std::move(renorm)](Node& n) {
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      if (renorm[gi]) {
        double dot = 0.0;
        for (auto k : groups[gi]) dot += n.grad[k] * n.data[k];
        const double inv = 1.0 / gsum[gi];
        for (auto k : groups[gi])
          w->grad[k] += mask[k] * inv * (n.grad[k] - dot);
      } else {
        for (auto k : groups[gi]) w->grad[k] += mask[k] * n.grad[k];
      }
    }
  });
}

// out(e, :) += w[k] * x(node_k, :) over pairs k: the node->hyperedge
// scatter through a weighted incidence transpose.
inline Value scatter_n2he(const Value& w, const Value& x, const Hypergraph& hg) {
  if (w->data.rows() != hg.nnz() || w->data.cols() != 1 ||
      x->data.rows() != hg.num_nodes())
    throw ShapeError("scatter_n2he: weights " + w->data.shape_str() + ", features " +
                     x->data.shape_str());
  const std::size_t d = x->data.cols();
  Matrix out(hg.num_edges(), d);
  for (std::size_t t = 0; t < hg.nnz(); ++t) {
    const auto& p = hg.pairs()[t];
    const double wk = w->data[t];
    for (std::size_t c = 0; c < d; ++c) out(p.edge, c) += wk * x->data(p.node, c);
  }
  const auto* pairs = &hg.pairs();
  return make_op(std::move(out), {w, x}, [w, x, pairs, d](Node& n) {
    for (std::size_t t = 0; t < pairs->size(); ++t) {
      const auto& p = (*pairs)[t];
      if (x->requires_grad) {
        const double wk = w->data[t];
        for (std::size_t c = 0; c < d; ++c)
          x->grad(p.node, c) += wk * n.grad(p.edge, c);
      }
      if (w->requires_grad) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += n.grad(p.edge, c) * x->data(p.node, c);
        w->grad[t] += s;
      }
    }
  });
}

// out(v, :) += w[k] * y(edge_k, :): the hyperedge->node direction.
inline Value scatter_he2n(const Value& w, const Value& y, const Hypergraph& hg) {
  if (w->data.rows() != hg.nnz() || w->data.cols() != 1 ||
      y->data.rows() != hg.num_edges())
    throw ShapeError("scatter_he2n: weights " + w->data.shape_str() + ", features " +
                     y->data.shape_str());
  const std::size_t d = y->data.cols();
  Matrix out(hg.num_nodes(), d);
  for (std::size_t t = 0; t < hg.nnz(); ++t) {
    const auto& p = hg.pairs()[t];
    const double wk = w->data[t];
    for (std::size_t c = 0; c < d; ++c) out(p.node, c) += wk * y->data(p.edge, c);
  }
  const auto* pairs = &hg.pairs();
  return make_op(std::move(out), {w, y}, [w, y, pairs, d](Node& n) {
    for (std::size_t t = 0; t < pairs->size(); ++t) {
      const auto& p = (*pairs)[t];
      if (y->requires_grad) {
        const double wk = w->data[t];
        for (std::size_t c = 0; c < d; ++c)
          y->grad(p.edge, c) += wk * n.grad(p.node, c);
      }
      if (w->requires_grad) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += n.grad(p.node, c) * y->data(p.edge, c);
        w->grad[t] += s;
      }
    }
  });
}

// ---- loss ----

// Mean cross-entropy over the given rows, straight from logits
// (log-sum-exp with max shift).
inline Value cross_entropy(const Value& logits, const std::vector<int>& labels,
                           const std::vector<std::size_t>& rows) {
  const std::size_t n = logits->data.rows(), c = logits->data.cols();
  if (labels.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     logits->data.shape_str());
  if (rows.empty()) throw ConfigError("cross_entropy: empty row set");

  Matrix out(1, 1);
  double total = 0.0;
  for (std::size_t i : rows) {
    if (i >= n)
      throw ShapeError("cross_entropy: row " + std::to_string(i) + " outside " +
                       logits->data.shape_str());
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw ConfigError("label " + std::to_string(labels[i]) + " at row " +
                        std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    double mx = logits->data(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits->data(i, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(logits->data(i, j) - mx);
    total += mx + std::log(lse) - logits->data(i, labels[i]);
  }
  out[0] = total / double(rows.size());
  return make_op(std::move(out), {logits}, [logits, labels, rows, c](Node& n) {
    const double g = n.grad[0] / double(rows.size());
    for (std::size_t i : rows) {
      double mx = logits->data(i, 0);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits->data(i, j));
      double denom = 0.0;
      for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits->data(i, j) - mx);
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(logits->data(i, j) - mx) / denom;
        logits->grad(i, j) += g * (p - (int(j) == labels[i] ? 1.0 : 0.0));
      }
    }
  });
}

// ---- engine ----

inline void topo_collect(const Value& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

// Seeds the root adjoint with ones (the usual case is a 1x1 loss) and
// pushes adjoints leafward. Accumulates: callers zero leaf grads between
// optimization steps.
inline void backward(const Value& root) {
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  topo_collect(root, order);
  root->grad.fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

inline void zero_grad(const std::vector<Value>& params) {
  for (const auto& p : params) p->grad.fill(0.0);
}

// Central-difference check of d(f)/d(params). f must rebuild its graph from
// the params' current data on every call and return a 1x1 loss. Returns the
// max relative error per parameter, coordinate-wise worst case.
inline std::vector<double> grad_check_per_param(const std::function<Value()>& f,
                                                const std::vector<Value>& params,
                                                double h = 1e-5) {
  zero_grad(params);
  Value loss = f();
  if (loss->data.rows() != 1 || loss->data.cols() != 1)
    throw ShapeError("grad_check needs a scalar loss, got " + loss->data.shape_str());
  backward(loss);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  std::vector<double> worst(params.size(), 0.0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& theta = params[pi]->data;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double keep = theta[k];
      theta[k] = keep + h;
      const double up = f()->data[0];
      theta[k] = keep - h;
      const double down = f()->data[0];
      theta[k] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic[pi][k];
      const double rel = std::fabs(a - fd) /
                         std::max({std::fabs(a), std::fabs(fd), 1e-8});
      worst[pi] = std::max(worst[pi], rel);
    }
  }
  return worst;
}

inline double grad_check(const std::function<Value()>& f,
                         const std::vector<Value>& params, double h = 1e-5) {
  double worst = 0.0;
  for (double w : grad_check_per_param(f, params, h)) worst = std::max(worst, w);
  return worst;
}

inline double grad_check(const std::function<Value()>& f, const Value& x0,
                         double h = 1e-5) {
  return grad_check(f, std::vector<Value>{x0}, h);
}

}  // namespace diff
}  // namespace heihnn
