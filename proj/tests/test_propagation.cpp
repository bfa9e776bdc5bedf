#include <gtest/gtest.h>

#include <cmath>

#include "heihnn/propagation.hpp"
#include "oracles.hpp"

using namespace heihnn;
using diff::Value;

namespace {

struct Instance {
  Hypergraph hg;
  Matrix hd;  // dense 0/1 incidence
  Matrix x, y;
};

Instance random_instance(Rng& rng, std::size_t max_n = 16, std::size_t max_m = 10,
                         std::size_t width = 3) {
  const std::size_t n = 2 + std::size_t(rng.uniform_int(max_n - 1));
  const std::size_t m = 1 + std::size_t(rng.uniform_int(max_m));
  const auto edges = oracle::random_edges(rng, n, m);
  return {build_hypergraph(n, edges), oracle::incidence(n, edges),
          oracle::random_matrix(rng, n, width),
          oracle::random_matrix(rng, m, width)};
}

LayerParameters square_params(Rng& rng, std::size_t width, std::size_t att_width,
                              std::size_t cheb_k = 0) {
  LayerParameters p;
  p.theta1 = diff::param(oracle::random_matrix(rng, width, width));
  p.theta2 = diff::param(oracle::random_matrix(rng, width, width));
  p.theta3 = diff::param(oracle::random_matrix(rng, width, width));
  p.wq = diff::param(oracle::random_matrix(rng, width, att_width));
  p.wk = diff::param(oracle::random_matrix(rng, width, att_width));
  p.wq2 = diff::param(oracle::random_matrix(rng, width, att_width));
  p.wk2 = diff::param(oracle::random_matrix(rng, width, att_width));
  for (std::size_t i = 0; i <= cheb_k && cheb_k >= 1; ++i)
    p.cheb_coeffs.push_back(diff::param(Matrix(1, 1, rng.normal())));
  return p;
}

// per-pair weights alongside the dense overlay they correspond to
std::pair<Matrix, Matrix> random_weights(Rng& rng, const Instance& in) {
  Matrix pairs(in.hg.nnz(), 1);
  Matrix dense(in.hd.rows(), in.hd.cols());
  std::size_t k = 0;
  for (const auto& p : in.hg.pairs()) {
    const double w = rng.uniform(0.1, 2.0);
    pairs[k++] = w;
    dense(p.node, p.edge) = w;
  }
  return {pairs, dense};
}

TEST(Stages, HandTraceAllOnesScalar) {
  // single node in a single hyperedge, every value 1, identity activations:
  // stage 1 gives 1*1*1*1 + 1 = 2, stage 2 keeps 2 (normalized self-loop
  // adjacency is 1x1 identity), stage 3 gives 1*1*1*2 + 1 = 3.
  const Hypergraph hg = build_hypergraph(1, {{0}});
  HypergraphOps ops(hg, InteractionNorm::kRowSum);
  StageConfig cfg;
  cfg.use_attention = false;
  cfg.activation = Activation::kIdentity;
  Rng rng(1);
  LayerParameters p = square_params(rng, 1, 1);
  p.theta1->data[0] = p.theta2->data[0] = p.theta3->data[0] = 1.0;
  const Value x = diff::constant(Matrix(1, 1, 1.0));
  const Value y = diff::constant(Matrix(1, 1, 1.0));
  const auto [xn, y2] = heihnn_layer(ops, x, y, p, cfg);
  EXPECT_DOUBLE_EQ(y2->data[0], 2.0);
  EXPECT_DOUBLE_EQ(xn->data[0], 3.0);
}

TEST(Stages, N2heMatchesDenseOracle) {
  Rng rng(53);
  for (int trial = 0; trial < 25; ++trial) {
    const Instance in = random_instance(rng);
    const auto [wp, wd] = random_weights(rng, in);
    HypergraphOps ops(in.hg, InteractionNorm::kRowSum);
    StageConfig cfg;
    cfg.residual = trial % 2 == 0;
    LayerParameters p = square_params(rng, 3, 2);
    p.alpha = trial % 3 == 0 ? 0.7 : 1.0;
    const Value out = n2he(ops, diff::constant(wp), diff::constant(in.x),
                           diff::constant(in.y), p, cfg);
    const Matrix ref = oracle::n2he(in.hd, wd, in.x, in.y, p.theta1->data, p.alpha,
                                    cfg.residual, true);
    EXPECT_LT(max_abs_diff(out->data, ref), 1e-12);
  }
}

TEST(Stages, He2heMatchesDenseOracle) {
  Rng rng(59);
  for (int trial = 0; trial < 25; ++trial) {
    const Instance in = random_instance(rng);
    const bool paper_literal = trial % 2 == 1;
    const InteractionNorm norm =
        paper_literal ? InteractionNorm::kEdgeDegree : InteractionNorm::kRowSum;
    HypergraphOps ops(in.hg, norm);
    StageConfig cfg;
    cfg.norm = norm;
    LayerParameters p = square_params(rng, 3, 2);
    const Value out = he2he(ops, diff::constant(in.y), p, cfg);
    const Matrix ref =
        oracle::he2he(in.hd, in.y, p.theta2->data, paper_literal, true);
    EXPECT_LT(max_abs_diff(out->data, ref), 1e-12);
  }
}

TEST(Stages, ChebyshevMatchesDenseOracle) {
  Rng rng(61);
  for (int trial = 0; trial < 25; ++trial) {
    const Instance in = random_instance(rng);
    const std::size_t k = 1 + std::size_t(rng.uniform_int(3));
    std::vector<diff::Value> coeffs;
    std::vector<double> craw;
    for (std::size_t i = 0; i <= k; ++i) {
      craw.push_back(rng.normal());
      coeffs.push_back(diff::param(Matrix(1, 1, craw.back())));
    }
    const Value theta2 = diff::param(oracle::random_matrix(rng, 3, 3));
    const Matrix a_he = interaction_adjacency(in.hg);
    const Value out =
        chebyshev_he2he(a_he, diff::constant(in.y), coeffs, theta2, k);
    const Matrix ref = oracle::cheb(a_he, in.y, craw, theta2->data, k, true);
    EXPECT_LT(max_abs_diff(out->data, ref), 1e-12);
  }
}

TEST(Stages, ChebyshevArgumentErrors) {
  const Hypergraph hg = build_hypergraph(2, {{0, 1}});
  const Value y = diff::constant(Matrix(1, 2, 1.0));
  const Value theta = diff::constant(Matrix(2, 2, 1.0));
  std::vector<diff::Value> two = {diff::constant(Matrix(1, 1, 1.0)),
                                  diff::constant(Matrix(1, 1, 0.0))};
  EXPECT_THROW(chebyshev_he2he(interaction_adjacency(hg), y, two, theta, 0),
               ConfigError);
  EXPECT_THROW(chebyshev_he2he(interaction_adjacency(hg), y, two, theta, 2),
               ConfigError);
  Matrix asym(2, 2);
  asym(0, 1) = 1.0;
  EXPECT_THROW(HypergraphOps::scaled_laplacian(asym), ConfigError);
}

TEST(Stages, ScaledLaplacianSingleEdgeGuard) {
  // m = 1: L = 1 - a/a = 0, power iteration sees the zero matrix and the
  // rescaled operator falls back to -I
  Matrix a(1, 1, 4.0);
  double lambda = -1.0;
  const Matrix lp = HypergraphOps::scaled_laplacian(a, &lambda);
  EXPECT_EQ(lambda, 0.0);
  EXPECT_DOUBLE_EQ(lp(0, 0), -1.0);
}

TEST(Stages, ChebyshevIdentityCoeffsKeepInput) {
  // coeffs (1, 0, ..., 0) make the filter the identity regardless of L'
  Rng rng(67);
  const Instance in = random_instance(rng);
  std::vector<diff::Value> coeffs = {diff::constant(Matrix(1, 1, 1.0)),
                                     diff::constant(Matrix(1, 1, 0.0)),
                                     diff::constant(Matrix(1, 1, 0.0))};
  Matrix eye(3, 3);
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
  const Value out = chebyshev_he2he(interaction_adjacency(in.hg),
                                    diff::constant(in.y), coeffs,
                                    diff::constant(eye), 2, Activation::kIdentity);
  EXPECT_LT(max_abs_diff(out->data, in.y), 1e-12);
}

TEST(Stages, He2nMatchesDenseOracle) {
  Rng rng(71);
  for (int trial = 0; trial < 25; ++trial) {
    const Instance in = random_instance(rng);
    const auto [wp, wd] = random_weights(rng, in);
    HypergraphOps ops(in.hg, InteractionNorm::kRowSum);
    StageConfig cfg;
    cfg.residual = trial % 2 == 0;
    LayerParameters p = square_params(rng, 3, 2);
    p.beta = trial % 3 == 0 ? 0.4 : 1.0;
    const Value out = he2n(ops, diff::constant(wp), diff::constant(in.y),
                           diff::constant(in.x), p, cfg);
    const Matrix ref = oracle::he2n(in.hd, wd, in.y, in.x, p.theta3->data, p.beta,
                                    cfg.residual, true);
    EXPECT_LT(max_abs_diff(out->data, ref), 1e-12);
  }
}

TEST(Stages, AttentionMatchesDenseOracle) {
  Rng rng(73);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng);
    HypergraphOps ops(in.hg, InteractionNorm::kRowSum);
    LayerParameters p = square_params(rng, 3, 2);
    const Value w1 = attention_incidence(diff::constant(in.x), diff::constant(in.y),
                                         p.wq, p.wk, ops, Direction::kN2He);
    const Matrix ref1 =
        oracle::attention(in.hd, in.x, in.y, p.wq->data, p.wk->data, true);
    std::size_t k = 0;
    for (const auto& pr : in.hg.pairs())
      EXPECT_NEAR(w1->data[k++], ref1(pr.node, pr.edge), 1e-13);
    const Value w2 = attention_incidence(diff::constant(in.x), diff::constant(in.y),
                                         p.wq2, p.wk2, ops, Direction::kHe2N);
    const Matrix ref2 =
        oracle::attention(in.hd, in.x, in.y, p.wq2->data, p.wk2->data, false);
    k = 0;
    for (const auto& pr : in.hg.pairs())
      EXPECT_NEAR(w2->data[k++], ref2(pr.node, pr.edge), 1e-13);
  }
}

TEST(Stages, AttentionGroupsSumToOne) {
  Rng rng(79);
  const Instance in = random_instance(rng, 14, 8);
  HypergraphOps ops(in.hg, InteractionNorm::kRowSum);
  LayerParameters p = square_params(rng, 3, 4);
  const Value w = attention_incidence(diff::constant(in.x), diff::constant(in.y),
                                      p.wq, p.wk, ops, Direction::kN2He);
  for (const auto& g : ops.edge_grps) {
    double s = 0.0;
    for (std::size_t k : g) s += w->data[k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Stages, InitHyperedgeFeaturesIsMemberMean) {
  const Hypergraph hg = build_hypergraph(4, {{0, 1, 2}, {2, 3}});
  Matrix x(4, 2);
  x(0, 0) = 3.0;
  x(1, 0) = 0.0;
  x(2, 0) = 0.0;
  x(3, 0) = 0.0;
  x(0, 1) = 2.0;
  x(1, 1) = 2.0;
  x(2, 1) = 2.0;
  x(3, 1) = 7.0;
  const Matrix y = init_hyperedge_features(hg, x);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(y(1, 1), 4.5);
  EXPECT_THROW(init_hyperedge_features(hg, Matrix(3, 2)), ShapeError);
}

TEST(Layer, AlphaZeroNeverReadsNodeFeatures) {
  Rng rng(83);
  const Instance in = random_instance(rng);
  HypergraphOps ops(in.hg, InteractionNorm::kRowSum);
  StageConfig cfg;
  LayerParameters p = square_params(rng, 3, 2);
  p.alpha = 0.0;
  const auto [x1, y1] = heihnn_layer(ops, diff::constant(in.x), diff::constant(in.y),
                                     p, cfg);
  Matrix xs = in.x;
  for (std::size_t k = 0; k < xs.size(); ++k) xs[k] = xs[k] * -3.0 + 1.0;
  const auto [x2, y2] = heihnn_layer(ops, diff::constant(xs), diff::constant(in.y),
                                     p, cfg);
  // the hyperedge track must be bitwise independent of x when alpha = 0
  EXPECT_EQ(max_abs_diff(y1->data, y2->data), 0.0);
}

TEST(Layer, BetaZeroNeverReadsHyperedgeTrack) {
  Rng rng(89);
  const Instance in = random_instance(rng);
  HypergraphOps ops(in.hg, InteractionNorm::kRowSum);
  StageConfig cfg;
  cfg.bypass_he2he = true;  // so y feeds stage 3 directly
  LayerParameters p = square_params(rng, 3, 2);
  p.beta = 0.0;
  const auto [x1, u1] = heihnn_layer(ops, diff::constant(in.x), diff::constant(in.y),
                                     p, cfg);
  Matrix ys = in.y;
  for (std::size_t k = 0; k < ys.size(); ++k) ys[k] = ys[k] * 2.0 - 5.0;
  const auto [x2, u2] = heihnn_layer(ops, diff::constant(in.x), diff::constant(ys),
                                     p, cfg);
  EXPECT_EQ(max_abs_diff(x1->data, x2->data), 0.0);
  (void)u1;
  (void)u2;
}

TEST(Layer, ReductionModeEqualsHgnn) {
  Rng rng(97);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance in = random_instance(rng, 16, 10);
    HypergraphOps ops(in.hg, InteractionNorm::kRowSum);
    StageConfig cfg;
    cfg.use_attention = false;
    cfg.residual = false;
    cfg.bypass_he2he = true;
    LayerParameters p = square_params(rng, 3, 2);
    Matrix eye(3, 3);
    for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
    p.theta1 = diff::constant(eye);
    // internal stages stay linear; the final activation lives in theta3's stage
    cfg.activation = Activation::kIdentity;
    const Value x = diff::constant(in.x);
    const Value y = diff::constant(Matrix(in.hg.num_edges(), 3));
    const auto [xn, yn] = heihnn_layer(ops, x, y, p, cfg);
    const Matrix ref = oracle::hgnn(in.hd, in.x, p.theta3->data, false);
    EXPECT_LT(max_abs_diff(xn->data, ref), 1e-10);
    const Value direct = hgnn_layer(ops, x, p.theta3, Activation::kIdentity);
    EXPECT_LT(max_abs_diff(direct->data, ref), 1e-12);
    (void)yn;
  }
}

TEST(Layer, PermutationEquivariance) {
  Rng rng(101);
  const std::size_t n = 9, width = 3;
  const auto edges = oracle::random_edges(rng, n, 6);
  const Hypergraph hg = build_hypergraph(n, edges);
  const Matrix x = oracle::random_matrix(rng, n, width);
  const Matrix y = oracle::random_matrix(rng, hg.num_edges(), width);
  LayerParameters p = square_params(rng, width, 2);
  StageConfig cfg;
  HypergraphOps ops(hg, InteractionNorm::kRowSum);
  const auto [x_out, y_out] =
      heihnn_layer(ops, diff::constant(x), diff::constant(y), p, cfg);

  for (int trial = 0; trial < 5; ++trial) {
    // random node permutation: node v of the original becomes perm[v]
    std::vector<std::size_t> perm(n);
    for (std::size_t v = 0; v < n; ++v) perm[v] = v;
    for (std::size_t v = n; v > 1; --v)
      std::swap(perm[v - 1], perm[rng.uniform_int(v)]);
    auto pedges = edges;
    for (auto& e : pedges)
      for (auto& v : e) v = std::uint32_t(perm[v]);
    Matrix px(n, width);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t c = 0; c < width; ++c) px(perm[v], c) = x(v, c);
    const Hypergraph phg = build_hypergraph(n, pedges);
    HypergraphOps pops(phg, InteractionNorm::kRowSum);
    const auto [px_out, py_out] =
        heihnn_layer(pops, diff::constant(px), diff::constant(y), p, cfg);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t c = 0; c < width; ++c)
        EXPECT_NEAR(px_out->data(perm[v], c), x_out->data(v, c), 1e-10);
    for (std::size_t e = 0; e < hg.num_edges(); ++e)
      for (std::size_t c = 0; c < width; ++c)
        EXPECT_NEAR(py_out->data(e, c), y_out->data(e, c), 1e-10);
  }
}

TEST(Layer, GradientsFlowThroughAllStages) {
  Rng rng(103);
  const Instance in = random_instance(rng, 8, 5);
  HypergraphOps ops(in.hg, InteractionNorm::kRowSum);
  StageConfig cfg;
  LayerParameters p = square_params(rng, 3, 2);
  const auto f = [&]() {
    const auto [xn, yn] = heihnn_layer(ops, diff::constant(in.x),
                                       diff::constant(in.y), p, cfg);
    return diff::sum(diff::add(xn, diff::matmul(diff::constant(in.hd), yn)));
  };
  const double worst = diff::grad_check(
      f, {p.theta1, p.theta2, p.theta3, p.wq, p.wk, p.wq2, p.wk2}, 1e-5);
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
