#pragma once

// Model assembly and the training stack: stacked layers behind an input
// projection and a linear head, decoupled-weight-decay optimization,
// accuracy evaluation, the alpha/beta sweep, and the PGD feature attack.

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "heihnn/autodiff.hpp"
#include "heihnn/data.hpp"
#include "heihnn/errors.hpp"
#include "heihnn/hor.hpp"
#include "heihnn/hypergraph.hpp"
#include "heihnn/matrix.hpp"
#include "heihnn/propagation.hpp"
#include "heihnn/rng.hpp"

namespace heihnn {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t att_width = 64;
  double alpha = 1.0;
  double beta = 1.0;
  StageConfig stage;
  HorConfig hor;
  double dropout = 0.5;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  double lr = 0.001;
  double weight_decay = 0.0005;
  std::size_t epochs = 200;
  std::size_t patience = 30;  // early stop on train-loss plateau; 0 disables
  bool adaptive = true;       // false: plain gradient descent
};

struct EpochRecord {
  std::size_t epoch;
  double loss;
  double train_acc;
  double test_acc;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::vector<std::pair<std::string, Matrix>> final_params;
};

// Fraction of the given rows whose argmax logit hits the label; argmax
// ties resolve to the lowest class id.
inline double accuracy(const Matrix& logits, const std::vector<int>& labels,
                       const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("evaluate: empty index set");
  std::size_t hits = 0;
  for (std::size_t i : indices) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, arg)) arg = j;
    hits += std::size_t(labels[i]) == arg;
  }
  return double(hits) / double(indices.size());
}

// Micro-F1 computed the long way (pooled TP/FP/FN). For single-label
// multi-class data every row adds one prediction and one truth, so pooled
// precision, recall, and F1 all collapse to plain accuracy; a test pins
// that equality rather than assuming it.
inline double micro_f1(const Matrix& logits, const std::vector<int>& labels,
                       const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("micro_f1: empty index set");
  const std::size_t c = logits.cols();
  std::vector<std::size_t> tp(c, 0), fp(c, 0), fn(c, 0);
  for (std::size_t i : indices) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits(i, j) > logits(i, arg)) arg = j;
    if (std::size_t(labels[i]) == arg) {
      ++tp[arg];
    } else {
      ++fp[arg];
      ++fn[labels[i]];
    }
  }
  double tps = 0, fps = 0, fns = 0;
  for (std::size_t j = 0; j < c; ++j) {
    tps += double(tp[j]);
    fps += double(fp[j]);
    fns += double(fn[j]);
  }
  const double prec = tps / (tps + fps), rec = tps / (tps + fns);
  if (prec + rec == 0.0) return 0.0;
  return 2.0 * prec * rec / (prec + rec);
}

// Adaptive moment estimation (0.9 / 0.999 / 1e-8) with decoupled weight
// decay, switchable to plain gradient descent. Decay multiplies the
// pre-step parameter, so a zero-gradient step shrinks norms by exactly
// (1 - lr * decay).
class Optimizer {
 public:
  Optimizer(const std::vector<diff::Value>& params, const TrainConfig& tc)
      : lr_(tc.lr), wd_(tc.weight_decay), adaptive_(tc.adaptive) {
    if (lr_ < 0.0) throw ConfigError("negative learning rate");
    if (wd_ < 0.0) throw ConfigError("negative weight decay");
    if (adaptive_) {
      for (const auto& p : params) {
        m_.emplace_back(p->data.rows(), p->data.cols());
        v_.emplace_back(p->data.rows(), p->data.cols());
      }
    }
  }

  void step(const std::vector<diff::Value>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(0.9, double(t_));
    const double bc2 = 1.0 - std::pow(0.999, double(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Matrix& x = params[pi]->data;
      const Matrix& g = params[pi]->grad;
      for (std::size_t k = 0; k < x.size(); ++k) {
        double update;
        if (adaptive_) {
          double& m = m_[pi][k];
          double& v = v_[pi][k];
          m = 0.9 * m + 0.1 * g[k];
          v = 0.999 * v + 0.001 * g[k] * g[k];
          update = (m / bc1) / (std::sqrt(v / bc2) + 1e-8);
        } else {
          update = g[k];
        }
        x[k] -= lr_ * update + lr_ * wd_ * x[k];
      }
    }
  }

 private:
  double lr_, wd_;
  bool adaptive_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Input projection -> `layers` stacked hypergraph layers (X and Y thread
// through) -> linear head. Hyperedge state starts as the member-feature
// means of the projected inputs.
class Model {
 public:
  Model(const ModelConfig& cfg, std::size_t in_dim, std::size_t classes)
      : cfg_(cfg), in_dim_(in_dim), classes_(classes) {
    if (cfg.layers < 1) throw ConfigError("model needs >= 1 layer");
    if (cfg.hidden < 1 || cfg.att_width < 1) throw ConfigError("zero model width");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
      throw ConfigError("dropout rate outside [0, 1)");
    if (cfg.alpha < 0.0 || cfg.beta < 0.0) throw ConfigError("negative alpha or beta");
    if (in_dim < 1 || classes < 2) throw ConfigError("bad data dimensions");

    Rng rng(cfg.seed);
    const auto glorot = [&rng](std::size_t r, std::size_t c) {
      Matrix m(r, c);
      const double lim = std::sqrt(6.0 / double(r + c));
      for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.uniform(-lim, lim);
      return diff::param(std::move(m));
    };

    w_in_ = glorot(in_dim, cfg.hidden);
    layers_.reserve(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      LayerParameters p;
      p.theta1 = glorot(cfg.hidden, cfg.hidden);
      p.theta2 = glorot(cfg.hidden, cfg.hidden);
      p.theta3 = glorot(cfg.hidden, cfg.hidden);
      p.wq = glorot(cfg.hidden, cfg.att_width);
      p.wk = glorot(cfg.hidden, cfg.att_width);
      p.wq2 = glorot(cfg.hidden, cfg.att_width);
      p.wk2 = glorot(cfg.hidden, cfg.att_width);
      if (cfg.stage.chebyshev_k >= 1) {
        for (std::size_t i = 0; i <= cfg.stage.chebyshev_k; ++i) {
          Matrix c(1, 1, i == 0 ? 1.0 : 0.0);  // start at the identity filter
          p.cheb_coeffs.push_back(cfg.stage.freeze_chebyshev
                                      ? diff::constant(std::move(c))
                                      : diff::param(std::move(c)));
        }
      }
      p.alpha = cfg.alpha;
      p.beta = cfg.beta;
      layers_.push_back(std::move(p));
    }
    w_out_ = glorot(cfg.hidden, classes);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t input_dim() const { return in_dim_; }
  std::size_t num_classes() const { return classes_; }

  std::vector<std::pair<std::string, diff::Value>> named_parameters() const {
    std::vector<std::pair<std::string, diff::Value>> out;
    out.emplace_back("w_in", w_in_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      const auto& p = layers_[l];
      out.emplace_back(pre + "theta1", p.theta1);
      out.emplace_back(pre + "theta2", p.theta2);
      out.emplace_back(pre + "theta3", p.theta3);
      out.emplace_back(pre + "wq", p.wq);
      out.emplace_back(pre + "wk", p.wk);
      out.emplace_back(pre + "wq2", p.wq2);
      out.emplace_back(pre + "wk2", p.wk2);
      for (std::size_t i = 0; i < p.cheb_coeffs.size(); ++i)
        out.emplace_back(pre + "cheb" + std::to_string(i), p.cheb_coeffs[i]);
    }
    out.emplace_back("w_out", w_out_);
    return out;
  }

  std::vector<diff::Value> parameters() const {
    std::vector<diff::Value> out;
    for (auto& [name, v] : named_parameters())
      if (v->requires_grad) out.push_back(v);
    return out;
  }

  HypergraphOps make_ops(const Hypergraph& hg) const {
    return HypergraphOps(hg, cfg_.stage.norm, cfg_.stage.chebyshev_k);
  }

  diff::Value forward(const HypergraphOps& ops, const diff::Value& x0, bool training,
                      Rng& rng) const {
    if (x0->data.cols() != in_dim_)
      throw ShapeError("forward: features " + x0->data.shape_str() + ", expected width " +
                       std::to_string(in_dim_));
    diff::Value x = diff::matmul(x0, w_in_);
    diff::Value y =
        diff::row_scale(diff::scatter_n2he(plain_incidence(ops), x, ops.hg), ops.de_inv);
    for (const auto& layer : layers_) {
      x = diff::dropout(x, cfg_.dropout, rng, training);
      auto [xn, yn] = heihnn_layer(ops, x, y, layer, cfg_.stage, cfg_.hor);
      x = std::move(xn);
      y = std::move(yn);
    }
    return diff::matmul(x, w_out_);
  }

  Matrix eval_logits(const HypergraphOps& ops, const Matrix& x0) const {
    Rng unused(0);
    return forward(ops, diff::constant(x0), false, unused)->data;
  }

  // Overwrite parameters from a named snapshot (names and shapes must match).
  void load_parameters(const std::vector<std::pair<std::string, Matrix>>& mats) {
    auto named = named_parameters();
    if (mats.size() != named.size())
      throw ConfigError("snapshot has " + std::to_string(mats.size()) +
                        " matrices, model has " + std::to_string(named.size()));
    for (std::size_t i = 0; i < mats.size(); ++i) {
      if (mats[i].first != named[i].first)
        throw ConfigError("snapshot matrix '" + mats[i].first + "' where '" +
                          named[i].first + "' expected");
      if (!named[i].second->data.same_shape(mats[i].second))
        throw ShapeError("snapshot matrix '" + mats[i].first + "' is " +
                         mats[i].second.shape_str() + ", model wants " +
                         named[i].second->data.shape_str());
      named[i].second->data = mats[i].second;
    }
  }

 private:
  ModelConfig cfg_;
  std::size_t in_dim_, classes_;
  diff::Value w_in_, w_out_;
  std::vector<LayerParameters> layers_;
};

// Full-graph training: per epoch one forward on the whole hypergraph,
// cross-entropy on the train rows, backward, optimizer step, then an
// evaluation-mode pass for the history record. Deterministic given
// (seed, config, dataset).
inline TrainHistory train(Model& model, const Dataset& ds, const TrainConfig& tc) {
  if (ds.train_idx.empty() || ds.test_idx.empty())
    throw ConfigError("train: empty split");
  const HypergraphOps ops = model.make_ops(ds.hypergraph);
  const auto params = model.parameters();
  Optimizer opt(params, tc);
  Rng drop_rng(model.config().seed ^ 0x9e3779b97f4a7c15ULL);
  const diff::Value x0 = diff::constant(ds.features);

  TrainHistory hist;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    diff::zero_grad(params);
    diff::Value logits = model.forward(ops, x0, true, drop_rng);
    diff::Value loss = diff::cross_entropy(logits, ds.labels, ds.train_idx);
    const double loss_val = loss->data[0];
    if (!std::isfinite(loss_val))
      throw TrainingDiverged("training loss diverged at epoch " + std::to_string(epoch));
    diff::backward(loss);
    opt.step(params);

    const Matrix ev = model.eval_logits(ops, ds.features);
    hist.records.push_back({epoch, loss_val, accuracy(ev, ds.labels, ds.train_idx),
                            accuracy(ev, ds.labels, ds.test_idx)});

    if (loss_val < best_loss - 1e-12) {
      best_loss = loss_val;
      stale = 0;
    } else if (tc.patience > 0 && ++stale >= tc.patience) {
      break;
    }
  }
  for (auto& [name, v] : model.named_parameters())
    hist.final_params.emplace_back(name, v->data);
  return hist;
}

inline double evaluate(const Model& model, const Dataset& ds,
                       const std::vector<std::size_t>& indices) {
  const HypergraphOps ops = model.make_ops(ds.hypergraph);
  return accuracy(model.eval_logits(ops, ds.features), ds.labels, indices);
}

// Iterated sign-gradient ascent on the test rows' cross-entropy inside an
// eps-ball around the original features. Train rows never move; eps = 0
// returns the features bit-for-bit.
inline Matrix pgd_perturb(const Model& model, const Dataset& ds, double eps,
                          std::size_t steps = 10, double step_size = -1.0) {
  if (eps < 0.0) throw ConfigError("pgd_perturb: negative eps");
  Matrix x = ds.features;
  if (eps == 0.0 || steps == 0) return x;
  if (step_size <= 0.0) step_size = eps / 4.0;

  const HypergraphOps ops = model.make_ops(ds.hypergraph);
  const Matrix& orig = ds.features;
  Rng unused(0);
  for (std::size_t it = 0; it < steps; ++it) {
    diff::Value xv = diff::param(x);
    diff::Value logits = model.forward(ops, xv, false, unused);
    diff::Value loss = diff::cross_entropy(logits, ds.labels, ds.test_idx);
    diff::backward(loss);
    for (std::size_t i : ds.test_idx) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const double g = xv->grad(i, j);
        double nv = x(i, j) + step_size * (g > 0.0 ? 1.0 : g < 0.0 ? -1.0 : 0.0);
        nv = std::min(nv, orig(i, j) + eps);
        nv = std::max(nv, orig(i, j) - eps);
        x(i, j) = nv;
      }
    }
  }
  return x;
}

struct SweepResult {
  std::vector<double> alphas, betas;
  Matrix acc;  // alphas x betas test accuracies
  std::size_t best_a = 0, best_b = 0;
};

// Trains one model per (alpha, beta) cell — every cell shares the
// template's seed, so the grid isolates the two scalars. Cells are
// independent; `jobs` worker threads pull them off a shared counter.
inline SweepResult sweep(const ModelConfig& tmpl, const TrainConfig& tc,
                         const Dataset& ds, const std::vector<double>& alphas,
                         const std::vector<double>& betas, std::size_t jobs = 1) {
  if (alphas.empty() || betas.empty()) throw ConfigError("sweep: empty grid");
  SweepResult res;
  res.alphas = alphas;
  res.betas = betas;
  res.acc = Matrix(alphas.size(), betas.size());

  const std::size_t cells = alphas.size() * betas.size();
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;

  const auto worker = [&]() {
    for (;;) {
      const std::size_t cell = next.fetch_add(1);
      if (cell >= cells) return;
      try {
        ModelConfig mc = tmpl;
        mc.alpha = alphas[cell / betas.size()];
        mc.beta = betas[cell % betas.size()];
        Model m(mc, ds.features.cols(), ds.num_classes);
        train(m, ds, tc);
        res.acc[cell] = evaluate(m, ds, ds.test_idx);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (std::size_t a = 0; a < alphas.size(); ++a)
    for (std::size_t b = 0; b < betas.size(); ++b)
      if (res.acc(a, b) > res.acc(res.best_a, res.best_b)) {
        res.best_a = a;
        res.best_b = b;
      }
  return res;
}

// ---- serialization ----

namespace detail {
inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}
inline void put_f64(std::ostream& out, double d) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}
inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}
}  // namespace detail

// Snapshot container: magic `HEIH`, one version byte, then per matrix a
// u32 name length, the name, u32 rows, u32 cols, and row-major f64 data,
// all little-endian.
inline void save_snapshot(const std::string& path,
                          const std::vector<std::pair<std::string, Matrix>>& mats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot write");
  out.write("HEIH", 4);
  out.put(char(1));
  for (const auto& [name, m] : mats) {
    detail::put_u32(out, std::uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    detail::put_u32(out, std::uint32_t(m.rows()));
    detail::put_u32(out, std::uint32_t(m.cols()));
    for (std::size_t k = 0; k < m.size(); ++k) detail::put_f64(out, m[k]);
  }
  if (!out) throw ParseError(path + ": write failed");
}

inline std::vector<std::pair<std::string, Matrix>> load_snapshot(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "HEIH")
    throw ParseError(path + ": bad magic bytes");
  const int version = in.get();
  if (version != 1)
    throw ParseError(path + ": unsupported snapshot version " + std::to_string(version));
  std::vector<std::pair<std::string, Matrix>> mats;
  for (;;) {
    if (in.peek() == std::char_traits<char>::eof()) break;
    const std::uint32_t name_len = detail::get_u32(in);
    if (!in || name_len > (1u << 20)) throw ParseError(path + ": corrupt entry header");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rows = detail::get_u32(in);
    const std::uint32_t cols = detail::get_u32(in);
    if (!in) throw ParseError(path + ": truncated entry '" + name + "'");
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = detail::get_f64(in);
    if (!in) throw ParseError(path + ": truncated data for '" + name + "'");
    mats.emplace_back(std::move(name), std::move(m));
  }
  return mats;
}

inline void write_history(const std::string& path, const TrainHistory& hist) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot write");
  out << "epoch,loss,train_acc,test_acc\n";
  char buf[128];
  for (const auto& r : hist.records) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.loss,
                  r.train_acc, r.test_acc);
    out << buf;
  }
}

}  // namespace heihnn
