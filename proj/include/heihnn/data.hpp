#pragma once

// Dataset loading and construction: the text formats, the seeded 80/20
// split, neighbor- and kNN-based hypergraph construction, and a seeded
// synthetic benchmark generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "heihnn/errors.hpp"
#include "heihnn/hypergraph.hpp"
#include "heihnn/matrix.hpp"
#include "heihnn/rng.hpp"

namespace heihnn {

struct Dataset {
  Hypergraph hypergraph;
  Matrix features;
  std::vector<int> labels;
  std::vector<std::size_t> train_idx, test_idx;
  std::size_t num_classes = 0;
};

namespace detail {

// Strips comments (# to end of line) and surrounding whitespace; returns
// content lines with their 1-based physical line numbers.
inline std::vector<std::pair<std::size_t, std::string>> content_lines(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t");
    out.emplace_back(no, line.substr(b, e - b + 1));
  }
  return out;
}

inline std::vector<std::string> tokens(const std::string& s) {
  std::istringstream iss(s);
  std::vector<std::string> out;
  std::string t;
  while (iss >> t) out.push_back(t);
  return out;
}

inline long parse_int(const std::string& tok, const std::string& path, std::size_t line) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(tok, &used);
  } catch (const std::exception&) {
    throw ParseError(path + ":" + std::to_string(line) + ": expected integer, got '" +
                     tok + "'");
  }
  if (used != tok.size())
    throw ParseError(path + ":" + std::to_string(line) + ": expected integer, got '" +
                     tok + "'");
  return v;
}

inline double parse_real(const std::string& tok, const std::string& path,
                         std::size_t line) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ParseError(path + ":" + std::to_string(line) + ": expected number, got '" +
                     tok + "'");
  }
  if (used != tok.size())
    throw ParseError(path + ":" + std::to_string(line) + ": expected number, got '" +
                     tok + "'");
  return v;
}

}  // namespace detail

// Hypergraph text format: first content line `n m`, then m lines of
// whitespace-separated 0-based node ids, one hyperedge per line. `#`
// starts a comment.
inline Hypergraph parse_hypergraph_file(const std::string& path) {
  const auto lines = detail::content_lines(path);
  if (lines.empty()) throw ParseError(path + ": no content");
  const auto head = detail::tokens(lines[0].second);
  if (head.size() != 2)
    throw ParseError(path + ":" + std::to_string(lines[0].first) +
                     ": header must be 'n m'");
  const long n = detail::parse_int(head[0], path, lines[0].first);
  const long m = detail::parse_int(head[1], path, lines[0].first);
  if (n <= 0 || m < 0)
    throw ParseError(path + ":" + std::to_string(lines[0].first) +
                     ": header counts must be positive");
  if (lines.size() != static_cast<std::size_t>(m) + 1)
    throw ParseError(path + ": expected " + std::to_string(m) + " hyperedge lines, found " +
                     std::to_string(lines.size() - 1));
  std::vector<std::vector<std::uint32_t>> edges(m);
  for (long j = 0; j < m; ++j) {
    const auto& [no, text] = lines[j + 1];
    const auto toks = detail::tokens(text);
    if (toks.empty())
      throw ParseError(path + ":" + std::to_string(no) + ": empty hyperedge line");
    for (const auto& t : toks) {
      const long v = detail::parse_int(t, path, no);
      if (v < 0 || v >= n)
        throw ParseError(path + ":" + std::to_string(no) + ": node id " +
                         std::to_string(v) + " outside [0, " + std::to_string(n) + ")");
      edges[j].push_back(static_cast<std::uint32_t>(v));
    }
  }
  try {
    return build_hypergraph(static_cast<std::size_t>(n), edges);
  } catch (const ConfigError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_hypergraph(const std::string& path, const Hypergraph& hg) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot write");
  out << hg.num_nodes() << " " << hg.num_edges() << "\n";
  for (std::size_t e = 0; e < hg.num_edges(); ++e) {
    for (std::size_t k = hg.edge_begin(e); k < hg.edge_end(e); ++k) {
      if (k != hg.edge_begin(e)) out << " ";
      out << hg.pairs()[k].node;
    }
    out << "\n";
  }
}

// Feature text format: header `n d`, then n rows. A row is either d plain
// reals (dense) or `index:value` pairs (sparse, unnamed entries zero).
inline Matrix parse_features_file(const std::string& path) {
  const auto lines = detail::content_lines(path);
  if (lines.empty()) throw ParseError(path + ": no content");
  const auto head = detail::tokens(lines[0].second);
  if (head.size() != 2)
    throw ParseError(path + ":" + std::to_string(lines[0].first) +
                     ": header must be 'n d'");
  const long n = detail::parse_int(head[0], path, lines[0].first);
  const long d = detail::parse_int(head[1], path, lines[0].first);
  if (n <= 0 || d <= 0)
    throw ParseError(path + ":" + std::to_string(lines[0].first) +
                     ": header counts must be positive");
  if (lines.size() != static_cast<std::size_t>(n) + 1)
    throw ParseError(path + ": expected " + std::to_string(n) + " feature rows, found " +
                     std::to_string(lines.size() - 1));
  Matrix x(n, d);
  for (long i = 0; i < n; ++i) {
    const auto& [no, text] = lines[i + 1];
    const auto toks = detail::tokens(text);
    const bool sparse = !toks.empty() && toks[0].find(':') != std::string::npos;
    if (sparse) {
      for (const auto& t : toks) {
        const auto c = t.find(':');
        if (c == std::string::npos)
          throw ParseError(path + ":" + std::to_string(no) +
                           ": mixed sparse/dense row");
        const long idx = detail::parse_int(t.substr(0, c), path, no);
        if (idx < 0 || idx >= d)
          throw ParseError(path + ":" + std::to_string(no) + ": feature index " +
                           std::to_string(idx) + " outside [0, " + std::to_string(d) +
                           ")");
        x(i, idx) = detail::parse_real(t.substr(c + 1), path, no);
      }
    } else {
      if (toks.size() != static_cast<std::size_t>(d))
        throw ParseError(path + ":" + std::to_string(no) + ": expected " +
                         std::to_string(d) + " values, got " +
                         std::to_string(toks.size()));
      for (long j = 0; j < d; ++j) x(i, j) = detail::parse_real(toks[j], path, no);
    }
  }
  return x;
}

inline void write_features(const std::string& path, const Matrix& x) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot write");
  out << x.rows() << " " << x.cols() << "\n";
  char buf[40];
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      // %.17g round-trips doubles exactly through text
      std::snprintf(buf, sizeof buf, "%.17g", x(i, j));
      out << (j ? " " : "") << buf;
    }
    out << "\n";
  }
}

// Labels: one integer per content line, node order.
inline std::vector<int> parse_labels_file(const std::string& path) {
  const auto lines = detail::content_lines(path);
  std::vector<int> labels;
  labels.reserve(lines.size());
  for (const auto& [no, text] : lines) {
    const auto toks = detail::tokens(text);
    if (toks.size() != 1)
      throw ParseError(path + ":" + std::to_string(no) + ": expected one label");
    const long v = detail::parse_int(toks[0], path, no);
    if (v < 0)
      throw ParseError(path + ":" + std::to_string(no) + ": negative label");
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

inline void write_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot write");
  for (int v : labels) out << v << "\n";
}

// Manifest: `key=value` lines; known keys expected_n, expected_m,
// expected_max_e, classes.
inline std::map<std::string, std::string> parse_manifest(const std::string& path) {
  const auto lines = detail::content_lines(path);
  std::map<std::string, std::string> kv;
  for (const auto& [no, text] : lines) {
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(no) + ": expected key=value");
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t");
      return s.substr(b, e - b + 1);
    };
    kv[strip(text.substr(0, eq))] = strip(text.substr(eq + 1));
  }
  return kv;
}

// Seeded 80/20 node split. Every class is guaranteed at least one training
// example: missing classes are pulled in from the test side by swapping
// against a class that can spare a row.
inline void make_split(std::size_t n, const std::vector<int>& labels,
                       std::size_t num_classes, std::uint64_t seed,
                       std::vector<std::size_t>& train_idx,
                       std::vector<std::size_t>& test_idx) {
  if (n < 2) throw ConfigError("need at least 2 nodes to split");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
  std::size_t n_train = (n * 4) / 5;
  if (n_train == 0) n_train = 1;
  if (n_train == n) n_train = n - 1;
  train_idx.assign(idx.begin(), idx.begin() + n_train);
  test_idx.assign(idx.begin() + n_train, idx.end());

  std::vector<std::size_t> train_count(num_classes, 0);
  for (auto i : train_idx) ++train_count[labels[i]];
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (train_count[c] > 0) continue;
    auto from = std::find_if(test_idx.begin(), test_idx.end(),
                             [&](std::size_t i) { return std::size_t(labels[i]) == c; });
    if (from == test_idx.end())
      throw ConfigError("class " + std::to_string(c) + " absent from the data");
    auto to = std::find_if(train_idx.begin(), train_idx.end(), [&](std::size_t i) {
      return train_count[labels[i]] > 1;
    });
    if (to == train_idx.end())
      throw ConfigError("cannot cover class " + std::to_string(c) +
                        " in the training split");
    --train_count[labels[*to]];
    ++train_count[c];
    std::swap(*from, *to);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
}

// Loads the three files, validates against an optional manifest, and draws
// the seeded split.
inline Dataset load_dataset(const std::string& hypergraph_path,
                            const std::string& features_path,
                            const std::string& labels_path, std::uint64_t split_seed,
                            const std::string& manifest_path = "") {
  Hypergraph hg = parse_hypergraph_file(hypergraph_path);
  Matrix x = parse_features_file(features_path);
  std::vector<int> labels = parse_labels_file(labels_path);
  if (x.rows() != hg.num_nodes())
    throw ConfigError("feature rows (" + std::to_string(x.rows()) +
                      ") != node count (" + std::to_string(hg.num_nodes()) + ")");
  if (labels.size() != hg.num_nodes())
    throw ConfigError("label count (" + std::to_string(labels.size()) +
                      ") != node count (" + std::to_string(hg.num_nodes()) + ")");
  std::size_t classes = 0;
  for (int v : labels) classes = std::max<std::size_t>(classes, std::size_t(v) + 1);

  if (!manifest_path.empty()) {
    const auto kv = parse_manifest(manifest_path);
    const auto check = [&](const char* key, std::size_t got) {
      auto it = kv.find(key);
      if (it == kv.end()) return;
      if (std::stoul(it->second) != got)
        throw ConfigError(std::string("manifest ") + key + "=" + it->second +
                          " but dataset has " + std::to_string(got));
    };
    const StructureStats st = structure_stats(hg);
    check("expected_n", st.num_nodes);
    check("expected_m", st.num_edges);
    check("expected_max_e", st.max_edge_degree);
    check("classes", classes);
  }

  Dataset ds{std::move(hg), std::move(x), std::move(labels), {}, {}, classes};
  make_split(ds.hypergraph.num_nodes(), ds.labels, classes, split_seed, ds.train_idx,
             ds.test_idx);
  return ds;
}

// Convenience over the directory layout hypergraph.txt / features.txt /
// labels.txt / manifest.txt (manifest optional).
inline Dataset load_dataset_dir(const std::string& dir, std::uint64_t split_seed) {
  namespace fs = std::filesystem;
  const std::string manifest = fs::exists(fs::path(dir) / "manifest.txt")
                                   ? (fs::path(dir) / "manifest.txt").string()
                                   : std::string();
  return load_dataset((fs::path(dir) / "hypergraph.txt").string(),
                      (fs::path(dir) / "features.txt").string(),
                      (fs::path(dir) / "labels.txt").string(), split_seed, manifest);
}

inline void write_dataset_dir(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_hypergraph((fs::path(dir) / "hypergraph.txt").string(), ds.hypergraph);
  write_features((fs::path(dir) / "features.txt").string(), ds.features);
  write_labels((fs::path(dir) / "labels.txt").string(), ds.labels);
  const StructureStats st = structure_stats(ds.hypergraph);
  std::ofstream mf((fs::path(dir) / "manifest.txt").string());
  mf << "expected_n=" << st.num_nodes << "\n"
     << "expected_m=" << st.num_edges << "\n"
     << "expected_max_e=" << st.max_edge_degree << "\n"
     << "classes=" << ds.num_classes << "\n";
}

// One hyperedge per node: the node plus its neighbors within `hops` in the
// given simple graph. Duplicate member sets are dropped, keeping the first
// in node order — which is why citation hypergraphs end up with m < n.
inline Hypergraph neighbor_hypergraph(
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& adjacency,
    std::size_t n, std::size_t hops = 1) {
  if (hops < 1) throw ConfigError("neighbor_hypergraph: hops must be >= 1");
  std::vector<std::vector<std::uint32_t>> nbrs(n);
  for (const auto& [a, b] : adjacency) {
    if (a >= n || b >= n)
      throw ConfigError("edge endpoint " + std::to_string(std::max(a, b)) +
                        " outside [0, " + std::to_string(n) + ")");
    if (a == b) continue;
    nbrs[a].push_back(b);
    nbrs[b].push_back(a);
  }
  std::vector<std::vector<std::uint32_t>> edges;
  std::set<std::vector<std::uint32_t>> seen;
  std::vector<char> mark(n, 0);
  for (std::uint32_t v = 0; v < n; ++v) {
    std::vector<std::uint32_t> ball{v};
    mark[v] = 1;
    std::size_t frontier_begin = 0;
    for (std::size_t h = 0; h < hops; ++h) {
      const std::size_t frontier_end = ball.size();
      for (std::size_t i = frontier_begin; i < frontier_end; ++i)
        for (std::uint32_t u : nbrs[ball[i]])
          if (!mark[u]) {
            mark[u] = 1;
            ball.push_back(u);
          }
      frontier_begin = frontier_end;
    }
    for (std::uint32_t u : ball) mark[u] = 0;
    std::sort(ball.begin(), ball.end());
    if (seen.insert(ball).second) edges.push_back(std::move(ball));
  }
  return build_hypergraph(n, edges);
}

enum class KnnMetric { kEuclidean, kCosine };

// One hyperedge per node: itself plus its k-1 nearest others, ties broken
// toward the lower node id. No dedup, so m = n.
inline Hypergraph knn_hypergraph(const Matrix& features, std::size_t k,
                                 KnnMetric metric = KnnMetric::kEuclidean) {
  const std::size_t n = features.rows(), d = features.cols();
  if (k < 2 || k > n)
    throw ConfigError("knn_hypergraph: k=" + std::to_string(k) + " outside [2, " +
                      std::to_string(n) + "]");
  std::vector<std::vector<std::uint32_t>> edges(n);
  std::vector<std::pair<double, std::uint32_t>> dist;
  for (std::size_t v = 0; v < n; ++v) {
    dist.clear();
    for (std::size_t u = 0; u < n; ++u) {
      if (u == v) continue;
      double val = 0.0;
      if (metric == KnnMetric::kEuclidean) {
        for (std::size_t j = 0; j < d; ++j) {
          const double t = features(v, j) - features(u, j);
          val += t * t;
        }
      } else {
        double dot = 0.0, nv = 0.0, nu = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += features(v, j) * features(u, j);
          nv += features(v, j) * features(v, j);
          nu += features(u, j) * features(u, j);
        }
        const double norms = std::sqrt(nv) * std::sqrt(nu);
        val = norms < 1e-12 ? 1.0 : 1.0 - dot / norms;
      }
      dist.emplace_back(val, static_cast<std::uint32_t>(u));
    }
    std::partial_sort(dist.begin(), dist.begin() + (k - 1), dist.end());
    edges[v].push_back(static_cast<std::uint32_t>(v));
    for (std::size_t t = 0; t < k - 1; ++t) edges[v].push_back(dist[t].second);
  }
  return build_hypergraph(n, edges);
}

struct SynthConfig {
  std::size_t classes = 4;
  std::size_t nodes_per_class = 50;
  std::size_t edge_size = 6;
  std::size_t num_edges = 120;
  double homophily = 0.9;
  double feature_noise = 1.0;
  std::uint64_t seed = 7;
  std::size_t feature_dim = 0;  // 0: defaults to 8*classes
};

// Class-conditional Gaussian features around unit-separated means, plus
// hyperedges that draw each member from a sampled class with probability
// `homophily` (uniformly otherwise). Nodes left isolated are attached to
// the hyperedge holding the most same-class members, so num_edges is
// exact. Deterministic given the seed; the split reuses it.
inline Dataset synth_generate(const SynthConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("synth: need >= 2 classes");
  if (cfg.nodes_per_class < 1) throw ConfigError("synth: need >= 1 node per class");
  if (cfg.homophily < 0.0 || cfg.homophily > 1.0)
    throw ConfigError("synth: homophily outside [0, 1]");
  if (cfg.feature_noise < 0.0) throw ConfigError("synth: negative feature noise");
  const std::size_t n = cfg.classes * cfg.nodes_per_class;
  if (cfg.edge_size < 2 || cfg.edge_size > n)
    throw ConfigError("synth: edge_size " + std::to_string(cfg.edge_size) +
                      " outside [2, " + std::to_string(n) + "]");
  if (cfg.homophily == 1.0 && cfg.edge_size > cfg.nodes_per_class)
    throw ConfigError("synth: pure hyperedges of size " + std::to_string(cfg.edge_size) +
                      " impossible with " + std::to_string(cfg.nodes_per_class) +
                      " nodes per class");
  if (cfg.num_edges < 1) throw ConfigError("synth: need >= 1 hyperedge");
  const std::size_t dim = cfg.feature_dim ? cfg.feature_dim : 8 * cfg.classes;
  if (dim < cfg.classes)
    throw ConfigError("synth: feature_dim must be >= classes");

  Rng rng(cfg.seed);
  std::vector<int> labels(n);
  for (std::size_t v = 0; v < n; ++v) labels[v] = int(v / cfg.nodes_per_class);

  // means mu_c = e_c / sqrt(2): every pair of class means sits at distance 1
  Matrix x(n, dim);
  const double mu = 1.0 / std::sqrt(2.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t j = 0; j < dim; ++j)
      x(v, j) = (j == std::size_t(labels[v]) ? mu : 0.0) +
                cfg.feature_noise * rng.normal();

  std::vector<std::vector<std::uint32_t>> edges(cfg.num_edges);
  std::vector<int> edge_class(cfg.num_edges);
  for (std::size_t t = 0; t < cfg.num_edges; ++t) {
    const std::size_t c = rng.uniform_int(cfg.classes);
    edge_class[t] = int(c);
    std::unordered_set<std::uint32_t> members;
    std::size_t attempts = 0;
    while (members.size() < cfg.edge_size) {
      if (++attempts > 1000 * cfg.edge_size)
        throw ConfigError("synth: hyperedge sampling stalled; parameters infeasible");
      std::uint32_t v;
      if (rng.uniform01() < cfg.homophily)
        v = static_cast<std::uint32_t>(c * cfg.nodes_per_class +
                                       rng.uniform_int(cfg.nodes_per_class));
      else
        v = static_cast<std::uint32_t>(rng.uniform_int(n));
      members.insert(v);
    }
    edges[t].assign(members.begin(), members.end());
    std::sort(edges[t].begin(), edges[t].end());
  }

  std::vector<char> covered(n, 0);
  for (const auto& e : edges)
    for (auto v : e) covered[v] = 1;
  for (std::size_t v = 0; v < n; ++v) {
    if (covered[v]) continue;
    std::size_t best = 0, best_count = 0;
    for (std::size_t t = 0; t < cfg.num_edges; ++t) {
      std::size_t count = 0;
      for (auto u : edges[t]) count += labels[u] == labels[v];
      if (count > best_count) {
        best_count = count;
        best = t;
      }
    }
    edges[best].push_back(static_cast<std::uint32_t>(v));
    std::sort(edges[best].begin(), edges[best].end());
  }

  Dataset ds{build_hypergraph(n, edges), std::move(x), std::move(labels), {}, {},
             cfg.classes};
  make_split(n, ds.labels, cfg.classes, cfg.seed, ds.train_idx, ds.test_idx);
  return ds;
}

}  // namespace heihnn
