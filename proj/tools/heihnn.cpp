// Command-line front end: training runs, the HOR ablation, the alpha/beta
// sweep, PGD robustness evaluation, and a gradient self-check. Every
// command records a manifest that re-creates the run exactly.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "heihnn/data.hpp"
#include "heihnn/model.hpp"
#include "heihnn/version.hpp"

namespace fs = std::filesystem;
using namespace heihnn;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string dataset_dir;
  bool synth = false;
  std::size_t synth_classes = 4, synth_nodes_per_class = 50, synth_edge_size = 6,
              synth_edges = 120, synth_dim = 0;
  double synth_homophily = 0.9, synth_noise = 1.0;

  std::size_t layers = 2, hidden = 64, att_width = 64;
  double alpha = 1.0, beta = 1.0;
  std::string hor = "neither";
  double hor_tau = 0.0;
  std::size_t hor_min_keep = 1;
  bool hor_renormalize = true;
  std::size_t chebyshev_k = 0;
  std::string attention = "on";
  std::string normalization = "rowsum";

  double lr = 0.001, weight_decay = 0.0005, dropout = 0.5;
  std::size_t epochs = 200, patience = 30, repeats = 10;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;

  double eps = 0.002;
  std::size_t pgd_steps = 10;
  double pgd_step_size = 0.0;  // 0: eps/4
  std::string snapshot_path;
  bool train_first = false;

  double eps_fd = 1e-5;
  std::size_t jobs = 1;
  std::string out_dir = "runs/latest";
  std::string from_manifest;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--dataset-dir", o.dataset_dir,
                  "Directory with hypergraph.txt, features.txt, labels.txt");
  cmd->add_flag("--synth", o.synth, "Use the built-in synthetic benchmark");
  cmd->add_option("--synth-classes", o.synth_classes, "Synthetic class count");
  cmd->add_option("--synth-nodes-per-class", o.synth_nodes_per_class,
                  "Synthetic nodes per class");
  cmd->add_option("--synth-edge-size", o.synth_edge_size, "Synthetic hyperedge size");
  cmd->add_option("--synth-edges", o.synth_edges, "Synthetic hyperedge count");
  cmd->add_option("--synth-homophily", o.synth_homophily,
                  "Probability a member comes from the hyperedge's class");
  cmd->add_option("--synth-noise", o.synth_noise, "Synthetic feature noise stddev");
  cmd->add_option("--synth-dim", o.synth_dim,
                  "Synthetic feature width (0: 8x classes)");

  cmd->add_option("--layers", o.layers, "Stacked layer count");
  cmd->add_option("--hidden", o.hidden, "Hidden width");
  cmd->add_option("--att-width", o.att_width, "Attention projection width");
  cmd->add_option("--alpha", o.alpha, "Stage-1 mixing scalar");
  cmd->add_option("--beta", o.beta, "Stage-3 mixing scalar");
  cmd->add_option("--hor", o.hor, "Outlier removal stages")
      ->check(CLI::IsMember({"neither", "s1", "s3", "both"}));
  cmd->add_option("--hor-tau", o.hor_tau, "Similarity threshold in [-1, 1]");
  cmd->add_option("--hor-min-keep", o.hor_min_keep, "Minimum survivors per hyperedge");
  cmd->add_option("--hor-renormalize", o.hor_renormalize,
                  "Renormalize surviving weights to sum 1");
  cmd->add_option("--chebyshev-k", o.chebyshev_k,
                  "Hyperedge filter order (0: single self-loop step)");
  cmd->add_option("--attention", o.attention, "Attention-weighted incidence")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--normalization", o.normalization, "Stage-2 degree normalization")
      ->check(CLI::IsMember({"rowsum", "paper-literal"}));

  cmd->add_option("--lr", o.lr, "Learning rate");
  cmd->add_option("--weight-decay", o.weight_decay, "Decoupled weight decay");
  cmd->add_option("--dropout", o.dropout, "Dropout rate");
  cmd->add_option("--epochs", o.epochs, "Max training epochs");
  cmd->add_option("--patience", o.patience, "Early-stop patience (0: off)");
  cmd->add_option("--repeats", o.repeats, "Repeat runs with derived seeds");
  cmd->add_option("--optimizer", o.optimizer, "Parameter update rule")
      ->check(CLI::IsMember({"adam", "sgd"}));
  cmd->add_option("--seed", o.seed, "Base seed");

  cmd->add_option("--eps", o.eps, "Perturbation budget (L-inf)");
  cmd->add_option("--pgd-steps", o.pgd_steps, "Attack iterations");
  cmd->add_option("--pgd-step-size", o.pgd_step_size, "Attack step (0: eps/4)");

  cmd->add_option("--jobs", o.jobs, "Worker threads for independent runs");
  cmd->add_option("--out-dir", o.out_dir, "Output directory");
  cmd->add_option("--from-manifest", o.from_manifest,
                  "Load options from a previously written manifest");
}

ModelConfig model_config(const Options& o, std::uint64_t seed) {
  ModelConfig mc;
  mc.layers = o.layers;
  mc.hidden = o.hidden;
  mc.att_width = o.att_width;
  mc.alpha = o.alpha;
  mc.beta = o.beta;
  mc.dropout = o.dropout;
  mc.seed = seed;
  mc.stage.use_attention = o.attention == "on";
  mc.stage.hor_n2he = o.hor == "s1" || o.hor == "both";
  mc.stage.hor_he2n = o.hor == "s3" || o.hor == "both";
  mc.stage.chebyshev_k = o.chebyshev_k;
  mc.stage.norm = o.normalization == "paper-literal" ? InteractionNorm::kEdgeDegree
                                                     : InteractionNorm::kRowSum;
  mc.hor.tau = o.hor_tau;
  mc.hor.min_keep = o.hor_min_keep;
  mc.hor.renormalize = o.hor_renormalize;
  return mc;
}

TrainConfig train_config(const Options& o) {
  TrainConfig tc;
  tc.lr = o.lr;
  tc.weight_decay = o.weight_decay;
  tc.epochs = o.epochs;
  tc.patience = o.patience;
  tc.adaptive = o.optimizer == "adam";
  return tc;
}

Dataset load_data(const Options& o) {
  if (o.synth) {
    SynthConfig sc;
    sc.classes = o.synth_classes;
    sc.nodes_per_class = o.synth_nodes_per_class;
    sc.edge_size = o.synth_edge_size;
    sc.num_edges = o.synth_edges;
    sc.homophily = o.synth_homophily;
    sc.feature_noise = o.synth_noise;
    sc.feature_dim = o.synth_dim;
    sc.seed = o.seed == 0 ? 7 : o.seed;
    return synth_generate(sc);
  }
  if (o.dataset_dir.empty())
    throw UsageError("no input: pass --dataset-dir or --synth");
  return load_dataset_dir(o.dataset_dir, o.seed);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Manifest keys mirror the long option names, so --from-manifest feeds the
// file straight back through the parser; explicit flags still win.
void write_manifest(const Options& o, const std::string& command) {
  fs::create_directories(o.out_dir);
  std::ofstream out(fs::path(o.out_dir) / "manifest.txt");
  out << "# " << command << " manifest, tool version " << HEIHNN_VERSION << "\n";
  out << "dataset-dir=" << o.dataset_dir << "\n";
  out << "synth=" << (o.synth ? "true" : "false") << "\n";
  out << "synth-classes=" << o.synth_classes << "\n";
  out << "synth-nodes-per-class=" << o.synth_nodes_per_class << "\n";
  out << "synth-edge-size=" << o.synth_edge_size << "\n";
  out << "synth-edges=" << o.synth_edges << "\n";
  out << "synth-homophily=" << fmt(o.synth_homophily) << "\n";
  out << "synth-noise=" << fmt(o.synth_noise) << "\n";
  out << "synth-dim=" << o.synth_dim << "\n";
  out << "layers=" << o.layers << "\n";
  out << "hidden=" << o.hidden << "\n";
  out << "att-width=" << o.att_width << "\n";
  out << "alpha=" << fmt(o.alpha) << "\n";
  out << "beta=" << fmt(o.beta) << "\n";
  out << "hor=" << o.hor << "\n";
  out << "hor-tau=" << fmt(o.hor_tau) << "\n";
  out << "hor-min-keep=" << o.hor_min_keep << "\n";
  out << "hor-renormalize=" << (o.hor_renormalize ? "true" : "false") << "\n";
  out << "chebyshev-k=" << o.chebyshev_k << "\n";
  out << "attention=" << o.attention << "\n";
  out << "normalization=" << o.normalization << "\n";
  out << "lr=" << fmt(o.lr) << "\n";
  out << "weight-decay=" << fmt(o.weight_decay) << "\n";
  out << "dropout=" << fmt(o.dropout) << "\n";
  out << "epochs=" << o.epochs << "\n";
  out << "patience=" << o.patience << "\n";
  out << "repeats=" << o.repeats << "\n";
  out << "optimizer=" << o.optimizer << "\n";
  out << "seed=" << o.seed << "\n";
  out << "eps=" << fmt(o.eps) << "\n";
  out << "pgd-steps=" << o.pgd_steps << "\n";
  out << "pgd-step-size=" << fmt(o.pgd_step_size) << "\n";
  out << "jobs=" << o.jobs << "\n";
  out << "out-dir=" << o.out_dir << "\n";
  if (command == "perturb") {
    out << "snapshot=" << o.snapshot_path << "\n";
    out << "train-first=" << (o.train_first ? "true" : "false") << "\n";
  }
  if (command == "gradcheck") out << "eps-fd=" << fmt(o.eps_fd) << "\n";
}

struct RunResult {
  TrainHistory history;
  double test_acc = 0.0;
};

// Repeated runs with seeds base+0 .. base+r-1, optionally across threads.
std::vector<RunResult> run_repeats(const Dataset& ds, const Options& o,
                                   const ModelConfig& base, const TrainConfig& tc) {
  std::vector<RunResult> results(o.repeats);
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  const auto worker = [&]() {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= o.repeats) return;
      try {
        ModelConfig mc = base;
        mc.seed = o.seed + r;
        Model m(mc, ds.features.cols(), ds.num_classes);
        results[r].history = train(m, ds, tc);
        results[r].test_acc = results[r].history.records.back().test_acc;
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (o.jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < o.jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  sd = 0.0;
  if (xs.size() > 1) {
    for (double x : xs) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / double(xs.size() - 1));
  }
}

int cmd_train(Options& o) {
  if (o.repeats < 1) throw UsageError("--repeats must be >= 1");
  const Dataset ds = load_data(o);
  write_manifest(o, "train");
  const auto results = run_repeats(ds, o, model_config(o, o.seed), train_config(o));

  std::vector<double> accs;
  for (const auto& r : results) accs.push_back(r.test_acc);
  double mean = 0, sd = 0;
  mean_std(accs, mean, sd);

  for (std::size_t r = 0; r < results.size(); ++r)
    write_history((fs::path(o.out_dir) / ("history_run" + std::to_string(r) + ".csv"))
                      .string(),
                  results[r].history);
  save_snapshot((fs::path(o.out_dir) / "snapshot.bin").string(),
                results.back().history.final_params);

  std::ofstream report(fs::path(o.out_dir) / "report.txt");
  report << "runs=" << results.size() << "\n";
  report << "mean_acc=" << fmt(mean) << "\n";
  report << "std_acc=" << fmt(sd) << "\n";
  for (std::size_t r = 0; r < accs.size(); ++r)
    report << "run" << r << "_acc=" << fmt(accs[r]) << "\n";

  std::cout << "test accuracy: " << fmt2(100.0 * mean) << " ± " << fmt2(100.0 * sd)
            << " over " << results.size() << " runs\n";
  return 0;
}

int cmd_ablate_hor(Options& o) {
  if (o.repeats < 1) throw UsageError("--repeats must be >= 1");
  const Dataset ds = load_data(o);
  write_manifest(o, "ablate-hor");

  const std::pair<const char*, const char*> variants[] = {
      {"Neither", "neither"}, {"Only-S1", "s1"}, {"Only-S3", "s3"}, {"Both", "both"}};
  std::ofstream csv(fs::path(o.out_dir) / "ablate.csv");
  csv << "variant,run,seed,test_acc\n";
  std::cout << "variant    accuracy\n";
  std::ofstream report(fs::path(o.out_dir) / "report.txt");
  for (const auto& [label, flag] : variants) {
    Options vo = o;
    vo.hor = flag;
    const auto results = run_repeats(ds, vo, model_config(vo, vo.seed), train_config(vo));
    std::vector<double> accs;
    for (const auto& r : results) accs.push_back(r.test_acc);
    double mean = 0, sd = 0;
    mean_std(accs, mean, sd);
    for (std::size_t r = 0; r < accs.size(); ++r)
      csv << label << "," << r << "," << (o.seed + r) << "," << fmt(accs[r]) << "\n";
    report << label << "=" << fmt(mean) << " ± " << fmt(sd) << "\n";
    std::printf("%-10s %s ± %s\n", label, fmt2(100.0 * mean).c_str(),
                fmt2(100.0 * sd).c_str());
  }
  return 0;
}

int cmd_sweep(Options& o) {
  const Dataset ds = load_data(o);
  write_manifest(o, "sweep");
  const std::vector<double> grid = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2};
  const SweepResult res =
      sweep(model_config(o, o.seed), train_config(o), ds, grid, grid, o.jobs);

  std::ofstream csv(fs::path(o.out_dir) / "sweep.csv");
  csv << "alpha,beta,test_acc\n";
  for (std::size_t a = 0; a < grid.size(); ++a)
    for (std::size_t b = 0; b < grid.size(); ++b)
      csv << fmt(grid[a]) << "," << fmt(grid[b]) << "," << fmt(res.acc(a, b)) << "\n";

  std::ofstream mat(fs::path(o.out_dir) / "sweep_matrix.csv");
  mat << "alpha\\beta";
  for (double b : grid) mat << "," << fmt(b);
  mat << "\n";
  for (std::size_t a = 0; a < grid.size(); ++a) {
    mat << fmt(grid[a]);
    for (std::size_t b = 0; b < grid.size(); ++b) mat << "," << fmt(res.acc(a, b));
    mat << "\n";
  }

  std::cout << "alpha\\beta";
  for (double b : grid) std::cout << "\t" << fmt2(b);
  std::cout << "\n";
  for (std::size_t a = 0; a < grid.size(); ++a) {
    std::cout << fmt2(grid[a]);
    for (std::size_t b = 0; b < grid.size(); ++b)
      std::cout << "\t" << fmt2(100.0 * res.acc(a, b));
    std::cout << "\n";
  }
  std::cout << "best: alpha=" << fmt2(grid[res.best_a]) << " beta=" << fmt2(grid[res.best_b])
            << " acc=" << fmt2(100.0 * res.acc(res.best_a, res.best_b)) << "\n";
  return 0;
}

int cmd_perturb(Options& o) {
  const Dataset ds = load_data(o);
  write_manifest(o, "perturb");
  ModelConfig mc = model_config(o, o.seed);
  Model model(mc, ds.features.cols(), ds.num_classes);
  if (!o.snapshot_path.empty()) {
    model.load_parameters(load_snapshot(o.snapshot_path));
  } else if (o.train_first) {
    train(model, ds, train_config(o));
  } else {
    std::cerr << "error: no trained parameters; pass --snapshot FILE or --train-first\n";
    return 1;
  }

  const HypergraphOps ops = model.make_ops(ds.hypergraph);
  const double clean = accuracy(model.eval_logits(ops, ds.features), ds.labels,
                                ds.test_idx);
  const Matrix xp = pgd_perturb(model, ds, o.eps, o.pgd_steps, o.pgd_step_size);
  const double pt = accuracy(model.eval_logits(ops, xp), ds.labels, ds.test_idx);
  const double dec = clean - pt;

  std::ofstream report(fs::path(o.out_dir) / "report.txt");
  report << "eps=" << fmt(o.eps) << "\n";
  report << "cleanAcc=" << fmt(clean) << "\n";
  report << "ptAcc=" << fmt(pt) << "\n";
  report << "Dec=" << fmt(dec) << "\n";
  std::cout << "cleanAcc: " << fmt2(100.0 * clean) << "\n";
  std::cout << "ptAcc: " << fmt2(100.0 * pt) << "\n";
  std::cout << "Dec: " << fmt2(100.0 * dec) << "\n";
  return 0;
}

int cmd_gradcheck(Options& o) {
  write_manifest(o, "gradcheck");
  // fixed 6-node / 4-hyperedge instance; attention on, outlier removal and
  // dropout off so the loss is differentiable everywhere
  Hypergraph hg = build_hypergraph(6, {{0, 1, 2}, {2, 3}, {3, 4, 5}, {1, 4}});
  Rng rng(o.seed + 1);
  Matrix x0(6, 3);
  for (std::size_t k = 0; k < x0.size(); ++k) x0[k] = rng.normal();
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  const std::vector<std::size_t> all_rows = {0, 1, 2, 3, 4, 5};

  ModelConfig mc = model_config(o, o.seed);
  mc.layers = 2;
  mc.hidden = 5;
  mc.att_width = 4;
  mc.dropout = 0.0;
  mc.stage.use_attention = true;
  mc.stage.hor_n2he = mc.stage.hor_he2n = false;
  Model model(mc, 3, 3);

  const HypergraphOps ops = model.make_ops(hg);
  const diff::Value xv = diff::constant(x0);
  Rng unused(0);
  const auto f = [&]() {
    return diff::cross_entropy(model.forward(ops, xv, false, unused), labels, all_rows);
  };

  const auto named = model.named_parameters();
  std::vector<diff::Value> params;
  for (const auto& [name, v] : named) params.push_back(v);
  const std::vector<double> errs = diff::grad_check_per_param(f, params, o.eps_fd);

  double worst = 0.0;
  std::size_t worst_i = 0;
  for (std::size_t i = 0; i < errs.size(); ++i) {
    std::printf("%-16s max rel err %.3e\n", named[i].first.c_str(), errs[i]);
    if (errs[i] > worst) {
      worst = errs[i];
      worst_i = i;
    }
  }
  if (worst >= 1e-4) {
    std::cout << "FAIL: " << named[worst_i].first << " rel err " << fmt(worst) << "\n";
    return 1;
  }
  std::cout << "OK: max rel err " << fmt(worst) << " (" << named[worst_i].first << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypergraph neural network trainer and evaluation tool"};
  app.require_subcommand(1);
  app.set_version_flag("--version", HEIHNN_VERSION);

  Options o;
  CLI::App* train_cmd = app.add_subcommand("train", "Train and report mean accuracy");
  add_common(train_cmd, o);
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate-hor", "Compare the four outlier-removal variants");
  add_common(ablate_cmd, o);
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "7x7 alpha/beta accuracy grid");
  add_common(sweep_cmd, o);
  CLI::App* perturb_cmd =
      app.add_subcommand("perturb", "PGD feature attack on the test rows");
  add_common(perturb_cmd, o);
  perturb_cmd->add_option("--snapshot", o.snapshot_path, "Trained parameter snapshot");
  perturb_cmd->add_flag("--train-first", o.train_first,
                        "Train a fresh model before the attack");
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  add_common(gradcheck_cmd, o);
  gradcheck_cmd->add_option("--eps-fd", o.eps_fd, "Finite-difference step");

  // Later occurrences of a flag override earlier ones; that is what lets
  // command-line flags take precedence over spliced-in manifest values.
  for (CLI::App* cmd : {train_cmd, ablate_cmd, sweep_cmd, perturb_cmd, gradcheck_cmd})
    for (CLI::Option* opt : cmd->get_options())
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::vector<std::string> args(argv + 1, argv + argc);

  // --from-manifest FILE: splice the recorded key=value pairs in right after
  // the subcommand name, so everything typed after them wins.
  std::string manifest_path;
  const std::string manifest_eq = "--from-manifest=";
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--from-manifest" && i + 1 < args.size())
      manifest_path = args[i + 1];
    else if (args[i].rfind(manifest_eq, 0) == 0)
      manifest_path = args[i].substr(manifest_eq.size());
  }
  if (!manifest_path.empty()) {
    std::size_t sub = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--from-manifest") {
        ++i;  // its value is a file name, not the subcommand
        continue;
      }
      if (!args[i].empty() && args[i][0] != '-') {
        sub = i;
        break;
      }
    }
    if (sub < args.size()) {
      std::map<std::string, std::string> kv;
      try {
        kv = parse_manifest(manifest_path);
      } catch (const std::exception& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
      }
      std::vector<std::string> spliced(args.begin(), args.begin() + sub + 1);
      for (const auto& [key, value] : kv)
        if (!value.empty()) spliced.push_back("--" + key + "=" + value);
      spliced.insert(spliced.end(), args.begin() + sub + 1, args.end());
      args = std::move(spliced);
    }
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(o);
    if (ablate_cmd->parsed()) return cmd_ablate_hor(o);
    if (sweep_cmd->parsed()) return cmd_sweep(o);
    if (perturb_cmd->parsed()) return cmd_perturb(o);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
