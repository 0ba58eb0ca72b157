// Command-line front end: train, evaluate, benchmark, boundary export,
// synthetic data generation, and gradient diagnostics.
//
// Exit codes: 0 success, 1 usage or data error, 2 non-convergence,
// 3 diagnostic failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sdgm/data.hpp"
#include "sdgm/feature_map.hpp"
#include "sdgm/learning.hpp"
#include "sdgm/model.hpp"
#include "sdgm/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdgm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNotConverged = 2;
constexpr int kExitDiagnostic = 3;

int thread_budget() {
  const char* env = std::getenv("SDGM_THREADS");
  if (!env) return 1;
  const int v = std::atoi(env);
  return v > 0 ? v : 1;
}

// FNV-1a over file bytes; stable dataset fingerprint for the manifest.
std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

json dataset_fingerprint(const std::string& path, const Dataset& data) {
  return {{"path", path},
          {"n", data.n()},
          {"dim", data.dim()},
          {"checksum", file_checksum(path)}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::vector<std::string>& argv, const json& config,
                    const json& datasets, std::uint64_t seed) {
  json m;
  m["command"] = command;
  m["argv"] = argv;
  m["config"] = config;
  m["datasets"] = datasets;
  m["seed"] = seed;
  m["version"] = kVersion;
  write_json(out_dir / "manifest.json", m);
}

// Shared train-configuration flags; CLI values override file values.
struct ConfigFlags {
  std::string config_path;
  std::string components;
  std::optional<std::uint64_t> seed;
  std::string form;
  std::string kernel;
  bool standardize = false;
  bool quiet = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "training config JSON file");
    cmd->add_option("--components", components,
                    "initial components per class: one value or a comma list");
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--form", form, "model form: original|dual");
    cmd->add_option("--kernel", kernel, "dual-form kernel: phi|poly");
    cmd->add_flag("--standardize", standardize, "z-score inputs from training stats");
    cmd->add_flag("--quiet", quiet, "suppress progress output");
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config '" + config_path + "'");
      json j;
      in >> j;
      cfg = TrainConfig::from_json(j);
    }
    if (!components.empty()) {
      std::vector<int> parsed;
      std::stringstream ss(components);
      std::string tok;
      while (std::getline(ss, tok, ',')) parsed.push_back(std::stoi(tok));
      if (parsed.empty()) throw std::runtime_error("empty --components value");
      if (parsed.size() == 1) {
        cfg.default_components = parsed[0];
        cfg.components_per_class.clear();
      } else {
        cfg.components_per_class = parsed;
      }
    }
    if (seed) cfg.seed = *seed;
    if (!form.empty()) {
      if (form == "original")
        cfg.form = SdgmModel::Form::Original;
      else if (form == "dual")
        cfg.form = SdgmModel::Form::Dual;
      else
        throw std::runtime_error("--form must be original|dual, got '" + form + "'");
    }
    if (!kernel.empty()) cfg.kernel = kernel_from_name(kernel);
    if (standardize) cfg.standardize = true;
    if (quiet) cfg.verbose = false;
    return cfg;
  }
};

json eval_metrics(const SdgmModel& model, const Dataset& data) {
  if (model.input_dim != data.dim())
    throw std::runtime_error("model expects dimension " +
                             std::to_string(model.input_dim) + ", dataset has " +
                             std::to_string(data.dim()));
  const double err = error_rate(model, data.X, data.labels);
  const SparsityMetrics sm = sparsity_metrics(model);
  json j;
  j["error_rate"] = err;
  j["error_rate_percent"] = 100.0 * err;
  j["n"] = data.n();
  j["nonzero_weights"] = sm.nonzero_weights;
  j["components_per_class"] = sm.components_per_class;
  return j;
}

int run_train(const std::vector<std::string>& argv, const ConfigFlags& flags,
              const std::string& data_path, const std::string& out_dir) {
  const TrainConfig cfg = flags.resolve();
  const Dataset data = load_csv(data_path);
  fs::create_directories(out_dir);

  const FitResult res = fit(data, cfg);
  save_model((fs::path(out_dir) / "model.json").string(), res.model);
  write_json(fs::path(out_dir) / "report.json", res.report.to_json());
  write_manifest(out_dir, "train", argv, cfg.to_json(),
                 json::array({dataset_fingerprint(data_path, data)}), cfg.seed);

  const auto& snaps = res.report.snapshots;
  std::cout << "converged: " << (res.report.converged ? "yes" : "no") << '\n'
            << "outer iterations: " << res.report.outer_iterations << '\n';
  if (!snaps.empty()) {
    std::printf("train error: %.2f%%\n", 100.0 * snaps.back().train_error);
    std::cout << "nonzero weights: " << snaps.back().nonzero_weights << " of "
              << res.report.initial_weights << '\n';
  }
  return res.report.converged ? kExitOk : kExitNotConverged;
}

int run_eval(const std::vector<std::string>& argv, const std::string& model_path,
             const std::string& data_path, const std::string& out_dir) {
  const SdgmModel model = load_model(model_path);
  const Dataset data = load_csv(data_path);
  fs::create_directories(out_dir);

  const json metrics = eval_metrics(model, data);
  write_json(fs::path(out_dir) / "metrics.json", metrics);
  write_manifest(out_dir, "eval", argv, json::object(),
                 json::array({dataset_fingerprint(data_path, data)}), 0);

  std::printf("error rate: %.2f%%\n", metrics["error_rate_percent"].get<double>());
  std::cout << "nonzero weights: " << metrics["nonzero_weights"].get<long>() << '\n';
  return kExitOk;
}

int run_benchmark(const std::vector<std::string>& argv, const ConfigFlags& flags,
                  const std::string& splits_dir, int n_splits,
                  const std::string& out_dir) {
  const TrainConfig cfg = flags.resolve();
  if (n_splits < 1) throw std::runtime_error("--n-splits must be >= 1");
  fs::create_directories(out_dir);

  struct SplitOutcome {
    bool ok = false;
    std::string error;
    double test_error = 0.0;
    long nonzero_weights = 0;
  };
  std::vector<SplitOutcome> outcomes(n_splits);

  auto run_split = [&](int idx) {
    SplitOutcome& o = outcomes[idx];
    try {
      const auto [train, test] = load_splits(splits_dir, idx + 1);
      const FitResult res = fit(train, cfg);
      o.test_error = error_rate(res.model, test.X, test.labels);
      o.nonzero_weights = sparsity_metrics(res.model).nonzero_weights;
      o.ok = true;
    } catch (const std::exception& e) {
      o.error = e.what();
    }
  };

  const int workers = std::min(thread_budget(), n_splits);
  if (workers <= 1) {
    for (int i = 0; i < n_splits; ++i) run_split(i);
  } else {
    std::vector<std::future<void>> jobs;
    for (int w = 0; w < workers; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (int i = w; i < n_splits; i += workers) run_split(i);
      }));
    for (auto& j : jobs) j.get();
  }

  // aggregate in split-index order over the successful runs
  std::vector<double> errors;
  double weight_sum = 0.0;
  json per_split = json::array();
  for (int i = 0; i < n_splits; ++i) {
    const SplitOutcome& o = outcomes[i];
    json row = {{"split", i + 1}, {"ok", o.ok}};
    if (o.ok) {
      row["error_rate_percent"] = 100.0 * o.test_error;
      row["nonzero_weights"] = o.nonzero_weights;
      errors.push_back(100.0 * o.test_error);
      weight_sum += static_cast<double>(o.nonzero_weights);
    } else {
      row["error"] = o.error;
    }
    per_split.push_back(row);
  }
  if (errors.empty()) throw std::runtime_error("all splits failed");

  const int ns = static_cast<int>(errors.size());
  double mean = 0.0;
  for (double e : errors) mean += e;
  mean /= ns;
  double var = 0.0;
  for (double e : errors) var += (e - mean) * (e - mean);
  const double stdev = ns > 1 ? std::sqrt(var / (ns - 1)) : 0.0;

  json agg;
  agg["splits"] = n_splits;
  agg["successes"] = ns;
  agg["failures"] = n_splits - ns;
  agg["mean_error_percent"] = mean;
  agg["std_error_percent"] = stdev;
  agg["mean_nonzero_weights"] = weight_sum / ns;
  agg["per_split"] = per_split;
  write_json(fs::path(out_dir) / "benchmark.json", agg);
  write_manifest(out_dir, "benchmark", argv, cfg.to_json(),
                 json::array({{{"path", splits_dir}, {"n_splits", n_splits}}}),
                 cfg.seed);

  std::printf("mean error: %.2f%% (std %.2f) over %d/%d splits\n", mean, stdev,
              ns, n_splits);
  std::printf("mean nonzero weights: %.1f\n", weight_sum / ns);
  return kExitOk;
}

// Recoverable component locations for the boundary plot: dual-form models
// mark reference samples carrying nonzero weight; original-form models mark
// component centers when the quadratic part inverts cleanly.
std::vector<Eigen::Vector2d> relevance_markers(const SdgmModel& model) {
  std::vector<Eigen::Vector2d> marks;
  const bool standardized = model.input_mean.size() > 0;
  auto unapply = [&](Eigen::Vector2d z) -> Eigen::Vector2d {
    if (!standardized) return z;
    return {z(0) * model.input_scale(0) + model.input_mean(0),
            z(1) * model.input_scale(1) + model.input_mean(1)};
  };
  if (model.form == SdgmModel::Form::Dual) {
    for (int n = 0; n < model.reference.rows(); ++n) {
      bool used = false;
      for (const auto& comp : model.components)
        if (comp.w(n) != 0.0) {
          used = true;
          break;
        }
      if (used) marks.push_back(unapply(model.reference.row(n)));
    }
    return marks;
  }
  for (const auto& comp : model.components) {
    // layout [1, x1, x2, x1^2, x1x2, x2^2]: S = -2 w_q on the diagonal,
    // -w_q off the diagonal, S mu = linear part
    Eigen::Matrix2d s;
    s << -2.0 * comp.w(3), -comp.w(4), -comp.w(4), -2.0 * comp.w(5);
    const Eigen::FullPivLU<Eigen::Matrix2d> lu(s);
    if (!lu.isInvertible()) continue;
    marks.push_back(unapply(lu.solve(Eigen::Vector2d(comp.w(1), comp.w(2)))));
  }
  return marks;
}

void write_boundary_svg(const fs::path& path, const Eigen::MatrixXd& grid_x1,
                        const Eigen::MatrixXd& grid_x2,
                        const Eigen::MatrixXd& p0,
                        const std::vector<Eigen::Vector2d>& marks,
                        double xmin, double xmax, double ymin, double ymax) {
  const int g = static_cast<int>(p0.rows());
  const double size = 600.0;
  auto sx = [&](double x) { return size * (x - xmin) / (xmax - xmin); };
  auto sy = [&](double y) { return size * (ymax - y) / (ymax - ymin); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" "
         "viewBox=\"0 0 600 600\">\n"
      << "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n";

  // 0.5 iso-contour by edge interpolation within each grid cell
  out << "<g stroke=\"black\" stroke-width=\"1.5\" fill=\"none\">\n";
  auto interp = [](double a, double b) { return (0.5 - a) / (b - a); };
  for (int i = 0; i + 1 < g; ++i) {
    for (int j = 0; j + 1 < g; ++j) {
      const double v00 = p0(i, j) - 0.5, v10 = p0(i + 1, j) - 0.5;
      const double v01 = p0(i, j + 1) - 0.5, v11 = p0(i + 1, j + 1) - 0.5;
      std::vector<std::pair<double, double>> pts;
      if (v00 * v10 < 0.0) {
        const double t = interp(p0(i, j), p0(i + 1, j));
        pts.emplace_back(grid_x1(i, j) + t * (grid_x1(i + 1, j) - grid_x1(i, j)),
                         grid_x2(i, j));
      }
      if (v01 * v11 < 0.0) {
        const double t = interp(p0(i, j + 1), p0(i + 1, j + 1));
        pts.emplace_back(
            grid_x1(i, j + 1) + t * (grid_x1(i + 1, j + 1) - grid_x1(i, j + 1)),
            grid_x2(i, j + 1));
      }
      if (v00 * v01 < 0.0) {
        const double t = interp(p0(i, j), p0(i, j + 1));
        pts.emplace_back(grid_x1(i, j),
                         grid_x2(i, j) + t * (grid_x2(i, j + 1) - grid_x2(i, j)));
      }
      if (v10 * v11 < 0.0) {
        const double t = interp(p0(i + 1, j), p0(i + 1, j + 1));
        pts.emplace_back(grid_x1(i + 1, j), grid_x2(i + 1, j) +
                                                t * (grid_x2(i + 1, j + 1) -
                                                     grid_x2(i + 1, j)));
      }
      if (pts.size() >= 2)
        out << "<line x1=\"" << sx(pts[0].first) << "\" y1=\"" << sy(pts[0].second)
            << "\" x2=\"" << sx(pts[1].first) << "\" y2=\"" << sy(pts[1].second)
            << "\"/>\n";
    }
  }
  out << "</g>\n<g fill=\"crimson\" stroke=\"none\">\n";
  for (const auto& m : marks) {
    if (m(0) < xmin || m(0) > xmax || m(1) < ymin || m(1) > ymax) continue;
    out << "<circle cx=\"" << sx(m(0)) << "\" cy=\"" << sy(m(1)) << "\" r=\"4\"/>\n";
  }
  out << "</g>\n</svg>\n";
}

int run_boundary(const std::vector<std::string>& argv,
                 const std::string& model_path, const std::string& bounds,
                 int grid, bool svg, const std::string& out_dir) {
  const SdgmModel model = load_model(model_path);
  if (model.input_dim != 2)
    throw std::runtime_error("boundary export requires a 2-dimensional model, got D=" +
                             std::to_string(model.input_dim));
  if (grid < 2) throw std::runtime_error("--grid must be >= 2");

  double xmin = -3.0, xmax = 3.0, ymin = -3.0, ymax = 3.0;
  if (!bounds.empty()) {
    std::stringstream ss(bounds);
    std::string tok;
    std::vector<double> v;
    while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
    if (v.size() != 4)
      throw std::runtime_error("--bounds must be 'xmin,xmax,ymin,ymax'");
    xmin = v[0];
    xmax = v[1];
    ymin = v[2];
    ymax = v[3];
    if (xmin >= xmax || ymin >= ymax)
      throw std::runtime_error("--bounds must describe a nonempty rectangle");
  }
  fs::create_directories(out_dir);

  const int c = model.num_classes;
  Eigen::MatrixXd gx1(grid, grid), gx2(grid, grid), p0(grid, grid);
  std::ofstream csv(fs::path(out_dir) / "boundary.csv");
  if (!csv) throw std::runtime_error("cannot write boundary.csv");
  csv << "x1,x2";
  for (int k = 0; k < c; ++k) csv << ",p" << k;
  csv << '\n';
  char buf[64];
  for (int j = 0; j < grid; ++j) {
    const double x2 = ymin + (j + 0.5) * (ymax - ymin) / grid;
    for (int i = 0; i < grid; ++i) {
      const double x1 = xmin + (i + 0.5) * (xmax - xmin) / grid;
      const Eigen::VectorXd post =
          posterior(model, Eigen::Vector2d(x1, x2)).class_posteriors;
      gx1(i, j) = x1;
      gx2(i, j) = x2;
      p0(i, j) = post(0);
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g", x1, x2);
      csv << buf;
      for (int k = 0; k < c; ++k) {
        std::snprintf(buf, sizeof(buf), ",%.17g", post(k));
        csv << buf;
      }
      csv << '\n';
    }
  }
  csv.close();

  if (svg)
    write_boundary_svg(fs::path(out_dir) / "boundary.svg", gx1, gx2, p0,
                       relevance_markers(model), xmin, xmax, ymin, ymax);

  write_manifest(out_dir, "boundary", argv,
                 {{"bounds", {xmin, xmax, ymin, ymax}}, {"grid", grid}, {"svg", svg}},
                 json::array(), 0);
  std::cout << "wrote " << grid * grid << " grid cells\n";
  return kExitOk;
}

int run_synth(const std::vector<std::string>& argv, const std::string& spec_path,
              int n_train, int n_test, std::uint64_t seed,
              const std::string& name, const std::string& out_dir) {
  const GmmSpec spec =
      spec_path.empty() ? GmmSpec::default_synthetic() : GmmSpec::load(spec_path);
  const auto [train, test] = synth_gmm(spec, n_train, n_test, seed);
  fs::create_directories(out_dir);
  const std::string train_path =
      (fs::path(out_dir) / (name + "_train_1.csv")).string();
  const std::string test_path = (fs::path(out_dir) / (name + "_test_1.csv")).string();
  save_csv(train_path, train);
  save_csv(test_path, test);
  write_manifest(out_dir, "synth", argv,
                 {{"spec", spec_path.empty() ? "<default>" : spec_path},
                  {"train_size", n_train},
                  {"test_size", n_test}},
                 json::array({dataset_fingerprint(train_path, train),
                              dataset_fingerprint(test_path, test)}),
                 seed);
  std::cout << "wrote " << train_path << " and " << test_path << '\n';
  return kExitOk;
}

int run_gradcheck(const std::vector<std::string>& argv, const ConfigFlags& flags,
                  const std::string& data_path, int states, bool flip_sign,
                  const std::string& out_dir) {
  const TrainConfig cfg = flags.resolve();
  const Dataset data = load_csv(data_path);
  if (data.n() > 200)
    throw std::runtime_error("gradcheck is limited to 200 samples (got " +
                             std::to_string(data.n()) + ")");
  if (states < 1) throw std::runtime_error("--states must be >= 1");
  fs::create_directories(out_dir);

  const GradCheckResult res =
      gradient_check(data, cfg, states, cfg.seed, flip_sign);
  const bool pass = res.max_grad_rel_err < 1e-5 && res.max_hess_rel_err < 1e-4;

  json j;
  j["max_grad_rel_err"] = res.max_grad_rel_err;
  j["max_hess_rel_err"] = res.max_hess_rel_err;
  j["states"] = states;
  j["pass"] = pass;
  write_json(fs::path(out_dir) / "gradcheck.json", j);
  write_manifest(out_dir, "gradcheck", argv, cfg.to_json(),
                 json::array({dataset_fingerprint(data_path, data)}), cfg.seed);

  std::printf("max gradient relative error: %.3e\n", res.max_grad_rel_err);
  std::printf("max Hessian relative error:  %.3e\n", res.max_hess_rel_err);
  std::cout << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kExitOk : kExitDiagnostic;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"Sparse discriminative Gaussian mixture classifier"};
  app.require_subcommand(0, 1);
  bool dump_config = false;
  app.add_flag("--dump-config", dump_config, "print default training config JSON");

  ConfigFlags train_flags, bench_flags, grad_flags;
  std::string data_path, model_path, out_dir = ".", splits_dir, bounds, spec_path;
  std::string synth_name = "synth";
  int n_splits = 1, grid = 100, n_train = 320, n_test = 1600, states = 20;
  std::uint64_t synth_seed = 0;
  bool svg = false, flip_sign = false;

  CLI::App* train = app.add_subcommand("train", "fit a model on a CSV dataset");
  train_flags.attach(train);
  train->add_option("--data", data_path, "training CSV")->required();
  train->add_option("--out", out_dir, "output directory");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a model on a CSV dataset");
  eval->add_option("--model", model_path, "model JSON")->required();
  eval->add_option("--data", data_path, "evaluation CSV")->required();
  eval->add_option("--out", out_dir, "output directory");

  CLI::App* bench = app.add_subcommand(
      "benchmark", "train/evaluate across <name>_train_<i>.csv splits");
  bench_flags.attach(bench);
  bench->add_option("--splits-dir", splits_dir, "split directory")->required();
  bench->add_option("--n-splits", n_splits, "number of splits")->required();
  bench->add_option("--out", out_dir, "output directory");

  CLI::App* boundary =
      app.add_subcommand("boundary", "export class-posterior grid for a 2-D model");
  boundary->add_option("--model", model_path, "model JSON")->required();
  boundary->add_option("--bounds", bounds, "grid bounds 'xmin,xmax,ymin,ymax'");
  boundary->add_option("--grid", grid, "cells per axis");
  boundary->add_flag("--svg", svg, "also write the 0.5-contour SVG");
  boundary->add_option("--out", out_dir, "output directory");

  CLI::App* synth = app.add_subcommand("synth", "sample train/test CSVs from a GMM");
  synth->add_option("--spec", spec_path, "mixture spec JSON (built-in default)");
  synth->add_option("--train-size", n_train, "training sample count");
  synth->add_option("--test-size", n_test, "test sample count");
  synth->add_option("--seed", synth_seed, "RNG seed");
  synth->add_option("--name", synth_name, "output file base name");
  synth->add_option("--out", out_dir, "output directory");

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of the training gradient/Hessian");
  grad_flags.attach(gradcheck);
  gradcheck->add_option("--data", data_path, "dataset CSV (at most 200 samples)")
      ->required();
  gradcheck->add_option("--states", states, "number of random states");
  gradcheck->add_flag("--flip-gradient-sign", flip_sign,
                      "negate the analytic gradient (negative-control test hook)")
      ->group("");  // hidden
  gradcheck->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (dump_config) {
      std::cout << TrainConfig{}.to_json().dump(2) << '\n';
      return kExitOk;
    }
    if (train->parsed()) return run_train(args, train_flags, data_path, out_dir);
    if (eval->parsed()) return run_eval(args, model_path, data_path, out_dir);
    if (bench->parsed())
      return run_benchmark(args, bench_flags, splits_dir, n_splits, out_dir);
    if (boundary->parsed())
      return run_boundary(args, model_path, bounds, grid, svg, out_dir);
    if (synth->parsed())
      return run_synth(args, spec_path, n_train, n_test, synth_seed, synth_name,
                       out_dir);
    if (gradcheck->parsed())
      return run_gradcheck(args, grad_flags, data_path, states, flip_sign, out_dir);
    std::cerr << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}
