#include "sdgm/learning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sdgm/linalg.hpp"

namespace sdgm {

namespace {

constexpr double kLogFloor = -745.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Flattened indexing over surviving weights: components in index order,
// active basis entries ascending within each component.
struct ActiveLayout {
  std::vector<int> comps;
  std::vector<std::vector<int>> cols;
  std::vector<int> offsets;
  int total = 0;
};

ActiveLayout active_layout(const TrainState& s) {
  ActiveLayout layout;
  const int h = s.basis_dim();
  for (int k = 0; k < s.num_components(); ++k) {
    if (!s.comp_active[k]) continue;
    std::vector<int> cols;
    for (int i = 0; i < h; ++i)
      if (s.wmask(i, k)) cols.push_back(i);
    layout.offsets.push_back(layout.total);
    layout.total += static_cast<int>(cols.size());
    layout.comps.push_back(k);
    layout.cols.push_back(std::move(cols));
  }
  return layout;
}

Eigen::VectorXd gather_weights(const TrainState& s, const ActiveLayout& layout) {
  Eigen::VectorXd v(layout.total);
  int pos = 0;
  for (size_t b = 0; b < layout.comps.size(); ++b)
    for (int col : layout.cols[b]) v(pos++) = s.w(col, layout.comps[b]);
  return v;
}

void scatter_weights(TrainState& s, const ActiveLayout& layout,
                     const Eigen::VectorXd& v) {
  int pos = 0;
  for (size_t b = 0; b < layout.comps.size(); ++b)
    for (int col : layout.cols[b]) s.w(col, layout.comps[b]) = v(pos++);
}

// Factored form of the negated penalized Hessian:
//   -H = blkdiag_k(A_k) - U'U,  A_k = B_k' diag(p_k) B_k + diag(alpha_k)
// where U has one column per active weight, U(n,.) = p(n,k) phi(n,col).
// The coupling term has rank <= N, so solves and the inverse diagonal cost
// O(sum H_k^3 + total N^2) instead of O(total^3) -- the difference between
// seconds and hours for dual-form models with many components.
struct StructuredHessian {
  std::vector<CholeskySolver> block_chol;  // one per layout block
  std::vector<Eigen::MatrixXd> v;          // A_k^{-1} U_k', H_k x N
  CholeskySolver schur_chol;               // I_N - U A^{-1} U'
  const ActiveLayout* layout = nullptr;

  // Builds at the given jitter (added to every diagonal entry); returns
  // false if either a block or the Schur complement is not positive
  // definite.
  bool build(const TrainState& s, const Eigen::MatrixXd& joint,
             const ActiveLayout& lay, double jitter) {
    layout = &lay;
    const int nb = static_cast<int>(lay.comps.size());
    const int n = s.n();
    block_chol.assign(nb, CholeskySolver());
    v.assign(nb, Eigen::MatrixXd());
    Eigen::MatrixXd schur = Eigen::MatrixXd::Identity(n, n);
    for (int b = 0; b < nb; ++b) {
      const int k = lay.comps[b];
      const int hk = static_cast<int>(lay.cols[b].size());
      if (hk == 0) continue;
      Eigen::MatrixXd bk(n, hk);
      for (int j = 0; j < hk; ++j) bk.col(j) = s.phi.col(lay.cols[b][j]);
      const Eigen::MatrixXd pbk = bk.array().colwise() * joint.col(k).array();
      Eigen::MatrixXd a = bk.transpose() * pbk;
      for (int j = 0; j < hk; ++j)
        a(j, j) += s.alpha(lay.cols[b][j], k) + jitter;
      if (!block_chol[b].factor(std::move(a))) return false;
      // U_k' = pbk' (columns of U restricted to this block)
      v[b] = block_chol[b].solve_many(pbk.transpose());
      schur.noalias() -= pbk * v[b];
    }
    return schur_chol.factor(std::move(schur));
  }

  double diagonal_scale(const TrainState& s, const Eigen::MatrixXd& joint) const {
    // reference magnitude for the jitter ladder: largest diagonal entry
    // of the block part, which dominates -H's diagonal
    double scale = 0.0;
    for (size_t b = 0; b < layout->comps.size(); ++b) {
      const int k = layout->comps[b];
      for (int col : layout->cols[b]) {
        const double d =
            (s.phi.col(col).array().square() * joint.col(k).array()).sum() +
            s.alpha(col, k);
        scale = std::max(scale, d);
      }
    }
    return scale;
  }

  Eigen::VectorXd solve(const TrainState& s, const Eigen::MatrixXd& joint,
                        const Eigen::VectorXd& g) const {
    const ActiveLayout& lay = *layout;
    const int n = s.n();
    Eigen::VectorXd x(g.size());
    Eigen::VectorXd t = Eigen::VectorXd::Zero(n);
    for (size_t b = 0; b < lay.comps.size(); ++b) {
      const int hk = static_cast<int>(lay.cols[b].size());
      if (hk == 0) continue;
      const int off = lay.offsets[b];
      x.segment(off, hk) = block_chol[b].solve(g.segment(off, hk));
      // U_k y_k with U_k(n,j) = p(n,k) phi(n,col_j)
      const int k = lay.comps[b];
      Eigen::VectorXd by = Eigen::VectorXd::Zero(n);
      for (int j = 0; j < hk; ++j)
        by += x(off + j) * s.phi.col(lay.cols[b][j]);
      t += joint.col(k).cwiseProduct(by);
    }
    const Eigen::VectorXd z = schur_chol.solve(t);
    for (size_t b = 0; b < lay.comps.size(); ++b) {
      const int hk = static_cast<int>(lay.cols[b].size());
      if (hk == 0) continue;
      x.segment(lay.offsets[b], hk) += v[b] * z;
    }
    return x;
  }

  Eigen::VectorXd inverse_diagonal() const {
    const ActiveLayout& lay = *layout;
    Eigen::VectorXd diag(lay.total);
    for (size_t b = 0; b < lay.comps.size(); ++b) {
      const int hk = static_cast<int>(lay.cols[b].size());
      if (hk == 0) continue;
      const int off = lay.offsets[b];
      diag.segment(off, hk) = block_chol[b].inverse_diagonal();
      // Woodbury correction: diag(V S^{-1} V') via the Schur factor
      const Eigen::MatrixXd w = schur_chol.forward_solve(v[b].transpose());
      diag.segment(off, hk) += w.colwise().squaredNorm().transpose();
    }
    return diag;
  }
};

bool build_structured(StructuredHessian& sys, const TrainState& s,
                      const Eigen::MatrixXd& joint, const ActiveLayout& lay,
                      const TrainConfig& cfg) {
  if (sys.build(s, joint, lay, 0.0)) return true;
  sys.layout = &lay;
  const double scale = sys.diagonal_scale(s, joint);
  for (double j = cfg.jitter_init_scale; j <= cfg.jitter_max_scale; j *= 10.0)
    if (sys.build(s, joint, lay, j * scale)) return true;
  return false;
}

CholeskySolver factor_negated_hessian(const Eigen::MatrixXd& hess,
                                      const TrainConfig& cfg, bool* ok) {
  CholeskySolver chol;
  *ok = chol.factor(-hess);
  if (*ok) return chol;
  const double hnorm = hess.cwiseAbs().maxCoeff();
  for (double scale = cfg.jitter_init_scale; scale <= cfg.jitter_max_scale;
       scale *= 10.0) {
    Eigen::MatrixXd a = -hess;
    a.diagonal().array() += scale * hnorm;
    *ok = chol.factor(std::move(a));
    if (*ok) return chol;
  }
  return chol;
}

double train_error_from_posteriors(const TrainState& s, const Dataset& data,
                                   const Eigen::MatrixXd& joint) {
  int wrong = 0;
  for (int n = 0; n < data.n(); ++n) {
    Eigen::VectorXd class_post = Eigen::VectorXd::Zero(s.num_classes);
    for (int k = 0; k < s.num_components(); ++k)
      class_post(s.comp_class[k]) += joint(n, k);
    int best = 0;
    for (int c = 1; c < s.num_classes; ++c)
      if (class_post(c) > class_post(best)) best = c;
    if (best != data.labels(n)) ++wrong;
  }
  return static_cast<double>(wrong) / data.n();
}

void prune_entry(TrainState& s, int col, int k) {
  s.w(col, k) = 0.0;
  s.alpha(col, k) = kInf;
  s.wmask(col, k) = 0;
}

// Renormalizes responsibilities within each sample's class over the
// surviving components.
void renormalize_responsibilities(TrainState& s, const Dataset& data) {
  for (int n = 0; n < data.n(); ++n) {
    const int cls = data.labels(n);
    double denom = 0.0;
    int count = 0;
    for (int k = 0; k < s.num_components(); ++k) {
      if (!s.comp_active[k]) {
        s.r(n, k) = 0.0;
        continue;
      }
      if (s.comp_class[k] == cls) {
        denom += s.r(n, k);
        ++count;
      }
    }
    for (int k = 0; k < s.num_components(); ++k) {
      if (!s.comp_active[k] || s.comp_class[k] != cls) continue;
      s.r(n, k) = denom > 0.0 ? s.r(n, k) / denom : 1.0 / count;
    }
  }
}

}  // namespace

std::vector<int> TrainConfig::resolved_components(int num_classes) const {
  if (components_per_class.empty())
    return std::vector<int>(num_classes, default_components);
  if (static_cast<int>(components_per_class.size()) != num_classes)
    throw std::invalid_argument("components_per_class length does not match class count");
  return components_per_class;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  if (components_per_class.empty())
    j["components"] = default_components;
  else
    j["components"] = components_per_class;
  j["outer_max_iters"] = outer_max_iters;
  j["alpha_rel_tol"] = alpha_rel_tol;
  j["resp_tol"] = resp_tol;
  j["resp_max_iters"] = resp_max_iters;
  j["newton_max_iters"] = newton_max_iters;
  j["grad_tol"] = grad_tol;
  j["line_search_max_halvings"] = line_search_max_halvings;
  j["alpha_prune_threshold"] = alpha_prune_threshold;
  j["pi_prune_threshold"] = pi_prune_threshold;
  j["weight_floor"] = weight_floor;
  j["jitter_init_scale"] = jitter_init_scale;
  j["jitter_max_scale"] = jitter_max_scale;
  j["seed"] = seed;
  j["form"] = form == SdgmModel::Form::Original ? "original" : "dual";
  j["kernel"] = kernel_name(kernel);
  j["dual_max_samples"] = dual_max_samples;
  j["kmeans_restarts"] = kmeans_restarts;
  j["kmeans_max_iters"] = kmeans_max_iters;
  j["standardize"] = standardize;
  j["verbose"] = verbose;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "components") {
      if (value.is_array())
        cfg.components_per_class = value.get<std::vector<int>>();
      else
        cfg.default_components = value.get<int>();
    } else if (key == "outer_max_iters") {
      cfg.outer_max_iters = value.get<int>();
    } else if (key == "alpha_rel_tol") {
      cfg.alpha_rel_tol = value.get<double>();
    } else if (key == "resp_tol") {
      cfg.resp_tol = value.get<double>();
    } else if (key == "resp_max_iters") {
      cfg.resp_max_iters = value.get<int>();
    } else if (key == "newton_max_iters") {
      cfg.newton_max_iters = value.get<int>();
    } else if (key == "grad_tol") {
      cfg.grad_tol = value.get<double>();
    } else if (key == "line_search_max_halvings") {
      cfg.line_search_max_halvings = value.get<int>();
    } else if (key == "alpha_prune_threshold") {
      cfg.alpha_prune_threshold = value.get<double>();
    } else if (key == "pi_prune_threshold") {
      cfg.pi_prune_threshold = value.get<double>();
    } else if (key == "weight_floor") {
      cfg.weight_floor = value.get<double>();
    } else if (key == "jitter_init_scale") {
      cfg.jitter_init_scale = value.get<double>();
    } else if (key == "jitter_max_scale") {
      cfg.jitter_max_scale = value.get<double>();
    } else if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "form") {
      const std::string f = value.get<std::string>();
      if (f == "original")
        cfg.form = SdgmModel::Form::Original;
      else if (f == "dual")
        cfg.form = SdgmModel::Form::Dual;
      else
        throw std::invalid_argument("form must be original|dual, got '" + f + "'");
    } else if (key == "kernel") {
      cfg.kernel = kernel_from_name(value.get<std::string>());
    } else if (key == "dual_max_samples") {
      cfg.dual_max_samples = value.get<int>();
    } else if (key == "kmeans_restarts") {
      cfg.kmeans_restarts = value.get<int>();
    } else if (key == "kmeans_max_iters") {
      cfg.kmeans_max_iters = value.get<int>();
    } else if (key == "standardize") {
      cfg.standardize = value.get<bool>();
    } else if (key == "verbose") {
      cfg.verbose = value.get<bool>();
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  return cfg;
}

long TrainState::active_weight_count() const {
  long count = 0;
  for (int k = 0; k < num_components(); ++k)
    if (comp_active[k])
      for (int i = 0; i < basis_dim(); ++i)
        if (wmask(i, k)) ++count;
  return count;
}

long TrainState::nonzero_weight_count() const {
  long count = 0;
  for (int k = 0; k < num_components(); ++k)
    if (comp_active[k])
      for (int i = 0; i < basis_dim(); ++i)
        if (w(i, k) != 0.0) ++count;
  return count;
}

std::vector<int> TrainState::active_components_per_class() const {
  std::vector<int> counts(num_classes, 0);
  for (int k = 0; k < num_components(); ++k)
    if (comp_active[k]) counts[comp_class[k]] += 1;
  return counts;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& s : snapshots) {
    snaps.push_back({{"iteration", s.iteration},
                     {"train_error", s.train_error},
                     {"nonzero_weights", s.nonzero_weights},
                     {"components_per_class", s.components_per_class},
                     {"objective", s.objective}});
  }
  nlohmann::json j;
  j["snapshots"] = snaps;
  j["converged"] = converged;
  j["outer_iterations"] = outer_iterations;
  j["seconds"] = seconds;
  j["initial_weights"] = initial_weights;
  j["standardized"] = standardized;
  j["seed"] = seed;
  j["warnings"] = warnings;
  if (!snapshots.empty()) {
    j["final_train_error"] = snapshots.back().train_error;
    j["final_nonzero_weights"] = snapshots.back().nonzero_weights;
    j["final_components_per_class"] = snapshots.back().components_per_class;
  }
  return j;
}

std::vector<int> kmeans_assign(const Eigen::MatrixXd& points, int k,
                               std::mt19937_64& rng, int restarts,
                               int max_iters) {
  const int n = static_cast<int>(points.rows());
  const int d = static_cast<int>(points.cols());
  if (k < 1 || k > n) throw std::invalid_argument("k-means requires 1 <= k <= n");
  if (k == 1) return std::vector<int>(n, 0);

  std::vector<int> best_assign;
  double best_inertia = kInf;
  std::vector<int> order(n);

  for (int restart = 0; restart < restarts; ++restart) {
    // k distinct starting points via partial Fisher-Yates
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    Eigen::MatrixXd centers(k, d);
    for (int i = 0; i < k; ++i) centers.row(i) = points.row(order[i]);

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_dist = (points.row(i) - centers.row(0)).squaredNorm();
        for (int c = 1; c < k; ++c) {
          const double dist = (points.row(i) - centers.row(c)).squaredNorm();
          if (dist < best_dist) {
            best_dist = dist;
            best = c;
          }
        }
        if (assign[i] != best) {
          assign[i] = best;
          changed = true;
        }
      }
      // empty-cluster repair: split the largest cluster
      std::vector<int> sizes(k, 0);
      for (int a : assign) sizes[a] += 1;
      for (int c = 0; c < k; ++c) {
        if (sizes[c] > 0) continue;
        int largest = 0;
        for (int c2 = 1; c2 < k; ++c2)
          if (sizes[c2] > sizes[largest]) largest = c2;
        int farthest = -1;
        double far_dist = -1.0;
        for (int i = 0; i < n; ++i) {
          if (assign[i] != largest) continue;
          const double dist = (points.row(i) - centers.row(largest)).squaredNorm();
          if (dist > far_dist) {
            far_dist = dist;
            farthest = i;
          }
        }
        assign[farthest] = c;
        sizes[c] = 1;
        sizes[largest] -= 1;
        changed = true;
      }
      for (int c = 0; c < k; ++c) {
        centers.row(c).setZero();
        for (int i = 0; i < n; ++i)
          if (assign[i] == c) centers.row(c) += points.row(i);
        centers.row(c) /= sizes[c];
      }
      if (!changed) break;
    }
    double inertia = 0.0;
    for (int i = 0; i < n; ++i)
      inertia += (points.row(i) - centers.row(assign[i])).squaredNorm();
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_assign = assign;
    }
  }
  return best_assign;
}

TrainState init(const Dataset& data, const TrainConfig& cfg) {
  data.validate();
  const int c = data.num_classes();
  std::vector<int> m = cfg.resolved_components(c);
  for (int v : m)
    if (v < 1) throw std::invalid_argument("component counts must be >= 1");

  TrainState s;
  s.form = cfg.form;
  s.kernel = cfg.kernel;
  s.num_classes = c;
  s.input_dim = data.dim();

  std::vector<std::vector<int>> class_rows(c);
  for (int n = 0; n < data.n(); ++n) class_rows[data.labels(n)].push_back(n);
  for (int cls = 0; cls < c; ++cls) {
    const int count = static_cast<int>(class_rows[cls].size());
    if (count == 0)
      throw std::invalid_argument("class " + std::to_string(cls) + " has no samples");
    if (count < m[cls]) {
      s.warnings.push_back("class " + std::to_string(cls) + " has only " +
                           std::to_string(count) + " samples; reducing components from " +
                           std::to_string(m[cls]));
      m[cls] = count;
    }
  }

  if (cfg.form == SdgmModel::Form::Dual) {
    if (data.n() > cfg.dual_max_samples)
      throw std::invalid_argument(
          "dual form is limited to " + std::to_string(cfg.dual_max_samples) +
          " samples (got " + std::to_string(data.n()) + ")");
    s.reference = data.X;
    s.phi = gram_matrix(cfg.kernel, data.X);
  } else {
    const int h = expanded_dim(data.dim());
    s.phi.resize(data.n(), h);
    for (int n = 0; n < data.n(); ++n)
      s.phi.row(n) = expand(data.X.row(n)).transpose();
  }

  const int total_comps = std::accumulate(m.begin(), m.end(), 0);
  const int h = s.basis_dim();
  std::vector<int> comp_offset(c, 0);
  for (int cls = 0; cls < c; ++cls) {
    comp_offset[cls] = static_cast<int>(s.comp_class.size());
    for (int j = 0; j < m[cls]; ++j) s.comp_class.push_back(cls);
  }
  s.comp_active.assign(total_comps, 1);
  s.w = Eigen::MatrixXd::Zero(h, total_comps);
  s.alpha = Eigen::MatrixXd::Ones(h, total_comps);
  s.wmask = Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic>::Ones(h, total_comps);
  s.pi = Eigen::VectorXd::Constant(total_comps, 1.0 / total_comps);
  s.r = Eigen::MatrixXd::Zero(data.n(), total_comps);

  std::mt19937_64 rng(cfg.seed);
  for (int cls = 0; cls < c; ++cls) {
    const auto& rows = class_rows[cls];
    Eigen::MatrixXd pts(rows.size(), data.dim());
    for (size_t i = 0; i < rows.size(); ++i) pts.row(i) = data.X.row(rows[i]);
    const auto assign = kmeans_assign(pts, m[cls], rng, cfg.kmeans_restarts,
                                      cfg.kmeans_max_iters);
    for (size_t i = 0; i < rows.size(); ++i)
      s.r(rows[i], comp_offset[cls] + assign[i]) = 1.0;
  }
  return s;
}

Eigen::MatrixXd joint_posteriors(const TrainState& s, Eigen::MatrixXd* log_joint) {
  const int n = s.n();
  const int k = s.num_components();
  Eigen::MatrixXd scores(n, k);
  scores.noalias() = s.phi * s.w;

  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(n, k);
  if (log_joint) log_joint->setConstant(n, k, -kInf);

  std::vector<double> log_pi(k, -kInf);
  bool any = false;
  for (int j = 0; j < k; ++j)
    if (s.comp_active[j] && s.pi(j) > 0.0) {
      log_pi[j] = std::log(s.pi(j));
      any = true;
    }
  if (!any) throw std::invalid_argument("invalid state: all mixture weights zero");

  for (int i = 0; i < n; ++i) {
    double max_logit = -kInf;
    for (int j = 0; j < k; ++j)
      if (log_pi[j] != -kInf)
        max_logit = std::max(max_logit, scores(i, j) + log_pi[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j)
      if (log_pi[j] != -kInf) denom += std::exp(scores(i, j) + log_pi[j] - max_logit);
    const double log_denom = max_logit + std::log(denom);
    for (int j = 0; j < k; ++j) {
      if (log_pi[j] == -kInf) continue;
      const double lp = scores(i, j) + log_pi[j] - log_denom;
      joint(i, j) = std::exp(lp);
      if (log_joint) (*log_joint)(i, j) = lp;
    }
  }
  return joint;
}

double expected_loglik(const TrainState& s, const Dataset& data) {
  Eigen::MatrixXd log_joint;
  joint_posteriors(s, &log_joint);
  double j = 0.0;
  for (int n = 0; n < data.n(); ++n)
    for (int k = 0; k < s.num_components(); ++k) {
      if (!s.comp_active[k]) continue;
      const double rt = s.r(n, k) * data.T(n, s.comp_class[k]);
      if (rt > 0.0) j += rt * std::max(log_joint(n, k), kLogFloor);
    }
  return j;
}

double penalized_objective(const TrainState& s, const Dataset& data) {
  double penalty = 0.0;
  for (int k = 0; k < s.num_components(); ++k) {
    if (!s.comp_active[k]) continue;
    for (int i = 0; i < s.basis_dim(); ++i)
      if (s.wmask(i, k)) penalty += s.alpha(i, k) * s.w(i, k) * s.w(i, k);
  }
  return expected_loglik(s, data) - 0.5 * penalty;
}

Eigen::VectorXd penalized_gradient(const TrainState& s, const Dataset& data) {
  const Eigen::MatrixXd joint = joint_posteriors(s);
  const ActiveLayout layout = active_layout(s);
  Eigen::VectorXd g(layout.total);
  int pos = 0;
  for (size_t b = 0; b < layout.comps.size(); ++b) {
    const int k = layout.comps[b];
    const Eigen::VectorXd resid =
        s.r.col(k).cwiseProduct(data.T.col(s.comp_class[k])) - joint.col(k);
    const Eigen::VectorXd gk = s.phi.transpose() * resid;
    for (int col : layout.cols[b])
      g(pos++) = gk(col) - s.alpha(col, k) * s.w(col, k);
  }
  return g;
}

Eigen::MatrixXd penalized_hessian(const TrainState& s, const Dataset& data) {
  const Eigen::MatrixXd joint = joint_posteriors(s);
  const ActiveLayout layout = active_layout(s);
  const int n = s.n();

  Eigen::MatrixXd u(n, layout.total);
  int pos = 0;
  for (size_t b = 0; b < layout.comps.size(); ++b) {
    const int k = layout.comps[b];
    for (int col : layout.cols[b])
      u.col(pos++) = joint.col(k).cwiseProduct(s.phi.col(col));
  }

  Eigen::MatrixXd hess(layout.total, layout.total);
  hess.setZero();
  hess.selfadjointView<Eigen::Lower>().rankUpdate(u.transpose());
  hess.triangularView<Eigen::StrictlyUpper>() =
      hess.triangularView<Eigen::StrictlyLower>().transpose();

  for (size_t b = 0; b < layout.comps.size(); ++b) {
    const int k = layout.comps[b];
    const int nk = static_cast<int>(layout.cols[b].size());
    const int off = layout.offsets[b];
    Eigen::MatrixXd bk(n, nk);
    for (int j = 0; j < nk; ++j) bk.col(j) = s.phi.col(layout.cols[b][j]);
    hess.block(off, off, nk, nk).noalias() -= bk.transpose() * u.middleCols(off, nk);
    for (int j = 0; j < nk; ++j)
      hess(off + j, off + j) -= s.alpha(layout.cols[b][j], k);
  }
  (void)data;
  return hess;
}

NewtonResult newton_maximize(TrainState& s, const Dataset& data,
                             const TrainConfig& cfg) {
  NewtonResult res;
  ActiveLayout layout = active_layout(s);
  if (layout.total == 0) {
    res.converged = true;
    return res;
  }
  for (int iter = 1; iter <= cfg.newton_max_iters; ++iter) {
    res.iterations = iter;
    const Eigen::VectorXd g = penalized_gradient(s, data);
    if (g.lpNorm<Eigen::Infinity>() < cfg.grad_tol) {
      res.converged = true;
      return res;
    }
    const Eigen::MatrixXd joint = joint_posteriors(s);
    StructuredHessian sys;
    if (!build_structured(sys, s, joint, layout, cfg)) {
      s.warnings.push_back("newton: Hessian factorization failed at maximum jitter");
      res.line_search_failed = true;
      res.converged = true;
      return res;
    }
    const Eigen::VectorXd direction = sys.solve(s, joint, g);
    const double f0 = penalized_objective(s, data);
    const double slope = g.dot(direction);
    const Eigen::VectorXd w0 = gather_weights(s, layout);

    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= cfg.line_search_max_halvings; ++halving) {
      scatter_weights(s, layout, w0 + step * direction);
      const double f = penalized_objective(s, data);
      if (f >= f0 + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      scatter_weights(s, layout, w0);
      s.warnings.push_back("newton: line search found no improvement; keeping weights");
      res.line_search_failed = true;
      res.converged = true;
      return res;
    }
  }
  return res;
}

Eigen::MatrixXd laplace_covariance(const TrainState& s, const Dataset& data,
                                   const TrainConfig& cfg) {
  const Eigen::MatrixXd hess = penalized_hessian(s, data);
  bool ok = false;
  CholeskySolver chol = factor_negated_hessian(hess, cfg, &ok);
  if (!ok)
    throw std::runtime_error(
        "training failure: penalized Hessian singular at maximum jitter");
  return chol.inverse();
}

Eigen::VectorXd laplace_diagonal(const TrainState& s, const Dataset& data,
                                 const TrainConfig& cfg) {
  const ActiveLayout layout = active_layout(s);
  if (layout.total == 0) return Eigen::VectorXd(0);
  const Eigen::MatrixXd joint = joint_posteriors(s);
  StructuredHessian sys;
  if (!build_structured(sys, s, joint, layout, cfg))
    throw std::runtime_error(
        "training failure: penalized Hessian singular at maximum jitter");
  (void)data;
  return sys.inverse_diagonal();
}

void update_alpha(TrainState& s, const Eigen::VectorXd& lambda_diag,
                  const TrainConfig& cfg) {
  const ActiveLayout layout = active_layout(s);
  if (lambda_diag.size() != layout.total)
    throw std::invalid_argument("Laplace diagonal length mismatch");
  bool warned = false;
  int pos = 0;
  for (size_t b = 0; b < layout.comps.size(); ++b) {
    const int k = layout.comps[b];
    for (int col : layout.cols[b]) {
      const double lambda = lambda_diag(pos++);
      const double wv = s.w(col, k);
      if (wv * wv < cfg.weight_floor) {
        prune_entry(s, col, k);
        continue;
      }
      double num = 1.0 - s.alpha(col, k) * lambda;
      if (num < 0.0) {
        if (!warned) {
          s.warnings.push_back("alpha update: negative numerator clamped");
          warned = true;
        }
        num = 1e-12;
      } else if (num == 0.0) {
        num = 1e-12;
      }
      const double a = num / (wv * wv);
      if (a > cfg.alpha_prune_threshold)
        prune_entry(s, col, k);
      else
        s.alpha(col, k) = a;
    }
  }
}

void update_pi(TrainState& s, const Dataset& data) {
  std::vector<int> class_counts(s.num_classes, 0);
  for (int n = 0; n < data.n(); ++n) class_counts[data.labels(n)] += 1;
  for (int c = 0; c < s.num_classes; ++c)
    if (class_counts[c] == 0)
      throw std::invalid_argument("class " + std::to_string(c) + " has no samples");

  double total = 0.0;
  for (int k = 0; k < s.num_components(); ++k) {
    if (!s.comp_active[k]) {
      s.pi(k) = 0.0;
      continue;
    }
    double sum = 0.0;
    for (int n = 0; n < data.n(); ++n)
      if (data.labels(n) == s.comp_class[k]) sum += s.r(n, k);
    s.pi(k) = sum / class_counts[s.comp_class[k]];
    total += s.pi(k);
  }
  if (total <= 0.0) throw std::runtime_error("all mixture weights vanished");
  for (int k = 0; k < s.num_components(); ++k)
    if (s.comp_active[k]) s.pi(k) /= total;
}

void prune(TrainState& s, const TrainConfig& cfg) {
  const int kc = s.num_components();
  std::vector<char> keep = s.comp_active;
  for (int k = 0; k < kc; ++k) {
    if (!s.comp_active[k]) continue;
    bool any_weight = false;
    for (int i = 0; i < s.basis_dim(); ++i)
      if (s.wmask(i, k)) {
        any_weight = true;
        break;
      }
    if (s.pi(k) < cfg.pi_prune_threshold || !any_weight) keep[k] = 0;
  }
  // a class never loses its last component
  for (int c = 0; c < s.num_classes; ++c) {
    bool alive = false;
    for (int k = 0; k < kc; ++k)
      if (keep[k] && s.comp_class[k] == c) {
        alive = true;
        break;
      }
    if (alive) continue;
    int best = -1;
    for (int k = 0; k < kc; ++k) {
      if (!s.comp_active[k] || s.comp_class[k] != c) continue;
      if (best < 0 || s.pi(k) > s.pi(best)) best = k;
    }
    if (best >= 0) {
      keep[best] = 1;
      s.warnings.push_back("prune: retained last component of class " +
                           std::to_string(c));
    }
  }
  double total = 0.0;
  for (int k = 0; k < kc; ++k) {
    if (s.comp_active[k] && !keep[k]) {
      s.comp_active[k] = 0;
      s.w.col(k).setZero();
      s.wmask.col(k).setZero();
      s.alpha.col(k).setConstant(kInf);
      s.pi(k) = 0.0;
    }
    if (s.comp_active[k]) total += s.pi(k);
  }
  int n_active = 0;
  for (char a : s.comp_active) n_active += a;
  for (int k = 0; k < kc; ++k) {
    if (!s.comp_active[k]) continue;
    if (total > 0.0)
      s.pi(k) /= total;
    else
      s.pi(k) = 1.0 / n_active;
  }
  if (total <= 0.0)
    s.warnings.push_back("prune: mixture weights vanished; reset to uniform");
}

SdgmModel state_to_model(const TrainState& s) {
  SdgmModel model;
  model.form = s.form;
  model.kernel = s.kernel;
  model.num_classes = s.num_classes;
  model.input_dim = s.input_dim;
  if (s.form == SdgmModel::Form::Dual) model.reference = s.reference;
  for (int k = 0; k < s.num_components(); ++k) {
    if (!s.comp_active[k]) continue;
    SdgmModel::Component comp;
    comp.cls = s.comp_class[k];
    comp.w = s.w.col(k);
    comp.pi = s.pi(k);
    model.components.push_back(std::move(comp));
  }
  return model;
}

FitResult fit(const Dataset& data, const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  report.standardized = cfg.standardize;

  Dataset train = data;
  Standardizer std_izer;
  if (cfg.standardize) {
    std_izer = Standardizer::fit(data);
    train = std_izer.apply(data);
  }

  TrainState s = init(train, cfg);
  report.initial_weights = s.active_weight_count();

  bool converged = false;
  int outer = 0;
  while (outer < cfg.outer_max_iters && !converged) {
    ++outer;
    // responsibility loop: Newton inside, E-step after
    Eigen::MatrixXd joint;
    for (int rit = 0; rit < cfg.resp_max_iters; ++rit) {
      newton_maximize(s, train, cfg);
      joint = joint_posteriors(s);
      double delta = 0.0;
      for (int n = 0; n < train.n(); ++n) {
        const int cls = train.labels(n);
        double class_post = 0.0;
        for (int k = 0; k < s.num_components(); ++k)
          if (s.comp_active[k] && s.comp_class[k] == cls) class_post += joint(n, k);
        int count = 0;
        for (int k = 0; k < s.num_components(); ++k)
          if (s.comp_active[k] && s.comp_class[k] == cls) ++count;
        for (int k = 0; k < s.num_components(); ++k) {
          if (!s.comp_active[k]) {
            s.r(n, k) = 0.0;
            continue;
          }
          if (s.comp_class[k] != cls) {
            s.r(n, k) = 0.0;
            continue;
          }
          const double r_new =
              class_post > 0.0 ? joint(n, k) / class_post : 1.0 / count;
          delta = std::max(delta, std::abs(r_new - s.r(n, k)));
          s.r(n, k) = r_new;
        }
      }
      if (delta < cfg.resp_tol) break;
    }

    const double objective = expected_loglik(s, train);
    const Eigen::MatrixXd alpha_before = s.alpha;
    const long active_before = s.active_weight_count();

    const Eigen::VectorXd lambda = laplace_diagonal(s, train, cfg);
    update_alpha(s, lambda, cfg);
    update_pi(s, train);
    prune(s, cfg);
    renormalize_responsibilities(s, train);

    TrainReport::Snapshot snap;
    snap.iteration = outer;
    snap.train_error = train_error_from_posteriors(s, train, joint);
    snap.nonzero_weights = s.nonzero_weight_count();
    snap.components_per_class = s.active_components_per_class();
    snap.objective = objective;
    report.snapshots.push_back(snap);

    if (cfg.verbose) {
      int active_comps = 0;
      for (char a : s.comp_active) active_comps += a;
      std::cerr << "[sdgm] iter=" << outer << " J=" << objective
                << " active_weights=" << s.active_weight_count()
                << " active_components=" << active_comps << '\n';
    }

    // alpha convergence over entries that survived the update
    double max_rel = 0.0;
    for (int k = 0; k < s.num_components(); ++k) {
      if (!s.comp_active[k]) continue;
      for (int i = 0; i < s.basis_dim(); ++i) {
        if (!s.wmask(i, k) || !std::isfinite(alpha_before(i, k))) continue;
        max_rel = std::max(max_rel, std::abs(s.alpha(i, k) - alpha_before(i, k)) /
                                        alpha_before(i, k));
      }
    }
    const bool pruned_any = s.active_weight_count() != active_before;
    if (!pruned_any && max_rel < cfg.alpha_rel_tol) converged = true;
  }

  report.converged = converged;
  report.outer_iterations = outer;
  report.warnings = s.warnings;

  SdgmModel model = state_to_model(s);
  if (cfg.standardize) {
    model.input_mean = std_izer.mean;
    model.input_scale = std_izer.stddev;
  }
  model.validate();
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(model), std::move(report)};
}

GradCheckResult gradient_check(const Dataset& data, const TrainConfig& cfg,
                               int n_states, std::uint64_t seed,
                               bool flip_gradient_sign) {
  GradCheckResult result;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.5);
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  std::uniform_real_distribution<double> log_alpha(-1.0, 1.0);
  const double step = 1e-5;

  TrainState s = init(data, cfg);
  const ActiveLayout layout = active_layout(s);

  for (int trial = 0; trial < n_states; ++trial) {
    for (size_t b = 0; b < layout.comps.size(); ++b) {
      const int k = layout.comps[b];
      for (int col : layout.cols[b]) {
        s.w(col, k) = gauss(rng);
        s.alpha(col, k) = std::exp(log_alpha(rng));
      }
    }
    for (int n = 0; n < data.n(); ++n) {
      const int cls = data.labels(n);
      double sum = 0.0;
      for (int k = 0; k < s.num_components(); ++k) {
        if (s.comp_class[k] == cls) {
          s.r(n, k) = unit(rng);
          sum += s.r(n, k);
        } else {
          s.r(n, k) = 0.0;
        }
      }
      for (int k = 0; k < s.num_components(); ++k)
        if (s.comp_class[k] == cls) s.r(n, k) /= sum;
    }

    Eigen::VectorXd g = penalized_gradient(s, data);
    if (flip_gradient_sign) g = -g;
    const Eigen::VectorXd w0 = gather_weights(s, layout);
    Eigen::VectorXd g_fd(layout.total);
    for (int i = 0; i < layout.total; ++i) {
      Eigen::VectorXd wp = w0, wm = w0;
      wp(i) += step;
      wm(i) -= step;
      scatter_weights(s, layout, wp);
      const double fp = penalized_objective(s, data);
      scatter_weights(s, layout, wm);
      const double fm = penalized_objective(s, data);
      g_fd(i) = (fp - fm) / (2.0 * step);
    }
    scatter_weights(s, layout, w0);
    const double g_rel = (g - g_fd).norm() / std::max(g_fd.norm(), 1e-12);
    result.max_grad_rel_err = std::max(result.max_grad_rel_err, g_rel);

    const Eigen::MatrixXd hess = penalized_hessian(s, data);
    Eigen::MatrixXd hess_fd(layout.total, layout.total);
    for (int i = 0; i < layout.total; ++i) {
      Eigen::VectorXd wp = w0, wm = w0;
      wp(i) += step;
      wm(i) -= step;
      scatter_weights(s, layout, wp);
      const Eigen::VectorXd gp = penalized_gradient(s, data);
      scatter_weights(s, layout, wm);
      const Eigen::VectorXd gm = penalized_gradient(s, data);
      hess_fd.col(i) = (gp - gm) / (2.0 * step);
    }
    scatter_weights(s, layout, w0);
    const double h_rel = (hess - hess_fd).norm() / std::max(hess_fd.norm(), 1e-12);
    result.max_hess_rel_err = std::max(result.max_hess_rel_err, h_rel);
  }
  return result;
}

}  // namespace sdgm
