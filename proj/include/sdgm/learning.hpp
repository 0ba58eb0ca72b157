#ifndef SDGM_LEARNING_HPP
#define SDGM_LEARNING_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdgm/data.hpp"
#include "sdgm/model.hpp"

namespace sdgm {

struct TrainConfig {
  // Initial components per class; empty means `default_components` for
  // every class.
  std::vector<int> components_per_class;
  int default_components = 2;

  int outer_max_iters = 100;
  double alpha_rel_tol = 1e-3;

  double resp_tol = 1e-4;
  int resp_max_iters = 50;

  int newton_max_iters = 50;
  double grad_tol = 1e-6;
  int line_search_max_halvings = 30;

  double alpha_prune_threshold = 1e12;
  double pi_prune_threshold = 1e-6;
  double weight_floor = 1e-280;  // squared-weight underflow floor

  // Jitter ladder for Hessian factorization, as fractions of the
  // max-abs Hessian entry.
  double jitter_init_scale = 1e-8;
  double jitter_max_scale = 1e-2;

  std::uint64_t seed = 0;
  SdgmModel::Form form = SdgmModel::Form::Original;
  Kernel kernel = Kernel::Phi;
  int dual_max_samples = 2000;

  int kmeans_restarts = 10;
  int kmeans_max_iters = 100;

  bool standardize = false;
  bool verbose = true;  // progress lines on stderr

  std::vector<int> resolved_components(int num_classes) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Mutable training bundle. Weights, precisions, and masks are stored as
// H x K matrices with one column per component; pruned entries are held
// at exactly zero weight with an infinite precision sentinel.
struct TrainState {
  SdgmModel::Form form = SdgmModel::Form::Original;
  Kernel kernel = Kernel::Phi;
  int num_classes = 0;
  int input_dim = 0;

  Eigen::MatrixXd phi;        // N x H design matrix (expansion or Gram)
  Eigen::MatrixXd reference;  // dual form only

  std::vector<int> comp_class;    // class of each component, length K
  std::vector<char> comp_active;  // component survival mask

  Eigen::MatrixXd w;      // H x K
  Eigen::MatrixXd alpha;  // H x K; +inf marks a pruned weight
  Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> wmask;  // 1 = active
  Eigen::VectorXd pi;     // K
  Eigen::MatrixXd r;      // N x K responsibilities

  std::vector<std::string> warnings;

  int n() const { return static_cast<int>(phi.rows()); }
  int basis_dim() const { return static_cast<int>(phi.cols()); }
  int num_components() const { return static_cast<int>(comp_class.size()); }
  long active_weight_count() const;
  long nonzero_weight_count() const;
  std::vector<int> active_components_per_class() const;
};

struct TrainReport {
  struct Snapshot {
    int iteration = 0;
    double train_error = 0.0;
    long nonzero_weights = 0;
    std::vector<int> components_per_class;
    double objective = 0.0;  // J at the snapshot
  };
  std::vector<Snapshot> snapshots;
  bool converged = false;
  int outer_iterations = 0;
  double seconds = 0.0;
  long initial_weights = 0;
  bool standardized = false;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

struct FitResult {
  SdgmModel model;
  TrainReport report;
};

// Per-class k-means used for responsibility initialization. Seeded,
// multi-restart, ties broken by lowest cluster index; an empty cluster is
// repaired by splitting the largest one.
std::vector<int> kmeans_assign(const Eigen::MatrixXd& points, int k,
                               std::mt19937_64& rng, int restarts,
                               int max_iters);

TrainState init(const Dataset& data, const TrainConfig& cfg);

// N x K joint posteriors P(c,m|x_n) under the current weights; columns of
// pruned components are zero. `log_joint`, when given, receives the
// matching log probabilities.
Eigen::MatrixXd joint_posteriors(const TrainState& s,
                                 Eigen::MatrixXd* log_joint = nullptr);

// Expected complete-data log-likelihood J (log floored at -745).
double expected_loglik(const TrainState& s, const Dataset& data);

// J - 1/2 w'Aw over active weights.
double penalized_objective(const TrainState& s, const Dataset& data);

// Gradient of the penalized objective, flattened over active weights
// (components in index order, active basis entries ascending within each).
Eigen::VectorXd penalized_gradient(const TrainState& s, const Dataset& data);

// Hessian of the penalized objective over active weights (negative
// definite up to jitter).
Eigen::MatrixXd penalized_hessian(const TrainState& s, const Dataset& data);

struct NewtonResult {
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

NewtonResult newton_maximize(TrainState& s, const Dataset& data,
                             const TrainConfig& cfg);

// Laplace posterior covariance: inverse of the negated penalized Hessian
// at the current weights.
Eigen::MatrixXd laplace_covariance(const TrainState& s, const Dataset& data,
                                   const TrainConfig& cfg);
// Its diagonal only, computed without materializing the full inverse.
Eigen::VectorXd laplace_diagonal(const TrainState& s, const Dataset& data,
                                 const TrainConfig& cfg);

// ARD precision update; prunes weights whose precision diverges.
void update_alpha(TrainState& s, const Eigen::VectorXd& lambda_diag,
                  const TrainConfig& cfg);

void update_pi(TrainState& s, const Dataset& data);

// Removes components with vanished mixture weight or no surviving
// weights; a class always keeps its largest-pi component.
void prune(TrainState& s, const TrainConfig& cfg);

SdgmModel state_to_model(const TrainState& s);

FitResult fit(const Dataset& data, const TrainConfig& cfg);

// Finite-difference validation of the analytic gradient and Hessian at
// randomized states. `flip_gradient_sign` negates the analytic gradient
// as a negative control.
struct GradCheckResult {
  double max_grad_rel_err = 0.0;
  double max_hess_rel_err = 0.0;
};

GradCheckResult gradient_check(const Dataset& data, const TrainConfig& cfg,
                               int n_states, std::uint64_t seed,
                               bool flip_gradient_sign = false);

}  // namespace sdgm

#endif  // SDGM_LEARNING_HPP
