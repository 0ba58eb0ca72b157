#ifndef SDGM_MODEL_HPP
#define SDGM_MODEL_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdgm/feature_map.hpp"

namespace sdgm {

// Gaussian mode of one class, used for weight collapsing and for the
// logistic-regression reduction.
struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double prior = 1.0;
};

// Trained mixture classifier. Immutable after construction; scoring is
// read-only and safe for concurrent use.
struct SdgmModel {
  enum class Form { Original, Dual };

  struct Component {
    int cls = 0;
    Eigen::VectorXd w;  // length H (original) or N (dual)
    double pi = 0.0;
  };

  Form form = Form::Original;
  int num_classes = 0;
  int input_dim = 0;
  Kernel kernel = Kernel::Phi;  // dual form only
  Eigen::MatrixXd reference;    // dual form only, stored training inputs
  std::vector<Component> components;

  // Optional input standardization baked in at training time; empty
  // vectors mean identity.
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;

  std::vector<int> components_per_class() const;
  int basis_dim() const;
  // Basis vector the weights act on: quadratic expansion (original) or
  // kernel evaluations against the reference samples (dual).
  Eigen::VectorXd basis(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  void validate() const;
};

struct PosteriorResult {
  Eigen::VectorXd class_posteriors;  // length C
  Eigen::VectorXd joint_posteriors;  // one entry per stored component
};

// Unnormalized log-domain score w'phi(x) (or psi'K(X,x)) of component m of
// class c.
double component_score(const SdgmModel& model, int c, int m,
                       const Eigen::Ref<const Eigen::VectorXd>& x);

PosteriorResult posterior(const SdgmModel& model,
                          const Eigen::Ref<const Eigen::VectorXd>& x);

// argmax_c P(c|x); ties broken by lowest class index.
int predict(const SdgmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

double error_rate(const SdgmModel& model, const Eigen::MatrixXd& x,
                  const Eigen::VectorXi& labels);

// Collapses a Gaussian density into a weight vector over the quadratic
// basis so that exp(w'phi(x)) equals the density at x.
Eigen::VectorXd collapse_gaussian(const GaussianComponent& g);

// Converts a dual model trained with the exact expansion kernel into the
// equivalent original-form model (w = Phi' psi).
SdgmModel dual_to_original(const SdgmModel& model);

// One shared-covariance Gaussian per class reduces to linear logistic
// regression; returns the C x (1+D) weight matrix over [1, x'].
Eigen::MatrixXd reduce_to_logistic(const std::vector<GaussianComponent>& per_class);

struct SparsityMetrics {
  long nonzero_weights = 0;
  std::vector<int> components_per_class;
};

SparsityMetrics sparsity_metrics(const SdgmModel& model);

nlohmann::json model_to_json(const SdgmModel& model);
SdgmModel model_from_json(const nlohmann::json& j);
void save_model(const std::string& path, const SdgmModel& model);
SdgmModel load_model(const std::string& path);

}  // namespace sdgm

#endif  // SDGM_MODEL_HPP
