#include "sdgm/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace sdgm {

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace

std::vector<int> SdgmModel::components_per_class() const {
  std::vector<int> counts(num_classes, 0);
  for (const auto& comp : components) counts[comp.cls] += 1;
  return counts;
}

int SdgmModel::basis_dim() const {
  return form == Form::Original ? expanded_dim(input_dim)
                                : static_cast<int>(reference.rows());
}

Eigen::VectorXd SdgmModel::basis(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != input_dim)
    throw std::invalid_argument("input dimension mismatch: expected " +
                                std::to_string(input_dim) + ", got " +
                                std::to_string(x.size()));
  Eigen::VectorXd z = x;
  if (input_mean.size() > 0)
    z = (z - input_mean).cwiseQuotient(input_scale);
  return form == Form::Original ? expand(z) : kernel_row(kernel, reference, z);
}

void SdgmModel::validate() const {
  if (num_classes < 1) throw std::invalid_argument("model needs at least one class");
  if (components.empty()) throw std::invalid_argument("model has no components");
  double pi_sum = 0.0;
  std::vector<int> counts(num_classes, 0);
  const int h = basis_dim();
  for (const auto& comp : components) {
    if (comp.cls < 0 || comp.cls >= num_classes)
      throw std::invalid_argument("component class index out of range");
    if (comp.w.size() != h)
      throw std::invalid_argument("component weight length mismatch");
    if (comp.pi < 0.0 || comp.pi > 1.0)
      throw std::invalid_argument("mixture weight outside [0,1]");
    pi_sum += comp.pi;
    counts[comp.cls] += 1;
  }
  if (std::abs(pi_sum - 1.0) > 1e-9)
    throw std::invalid_argument("mixture weights do not sum to 1");
  for (int c = 0; c < num_classes; ++c)
    if (counts[c] == 0)
      throw std::invalid_argument("class " + std::to_string(c) + " has no components");
}

double component_score(const SdgmModel& model, int c, int m,
                       const Eigen::Ref<const Eigen::VectorXd>& x) {
  int seen = 0;
  for (const auto& comp : model.components) {
    if (comp.cls == c) {
      if (seen == m) return comp.w.dot(model.basis(x));
      ++seen;
    }
  }
  throw std::out_of_range("no component (" + std::to_string(c) + "," +
                          std::to_string(m) + ") in model");
}

PosteriorResult posterior(const SdgmModel& model,
                          const Eigen::Ref<const Eigen::VectorXd>& x) {
  const int k = static_cast<int>(model.components.size());
  const Eigen::VectorXd phi = model.basis(x);
  Eigen::VectorXd logits(k);
  double max_logit = -std::numeric_limits<double>::infinity();
  bool any_pi = false;
  for (int i = 0; i < k; ++i) {
    const auto& comp = model.components[i];
    if (comp.pi > 0.0) {
      any_pi = true;
      logits(i) = comp.w.dot(phi) + std::log(comp.pi);
      max_logit = std::max(max_logit, logits(i));
    } else {
      logits(i) = -std::numeric_limits<double>::infinity();
    }
  }
  if (!any_pi) throw std::invalid_argument("invalid model: all mixture weights zero");
  double denom = 0.0;
  Eigen::VectorXd joint(k);
  for (int i = 0; i < k; ++i) {
    joint(i) = std::isfinite(logits(i)) ? std::exp(logits(i) - max_logit) : 0.0;
    denom += joint(i);
  }
  joint /= denom;
  Eigen::VectorXd class_post = Eigen::VectorXd::Zero(model.num_classes);
  for (int i = 0; i < k; ++i) class_post(model.components[i].cls) += joint(i);
  return {std::move(class_post), std::move(joint)};
}

int predict(const SdgmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::VectorXd p = posterior(model, x).class_posteriors;
  int best = 0;
  for (int c = 1; c < p.size(); ++c)
    if (p(c) > p(best)) best = c;
  return best;
}

double error_rate(const SdgmModel& model, const Eigen::MatrixXd& x,
                  const Eigen::VectorXi& labels) {
  int wrong = 0;
  for (int i = 0; i < x.rows(); ++i)
    if (predict(model, x.row(i)) != labels(i)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(x.rows());
}

Eigen::VectorXd collapse_gaussian(const GaussianComponent& g) {
  const int d = static_cast<int>(g.mean.size());
  if (g.cov.rows() != d || g.cov.cols() != d)
    throw std::invalid_argument("mean/covariance dimension mismatch");
  if ((g.cov - g.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("covariance not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("covariance factorization failed (not positive definite)");
  const Eigen::MatrixXd s = llt.solve(Eigen::MatrixXd::Identity(d, d));
  double logdet = 0.0;
  const Eigen::MatrixXd l = llt.matrixL();
  for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(l(i, i));

  Eigen::VectorXd w(expanded_dim(d));
  const Eigen::VectorXd smu = s * g.mean;
  w(0) = -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * logdet -
         0.5 * g.mean.dot(smu);
  w.segment(1, d) = smu;
  int pos = 1 + d;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j)
      w(pos++) = i == j ? -0.5 * s(i, i) : -s(i, j);
  return w;
}

SdgmModel dual_to_original(const SdgmModel& model) {
  if (model.form != SdgmModel::Form::Dual)
    throw std::invalid_argument("model is not in dual form");
  if (model.kernel != Kernel::Phi)
    throw std::invalid_argument(
        "unsupported conversion: dual model was trained with the poly kernel");
  const int n = static_cast<int>(model.reference.rows());
  const int h = expanded_dim(model.input_dim);
  Eigen::MatrixXd phi(n, h);
  for (int i = 0; i < n; ++i) phi.row(i) = expand(model.reference.row(i)).transpose();

  SdgmModel out;
  out.form = SdgmModel::Form::Original;
  out.num_classes = model.num_classes;
  out.input_dim = model.input_dim;
  out.input_mean = model.input_mean;
  out.input_scale = model.input_scale;
  for (const auto& comp : model.components) {
    SdgmModel::Component oc;
    oc.cls = comp.cls;
    oc.pi = comp.pi;
    oc.w = phi.transpose() * comp.w;
    out.components.push_back(std::move(oc));
  }
  return out;
}

Eigen::MatrixXd reduce_to_logistic(const std::vector<GaussianComponent>& per_class) {
  const int c = static_cast<int>(per_class.size());
  if (c < 2) throw std::invalid_argument("need at least two classes");
  const int d = static_cast<int>(per_class[0].mean.size());
  for (const auto& g : per_class) {
    if (g.mean.size() != d) throw std::invalid_argument("inconsistent dimensions");
    if ((g.cov - per_class[0].cov).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("covariances are not shared across classes");
    if (!(g.prior > 0.0)) throw std::invalid_argument("class priors must be positive");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(per_class[0].cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("covariance factorization failed (not positive definite)");
  const Eigen::MatrixXd s = llt.solve(Eigen::MatrixXd::Identity(d, d));

  Eigen::MatrixXd w(c, 1 + d);
  for (int k = 0; k < c; ++k) {
    const Eigen::VectorXd smu = s * per_class[k].mean;
    w(k, 0) = std::log(per_class[k].prior) - 0.5 * per_class[k].mean.dot(smu);
    w.row(k).segment(1, d) = smu.transpose();
  }
  return w;
}

SparsityMetrics sparsity_metrics(const SdgmModel& model) {
  SparsityMetrics out;
  out.components_per_class.assign(model.num_classes, 0);
  for (const auto& comp : model.components) {
    long nnz = 0;
    for (int i = 0; i < comp.w.size(); ++i)
      if (comp.w(i) != 0.0) ++nnz;
    out.nonzero_weights += nnz;
    if (nnz > 0) out.components_per_class[comp.cls] += 1;
  }
  return out;
}

nlohmann::json model_to_json(const SdgmModel& model) {
  nlohmann::json j;
  j["version"] = 1;
  j["feature_ordering"] = "quadratic-upper-row-major-v1";
  j["form"] = model.form == SdgmModel::Form::Original ? "original" : "dual";
  j["num_classes"] = model.num_classes;
  j["input_dim"] = model.input_dim;
  if (model.form == SdgmModel::Form::Dual) {
    j["kernel"] = kernel_name(model.kernel);
    nlohmann::json ref = nlohmann::json::array();
    for (int i = 0; i < model.reference.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int k = 0; k < model.reference.cols(); ++k) row.push_back(model.reference(i, k));
      ref.push_back(row);
    }
    j["reference"] = ref;
  }
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& comp : model.components)
    comps.push_back({{"class", comp.cls}, {"pi", comp.pi}, {"weights", to_std(comp.w)}});
  j["components"] = comps;
  if (model.input_mean.size() > 0) {
    j["standardizer"] = {{"mean", to_std(model.input_mean)},
                         {"scale", to_std(model.input_scale)}};
  }
  return j;
}

SdgmModel model_from_json(const nlohmann::json& j) {
  SdgmModel model;
  const std::string ordering = j.at("feature_ordering").get<std::string>();
  if (ordering != "quadratic-upper-row-major-v1")
    throw std::runtime_error("unknown feature ordering '" + ordering + "'");
  model.form = j.at("form").get<std::string>() == "dual" ? SdgmModel::Form::Dual
                                                         : SdgmModel::Form::Original;
  model.num_classes = j.at("num_classes").get<int>();
  model.input_dim = j.at("input_dim").get<int>();
  if (model.form == SdgmModel::Form::Dual) {
    model.kernel = kernel_from_name(j.at("kernel").get<std::string>());
    const auto& ref = j.at("reference");
    const int n = static_cast<int>(ref.size());
    model.reference.resize(n, model.input_dim);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < model.input_dim; ++k)
        model.reference(i, k) = ref.at(i).at(k).get<double>();
  }
  for (const auto& jc : j.at("components")) {
    SdgmModel::Component comp;
    comp.cls = jc.at("class").get<int>();
    comp.pi = jc.at("pi").get<double>();
    comp.w = to_eigen(jc.at("weights").get<std::vector<double>>());
    model.components.push_back(std::move(comp));
  }
  if (j.contains("standardizer")) {
    model.input_mean = to_eigen(j["standardizer"].at("mean").get<std::vector<double>>());
    model.input_scale = to_eigen(j["standardizer"].at("scale").get<std::vector<double>>());
  }
  model.validate();
  return model;
}

void save_model(const std::string& path, const SdgmModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << model_to_json(model).dump(2) << '\n';
}

SdgmModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace sdgm
