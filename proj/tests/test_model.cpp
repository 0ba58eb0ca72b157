#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "sdgm/model.hpp"

using namespace sdgm;

namespace {

std::mt19937_64 g_rng(12345);

Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = gauss(rng);
  Eigen::MatrixXd spd = a * a.transpose() + 0.3 * Eigen::MatrixXd::Identity(d, d);
  // force exact symmetry
  return 0.5 * (spd + spd.transpose());
}

Eigen::VectorXd random_vec(int d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = gauss(rng);
  return v;
}

// direct multivariate normal density, the oracle for collapse_gaussian
double gauss_density(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov,
                     const Eigen::VectorXd& x) {
  const int d = static_cast<int>(mu.size());
  const Eigen::VectorXd diff = x - mu;
  const Eigen::MatrixXd inv = cov.inverse();
  const double quad = diff.dot(inv * diff);
  const double norm =
      std::pow(2.0 * std::numbers::pi, -0.5 * d) / std::sqrt(cov.determinant());
  return norm * std::exp(-0.5 * quad);
}

SdgmModel two_class_model(const Eigen::VectorXd& w0, const Eigen::VectorXd& w1,
                          double pi0 = 0.5, double pi1 = 0.5) {
  SdgmModel m;
  m.num_classes = 2;
  m.input_dim = 1;
  m.components.push_back({0, w0, pi0});
  m.components.push_back({1, w1, pi1});
  return m;
}

}  // namespace

TEST_CASE("component_score basics") {
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd x(1);
  x << 1.7;
  SdgmModel m = two_class_model(zero, zero);
  CHECK(component_score(m, 0, 0, x) == 0.0);
  CHECK_THROWS_AS(component_score(m, 0, 1, x), std::out_of_range);

  GaussianComponent g;
  g.mean = Eigen::VectorXd::Zero(1);
  g.cov = Eigen::MatrixXd::Identity(1, 1);
  SdgmModel m2 = two_class_model(collapse_gaussian(g), zero);
  Eigen::VectorXd origin = Eigen::VectorXd::Zero(1);
  CHECK(component_score(m2, 0, 0, origin) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("component_score dual indicator weight") {
  SdgmModel m;
  m.form = SdgmModel::Form::Dual;
  m.kernel = Kernel::Poly;
  m.num_classes = 1;
  m.input_dim = 2;
  m.reference.resize(3, 2);
  m.reference << 1, 2, -1, 0.5, 0, 0;
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(3);
  psi(1) = 1.0;
  m.components.push_back({0, psi, 1.0});
  Eigen::Vector2d x(0.3, 0.4);
  CHECK(component_score(m, 0, 0, x) ==
        doctest::Approx(poly_kernel(m.reference.row(1), x)).epsilon(1e-14));
}

TEST_CASE("posterior symmetry and normalization") {
  Eigen::VectorXd w = random_vec(3, g_rng);
  SdgmModel m = two_class_model(w, w);
  Eigen::VectorXd x(1);
  x << 0.37;
  const PosteriorResult p = posterior(m, x);
  CHECK(p.class_posteriors(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p.class_posteriors(1) == doctest::Approx(0.5).epsilon(1e-14));

  SdgmModel single;
  single.num_classes = 1;
  single.input_dim = 1;
  single.components.push_back({0, random_vec(3, g_rng), 1.0});
  CHECK(posterior(single, x).class_posteriors(0) == doctest::Approx(1.0).epsilon(1e-15));

  // scores differing by ln 3 with equal pi -> joint posteriors 0.75/0.25
  Eigen::VectorXd w0 = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd w1 = Eigen::VectorXd::Zero(3);
  w0(0) = std::log(3.0);
  const PosteriorResult q = posterior(two_class_model(w0, w1), x);
  CHECK(q.joint_posteriors(0) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(q.joint_posteriors(1) == doctest::Approx(0.25).epsilon(1e-14));

  SdgmModel broken = two_class_model(w0, w1, 0.0, 0.0);
  CHECK_THROWS_AS(posterior(broken, x), std::invalid_argument);
}

TEST_CASE("predict tie-break and Bayes rule") {
  Eigen::VectorXd w = random_vec(3, g_rng);
  Eigen::VectorXd x(1);
  x << -0.2;
  CHECK(predict(two_class_model(w, w), x) == 0);

  Eigen::VectorXd dominant = Eigen::VectorXd::Zero(3);
  dominant(0) = 50.0;
  CHECK(predict(two_class_model(Eigen::VectorXd::Zero(3), dominant), x) == 1);

  // collapsed Gaussians at +/-1, unit variance, equal priors
  GaussianComponent gm, gp;
  gm.mean = Eigen::VectorXd::Constant(1, -1.0);
  gp.mean = Eigen::VectorXd::Constant(1, 1.0);
  gm.cov = gp.cov = Eigen::MatrixXd::Identity(1, 1);
  SdgmModel bayes = two_class_model(collapse_gaussian(gm), collapse_gaussian(gp));
  Eigen::VectorXd probe(1);
  probe << 2.0;
  CHECK(predict(bayes, probe) == 1);
  probe << -2.0;
  CHECK(predict(bayes, probe) == 0);
}

TEST_CASE("collapse_gaussian closed forms") {
  GaussianComponent std1;
  std1.mean = Eigen::VectorXd::Zero(1);
  std1.cov = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::VectorXd w1 = collapse_gaussian(std1);
  CHECK(w1(0) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  CHECK(w1(1) == 0.0);
  CHECK(w1(2) == -0.5);

  GaussianComponent iso2;
  iso2.mean = Eigen::VectorXd::Zero(2);
  iso2.cov = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd w2 = collapse_gaussian(iso2);
  REQUIRE(w2.size() == 6);
  CHECK(w2(0) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  CHECK(w2(1) == 0.0);
  CHECK(w2(2) == 0.0);
  CHECK(w2(3) == -0.5);
  CHECK(w2(4) == 0.0);
  CHECK(w2(5) == -0.5);

  GaussianComponent singular;
  singular.mean = Eigen::VectorXd::Zero(2);
  singular.cov = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS(collapse_gaussian(singular));
}

TEST_CASE("collapse_gaussian density consistency") {
  for (int d : {1, 2, 5}) {
    for (int trial = 0; trial < 10; ++trial) {
      GaussianComponent g;
      g.mean = random_vec(d, g_rng);
      g.cov = random_spd(d, g_rng);
      const Eigen::VectorXd w = collapse_gaussian(g);
      for (int probe = 0; probe < 100; ++probe) {
        const Eigen::VectorXd x = random_vec(d, g_rng, 1.5);
        const double direct = gauss_density(g.mean, g.cov, x);
        const double via_w = std::exp(w.dot(expand(x)));
        CHECK(via_w == doctest::Approx(direct).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("dual_to_original") {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd ref(8, 2);
  for (int i = 0; i < ref.rows(); ++i)
    for (int j = 0; j < 2; ++j) ref(i, j) = gauss(g_rng);

  SdgmModel dual;
  dual.form = SdgmModel::Form::Dual;
  dual.kernel = Kernel::Phi;
  dual.num_classes = 2;
  dual.input_dim = 2;
  dual.reference = ref;
  dual.components.push_back({0, Eigen::VectorXd::Zero(8), 0.5});
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(8);
  e1(0) = 1.0;
  dual.components.push_back({1, e1, 0.5});

  SdgmModel orig = dual_to_original(dual);
  CHECK(orig.components[0].w.cwiseAbs().maxCoeff() == 0.0);
  CHECK((orig.components[1].w - expand(ref.row(0))).cwiseAbs().maxCoeff() == 0.0);

  // random psi: posterior match against the dual model on probes
  for (auto& comp : dual.components) comp.w = random_vec(8, g_rng, 0.3);
  SdgmModel converted = dual_to_original(dual);
  for (int probe = 0; probe < 100; ++probe) {
    const Eigen::VectorXd x = random_vec(2, g_rng);
    const Eigen::VectorXd pd = posterior(dual, x).class_posteriors;
    const Eigen::VectorXd po = posterior(converted, x).class_posteriors;
    CHECK((pd - po).cwiseAbs().maxCoeff() < 1e-8);
  }

  dual.kernel = Kernel::Poly;
  CHECK_THROWS_AS(dual_to_original(dual), std::invalid_argument);
  SdgmModel not_dual;
  not_dual.form = SdgmModel::Form::Original;
  CHECK_THROWS_AS(dual_to_original(not_dual), std::invalid_argument);
}

TEST_CASE("reduce_to_logistic") {
  // two unit Gaussians at +/-1: P(class 1|x) = 1/(1+exp(-2x))
  std::vector<GaussianComponent> classes(2);
  classes[0].mean = Eigen::VectorXd::Constant(1, -1.0);
  classes[1].mean = Eigen::VectorXd::Constant(1, 1.0);
  classes[0].cov = classes[1].cov = Eigen::MatrixXd::Identity(1, 1);
  classes[0].prior = classes[1].prior = 0.5;
  const Eigen::MatrixXd w = reduce_to_logistic(classes);
  for (double x : {-2.0, -0.3, 0.0, 0.7, 3.1}) {
    const double l0 = w(0, 0) + w(0, 1) * x;
    const double l1 = w(1, 0) + w(1, 1) * x;
    const double p1 = 1.0 / (1.0 + std::exp(l0 - l1));
    CHECK(p1 == doctest::Approx(1.0 / (1.0 + std::exp(-2.0 * x))).epsilon(1e-12));
  }

  // identical means -> uniform posterior
  classes[1].mean = classes[0].mean;
  const Eigen::MatrixXd weq = reduce_to_logistic(classes);
  CHECK((weq.row(0) - weq.row(1)).cwiseAbs().maxCoeff() < 1e-15);

  // unequal covariances rejected
  classes[1].cov = 2.0 * Eigen::MatrixXd::Identity(1, 1);
  CHECK_THROWS_AS(reduce_to_logistic(classes), std::invalid_argument);
}

TEST_CASE("reduce_to_logistic matches full posterior") {
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 1 + static_cast<int>(g_rng() % 4);
    const int c = 2 + static_cast<int>(g_rng() % 3);
    const Eigen::MatrixXd cov = random_spd(d, g_rng);
    std::vector<GaussianComponent> classes(c);
    Eigen::VectorXd priors(c);
    std::uniform_real_distribution<double> unit(0.2, 1.0);
    for (int k = 0; k < c; ++k) priors(k) = unit(g_rng);
    priors /= priors.sum();
    SdgmModel full;
    full.num_classes = c;
    full.input_dim = d;
    for (int k = 0; k < c; ++k) {
      classes[k].mean = random_vec(d, g_rng);
      classes[k].cov = cov;
      classes[k].prior = priors(k);
      full.components.push_back({k, collapse_gaussian(classes[k]), priors(k)});
    }
    const Eigen::MatrixXd w = reduce_to_logistic(classes);
    for (int probe = 0; probe < 100; ++probe) {
      const Eigen::VectorXd x = random_vec(d, g_rng, 1.3);
      Eigen::VectorXd logits(c);
      for (int k = 0; k < c; ++k) logits(k) = w(k, 0) + w.row(k).tail(d).dot(x);
      const Eigen::VectorXd el = (logits.array() - logits.maxCoeff()).exp();
      const Eigen::VectorXd reduced = el / el.sum();
      const Eigen::VectorXd direct = posterior(full, x).class_posteriors;
      CHECK((reduced - direct).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("generative seed equals Bayes rule") {
  // model assembled from collapse_gaussian over true GMM parameters
  // matches direct Bayes-rule computation
  const int d = 2;
  SdgmModel m;
  m.num_classes = 2;
  m.input_dim = d;
  std::vector<GaussianComponent> comps;
  std::vector<int> cls = {0, 0, 1};
  Eigen::VectorXd pi(3);
  pi << 0.3, 0.2, 0.5;
  for (int k = 0; k < 3; ++k) {
    GaussianComponent g;
    g.mean = random_vec(d, g_rng);
    g.cov = random_spd(d, g_rng);
    comps.push_back(g);
    m.components.push_back({cls[k], collapse_gaussian(g), pi(k)});
  }
  for (int probe = 0; probe < 50; ++probe) {
    const Eigen::VectorXd x = random_vec(d, g_rng, 1.5);
    Eigen::VectorXd joint(3);
    for (int k = 0; k < 3; ++k)
      joint(k) = pi(k) * gauss_density(comps[k].mean, comps[k].cov, x);
    Eigen::VectorXd bayes(2);
    bayes << joint(0) + joint(1), joint(2);
    bayes /= bayes.sum();
    const Eigen::VectorXd p = posterior(m, x).class_posteriors;
    CHECK((p - bayes).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("posterior invariants on random models") {
  for (int trial = 0; trial < 20; ++trial) {
    SdgmModel m;
    m.num_classes = 2 + static_cast<int>(g_rng() % 2);
    m.input_dim = 2;
    const int per_class = 1 + static_cast<int>(g_rng() % 3);
    std::vector<double> pis;
    for (int c = 0; c < m.num_classes; ++c)
      for (int j = 0; j < per_class; ++j)
        m.components.push_back({c, random_vec(6, g_rng), 0.0});
    std::uniform_real_distribution<double> unit(0.1, 1.0);
    double total = 0.0;
    for (auto& comp : m.components) {
      comp.pi = unit(g_rng);
      total += comp.pi;
    }
    for (auto& comp : m.components) comp.pi /= total;

    const Eigen::VectorXd x = random_vec(2, g_rng);
    const PosteriorResult p = posterior(m, x);
    CHECK(p.class_posteriors.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.class_posteriors.minCoeff() >= 0.0);
    CHECK(p.class_posteriors.maxCoeff() <= 1.0 + 1e-15);
    // joint posteriors sum to the class posterior
    Eigen::VectorXd by_class = Eigen::VectorXd::Zero(m.num_classes);
    for (size_t k = 0; k < m.components.size(); ++k)
      by_class(m.components[k].cls) += p.joint_posteriors(k);
    CHECK((by_class - p.class_posteriors).cwiseAbs().maxCoeff() < 1e-12);

    // shift invariance: common constant added to every bias entry
    SdgmModel shifted = m;
    for (auto& comp : shifted.components) comp.w(0) += 37.5;
    const PosteriorResult q = posterior(shifted, x);
    CHECK((q.class_posteriors - p.class_posteriors).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("sparsity metrics") {
  SdgmModel m = two_class_model(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3));
  CHECK(sparsity_metrics(m).nonzero_weights == 0);

  Eigen::VectorXd w(3);
  w << 0.0, 1.5, 0.0;
  SdgmModel m2 = two_class_model(w, Eigen::VectorXd::Zero(3));
  const SparsityMetrics sm = sparsity_metrics(m2);
  CHECK(sm.nonzero_weights == 1);
  // fully-pruned component excluded from surviving counts
  CHECK(sm.components_per_class[0] == 1);
  CHECK(sm.components_per_class[1] == 0);
}

TEST_CASE("model serialization round trip is value-exact") {
  SdgmModel m;
  m.form = SdgmModel::Form::Dual;
  m.kernel = Kernel::Phi;
  m.num_classes = 2;
  m.input_dim = 2;
  m.reference = Eigen::MatrixXd(3, 2);
  m.reference << 0.1, -0.2, 1.0 / 3.0, 2.7182818284590452, -1e-17, 5e300;
  m.components.push_back({0, random_vec(3, g_rng), 0.25});
  m.components.push_back({1, random_vec(3, g_rng), 0.75});
  m.input_mean = random_vec(2, g_rng);
  m.input_scale = Eigen::Vector2d(1.3, 0.4);

  const std::string path = (std::filesystem::temp_directory_path() / "sdgm_model_rt.json").string();
  save_model(path, m);
  const SdgmModel back = load_model(path);
  CHECK(back.form == m.form);
  CHECK((back.reference - m.reference).cwiseAbs().maxCoeff() == 0.0);
  for (size_t k = 0; k < m.components.size(); ++k) {
    CHECK(back.components[k].cls == m.components[k].cls);
    CHECK(back.components[k].pi == m.components[k].pi);
    CHECK((back.components[k].w - m.components[k].w).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK((back.input_mean - m.input_mean).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("model validation") {
  SdgmModel m = two_class_model(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3));
  CHECK_NOTHROW(m.validate());
  m.components[0].pi = 0.9;  // sum != 1
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m.components[0].pi = 0.5;
  m.components[1].cls = 0;  // class 1 empty
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}
