#include "sdgm/feature_map.hpp"

#include <cmath>
#include <stdexcept>

namespace sdgm {

const char* kernel_name(Kernel k) {
  return k == Kernel::Phi ? "phi" : "poly";
}

Kernel kernel_from_name(const std::string& name) {
  if (name == "phi") return Kernel::Phi;
  if (name == "poly") return Kernel::Poly;
  throw std::invalid_argument("unknown kernel '" + name + "' (expected phi|poly)");
}

int expanded_dim(int input_dim) {
  if (input_dim < 1)
    throw std::invalid_argument("input dimension must be >= 1");
  return 1 + input_dim * (input_dim + 3) / 2;
}

Eigen::VectorXd expand(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const int d = static_cast<int>(x.size());
  if (d < 1) throw std::invalid_argument("input dimension must be >= 1");
  if (!x.allFinite()) throw std::invalid_argument("non-finite input to expand()");
  Eigen::VectorXd phi(expanded_dim(d));
  phi(0) = 1.0;
  phi.segment(1, d) = x;
  int pos = 1 + d;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) phi(pos++) = x(i) * x(j);
  return phi;
}

double poly_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("kernel arguments must have equal dimension");
  const double s = x.dot(y) + 1.0;
  return s * s;
}

double phi_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("kernel arguments must have equal dimension");
  return expand(x).dot(expand(y));
}

double kernel_eval(Kernel k, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y) {
  return k == Kernel::Phi ? phi_kernel(x, y) : poly_kernel(x, y);
}

Eigen::VectorXd kernel_row(Kernel k, const Eigen::Ref<const Eigen::MatrixXd>& X,
                           const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index n = X.rows();
  if (X.cols() != x.size())
    throw std::invalid_argument("kernel reference matrix and input dimension mismatch");
  Eigen::VectorXd row(n);
  if (k == Kernel::Phi) {
    const Eigen::VectorXd px = expand(x);
    for (Eigen::Index i = 0; i < n; ++i) row(i) = expand(X.row(i)).dot(px);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = X.row(i).dot(x) + 1.0;
      row(i) = s * s;
    }
  }
  return row;
}

Eigen::MatrixXd gram_matrix(Kernel k, const Eigen::Ref<const Eigen::MatrixXd>& X) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd g(n, n);
  if (k == Kernel::Phi) {
    Eigen::MatrixXd e(n, expanded_dim(static_cast<int>(X.cols())));
    for (Eigen::Index i = 0; i < n; ++i) e.row(i) = expand(X.row(i)).transpose();
    g.noalias() = e * e.transpose();
  } else {
    g.noalias() = X * X.transpose();
    g.array() = (g.array() + 1.0).square();
  }
  // exact symmetry regardless of evaluation order
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

}  // namespace sdgm
