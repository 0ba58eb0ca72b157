#ifndef SDGM_FEATURE_MAP_HPP
#define SDGM_FEATURE_MAP_HPP

#include <Eigen/Dense>
#include <string>

namespace sdgm {

// Kernel used by the dual form. Kernel::Phi is the exact inner product of
// the quadratic expansions; Kernel::Poly is the second-degree polynomial
// kernel (x'y + 1)^2. They differ by a fixed diagonal rescaling of the
// feature space, which the learned weights absorb.
enum class Kernel { Phi, Poly };

const char* kernel_name(Kernel k);
Kernel kernel_from_name(const std::string& name);

// Dimension of the quadratic basis expansion: 1 + D(D+3)/2.
int expanded_dim(int input_dim);

// Quadratic basis expansion
//   [1, x_1..x_D, x_1^2, x_1 x_2, ..., x_1 x_D, x_2^2, ..., x_D^2].
// The upper-triangular ordering of the quadratic block is part of the
// model serialization contract.
Eigen::VectorXd expand(const Eigen::Ref<const Eigen::VectorXd>& x);

// (x'y + 1)^2
double poly_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y);

// expand(x)' expand(y), the kernel under which the dual and original
// forms are exactly equivalent.
double phi_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& y);

double kernel_eval(Kernel k, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y);

// Vector of kernel evaluations k(x_n, x) against the rows of X.
Eigen::VectorXd kernel_row(Kernel k, const Eigen::Ref<const Eigen::MatrixXd>& X,
                           const Eigen::Ref<const Eigen::VectorXd>& x);

// N x N Gram matrix over the rows of X.
Eigen::MatrixXd gram_matrix(Kernel k, const Eigen::Ref<const Eigen::MatrixXd>& X);

}  // namespace sdgm

#endif  // SDGM_FEATURE_MAP_HPP
