#ifndef SDGM_LINALG_HPP
#define SDGM_LINALG_HPP

#include <Eigen/Dense>

namespace sdgm {

// In-place Cholesky factorization of a symmetric positive-definite matrix
// (lower triangle). Returns false when the matrix is not numerically SPD.
// Backed by LAPACK; the factor overwrites the lower triangle of `a`.
class CholeskySolver {
 public:
  // Consumes `a` (moved in); only the lower triangle is referenced.
  bool factor(Eigen::MatrixXd a);

  // Solves A x = b for one right-hand side.
  Eigen::VectorXd solve(const Eigen::Ref<const Eigen::VectorXd>& b) const;

  // Solves A X = B column-wise.
  Eigen::MatrixXd solve_many(const Eigen::Ref<const Eigen::MatrixXd>& b) const;

  // Solves L X = B against the triangular factor only, so that
  // solve(B) == forward_solve applied twice (L then L').
  Eigen::MatrixXd forward_solve(const Eigen::Ref<const Eigen::MatrixXd>& b) const;

  // Diagonal of A^-1, via inversion of the triangular factor.
  Eigen::VectorXd inverse_diagonal() const;

  // Full A^-1 (symmetric). Intended for modest dimensions.
  Eigen::MatrixXd inverse() const;

  int dim() const { return static_cast<int>(factor_.rows()); }

 private:
  Eigen::MatrixXd factor_;
  bool ok_ = false;
};

}  // namespace sdgm

#endif  // SDGM_LINALG_HPP
