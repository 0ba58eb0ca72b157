#include "sdgm/linalg.hpp"

#include <lapacke.h>

#include <stdexcept>
#include <utility>

namespace sdgm {

bool CholeskySolver::factor(Eigen::MatrixXd a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("matrix must be square");
  factor_ = std::move(a);
  const lapack_int n = static_cast<lapack_int>(factor_.rows());
  // Eigen is column-major; 'L' of a symmetric matrix is layout-agnostic.
  const lapack_int info =
      LAPACKE_dpotrf(LAPACK_COL_MAJOR, 'L', n, factor_.data(), n);
  ok_ = info == 0;
  return ok_;
}

Eigen::VectorXd CholeskySolver::solve(const Eigen::Ref<const Eigen::VectorXd>& b) const {
  if (!ok_) throw std::runtime_error("Cholesky factorization not available");
  Eigen::VectorXd x = b;
  const lapack_int n = static_cast<lapack_int>(factor_.rows());
  const lapack_int info = LAPACKE_dpotrs(LAPACK_COL_MAJOR, 'L', n, 1,
                                         factor_.data(), n, x.data(), n);
  if (info != 0) throw std::runtime_error("triangular solve failed");
  return x;
}

Eigen::MatrixXd CholeskySolver::solve_many(
    const Eigen::Ref<const Eigen::MatrixXd>& b) const {
  if (!ok_) throw std::runtime_error("Cholesky factorization not available");
  Eigen::MatrixXd x = b;
  const lapack_int n = static_cast<lapack_int>(factor_.rows());
  const lapack_int info =
      LAPACKE_dpotrs(LAPACK_COL_MAJOR, 'L', n, static_cast<lapack_int>(x.cols()),
                     factor_.data(), n, x.data(), n);
  if (info != 0) throw std::runtime_error("triangular solve failed");
  return x;
}

Eigen::MatrixXd CholeskySolver::forward_solve(
    const Eigen::Ref<const Eigen::MatrixXd>& b) const {
  if (!ok_) throw std::runtime_error("Cholesky factorization not available");
  Eigen::MatrixXd x = b;
  const lapack_int n = static_cast<lapack_int>(factor_.rows());
  const lapack_int info = LAPACKE_dtrtrs(
      LAPACK_COL_MAJOR, 'L', 'N', 'N', n, static_cast<lapack_int>(x.cols()),
      factor_.data(), n, x.data(), n);
  if (info != 0) throw std::runtime_error("triangular solve failed");
  return x;
}

Eigen::VectorXd CholeskySolver::inverse_diagonal() const {
  if (!ok_) throw std::runtime_error("Cholesky factorization not available");
  Eigen::MatrixXd m = factor_;
  const lapack_int n = static_cast<lapack_int>(m.rows());
  const lapack_int info =
      LAPACKE_dtrtri(LAPACK_COL_MAJOR, 'L', 'N', n, m.data(), n);
  if (info != 0) throw std::runtime_error("triangular inversion failed");
  // A^-1 = M' M with M = L^-1, so the diagonal entries are squared column
  // norms of the lower-triangular M.
  Eigen::VectorXd diag(n);
  for (lapack_int j = 0; j < n; ++j)
    diag(j) = m.col(j).tail(n - j).squaredNorm();
  return diag;
}

Eigen::MatrixXd CholeskySolver::inverse() const {
  if (!ok_) throw std::runtime_error("Cholesky factorization not available");
  Eigen::MatrixXd m = factor_;
  const lapack_int n = static_cast<lapack_int>(m.rows());
  const lapack_int info =
      LAPACKE_dpotri(LAPACK_COL_MAJOR, 'L', n, m.data(), n);
  if (info != 0) throw std::runtime_error("matrix inversion failed");
  m.triangularView<Eigen::StrictlyUpper>() =
      m.triangularView<Eigen::StrictlyLower>().transpose();
  return m;
}

}  // namespace sdgm
