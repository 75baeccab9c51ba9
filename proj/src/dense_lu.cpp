#include "pixeltrap/dense_lu.hpp"

#include <cmath>
#include <string>

#include "pixeltrap/error.hpp"

extern "C" {
void dgetrf_(const int* m, const int* n, double* a, const int* lda, int* ipiv, int* info);
void dgetrs_(const char* trans, const int* n, const int* nrhs, const double* a, const int* lda, const int* ipiv,
             double* b, const int* ldb, int* info, std::size_t trans_len);
}

namespace pixeltrap {

DenseLU::DenseLU(Eigen::MatrixXd matrix) : lu_(std::move(matrix))
{
  if (lu_.rows() != lu_.cols()) throw SingularMatrixError("influence matrix is not square");
  int n = static_cast<int>(lu_.rows());
  if (n == 0) throw SingularMatrixError("empty influence matrix");
  pivots_.resize(n);
  int info = 0;
  dgetrf_(&n, &n, lu_.data(), &n, pivots_.data(), &info);
  if (info > 0) throw SingularMatrixError("zero pivot at row " + std::to_string(info) + " (meshing defect?)");
  if (info < 0) throw SingularMatrixError("getrf rejected argument " + std::to_string(-info));
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(lu_(i, i))) throw SingularMatrixError("non-finite pivot in factorization");
}

void DenseLU::solve_in_place(Eigen::MatrixXd& rhs) const
{
  int n = static_cast<int>(lu_.rows());
  if (rhs.rows() != n) throw SingularMatrixError("right-hand side has the wrong row count");
  int nrhs = static_cast<int>(rhs.cols());
  int info = 0;
  char trans = 'N';
  dgetrs_(&trans, &n, &nrhs, lu_.data(), &n, pivots_.data(), rhs.data(), &n, &info, 1);
  if (info != 0) throw SingularMatrixError("getrs failed with info " + std::to_string(info));
}

Eigen::MatrixXd DenseLU::solve(const Eigen::MatrixXd& rhs) const
{
  Eigen::MatrixXd x = rhs;
  solve_in_place(x);
  return x;
}

double DenseLU::pivot_ratio() const
{
  Eigen::VectorXd d = lu_.diagonal().cwiseAbs();
  return d.minCoeff() / d.maxCoeff();
}

}  // namespace pixeltrap
