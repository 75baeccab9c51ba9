#pragma once

#include <vector>

#include <Eigen/Dense>

namespace pixeltrap {

/// LU factorization with partial pivoting (LAPACK getrf/getrs). The
/// factored matrix is stored in place.
class DenseLU {
 public:
  DenseLU() = default;
  /// Takes ownership of the matrix and factors it; throws
  /// SingularMatrixError on an exactly zero pivot.
  explicit DenseLU(Eigen::MatrixXd matrix);

  /// Solves A X = B in place, B with any number of columns.
  void solve_in_place(Eigen::MatrixXd& rhs) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

  Eigen::Index size() const { return lu_.rows(); }
  bool empty() const { return lu_.size() == 0; }
  /// Rough reciprocal condition estimate (smallest / largest |pivot|).
  double pivot_ratio() const;

 private:
  Eigen::MatrixXd lu_;
  std::vector<int> pivots_;
};

}  // namespace pixeltrap
