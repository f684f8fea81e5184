#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>

#include <Eigen/Dense>

#include "mpobm/hamiltonian.hpp"

namespace mpobm {

/// r lowest eigenpairs; U has orthonormal columns.
struct GroundSpace {
  Eigen::MatrixXd U;
  Eigen::VectorXd eigenvalues;
  int r = 0;
};

struct LanczosOptions {
  int krylov_dim = 48;       ///< basis size before a restart (clipped to the problem size)
  int max_restarts = 2000;
  double tol = 1e-10;        ///< residual norm relative to the largest Ritz value
  std::uint64_t seed = 43;   ///< start vector
};

using LinearOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

GroundSpace ground_space_dense(const Eigen::MatrixXd& H, int r);

/// Thick-restart Lanczos with full reorthogonalization. Throws NumericalError
/// (with residual norms) when the restart budget runs out.
GroundSpace ground_space_lanczos(const LinearOperator& op, std::int64_t n, int r, const LanczosOptions& opts = {});

/// Dense representations use the full eigensolver, local sums use Lanczos on apply_H.
GroundSpace ground_space(const HamiltonianRep& H, int r, const LanczosOptions& opts = {});

struct SpectralReport {
  Eigen::VectorXd eigenvalues;  ///< ascending prefix
  Eigen::VectorXd rel_gaps;     ///< (l[i+1] - l[i]) / (|l[i]| + 1e-12)
  int ground_gap_index = 0;     ///< gap directly above the rank-r ground space
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  bool clipped = false;         ///< n_eigs exceeded the dimension
};

Eigen::VectorXd relative_gaps(const Eigen::VectorXd& ascending);

SpectralReport spectral_report(const Eigen::MatrixXd& H, int n_eigs = 100, int r = 1);
SpectralReport spectral_report(const HamiltonianRep& H, int n_eigs = 100, int r = 1);

/// Rows "eig_index,lambda,rel_gap"; the last eigenvalue has an empty gap.
void write_gaps_csv(std::ostream& os, const SpectralReport& report);

/// Principal angles between the column spans of U and V (both orthonormal), ascending.
Eigen::VectorXd principal_angles(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V);

}  // namespace mpobm
