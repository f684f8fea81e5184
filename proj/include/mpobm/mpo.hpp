#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mpobm/basis.hpp"
#include "mpobm/spectral.hpp"

namespace mpobm {

/**
 * Matrix product operator on D sites of local dimension K.
 *
 * Core d has shape (R_d, K, K, R_{d+1}) with R_0 = R_D = 1, stored flat at
 * ((a * K + i) * K + j) * R_{d+1} + b. Row index i_1 is the most significant
 * digit of the dense row index.
 */
struct MPO {
  int D = 0;
  int K = 0;
  std::vector<int> bonds;                  ///< D + 1 entries
  std::vector<std::vector<double>> cores;

  double operator()(int d, int a, int i, int j, int b) const {
    return cores[d][((static_cast<std::size_t>(a) * K + i) * K + j) * bonds[d + 1] + b];
  }
  /// Largest internal bond.
  int max_bond() const;
  /// Contracts a K x K site operator into an (R_d x R_{d+1}) matrix.
  Eigen::MatrixXd site_matrix(int d, const Eigen::MatrixXd& W) const;
  double trace() const;
};

struct CompressionReport {
  std::vector<int> bonds;
  int max_bond = 0;
  double frobenius_error = 0.0;  ///< ||rho - rho_mpo||_F
  bool error_is_bound = false;   ///< true when only an upper bound was affordable
  bool cap_hit = false;          ///< max_bond forced a truncation above the threshold
  double err = 0.0;
  int max_bond_cap = 0;
};

struct CompressedMPO {
  MPO mpo;
  CompressionReport report;
};

/// Dense bound min(K^{2d}, K^{2(D-d)}) for the bond after site d (1-based cut).
std::int64_t dense_bond_bound(int K, int D, int cut);

/// TT-SVD over site pairs (i_d, j_d), then a right-to-left recompression.
/// Singular values below err * (largest at that cut) are dropped.
CompressedMPO to_mpo(const Eigen::MatrixXd& rho, int K, int D, double err, int max_bond);

/// rho = sum_k w_k u_k u_k^T from the columns of U without forming rho.
CompressedMPO to_mpo_factored(const Eigen::MatrixXd& U, const Eigen::VectorXd& weights, int K, int D, double err,
                              int max_bond);

Eigen::MatrixXd to_dense(const MPO& mpo);

void save_mpo(const CompressedMPO& m, const std::filesystem::path& path, std::uint64_t seed);
CompressedMPO load_mpo(const std::filesystem::path& path);

struct LogValue {
  double value = 0.0;
  bool clamped = false;
};

struct ScoreValue {
  Eigen::VectorXd grad;
  bool reliable = true;  ///< false when q fell to the clamp floor
};

struct BoxProbability {
  double value = 0.0;
  bool clipped = false;  ///< raw value was outside [-1e-8, 1 + 1e-8]
};

using Interval = std::pair<double, double>;

/**
 * Born density q(x) = Phi(x)^T rho Phi(x) with trace(rho) = 1.
 *
 * Holds an MPO, a dense rho, or a factored rho = U U^T / r. Marginals and box
 * probabilities need the MPO (dense models build an exact one).
 */
class BornModel {
 public:
  static BornModel from_mpo(MPO mpo, const Basis& basis);
  static BornModel from_dense(const Eigen::MatrixXd& rho, const Basis& basis, int D);
  static BornModel from_factors(const Eigen::MatrixXd& U, const Basis& basis, int D);

  int dim() const { return D_; }
  const Basis& basis() const { return basis_; }
  bool has_mpo() const { return mpo_.has_value(); }
  bool has_dense() const { return rho_.has_value(); }
  const MPO& mpo() const;
  const Eigen::MatrixXd& dense() const;
  double trace() const;

  double eval(std::span<const double> x) const;
  /// q at every row of X (one point per row).
  Eigen::VectorXd eval_batch(const Eigen::MatrixXd& X) const;
  LogValue log(std::span<const double> x, double floor = 1e-300) const;
  ScoreValue score(std::span<const double> x, double floor = 1e-300) const;
  /// Marginal density of the coordinates in S (strictly increasing) at x_S.
  double marginal(const std::vector<int>& S, std::span<const double> x_S) const;
  /// Probability of the product of intervals over S; other coordinates free.
  BoxProbability box_probability(const std::vector<int>& S, const std::vector<Interval>& box) const;

 private:
  BornModel(const Basis& basis, int D) : basis_(basis), D_(D) {}
  Eigen::VectorXd features(std::span<const double> x, int deriv) const;

  Basis basis_;
  int D_;
  std::optional<MPO> mpo_;
  std::optional<Eigen::MatrixXd> rho_;
  std::optional<Eigen::MatrixXd> factors_;  // columns scaled by 1/sqrt(r)
};

/// rho = U U^T / r: dense when K^D fits the dense cap, factored otherwise.
BornModel density_from_ground(const GroundSpace& gs, const Basis& basis, int D);

}  // namespace mpobm
