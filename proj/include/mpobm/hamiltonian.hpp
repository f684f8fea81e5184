#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mpobm/basis.hpp"
#include "mpobm/targets.hpp"

namespace mpobm {

/// Largest K^D for which dense K^D x K^D matrices are built.
inline constexpr std::int64_t kDenseCap = 4096;

enum class EstimatorKind { exact, global, local };

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(const std::string& name);

/// K^D, throwing SizeError past cap (cap <= 0 disables the check).
std::int64_t state_dim(int K, int D, std::int64_t cap = kDenseCap);

struct SamplingPlan {
  std::uint64_t budget = 0;     ///< score queries
  double box_halfwidth = 5.0;   ///< draws are uniform on [-h, h]^C
  std::uint64_t seed = 43;
  bool sample_h3 = false;       ///< local only: estimate the derivative-gram term from samples
  int chunk = 128;              ///< global only: samples per RNG stream / GEMM batch

  double box_length() const { return 2.0 * box_halfwidth; }
  /// Per-edge sample counts: budget split evenly, remainder to the first edges.
  std::vector<std::uint64_t> edge_counts(int n_edges) const;
};

/// Term acting on contiguous sites [lo, hi] with identity elsewhere.
struct LocalTerm {
  int lo = 0;
  int hi = 0;
  std::vector<int> coords;  ///< coordinates sampled to build the block (empty if deterministic)
  Eigen::MatrixXd block;    ///< K^w x K^w, w = hi - lo + 1
  double coefficient = 1.0;
  std::string family;       ///< "score2", "cross", "dgram"

  int width() const { return hi - lo + 1; }
};

struct DenseH {
  Eigen::MatrixXd matrix;
};

struct LocalSum {
  std::vector<LocalTerm> terms;
};

struct HamiltonianMeta {
  int D = 0;
  int K = 0;
  EstimatorKind estimator = EstimatorKind::exact;
  std::uint64_t queries = 0;
  std::uint64_t budget = 0;
  double box_halfwidth = 5.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

struct HamiltonianRep {
  std::variant<DenseH, LocalSum> data;
  HamiltonianMeta meta;

  bool is_dense() const { return std::holds_alternative<DenseH>(data); }
  const Eigen::MatrixXd& dense() const;
  const LocalSum& local() const;
  std::int64_t dim() const;
};

/// Integrand pieces at a single point; only for small K^D.
struct PointBlocks {
  Eigen::MatrixXd h1;  ///< |s|^2 Phi Phi^T
  Eigen::MatrixXd h2;  ///< Phi g^T + g Phi^T, g = sum_j s_j dPhi_j
  Eigen::MatrixXd h3;  ///< sum_j dPhi_j dPhi_j^T
};

PointBlocks h_blocks_at(const Basis& basis, const ScoreTarget& target, std::span<const double> x);

struct QuadratureHOptions {
  int nodes = 64;               ///< Gauss-Legendre nodes per coordinate
  double box_halfwidth = 5.0;
};

/// Tensor-product quadrature of the integrand over [-h, h]^D; the reference
/// Hamiltonian for tests. Adds a warning to meta when an eigenvalue falls
/// below -1e-6 * ||H||.
HamiltonianRep exact_H_quadrature(const Basis& basis, const ScoreTarget& target, const QuadratureHOptions& opts = {});

/// Uniform importance sampling of the full integrand.
HamiltonianRep estimate_H_global(const Basis& basis, const ScoreTarget& target, const SamplingPlan& plan);

/// One clique window per coordinate; each sample costs one local score query.
HamiltonianRep estimate_H_local(const Basis& basis, const ScoreTarget& target, const SamplingPlan& plan);

Eigen::MatrixXd assemble_dense(const LocalSum& local, int K, int D);
Eigen::VectorXd apply_H(const LocalSum& local, int K, int D, const Eigen::VectorXd& v);
/// Dense or matrix-free product, whichever the representation holds.
Eigen::VectorXd apply_H(const HamiltonianRep& H, const Eigen::VectorXd& v);
/// Dense matrix for either representation (SizeError past the cap).
Eigen::MatrixXd to_dense(const HamiltonianRep& H);

/// Binary payload at path plus JSON sidecar at path + ".json".
void save_hamiltonian(const HamiltonianRep& H, const std::filesystem::path& path);
HamiltonianRep load_hamiltonian(const std::filesystem::path& path);

}  // namespace mpobm
