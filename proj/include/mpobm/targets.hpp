#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mpobm/rng.hpp"
#include "mpobm/span.hpp"

namespace mpobm {

enum class TargetKind { gaussian_tridiag, gmm3, xshape, ring, funnel };

std::string to_string(TargetKind kind);
TargetKind target_kind_from_string(const std::string& name);
const std::vector<TargetKind>& all_target_kinds();

struct TargetParams {
  double sigma_aug = 0.5;  ///< lifting-chain noise
  double offdiag = 0.3;    ///< tridiagonal precision off-diagonal
  double diag = 1.0;       ///< tridiagonal precision diagonal
};

void to_json(nlohmann::json& j, const TargetParams& p);
void from_json(const nlohmann::json& j, TargetParams& p);

/// Fixed bank of smooth scalar maps used by the lifting chain, in the order
/// +f, -f for f in {sin x, cos x, sin 2x, cos 2x, sigmoid(4x)-1/2, tanh 2x,
/// tanh 4x, sin x tanh x, cos x tanh x, x/(1+x^2)}, each scaled by 1.5.
struct FunctionBank {
  static constexpr int size = 20;
  static double value(int index, double x);
  static double derivative(int index, double x);
  /// Map h_i (1-based chain position) -> bank index, cycling.
  static int index_for_link(int link) { return (link - 1) % size; }
};

/// Monotone, thread-safe query counter that copies by value.
class QueryCounter {
 public:
  QueryCounter() = default;
  QueryCounter(const QueryCounter& other) : count_(other.load()) {}
  QueryCounter& operator=(const QueryCounter& other) {
    count_.store(other.load());
    return *this;
  }
  void add(std::uint64_t n = 1) const { count_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t load() const { return count_.load(std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> count_{0};
};

/**
 * Queryable target density on R^D.
 *
 * gaussian_tridiag lives directly in D dimensions. The other kinds are 2-D
 * base densities over (x1, x2) lifted by z_0 = x2, z_i ~ N(h_i(z_{i-1}),
 * sigma_aug^2), i = 1..D-2. Every score component depends only on its
 * clique_map entry, a subset of {j-1, j, j+1}.
 *
 * score() and local_score() each count one query.
 */
class ScoreTarget {
 public:
  static ScoreTarget make(TargetKind kind, int D, const TargetParams& params = {});

  int dim() const { return D_; }
  TargetKind kind() const { return kind_; }
  const TargetParams& params() const { return params_; }
  const std::vector<std::vector<int>>& clique_map() const { return cliques_; }

  /// Precision matrix (gaussian_tridiag only).
  const Eigen::MatrixXd& precision() const;

  double log_density(std::span<const double> x) const;
  Eigen::VectorXd score(std::span<const double> x) const;
  /// Component j of the score from the values of clique_map()[j], in order.
  double local_score(int j, std::span<const double> clique_values) const;

  /// n exact i.i.d. samples as rows.
  Eigen::MatrixXd sample(std::size_t n, Rng& rng) const;

  std::uint64_t queries() const { return counter_.load(); }

 private:
  ScoreTarget() = default;

  double score_component(int j, const double* x) const;
  void base_log_and_grad(double x1, double x2, double* logp, double* g1, double* g2) const;
  void sample_base(Rng& rng, double& x1, double& x2) const;

  TargetKind kind_ = TargetKind::gaussian_tridiag;
  int D_ = 0;
  TargetParams params_;
  std::vector<std::vector<int>> cliques_;
  Eigen::MatrixXd precision_;
  Eigen::MatrixXd sample_factor_;  // solves L^T y = eps for the gaussian
  double gaussian_log_norm_ = 0.0;
  QueryCounter counter_;
};

}  // namespace mpobm
