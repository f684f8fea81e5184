#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mpobm/hamiltonian.hpp"
#include "mpobm/mpo.hpp"
#include "mpobm/targets.hpp"

namespace mpobm {

struct DivergenceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  std::size_t clamps = 0;     ///< samples where log q hit the floor
  std::uint64_t seed = 0;
  double max_weight = 0.0;    ///< largest q/p importance weight (reweighted estimators)
  bool heavy_tail = false;    ///< some weight exceeded 1e6
};

/// (1/n) sum [log p(x) - log q(x)], x ~ p.
DivergenceEstimate forward_kl(const ScoreTarget& target, const BornModel& model, std::size_t n, std::uint64_t seed,
                              double floor = 1e-300);

/// E_q |grad log q - grad log p|^2 by reweighting target samples with q/p.
/// Calls the target score once per sample.
DivergenceEstimate fisher_divergence(const ScoreTarget& target, const BornModel& model, std::size_t n,
                                     std::uint64_t seed);

/// E_q [log q - log p] by reweighting target samples with q/p.
DivergenceEstimate reverse_kl(const ScoreTarget& target, const BornModel& model, std::size_t n, std::uint64_t seed,
                              double floor = 1e-300);

/// tr(U^T H U) / r.
double trace_energy(const Eigen::MatrixXd& U, const HamiltonianRep& H);
double trace_energy(const GroundSpace& gs, const HamiltonianRep& H);

struct LsiReport {
  DivergenceEstimate kl;      ///< reverse KL D(q || p)
  DivergenceEstimate fisher;
  double c = 0.0;             ///< smallest eigenvalue of the precision
  double tolerance = 0.0;     ///< 3 * combined standard error
  bool satisfied = false;
};

/// Checks D(q||p) <= D_F(q||p) / (2c) for a gaussian target.
LsiReport lsi_check(const ScoreTarget& target, const BornModel& model, std::size_t n, std::uint64_t seed);

/// Rows "metric,value,stderr,n,seed,clamps".
void write_divergence_csv(std::ostream& os, const std::vector<std::pair<std::string, DivergenceEstimate>>& rows);

}  // namespace mpobm
