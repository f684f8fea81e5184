#include "mpobm/divergence.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "mpobm/errors.hpp"
#include "mpobm/parallel.hpp"
#include "mpobm/rng.hpp"

namespace mpobm {

namespace {

constexpr std::size_t kChunk = 256;
constexpr double kHeavyWeight = 1e6;

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t clamps = 0;
  double max_weight = 0.0;
};

// Per-sample statistic over target draws, reduced in fixed chunk order.
// stat(x, q(x), moments) sees the model density evaluated batch-wise.
template <typename Stat>
DivergenceEstimate estimate(const ScoreTarget& target, const BornModel& model, std::size_t n, std::uint64_t seed,
                            Stat&& stat) {
  if (n < 1) throw ConfigError("divergence estimate needs n >= 1");
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  Moments total;
  ordered_reduce<Moments>(
      n_chunks,
      [&](std::size_t c) {
        const std::size_t m = std::min(kChunk, n - c * kChunk);
        Rng rng = make_stream(seed, c);
        const Eigen::MatrixXd X = target.sample(m, rng);
        const Eigen::VectorXd q = model.eval_batch(X);
        Moments part;
        std::vector<double> x(X.cols());
        for (std::size_t i = 0; i < m; ++i) {
          for (Eigen::Index d = 0; d < X.cols(); ++d) x[d] = X(static_cast<Eigen::Index>(i), d);
          const double v = stat(x, q[static_cast<Eigen::Index>(i)], part);
          part.sum += v;
          part.sum_sq += v * v;
        }
        return part;
      },
      [&](Moments&& p) {
        total.sum += p.sum;
        total.sum_sq += p.sum_sq;
        total.clamps += p.clamps;
        total.max_weight = std::max(total.max_weight, p.max_weight);
      });
  DivergenceEstimate out;
  out.n = n;
  out.seed = seed;
  out.value = total.sum / static_cast<double>(n);
  const double var = n > 1 ? std::max(0.0, (total.sum_sq - n * out.value * out.value) / static_cast<double>(n - 1)) : 0.0;
  out.std_error = std::sqrt(var / static_cast<double>(n));
  out.clamps = total.clamps;
  out.max_weight = total.max_weight;
  out.heavy_tail = total.max_weight > kHeavyWeight;
  return out;
}

void check_dims(const ScoreTarget& target, const BornModel& model) {
  if (target.dim() != model.dim()) throw ContractViolation("target and model dimensions differ");
}

}  // namespace

DivergenceEstimate forward_kl(const ScoreTarget& target, const BornModel& model, std::size_t n, std::uint64_t seed,
                              double floor) {
  check_dims(target, model);
  return estimate(target, model, n, seed, [&](const std::vector<double>& x, double q, Moments& m) {
    if (!(q > floor)) ++m.clamps;
    return target.log_density(x) - std::log(q > floor ? q : floor);
  });
}

DivergenceEstimate fisher_divergence(const ScoreTarget& target, const BornModel& model, std::size_t n,
                                     std::uint64_t seed) {
  check_dims(target, model);
  return estimate(target, model, n, seed, [&](const std::vector<double>& x, double q, Moments& m) {
    const double w = std::max(q, 0.0) / std::exp(target.log_density(x));
    m.max_weight = std::max(m.max_weight, w);
    if (w == 0.0) return 0.0;
    const auto sq = model.score(x);
    if (!sq.reliable) ++m.clamps;
    return w * (sq.grad - target.score(x)).squaredNorm();
  });
}

DivergenceEstimate reverse_kl(const ScoreTarget& target, const BornModel& model, std::size_t n, std::uint64_t seed,
                              double floor) {
  check_dims(target, model);
  return estimate(target, model, n, seed, [&](const std::vector<double>& x, double q, Moments& m) {
    if (!(q > floor)) {
      ++m.clamps;
      return 0.0;  // q ~ 0 contributes nothing to an expectation under q
    }
    const double lp = target.log_density(x);
    const double lq = std::log(q);
    const double w = std::exp(lq - lp);
    m.max_weight = std::max(m.max_weight, w);
    return w * (lq - lp);
  });
}

double trace_energy(const Eigen::MatrixXd& U, const HamiltonianRep& H) {
  if (U.cols() < 1) throw ContractViolation("trace_energy: empty U");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < U.cols(); ++i) {
    const Eigen::VectorXd u = U.col(i);
    acc += u.dot(apply_H(H, u));
  }
  return acc / static_cast<double>(U.cols());
}

double trace_energy(const GroundSpace& gs, const HamiltonianRep& H) { return trace_energy(gs.U, H); }

LsiReport lsi_check(const ScoreTarget& target, const BornModel& model, std::size_t n, std::uint64_t seed) {
  if (target.kind() != TargetKind::gaussian_tridiag) throw ContractViolation("lsi_check needs a gaussian target");
  LsiReport rep;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(target.precision(), Eigen::EigenvaluesOnly);
  rep.c = es.eigenvalues().minCoeff();
  rep.kl = reverse_kl(target, model, n, seed);
  rep.fisher = fisher_divergence(target, model, n, seed);
  const double se = std::sqrt(rep.kl.std_error * rep.kl.std_error + std::pow(rep.fisher.std_error / (2.0 * rep.c), 2));
  rep.tolerance = 3.0 * se + 1e-12;  // slack for rounding when both sides vanish
  rep.satisfied = rep.kl.value <= rep.fisher.value / (2.0 * rep.c) + rep.tolerance;
  return rep;
}

void write_divergence_csv(std::ostream& os, const std::vector<std::pair<std::string, DivergenceEstimate>>& rows) {
  os << "metric,value,stderr,n,seed,clamps\n" << std::setprecision(17);
  for (const auto& [name, e] : rows) {
    os << name << ',' << e.value << ',' << e.std_error << ',' << e.n << ',' << e.seed << ',' << e.clamps << '\n';
  }
}

}  // namespace mpobm
