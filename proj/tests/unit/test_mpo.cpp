#include <doctest.h>

#include <climits>
#include <cmath>
#include <filesystem>

#include "mpobm/errors.hpp"
#include "mpobm/mpo.hpp"
#include "mpobm/quadrature.hpp"

using namespace mpobm;

namespace {

Eigen::MatrixXd random_orthonormal(Eigen::Index n, Eigen::Index r, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd A(n, r);
  for (auto& v : A.reshaped()) v = normal(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ() * Eigen::MatrixXd::Identity(n, r);
}

// Ground space of an estimated Hamiltonian: the kind of rho the pipeline produces.
Eigen::MatrixXd fitted_rho(const Basis& b, TargetKind kind, int D, int r, std::uint64_t seed = 43) {
  SamplingPlan plan;
  plan.budget = 2000;
  plan.seed = seed;
  const auto gs = ground_space(estimate_H_global(b, ScoreTarget::make(kind, D), plan), r);
  return gs.U * gs.U.transpose() / r;
}

std::vector<double> random_point(int D, Rng& rng, double sd = 1.2) {
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<double> x(D);
  for (auto& v : x) v = normal(rng);
  return x;
}

}  // namespace

TEST_CASE("dense bond bound") {
  CHECK(dense_bond_bound(4, 5, 1) == 16);
  CHECK(dense_bond_bound(4, 5, 2) == 256);
  CHECK(dense_bond_bound(4, 5, 3) == 256);
  CHECK(dense_bond_bound(2, 3, 2) == 4);
  CHECK_THROWS_AS(dense_bond_bound(2, 3, 3), ContractViolation);
}

TEST_CASE("product operators have unit bonds") {
  const int K = 3, D = 4;
  const auto N = state_dim(K, D);
  const auto c = to_mpo(Eigen::MatrixXd::Identity(N, N) / double(N), K, D, 1e-6, 256);
  CHECK(c.mpo.max_bond() == 1);
  CHECK(c.report.frobenius_error < 1e-14);

  Rng rng(3);
  Eigen::MatrixXd rho = Eigen::MatrixXd::Ones(1, 1);
  for (int d = 0; d < D; ++d) {
    const Eigen::VectorXd v = random_orthonormal(K, 1, rng);
    const Eigen::MatrixXd f = v * v.transpose();
    Eigen::MatrixXd next(rho.rows() * K, rho.cols() * K);
    for (Eigen::Index a = 0; a < rho.rows(); ++a)
      for (Eigen::Index b2 = 0; b2 < rho.cols(); ++b2) next.block(a * K, b2 * K, K, K) = rho(a, b2) * f;
    rho = next;
  }
  const auto p = to_mpo(rho, K, D, 1e-6, 256);
  for (int b : p.report.bonds) CHECK(b == 1);
  CHECK(p.report.frobenius_error <= 1e-12);
}

TEST_CASE("untruncated compression is exact") {
  Rng rng(5);
  const int K = 2, D = 5;
  const Eigen::MatrixXd U = random_orthonormal(32, 3, rng);
  const Eigen::MatrixXd rho = U * U.transpose() / 3.0;
  const auto c = to_mpo(rho, K, D, 0.0, INT_MAX);
  CHECK((to_dense(c.mpo) - rho).cwiseAbs().maxCoeff() < 1e-13);
  for (int cut = 1; cut < D; ++cut) CHECK(c.mpo.bonds[cut] <= dense_bond_bound(K, D, cut));
  CHECK(c.mpo.trace() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("compression fidelity and monotone bonds") {
  for (auto [kind, D, K, r] : {std::tuple{TargetKind::gaussian_tridiag, 4, 3, 2}, std::tuple{TargetKind::ring, 3, 4, 1},
                               std::tuple{TargetKind::funnel, 5, 2, 2}}) {
    const Basis b = Basis::hermite(K, std::sqrt(2.0));
    const Eigen::MatrixXd rho = fitted_rho(b, kind, D, r);
    int last = 0;
    for (double err : {1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8}) {
      const auto c = to_mpo(rho, K, D, err, 256);
      CHECK(c.report.frobenius_error <= 10.0 * std::sqrt(double(D)) * err * rho.norm());
      CHECK(c.report.max_bond >= last);
      last = c.report.max_bond;
    }
  }
}

TEST_CASE("bond cap is honoured and flagged") {
  Rng rng(9);
  const Eigen::MatrixXd U = random_orthonormal(64, 4, rng);
  const auto c = to_mpo(U * U.transpose() / 4.0, 2, 6, 1e-12, 3);
  CHECK(c.report.cap_hit);
  CHECK(c.report.max_bond <= 3);
  CHECK_THROWS_AS(to_mpo(U * U.transpose(), 2, 6, -1.0, 3), ConfigError);
  CHECK_THROWS_AS(to_mpo(U * U.transpose(), 2, 6, 1e-6, 0), ConfigError);
}

TEST_CASE("factored compression matches the dense path") {
  Rng rng(12);
  const int K = 3, D = 4;
  const Eigen::MatrixXd U = random_orthonormal(81, 2, rng);
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(2, 0.5);
  const auto f = to_mpo_factored(U, w, K, D, 1e-10, 256);
  const Eigen::MatrixXd rho = U * U.transpose() / 2.0;
  CHECK((to_dense(f.mpo) - rho).norm() < 1e-9);
  CHECK_FALSE(f.report.error_is_bound);
  const auto d = to_mpo(rho, K, D, 1e-10, 256);
  CHECK(f.mpo.bonds == d.mpo.bonds);
}

TEST_CASE("density from a ground space") {
  const Basis b = Basis::hermite(2);
  GroundSpace gs{Eigen::MatrixXd::Identity(2, 1), Eigen::VectorXd::Zero(1), 1};
  const auto q = density_from_ground(gs, b, 1);
  CHECK(q.trace() == doctest::Approx(1.0).epsilon(1e-14));
  const auto rule = gauss_legendre(200, -12.0, 12.0);
  double total = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double x = rule.nodes[i];
    total += rule.weights[i] * q.eval({&x, 1});
    CHECK(q.eval({&x, 1}) == doctest::Approx(std::exp(-x * x) / std::sqrt(M_PI)).epsilon(1e-13));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));

  Rng rng(2);
  const Eigen::MatrixXd U = random_orthonormal(27, 3, rng);
  const auto m = density_from_ground(GroundSpace{U, Eigen::VectorXd::Zero(3), 3}, Basis::hermite(3), 3);
  CHECK(m.trace() == doctest::Approx(1.0).epsilon(1e-14));
  for (int i = 0; i < 100; ++i) CHECK(m.eval(random_point(3, rng)) >= 0.0);
}

TEST_CASE("dense and compressed models agree") {
  const Basis b = Basis::hermite(3, std::sqrt(2.0));
  const Eigen::MatrixXd rho = fitted_rho(b, TargetKind::gmm3, 4, 2);
  const auto dense = BornModel::from_dense(rho, b, 4);
  const auto comp = BornModel::from_mpo(to_mpo(rho, 3, 4, 1e-6, 256).mpo, b);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_point(4, rng);
    const double qd = dense.eval(x), qm = comp.eval(x);
    CHECK(std::abs(qd - qm) <= 1e-6 * std::abs(qd) + 1e-14);
  }
}

TEST_CASE("product model evaluates to the product density") {
  const Basis b = Basis::hermite(3);
  Eigen::MatrixXd rho = Eigen::MatrixXd::Zero(27, 27);
  rho(0, 0) = 1.0;
  const auto m = BornModel::from_dense(rho, b, 3);
  const auto c = BornModel::from_mpo(m.mpo(), b);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_point(3, rng);
    double expect = 1.0;
    for (double v : x) expect *= std::exp(-v * v) / std::sqrt(M_PI);
    CHECK(m.eval(x) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(c.eval(x) == doctest::Approx(expect).epsilon(1e-12));
  }
  const double zero[3] = {0, 0, 0};
  CHECK(c.score(zero).grad.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("Monte Carlo mass over the box") {
  const Basis b = Basis::hermite(2, std::sqrt(2.0));
  const auto m = BornModel::from_mpo(to_mpo(fitted_rho(b, TargetKind::gaussian_tridiag, 3, 1), 2, 3, 1e-6, 256).mpo, b);
  Rng rng(6);
  std::uniform_real_distribution<double> unif(-5.0, 5.0);
  const int n = 200000;
  double s = 0, ss = 0;
  for (int i = 0; i < n; ++i) {
    const double x[3] = {unif(rng), unif(rng), unif(rng)};
    const double v = 1000.0 * m.eval(x);
    s += v;
    ss += v * v;
  }
  const double mean = s / n, se = std::sqrt((ss / n - mean * mean) / n);
  CHECK(std::abs(mean - 1.0) <= 3.0 * se);
}

TEST_CASE("marginals and box probabilities") {
  const Basis b = Basis::hermite(3, std::sqrt(2.0));
  const double inf = std::numeric_limits<double>::infinity();
  Rng rng(10);
  const Eigen::MatrixXd U = random_orthonormal(27, 2, rng);
  const auto m = BornModel::from_mpo(to_mpo(U * U.transpose() / 2.0, 3, 3, 1e-8, 256).mpo, b);

  SUBCASE("full subset is the density, empty box is the trace") {
    const auto x = random_point(3, rng);
    CHECK(m.marginal({0, 1, 2}, x) == doctest::Approx(m.eval(x)).epsilon(1e-13));
    CHECK(m.box_probability({}, {}).value == doctest::Approx(1.0).epsilon(1e-12));
    const auto full = m.box_probability({0, 1, 2}, {{-inf, inf}, {-inf, inf}, {-inf, inf}});
    CHECK(std::abs(full.value - 1.0) <= 1e-8);
    CHECK_FALSE(full.clipped);
  }
  SUBCASE("single-coordinate marginal against 2-D quadrature") {
    const auto rule = gauss_legendre(120, -14.0, 14.0);
    for (double x0 : {-1.3, 0.2, 2.1}) {
      double acc = 0.0;
      for (int i = 0; i < 120; ++i)
        for (int k = 0; k < 120; ++k) {
          const double x[3] = {x0, rule.nodes[i], rule.nodes[k]};
          acc += rule.weights[i] * rule.weights[k] * m.eval(x);
        }
      CHECK(std::abs(m.marginal({0}, {&x0, 1}) - acc) <= 1e-6);
    }
  }
  SUBCASE("nested marginals are consistent") {
    const std::vector<Interval> inner{{-0.7, 1.4}};
    const double a = m.box_probability({1}, inner).value;
    const double b3 = m.box_probability({0, 1}, {{-inf, inf}, {-0.7, 1.4}}).value;
    const double c = m.box_probability({0, 1, 2}, {{-inf, inf}, {-0.7, 1.4}, {-inf, inf}}).value;
    CHECK(std::abs(a - b3) <= 1e-8);
    CHECK(std::abs(a - c) <= 1e-8);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(m.box_probability({0}, {{1.0, 0.0}}), InputError);
    CHECK_THROWS_AS(m.box_probability({1, 0}, {{0.0, 1.0}, {0.0, 1.0}}), InputError);
    CHECK_THROWS_AS(m.marginal({}, {}), InputError);
  }
}

TEST_CASE("box probability against quadrature") {
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd e0 = Eigen::MatrixXd::Zero(3, 3);
  e0(0, 0) = 1.0;
  const auto m1 = BornModel::from_dense(e0, Basis::hermite(3), 1);
  CHECK(m1.box_probability({0}, {{-inf, 0.0}}).value == doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(21);
  const Basis b = Basis::hermite(3);
  const Eigen::MatrixXd U = random_orthonormal(9, 4, rng);
  Eigen::VectorXd w(4);
  w << 0.4, 0.3, 0.2, 0.1;
  const auto m = BornModel::from_dense(U * w.asDiagonal() * U.transpose(), b, 2);
  const auto rule = gauss_legendre(80, -1.0, 1.0);
  double acc = 0.0;
  for (int i = 0; i < 80; ++i)
    for (int k = 0; k < 80; ++k) {
      const double x[2] = {rule.nodes[i], rule.nodes[k]};
      acc += rule.weights[i] * rule.weights[k] * m.eval(x);
    }
  CHECK(std::abs(m.box_probability({0, 1}, {{-1, 1}, {-1, 1}}).value - acc) <= 1e-6);
}

TEST_CASE("model scores") {
  const Basis b = Basis::hermite(3, std::sqrt(2.0));
  const Eigen::MatrixXd rho = fitted_rho(b, TargetKind::xshape, 3, 2);
  const auto comp = BornModel::from_mpo(to_mpo(rho, 3, 3, 1e-6, 256).mpo, b);
  const auto dense = BornModel::from_dense(rho, b, 3);
  Rng rng(30);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_point(3, rng);
    for (const BornModel* m : {&comp, &dense}) {
      const auto s = m->score(x);
      CHECK(s.reliable);
      for (int d = 0; d < 3; ++d) {
        auto xp = x, xm = x;
        const double h = 1e-5;
        xp[d] += h;
        xm[d] -= h;
        const double fd = (m->log(xp).value - m->log(xm).value) / (2 * h);
        CHECK(std::abs(fd - s.grad[d]) <= 1e-5 * std::max(1.0, std::abs(s.grad[d])));
      }
    }
  }
  // rank one: 2 grad <theta, Phi> / <theta, Phi>
  const Eigen::VectorXd theta = random_orthonormal(27, 1, rng);
  const auto r1 = BornModel::from_dense(theta * theta.transpose(), b, 3);
  const auto x = random_point(3, rng);
  const Eigen::VectorXd p0 = b.phi(x[0]), p1 = b.phi(x[1]), p2 = b.phi(x[2]);
  const Eigen::VectorXd d0 = b.phi_dot(x[0]), d1 = b.phi_dot(x[1]), d2 = b.phi_dot(x[2]);
  double psi = 0, g[3] = {0, 0, 0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        const double t = theta[(i * 3 + j) * 3 + k];
        psi += t * p0[i] * p1[j] * p2[k];
        g[0] += t * d0[i] * p1[j] * p2[k];
        g[1] += t * p0[i] * d1[j] * p2[k];
        g[2] += t * p0[i] * p1[j] * d2[k];
      }
  const auto s = r1.score(x);
  for (int d = 0; d < 3; ++d) CHECK(s.grad[d] == doctest::Approx(2 * g[d] / psi).epsilon(1e-10));
}

TEST_CASE("log clamps at the floor") {
  Eigen::MatrixXd e0 = Eigen::MatrixXd::Zero(2, 2);
  e0(0, 0) = 1.0;
  const auto m = BornModel::from_dense(e0, Basis::hermite(2), 1);
  const double far = 40.0;
  const auto l = m.log({&far, 1});
  CHECK(l.clamped);
  CHECK(l.value == doctest::Approx(std::log(1e-300)));
  CHECK_FALSE(m.score({&far, 1}).reliable);
}

TEST_CASE("MPO files round-trip") {
  Rng rng(17);
  const Eigen::MatrixXd U = random_orthonormal(64, 2, rng);
  const auto c = to_mpo(U * U.transpose() / 2.0, 4, 3, 1e-6, 256);
  const auto path = std::filesystem::temp_directory_path() / "mpobm_test_mpo.bin";
  save_mpo(c, path, 43);
  const auto back = load_mpo(path);
  CHECK(back.mpo.bonds == c.mpo.bonds);
  CHECK(back.mpo.cores == c.mpo.cores);
  CHECK(back.report.frobenius_error == c.report.frobenius_error);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}
