#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gaussian_oracle.hpp"
#include "mpobm/errors.hpp"
#include "mpobm/spectral.hpp"

using namespace mpobm;

namespace {

Eigen::MatrixXd random_orthogonal(int n, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd A(n, n);
  for (auto& v : A.reshaped()) v = normal(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
}

double trace_norm(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().sum();
}

}  // namespace

TEST_CASE("ground state of the squared ground function is e0") {
  TargetParams p;
  p.diag = 2.0;
  p.offdiag = 0.0;
  const auto H = exact_H_quadrature(Basis::hermite(2), ScoreTarget::make(TargetKind::gaussian_tridiag, 1, p));
  const auto gs = ground_space(H, 1);
  CHECK(std::abs(gs.eigenvalues[0]) < 1e-6);
  CHECK(std::abs(gs.U(0, 0)) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("identity has a flat ground space") {
  const auto gs = ground_space_dense(Eigen::MatrixXd::Identity(6, 6), 3);
  CHECK((gs.eigenvalues.array() - 1.0).abs().maxCoeff() < 1e-14);
  CHECK((gs.U.transpose() * gs.U - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(ground_space_dense(Eigen::MatrixXd::Identity(4, 4), 5), ConfigError);
  CHECK_THROWS_AS(ground_space_dense(Eigen::MatrixXd::Identity(4, 4), 0), ConfigError);
}

TEST_CASE("dense eigenpairs have small residuals") {
  const Basis b = Basis::hermite(3, std::sqrt(2.0));
  const auto t = ScoreTarget::make(TargetKind::ring, 3);
  SamplingPlan plan;
  plan.budget = 500;
  const auto H = estimate_H_global(b, t, plan);
  const auto gs = ground_space(H, 5);
  const double hn = spectral_report(H.dense(), 27).lambda_max;
  for (int i = 0; i < 5; ++i) {
    CHECK((H.dense() * gs.U.col(i) - gs.eigenvalues[i] * gs.U.col(i)).norm() <= 1e-8 * hn);
    CHECK(gs.U.col(i).dot(H.dense() * gs.U.col(i)) == doctest::Approx(gs.eigenvalues[i]).epsilon(1e-8));
  }
  for (int i = 1; i < 5; ++i) CHECK(gs.eigenvalues[i] >= gs.eigenvalues[i - 1]);
}

TEST_CASE("Lanczos agrees with the dense solver") {
  struct Case {
    int D, K, r;
    TargetKind kind;
    std::uint64_t budget;
  };
  for (const Case& c : {Case{3, 2, 1, TargetKind::gaussian_tridiag, 3000}, Case{3, 2, 2, TargetKind::funnel, 3000},
                        Case{5, 4, 2, TargetKind::gaussian_tridiag, 5000}, Case{4, 3, 3, TargetKind::xshape, 800}}) {
    const Basis b = Basis::hermite(c.K, std::sqrt(2.0));
    const auto t = ScoreTarget::make(c.kind, c.D);
    SamplingPlan plan;
    plan.budget = c.budget;
    const auto H = estimate_H_local(b, t, plan);
    const auto it = ground_space(H, c.r);
    const auto de = ground_space_dense(to_dense(H), c.r);
    CHECK((it.eigenvalues - de.eigenvalues).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(principal_angles(it.U, de.U).maxCoeff() <= 1e-6);
    CHECK((it.U.transpose() * it.U - Eigen::MatrixXd::Identity(c.r, c.r)).cwiseAbs().maxCoeff() < 1e-10);
    const auto again = ground_space(H, c.r);
    CHECK(again.U == it.U);
  }
}

TEST_CASE("Lanczos reports non-convergence") {
  Rng rng(5);
  const int n = 300;
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d[i] = 1.0 + 1e-3 * i;
  const Eigen::MatrixXd Q = random_orthogonal(n, rng);
  const Eigen::MatrixXd A = Q * d.asDiagonal() * Q.transpose();
  LanczosOptions opts;
  opts.krylov_dim = 12;
  opts.max_restarts = 1;
  opts.tol = 1e-14;
  CHECK_THROWS_AS(ground_space_lanczos([&](const Eigen::VectorXd& v) { return Eigen::VectorXd(A * v); }, n, 2, opts),
                  NumericalError);
}

TEST_CASE("relative gaps") {
  Eigen::MatrixXd H = Eigen::VectorXd::LinSpaced(6, 0.0, 5.0).asDiagonal();
  const auto rep = spectral_report(H, 100, 1);
  CHECK(rep.clipped);
  CHECK(rep.eigenvalues.size() == 6);
  CHECK(rep.rel_gaps.size() == 5);
  CHECK(rep.rel_gaps[0] == doctest::Approx(1e12));
  CHECK(rep.rel_gaps[1] == doctest::Approx(1.0 / (1.0 + 1e-12)).epsilon(1e-15));
  CHECK(rep.lambda_min == 0.0);
  CHECK(rep.lambda_max == 5.0);
  const auto flat = spectral_report(Eigen::MatrixXd::Identity(5, 5) * 2.0, 5, 2);
  CHECK(flat.rel_gaps.isZero(0.0));
  CHECK(flat.ground_gap_index == 1);
  CHECK_FALSE(flat.clipped);

  std::ostringstream os;
  write_gaps_csv(os, spectral_report(H, 3));
  CHECK(os.str() == "eig_index,lambda,rel_gap\n0,0,1000000000000\n1,1,0.99999999999899991\n2,2,\n");
}

TEST_CASE("ground projector is stable under gap-bounded perturbations") {
  Rng rng(8);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 12, r = 1 + trial % 3;
    const double gap = 0.5 + 0.1 * trial;
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i) d[i] = i < r ? 0.1 * i / r : 0.1 + gap + 0.3 * i;
    const Eigen::MatrixXd Q = random_orthogonal(n, rng);
    const Eigen::MatrixXd H = Q * d.asDiagonal() * Q.transpose();
    Eigen::MatrixXd E(n, n);
    for (auto& v : E.reshaped()) v = normal(rng);
    E = (E + E.transpose()).eval();
    const double eps = 0.25 * (d[r] - d[r - 1]);
    E *= eps / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(E).eigenvalues().cwiseAbs().maxCoeff();
    const auto a = ground_space_dense(H, r), b = ground_space_dense(H + E, r);
    const Eigen::MatrixXd diff = (a.U * a.U.transpose() - b.U * b.U.transpose()) / r;
    const double g = d[r] - d[r - 1];
    CHECK(trace_norm(diff) <= 2.0 * eps / (g - eps) + 1e-12);
  }
}

TEST_CASE("principal angles") {
  Eigen::MatrixXd U = Eigen::MatrixXd::Identity(4, 2);
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(4, 2);
  V(0, 0) = 1.0;
  V(1, 1) = std::cos(1e-7);
  V(2, 1) = std::sin(1e-7);
  const auto a = principal_angles(U, V);
  CHECK(a[0] < 1e-15);
  CHECK(a[1] == doctest::Approx(1e-7).epsilon(1e-8));
}
