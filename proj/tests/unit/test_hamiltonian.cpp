#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "gaussian_oracle.hpp"
#include "mpobm/errors.hpp"
#include "mpobm/hamiltonian.hpp"
#include "mpobm/parallel.hpp"
#include "mpobm/quadrature.hpp"

using namespace mpobm;

namespace {

double spec_norm(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double rel_err(const Eigen::MatrixXd& A, const Eigen::MatrixXd& ref) { return spec_norm(A - ref) / spec_norm(ref); }

// Fisher divergence of q = (theta^T Phi)^2 from the target by direct 2-D quadrature.
double fisher_direct(const Basis& b, const ScoreTarget& t, const Eigen::VectorXd& theta, double h) {
  const int K = b.size();
  const auto rule = gauss_legendre(80, -h, h);
  double acc = 0.0;
  for (int i = 0; i < 80; ++i) {
    for (int k = 0; k < 80; ++k) {
      const double x[2] = {rule.nodes[i], rule.nodes[k]};
      const Eigen::VectorXd p0 = b.phi(x[0]), p1 = b.phi(x[1]), d0 = b.phi_dot(x[0]), d1 = b.phi_dot(x[1]);
      double psi = 0, g0 = 0, g1 = 0;
      for (int a = 0; a < K; ++a)
        for (int c = 0; c < K; ++c) {
          const double th = theta[a * K + c];
          psi += th * p0[a] * p1[c];
          g0 += th * d0[a] * p1[c];
          g1 += th * p0[a] * d1[c];
        }
      const Eigen::VectorXd s = t.score(x);
      // q |grad log q - s|^2 with grad log q = 2 grad psi / psi
      const double r0 = 2 * g0 - s[0] * psi, r1 = 2 * g1 - s[1] * psi;
      acc += rule.weights[i] * rule.weights[k] * (r0 * r0 + r1 * r1);
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("point blocks") {
  const Basis b = Basis::hermite(2);
  const auto g = ScoreTarget::make(TargetKind::gaussian_tridiag, 2);
  const auto r = ScoreTarget::make(TargetKind::ring, 2);
  const double zero[2] = {0.0, 0.0};
  const auto at0 = h_blocks_at(b, g, zero);
  CHECK(at0.h1.isZero(0.0));
  CHECK(at0.h2.isZero(0.0));
  const double x[2] = {0.4, -1.2};
  CHECK(h_blocks_at(b, g, x).h3 == h_blocks_at(b, r, x).h3);
  CHECK_THROWS_AS(h_blocks_at(Basis::hermite(5), ScoreTarget::make(TargetKind::gaussian_tridiag, 6), std::vector<double>(6)),
                  SizeError);
}

TEST_CASE("quadrature H reproduces the Fisher divergence as a quadratic form") {
  const Basis b = Basis::hermite(3, std::sqrt(2.0));
  for (TargetKind kind : {TargetKind::gmm3, TargetKind::ring, TargetKind::gaussian_tridiag}) {
    const auto t = ScoreTarget::make(kind, 2);
    const auto H = exact_H_quadrature(b, t, {80, 5.0});
    CHECK(H.meta.warnings.empty());
    Rng rng(2);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 3; ++trial) {
      Eigen::VectorXd theta(9);
      for (auto& v : theta) v = normal(rng);
      theta.normalize();
      const double quad = theta.dot(H.dense() * theta);
      CHECK(quad == doctest::Approx(fisher_direct(b, t, theta, 5.0)).epsilon(1e-9));
    }
  }
}

TEST_CASE("quadrature H matches the closed-form gaussian oracle") {
  const Basis b = Basis::hermite(3, std::sqrt(2.0));
  const auto t = ScoreTarget::make(TargetKind::gaussian_tridiag, 3);
  const auto H = exact_H_quadrature(b, t, {64, 5.0});
  const Eigen::MatrixXd ref = oracle::gaussian_H(b, t.precision(), 5.0);
  CHECK((H.dense() - ref).cwiseAbs().maxCoeff() < 1e-9 * ref.cwiseAbs().maxCoeff());
  CHECK(H.meta.queries == 64u * 64u * 64u);
}

TEST_CASE("zero Fisher ground state for the squared ground function") {
  TargetParams p;
  p.diag = 2.0;
  p.offdiag = 0.0;
  const Basis b = Basis::hermite(2);
  for (int D : {1, 2}) {
    const auto t = ScoreTarget::make(TargetKind::gaussian_tridiag, D, p);
    const auto H = exact_H_quadrature(b, t);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H.dense());
    CHECK(std::abs(es.eigenvalues()[0]) < 1e-6);
    CHECK(std::abs(es.eigenvectors()(0, 0)) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(es.eigenvalues().minCoeff() > -1e-8);
  }
}

TEST_CASE("global estimator") {
  const Basis b = Basis::hermite(2, std::sqrt(2.0));
  const auto t = ScoreTarget::make(TargetKind::gaussian_tridiag, 2);
  SUBCASE("single sample is the scaled integrand") {
    SamplingPlan plan;
    plan.budget = 1;
    plan.seed = 99;
    const auto H = estimate_H_global(b, t, plan);
    Rng rng = make_stream(99, 0);
    std::uniform_real_distribution<double> unif(-5.0, 5.0);
    std::vector<double> x(2);
    for (auto& v : x) v = unif(rng);
    const auto blk = h_blocks_at(b, t, x);
    const Eigen::MatrixXd expect = 100.0 * (blk.h1 - 2.0 * blk.h2 + 4.0 * blk.h3);
    CHECK((H.dense() - expect).cwiseAbs().maxCoeff() < 1e-12 * expect.cwiseAbs().maxCoeff());
    CHECK(H.meta.queries == 1);
  }
  SUBCASE("deterministic across reruns and worker counts") {
    SamplingPlan plan;
    plan.budget = 3000;
    set_worker_count(1);
    const auto a = estimate_H_global(b, t, plan);
    set_worker_count(3);
    const auto c = estimate_H_global(b, t, plan);
    set_worker_count(0);
    CHECK(a.dense() == c.dense());
    CHECK(a.dense() == a.dense().transpose());
    CHECK(a.meta.queries == 3000);
  }
  SUBCASE("invalid budget") {
    CHECK_THROWS_AS(estimate_H_global(b, t, SamplingPlan{}), ConfigError);
  }
}

TEST_CASE("estimators are unbiased") {
  const Basis b = Basis::hermite(2, std::sqrt(2.0));
  const auto t2 = ScoreTarget::make(TargetKind::gaussian_tridiag, 2);
  const auto t3 = ScoreTarget::make(TargetKind::gaussian_tridiag, 3);
  const Eigen::MatrixXd ref2 = oracle::gaussian_H(b, t2.precision(), 5.0);
  const Eigen::MatrixXd ref3 = oracle::gaussian_H(b, t3.precision(), 5.0);

  auto stats = [](const std::vector<Eigen::MatrixXd>& draws, Eigen::MatrixXd& mean, Eigen::MatrixXd& se) {
    mean = Eigen::MatrixXd::Zero(draws[0].rows(), draws[0].cols());
    for (const auto& d : draws) mean += d;
    mean /= double(draws.size());
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(mean.rows(), mean.cols());
    for (const auto& d : draws) var += (d - mean).array().square().matrix();
    se = (var / double(draws.size() - 1) / double(draws.size())).cwiseSqrt();
  };
  auto within = [](const Eigen::MatrixXd& mean, const Eigen::MatrixXd& se, const Eigen::MatrixXd& ref) {
    return ((mean - ref).cwiseAbs().array() <= 3.0 * se.array() + 1e-9).all();
  };

  std::vector<Eigen::MatrixXd> g2, l2, g3, l3;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SamplingPlan plan;
    plan.budget = 2000;
    plan.seed = 1000 + seed;
    g2.push_back(estimate_H_global(b, t2, plan).dense());
    l2.push_back(to_dense(estimate_H_local(b, t2, plan)));
    g3.push_back(estimate_H_global(b, t3, plan).dense());
    l3.push_back(to_dense(estimate_H_local(b, t3, plan)));
  }
  Eigen::MatrixXd m, se;
  stats(g2, m, se);
  CHECK(within(m, se, ref2));
  stats(l2, m, se);
  CHECK(within(m, se, ref2));
  // local and global agree with each other at D = 3
  Eigen::MatrixXd mg, seg, ml, sel;
  stats(g3, mg, seg);
  stats(l3, ml, sel);
  const Eigen::MatrixXd comb = (seg.array().square() + sel.array().square()).sqrt().matrix();
  CHECK(((mg - ml).cwiseAbs().array() <= 3.0 * comb.array() + 1e-9).all());
  CHECK(within(ml, sel, ref3));
}

TEST_CASE("local estimator") {
  const Basis b = Basis::hermite(2, std::sqrt(2.0));
  const auto t = ScoreTarget::make(TargetKind::gaussian_tridiag, 3);
  SamplingPlan plan;
  plan.budget = 301;
  const auto H = estimate_H_local(b, t, plan);
  CHECK(H.meta.queries == 301);
  CHECK(plan.edge_counts(3) == std::vector<std::uint64_t>{101, 100, 100});
  for (const auto& term : H.local().terms) {
    CHECK(term.width() <= 3);
    CHECK(term.block == term.block.transpose());
  }
  SUBCASE("large sample count approaches the oracle") {
    SamplingPlan big;
    big.budget = 300000;
    const Eigen::MatrixXd ref = oracle::gaussian_H(b, t.precision(), 5.0);
    CHECK(rel_err(to_dense(estimate_H_local(b, t, big)), ref) < 0.05);
  }
  SUBCASE("sampled derivative-gram variant is also consistent") {
    SamplingPlan big;
    big.budget = 300000;
    big.sample_h3 = true;
    const Eigen::MatrixXd ref = oracle::gaussian_H(b, t.precision(), 5.0);
    CHECK(rel_err(to_dense(estimate_H_local(b, t, big)), ref) < 0.05);
  }
  SUBCASE("budget below the edge count") {
    SamplingPlan small;
    small.budget = 2;
    CHECK_THROWS_AS(estimate_H_local(b, t, small), ConfigError);
  }
  SUBCASE("worker count does not change the estimate") {
    set_worker_count(1);
    const auto a = to_dense(estimate_H_local(b, t, plan));
    set_worker_count(4);
    const auto c = to_dense(estimate_H_local(b, t, plan));
    set_worker_count(0);
    CHECK(a == c);
  }
}

TEST_CASE("local estimator beats global at fixed budget") {
  const Basis b = Basis::hermite(2, std::sqrt(2.0));
  const auto t = ScoreTarget::make(TargetKind::gaussian_tridiag, 5);
  const Eigen::MatrixXd ref = oracle::gaussian_H(b, t.precision(), 5.0);
  std::vector<double> eg, el;
  for (std::uint64_t seed = 43; seed < 48; ++seed) {
    SamplingPlan plan;
    plan.budget = 2000;
    plan.seed = seed;
    eg.push_back(rel_err(estimate_H_global(b, t, plan).dense(), ref));
    el.push_back(rel_err(to_dense(estimate_H_local(b, t, plan)), ref));
  }
  std::sort(eg.begin(), eg.end());
  std::sort(el.begin(), el.end());
  CHECK(el[2] <= eg[2]);
}

TEST_CASE("lifting local terms") {
  const int K = 3;
  Rng rng(4);
  std::normal_distribution<double> normal;
  auto random_block = [&](int w) {
    const auto n = state_dim(K, w);
    Eigen::MatrixXd m(n, n);
    for (auto& v : m.reshaped()) v = normal(rng);
    return Eigen::MatrixXd(m + m.transpose());
  };
  SUBCASE("one-site term at the first site is block (x) I") {
    LocalSum s;
    s.terms.push_back(LocalTerm{0, 0, {}, random_block(1), 1.0, "x"});
    const Eigen::MatrixXd H = assemble_dense(s, K, 2);
    const Eigen::MatrixXd expect = oracle::kron_sites(2, [&](int d) -> Eigen::MatrixXd {
      return d == 0 ? s.terms[0].block : Eigen::MatrixXd::Identity(K, K);
    });
    CHECK((H - expect).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("partial trace over identity sites recovers the block") {
    LocalSum s;
    s.terms.push_back(LocalTerm{1, 2, {}, random_block(2), 1.0, "x"});
    const int D = 4;
    const Eigen::MatrixXd H = assemble_dense(s, K, D);
    const int mid = K * K;
    Eigen::MatrixXd red = Eigen::MatrixXd::Zero(mid, mid);
    for (int a = 0; a < K; ++a)
      for (int i = 0; i < mid; ++i)
        for (int k = 0; k < mid; ++k)
          for (int r = 0; r < K; ++r) red(i, k) += H((a * mid + i) * K + r, (a * mid + k) * K + r);
    CHECK((red - double(K * K) * s.terms[0].block).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("matrix-free product agrees with the dense lift") {
    const int D = 4;
    LocalSum s;
    s.terms.push_back(LocalTerm{0, 2, {}, random_block(3), 0.7, "a"});
    s.terms.push_back(LocalTerm{1, 3, {}, random_block(3), -2.0, "b"});
    s.terms.push_back(LocalTerm{3, 3, {}, random_block(1), 4.0, "c"});
    s.terms.push_back(LocalTerm{2, 3, {}, random_block(2), 1.0, "d"});
    Eigen::VectorXd v(81);
    for (auto& x : v) x = normal(rng);
    const Eigen::VectorXd dense = assemble_dense(s, K, D) * v;
    CHECK((apply_H(s, K, D, v) - dense).norm() <= 1e-10 * dense.norm());
    CHECK(apply_H(s, K, D, Eigen::VectorXd::Zero(81)).isZero(0.0));
  }
  SUBCASE("identity blocks scale the vector") {
    LocalSum s;
    s.terms.push_back(LocalTerm{0, 1, {}, Eigen::MatrixXd::Identity(9, 9), 1.5, "i"});
    s.terms.push_back(LocalTerm{2, 2, {}, Eigen::MatrixXd::Identity(3, 3), -0.25, "i"});
    Eigen::VectorXd v(27);
    for (auto& x : v) x = normal(rng);
    CHECK((apply_H(s, K, 3, v) - 1.25 * v).norm() < 1e-13);
  }
  SUBCASE("empty sum") {
    CHECK(assemble_dense(LocalSum{}, K, 3).isZero(0.0));
  }
  SUBCASE("size cap") {
    CHECK_THROWS_AS(assemble_dense(LocalSum{}, 4, 7), SizeError);
    CHECK_NOTHROW(apply_H(LocalSum{}, 4, 7, Eigen::VectorXd::Zero(16384)));
  }
}

TEST_CASE("hamiltonian files round-trip") {
  const Basis b = Basis::hermite(2, std::sqrt(2.0));
  const auto t = ScoreTarget::make(TargetKind::ring, 3);
  SamplingPlan plan;
  plan.budget = 90;
  plan.seed = 7;
  const auto dir = std::filesystem::temp_directory_path() / "mpobm_test_h";
  std::filesystem::create_directories(dir);
  for (const auto& H : {estimate_H_global(b, t, plan), estimate_H_local(b, t, plan)}) {
    const auto path = dir / ("H_" + to_string(H.meta.estimator) + ".bin");
    save_hamiltonian(H, path);
    const auto back = load_hamiltonian(path);
    CHECK(back.meta.D == 3);
    CHECK(back.meta.seed == 7);
    CHECK(back.meta.queries == 90);
    CHECK(back.meta.estimator == H.meta.estimator);
    CHECK(to_dense(back) == to_dense(H));
  }
  CHECK_THROWS_AS(load_hamiltonian(dir / "missing.bin"), InputError);
  std::filesystem::remove_all(dir);
}
