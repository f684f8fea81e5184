#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mpobm/errors.hpp"
#include "mpobm/quadrature.hpp"
#include "mpobm/targets.hpp"

using namespace mpobm;

namespace {

double max_rel_fd_error(const ScoreTarget& t, const Eigen::VectorXd& x) {
  const Eigen::VectorXd s = t.score(as_span(x));
  double worst = 0.0;
  for (int j = 0; j < t.dim(); ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const double fd = (t.log_density(as_span(xp)) - t.log_density(as_span(xm))) / (2 * h);
    worst = std::max(worst, std::abs(fd - s[j]) / std::max(1.0, std::abs(s[j])));
  }
  return worst;
}

// 2-D tensor Gauss-Legendre integral of exp(log p) over a box.
double integrate_2d(const ScoreTarget& t, double lo, double hi, int n) {
  const auto rule = gauss_legendre(n, lo, hi);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      const double x[2] = {rule.nodes[i], rule.nodes[k]};
      acc += rule.weights[i] * rule.weights[k] * std::exp(t.log_density(x));
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("function bank derivatives") {
  for (int i = 0; i < FunctionBank::size; ++i) {
    for (double x : {-1.7, -0.2, 0.0, 0.9, 2.4}) {
      const double h = 1e-6;
      const double fd = (FunctionBank::value(i, x + h) - FunctionBank::value(i, x - h)) / (2 * h);
      CHECK(std::abs(fd - FunctionBank::derivative(i, x)) < 1e-7);
    }
  }
  CHECK(FunctionBank::value(1, 0.3) == doctest::Approx(-FunctionBank::value(0, 0.3)));
  CHECK(FunctionBank::index_for_link(21) == 0);
}

TEST_CASE("scores match finite differences of the log density") {
  Rng rng(7);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (TargetKind kind : all_target_kinds()) {
    const auto t = ScoreTarget::make(kind, 5);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd x(5);
      for (int d = 0; d < 5; ++d) x[d] = normal(rng);
      CHECK_MESSAGE(max_rel_fd_error(t, x) < 1e-6, to_string(kind));
    }
  }
}

TEST_CASE("local scores read only their clique") {
  Rng rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (TargetKind kind : all_target_kinds()) {
    for (int D : {2, 3, 6}) {
      const auto t = ScoreTarget::make(kind, D);
      Eigen::VectorXd x(D);
      for (int d = 0; d < D; ++d) x[d] = normal(rng);
      const Eigen::VectorXd full = t.score(as_span(x));
      for (int j = 0; j < D; ++j) {
        std::vector<double> vals;
        for (int k : t.clique_map()[j]) vals.push_back(x[k]);
        CHECK(t.local_score(j, vals) == full[j]);
      }
    }
  }
  const auto t = ScoreTarget::make(TargetKind::ring, 4);
  const double two[2] = {0.1, 0.2};
  CHECK_THROWS_AS(t.local_score(2, two), ContractViolation);
}

TEST_CASE("query counter") {
  const auto t = ScoreTarget::make(TargetKind::funnel, 3);
  const double x[3] = {0.1, 0.2, 0.3};
  t.score(x);
  t.local_score(1, x);
  CHECK(t.queries() == 2);
  t.log_density(x);
  CHECK(t.queries() == 2);
}

TEST_CASE("base densities are normalized") {
  const double inf_box = 14.0;
  CHECK(integrate_2d(ScoreTarget::make(TargetKind::gmm3, 2), -inf_box, inf_box, 200) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(integrate_2d(ScoreTarget::make(TargetKind::xshape, 2), -inf_box, inf_box, 200) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(integrate_2d(ScoreTarget::make(TargetKind::ring, 2), -inf_box, inf_box, 200) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(integrate_2d(ScoreTarget::make(TargetKind::gaussian_tridiag, 2), -inf_box, inf_box, 200) ==
        doctest::Approx(1.0).epsilon(1e-10));
  // the funnel neck is too thin for a tensor rule; integrate x2 analytically
  const auto f = ScoreTarget::make(TargetKind::funnel, 2);
  const auto rule = gauss_legendre(200, -10.0, 10.0);
  double acc = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double x[2] = {rule.nodes[i], 0.0};
    acc += rule.weights[i] * std::exp(f.log_density(x)) * std::sqrt(2 * std::numbers::pi * std::exp(rule.nodes[i]));
  }
  CHECK(acc == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("lifting keeps normalization") {
  // integrate the last chain coordinate out on a grid: result equals the D-1 density
  const auto t3 = ScoreTarget::make(TargetKind::ring, 3);
  const auto t2 = ScoreTarget::make(TargetKind::ring, 2);
  const auto rule = gauss_legendre(120, -10.0, 10.0);
  const double x[2] = {1.3, -2.1};
  double acc = 0.0;
  for (int i = 0; i < 120; ++i) {
    const double y[3] = {x[0], x[1], rule.nodes[i]};
    acc += rule.weights[i] * std::exp(t3.log_density(y));
  }
  CHECK(acc == doctest::Approx(std::exp(t2.log_density(x))).epsilon(1e-10));
}

TEST_CASE("samplers reproduce moments") {
  SUBCASE("gaussian covariance is the inverse precision") {
    const auto t = ScoreTarget::make(TargetKind::gaussian_tridiag, 3);
    Rng rng(5);
    const Eigen::MatrixXd X = t.sample(200000, rng);
    const Eigen::MatrixXd cov = X.transpose() * X / X.rows();
    const Eigen::MatrixXd expect = t.precision().inverse();
    CHECK((cov - expect).cwiseAbs().maxCoeff() < 0.02);
  }
  SUBCASE("ring radius") {
    const auto t = ScoreTarget::make(TargetKind::ring, 2);
    Rng rng(9);
    const Eigen::MatrixXd X = t.sample(100000, rng);
    const double mean_r = X.rowwise().norm().mean();
    // E r under r exp(-(r-3)^2/2s^2) = 3 + s^2/3 to high accuracy
    CHECK(mean_r == doctest::Approx(3.0 + 0.25 / 3.0).epsilon(3e-3));
  }
  SUBCASE("lifted chain residuals have the configured noise") {
    TargetParams p;
    p.sigma_aug = 0.5;
    const auto t = ScoreTarget::make(TargetKind::gmm3, 4, p);
    Rng rng(3);
    const Eigen::MatrixXd X = t.sample(50000, rng);
    double ss = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double r = X(i, 3) - FunctionBank::value(FunctionBank::index_for_link(2), X(i, 2));
      ss += r * r;
    }
    CHECK(std::sqrt(ss / X.rows()) == doctest::Approx(0.5).epsilon(0.01));
  }
  SUBCASE("same seed, same samples") {
    const auto t = ScoreTarget::make(TargetKind::xshape, 3);
    Rng a(1), b(1);
    CHECK(t.sample(100, a) == t.sample(100, b));
  }
}

TEST_CASE("invalid targets") {
  TargetParams p;
  p.offdiag = 0.7;
  CHECK_THROWS_AS(ScoreTarget::make(TargetKind::gaussian_tridiag, 4, p), ConfigError);
  CHECK_THROWS_AS(ScoreTarget::make(TargetKind::ring, 1), ConfigError);
  CHECK_THROWS_AS(target_kind_from_string("banana"), ConfigError);
  const auto t = ScoreTarget::make(TargetKind::gmm3, 2);
  const double bad[2] = {std::nan(""), 0.0};
  CHECK_THROWS_AS(t.log_density(bad), InputError);
}
