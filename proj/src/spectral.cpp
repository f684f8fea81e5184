#include "mpobm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mpobm/errors.hpp"
#include "mpobm/rng.hpp"

namespace mpobm {

GroundSpace ground_space_dense(const Eigen::MatrixXd& H, int r) {
  if (H.rows() != H.cols()) throw ContractViolation("ground_space: H is not square");
  if (r < 1 || r > H.rows()) throw ConfigError("ground_space: need 1 <= r <= K^D");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
  return {es.eigenvectors().leftCols(r), es.eigenvalues().head(r), r};
}

namespace {

// Orthogonalizes w against the first `cols` columns of V twice; returns the
// accumulated coefficients.
Eigen::VectorXd orthogonalize(const Eigen::MatrixXd& V, Eigen::Index cols, Eigen::VectorXd& w) {
  const auto B = V.leftCols(cols);
  Eigen::VectorXd h = B.transpose() * w;
  w.noalias() -= B * h;
  const Eigen::VectorXd h2 = B.transpose() * w;
  w.noalias() -= B * h2;
  return h + h2;
}

Eigen::VectorXd random_unit(std::int64_t n, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (auto& x : v) x = normal(rng);
  return v.normalized();
}

}  // namespace

GroundSpace ground_space_lanczos(const LinearOperator& op, std::int64_t n, int r, const LanczosOptions& opts) {
  if (r < 1 || r > n) throw ConfigError("ground_space: need 1 <= r <= K^D");
  const Eigen::Index m = std::min<std::int64_t>(n, std::max(opts.krylov_dim, 2 * r + 8));
  const Eigen::Index keep = std::min<Eigen::Index>(m - 1, std::max<Eigen::Index>(r + 1, std::min<Eigen::Index>(m / 2, r + 12)));
  Rng rng = make_stream(opts.seed, 0x1a2c305);

  Eigen::MatrixXd V(n, m + 1);
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
  V.col(0) = random_unit(n, rng);
  Eigen::Index start = 0;
  Eigen::VectorXd last_res;

  for (int restart = 0; restart <= opts.max_restarts; ++restart) {
    double beta = 0.0;
    for (Eigen::Index j = start; j < m; ++j) {
      Eigen::VectorXd w = op(V.col(j));
      const Eigen::VectorXd h = orthogonalize(V, j + 1, w);
      T.block(0, j, j + 1, 1) = h;
      T.block(j, 0, 1, j + 1) = h.transpose();
      beta = w.norm();
      const double scale = std::max(1.0, T.diagonal().head(j + 1).cwiseAbs().maxCoeff());
      if (beta <= 1e-13 * scale) {
        beta = 0.0;
        if (j + 1 >= n) break;
        // invariant subspace found: continue with a fresh orthogonal direction
        Eigen::VectorXd fresh = random_unit(n, rng);
        orthogonalize(V, j + 1, fresh);
        V.col(j + 1) = fresh.normalized();
      } else {
        V.col(j + 1) = w / beta;
      }
    }
    const Eigen::Index filled = std::min<Eigen::Index>(m, n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T.topLeftCorner(filled, filled));
    const Eigen::VectorXd& theta = es.eigenvalues();
    const Eigen::MatrixXd& Y = es.eigenvectors();
    const double norm = std::max(theta.cwiseAbs().maxCoeff(), 1e-300);
    last_res = (beta * Y.row(filled - 1).head(r)).cwiseAbs().transpose();
    if (last_res.maxCoeff() <= opts.tol * norm) {
      GroundSpace gs{V.leftCols(filled) * Y.leftCols(r), theta.head(r), r};
      // confirm against the operator itself
      double worst = 0.0;
      for (int i = 0; i < r; ++i) worst = std::max(worst, (op(gs.U.col(i)) - theta[i] * gs.U.col(i)).norm());
      if (worst <= 10.0 * opts.tol * norm + 1e-12) return gs;
      last_res = Eigen::VectorXd::Constant(r, worst);
    }
    const Eigen::MatrixXd kept = V.leftCols(filled) * Y.leftCols(keep);
    const Eigen::VectorXd resid = V.col(filled);
    V.leftCols(keep) = kept;
    V.col(keep) = resid;
    if (beta == 0.0) {
      Eigen::VectorXd fresh = random_unit(n, rng);
      orthogonalize(V, keep, fresh);
      V.col(keep) = fresh.normalized();
    }
    T.setZero();
    T.topLeftCorner(keep, keep).diagonal() = theta.head(keep);
    start = keep;
  }
  std::ostringstream msg;
  msg << "Lanczos did not converge in " << opts.max_restarts << " restarts; residuals:";
  for (double v : last_res) msg << ' ' << v;
  throw NumericalError(msg.str());
}

GroundSpace ground_space(const HamiltonianRep& H, int r, const LanczosOptions& opts) {
  if (H.is_dense()) return ground_space_dense(H.dense(), r);
  const int K = H.meta.K, D = H.meta.D;
  const auto& local = H.local();
  return ground_space_lanczos([&](const Eigen::VectorXd& v) { return apply_H(local, K, D, v); },
                              state_dim(K, D, 0), r, opts);
}

Eigen::VectorXd relative_gaps(const Eigen::VectorXd& ev) {
  if (ev.size() < 2) return Eigen::VectorXd(0);
  Eigen::VectorXd g(ev.size() - 1);
  for (Eigen::Index i = 0; i + 1 < ev.size(); ++i) g[i] = (ev[i + 1] - ev[i]) / (std::abs(ev[i]) + 1e-12);
  return g;
}

SpectralReport spectral_report(const Eigen::MatrixXd& H, int n_eigs, int r) {
  if (n_eigs < 1) throw ConfigError("spectral_report: n_eigs must be positive");
  if (r < 1) throw ConfigError("spectral_report: r must be positive");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
  const Eigen::VectorXd& all = es.eigenvalues();
  SpectralReport rep;
  rep.clipped = n_eigs > all.size();
  const Eigen::Index n = std::min<Eigen::Index>(n_eigs, all.size());
  rep.eigenvalues = all.head(n);
  rep.rel_gaps = relative_gaps(rep.eigenvalues);
  rep.ground_gap_index = r - 1;
  rep.lambda_min = all.minCoeff();
  rep.lambda_max = all.maxCoeff();
  return rep;
}

SpectralReport spectral_report(const HamiltonianRep& H, int n_eigs, int r) {
  return spectral_report(to_dense(H), n_eigs, r);
}

void write_gaps_csv(std::ostream& os, const SpectralReport& report) {
  os << "eig_index,lambda,rel_gap\n";
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < report.eigenvalues.size(); ++i) {
    os << i << ',' << report.eigenvalues[i] << ',';
    if (i < report.rel_gaps.size()) os << report.rel_gaps[i];
    os << '\n';
  }
}

Eigen::VectorXd principal_angles(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V) {
  if (U.rows() != V.rows()) throw ContractViolation("principal_angles: row mismatch");
  // sines from the component of V outside span(U); accurate for small angles
  const Eigen::MatrixXd R = V - U * (U.transpose() * V);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(R);
  Eigen::VectorXd s = svd.singularValues().cwiseMin(1.0);
  Eigen::VectorXd a = s.array().asin();
  std::sort(a.begin(), a.end());
  return a;
}

}  // namespace mpobm
