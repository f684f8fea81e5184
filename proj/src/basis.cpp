#include "mpobm/basis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "mpobm/errors.hpp"
#include "mpobm/quadrature.hpp"

namespace mpobm {

std::string to_string(BasisKind kind) {
  return kind == BasisKind::hermite ? "hermite" : "fourier";
}

BasisKind basis_kind_from_string(const std::string& name) {
  if (name == "hermite" || name == "hermite-function") return BasisKind::hermite;
  if (name == "fourier") return BasisKind::fourier;
  throw ConfigError("unknown basis kind '" + name + "'");
}

Basis::Basis(BasisKind kind, int K, double scale, QuadratureSpec quad)
    : kind_(kind), K_(K), scale_(scale), quad_(std::move(quad)) {
  if (K_ < 1) throw ConfigError("basis: K must be >= 1");
  if (!(scale_ > 0.0) || !std::isfinite(scale_)) throw ConfigError("basis: scale must be positive");
  if (quad_.nodes < 8) throw ConfigError("basis: quadrature needs at least 8 nodes");
  if (quad_.rule != "gauss-legendre") throw ConfigError("basis: unsupported quadrature rule " + quad_.rule);
}

Basis Basis::hermite(int K, double scale, QuadratureSpec quad) {
  return Basis(BasisKind::hermite, K, scale, std::move(quad));
}

Basis Basis::fourier(int K, double period, QuadratureSpec quad) {
  return Basis(BasisKind::fourier, K, period, std::move(quad));
}

std::pair<double, double> Basis::support() const {
  if (kind_ == BasisKind::fourier) return {-0.5 * scale_, 0.5 * scale_};
  // turning point of psi_{K-1} plus a margin where the WKB tail is < 1e-17
  const double t = scale_ * (std::sqrt(2.0 * K_ + 1.0) + 8.0);
  return {-t, t};
}

void Basis::eval(double x, std::span<double> phi, std::span<double> dphi) const {
  if (!std::isfinite(x)) throw InputError("basis: non-finite evaluation point");
  if (kind_ == BasisKind::hermite) {
    const double y = x / scale_;
    const double inv_sqrt_s = 1.0 / std::sqrt(scale_);
    // psi_0 .. psi_K (one extra for the derivative recurrence)
    double buf[66];
    std::vector<double> heap;
    double* psi = buf;
    if (K_ + 1 > 66) {
      heap.resize(K_ + 1);
      psi = heap.data();
    }
    psi[0] = std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * y * y);
    psi[1] = std::numbers::sqrt2 * y * psi[0];
    for (int k = 1; k < K_; ++k) {
      psi[k + 1] = std::sqrt(2.0 / (k + 1)) * y * psi[k] - std::sqrt(static_cast<double>(k) / (k + 1)) * psi[k - 1];
    }
    if (!phi.empty()) {
      for (int k = 0; k < K_; ++k) phi[k] = psi[k] * inv_sqrt_s;
    }
    if (!dphi.empty()) {
      const double c = inv_sqrt_s / scale_;
      for (int k = 0; k < K_; ++k) {
        const double lower = k > 0 ? std::sqrt(0.5 * k) * psi[k - 1] : 0.0;
        dphi[k] = c * (lower - std::sqrt(0.5 * (k + 1)) * psi[k + 1]);
      }
    }
    return;
  }

  const double P = scale_;
  const bool inside = std::abs(x) <= 0.5 * P;
  const double a0 = 1.0 / std::sqrt(P);
  const double a = std::sqrt(2.0 / P);
  for (int k = 0; k < K_; ++k) {
    double v = 0.0, dv = 0.0;
    if (inside) {
      if (k == 0) {
        v = a0;
      } else {
        const int m = (k + 1) / 2;
        const double w = 2.0 * std::numbers::pi * m / P;
        if (k % 2 == 1) {
          v = a * std::cos(w * x);
          dv = -a * w * std::sin(w * x);
        } else {
          v = a * std::sin(w * x);
          dv = a * w * std::cos(w * x);
        }
      }
    }
    if (!phi.empty()) phi[k] = v;
    if (!dphi.empty()) dphi[k] = dv;
  }
}

Eigen::VectorXd Basis::phi(double x) const {
  Eigen::VectorXd out(K_);
  eval(x, {out.data(), static_cast<std::size_t>(K_)}, {});
  return out;
}

Eigen::VectorXd Basis::phi_dot(double x) const {
  Eigen::VectorXd out(K_);
  eval(x, {}, {out.data(), static_cast<std::size_t>(K_)});
  return out;
}

namespace {

Eigen::MatrixXd integrate_outer(const Basis& basis, double a, double b, int nodes, bool derivative) {
  const int K = basis.size();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(K, K);
  if (!(b > a)) return acc;
  const QuadratureRule rule = gauss_legendre(nodes, a, b);
  Eigen::VectorXd v(K);
  for (int i = 0; i < nodes; ++i) {
    if (derivative) {
      basis.eval(rule.nodes[i], {}, {v.data(), static_cast<std::size_t>(K)});
    } else {
      basis.eval(rule.nodes[i], {v.data(), static_cast<std::size_t>(K)}, {});
    }
    acc.noalias() += rule.weights[i] * v * v.transpose();
  }
  return acc;
}

// Integrates with n and n/2 nodes and refuses results that disagree.
Eigen::MatrixXd checked_integral(const Basis& basis, double a, double b, bool derivative) {
  const int n = basis.quadrature().nodes;
  Eigen::MatrixXd fine = integrate_outer(basis, a, b, n, derivative);
  Eigen::MatrixXd coarse = integrate_outer(basis, a, b, n / 2, derivative);
  const double scale = std::max(1.0, fine.cwiseAbs().maxCoeff());
  const double diff = (fine - coarse).cwiseAbs().maxCoeff();
  if (diff > 1e-10 * scale) {
    std::ostringstream msg;
    msg << "basis quadrature not converged on [" << a << ", " << b << "] with " << n
        << " nodes: |I_n - I_{n/2}|_max = " << diff << " (K=" << basis.size() << ", kind=" << to_string(basis.kind())
        << ")";
    throw NumericalError(msg.str());
  }
  return fine;
}

}  // namespace

Eigen::MatrixXd interval_overlap(const Basis& basis, double a, double b) {
  if (std::isnan(a) || std::isnan(b)) throw InputError("interval: NaN bound");
  if (a > b) throw InputError("interval: lower bound exceeds upper bound");
  const auto [lo, hi] = basis.support();
  return checked_integral(basis, std::max(a, lo), std::min(b, hi), false);
}

Eigen::MatrixXd OverlapMatrices::interval(double a, double b) const { return interval_overlap(basis, a, b); }

OverlapMatrices overlap_matrices(const Basis& basis) {
  const auto [lo, hi] = basis.support();
  OverlapMatrices out{basis, checked_integral(basis, lo, hi, false), checked_integral(basis, lo, hi, true)};
  out.dgram = 0.5 * (out.dgram + out.dgram.transpose()).eval();
  return out;
}

}  // namespace mpobm
