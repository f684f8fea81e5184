#pragma once

#include <span>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace mpobm {

enum class BasisKind { hermite, fourier };

std::string to_string(BasisKind kind);
BasisKind basis_kind_from_string(const std::string& name);

struct QuadratureSpec {
  int nodes = 256;
  std::string rule = "gauss-legendre";
};

/**
 * K orthonormal functions on the real line.
 *
 * hermite: phi_k(x) = psi_k(x / s) / sqrt(s), with psi_k the Hermite functions
 *   (2^k k! sqrt(pi))^{-1/2} H_k(x) exp(-x^2 / 2). s = 1 gives the classical
 *   functions; s = sqrt(2) gives sqrt(N(x; 0, 1)) He_k(x) / sqrt(k!).
 * fourier: 1/sqrt(P), sqrt(2/P) cos(2 pi m x / P), sqrt(2/P) sin(2 pi m x / P)
 *   on [-P/2, P/2] and zero outside.
 *
 * Immutable; safe to share across threads.
 */
class Basis {
 public:
  static Basis hermite(int K, double scale = 1.0, QuadratureSpec quad = {});
  static Basis fourier(int K, double period = 10.0, QuadratureSpec quad = {});

  int size() const { return K_; }
  BasisKind kind() const { return kind_; }
  /// Length scale (hermite) or period (fourier).
  double scale() const { return scale_; }
  const QuadratureSpec& quadrature() const { return quad_; }

  /// Interval outside of which every basis function is negligible (< 1e-15)
  /// or identically zero.
  std::pair<double, double> support() const;

  Eigen::VectorXd phi(double x) const;
  Eigen::VectorXd phi_dot(double x) const;

  /// Hot-path evaluation into caller buffers of length K (either may be empty).
  void eval(double x, std::span<double> phi, std::span<double> dphi) const;

 private:
  Basis(BasisKind kind, int K, double scale, QuadratureSpec quad);

  BasisKind kind_;
  int K_;
  double scale_;
  QuadratureSpec quad_;
};

/// gram = int phi phi^T, dgram = int phi' phi'^T over the real line.
struct OverlapMatrices {
  Basis basis;
  Eigen::MatrixXd gram;
  Eigen::MatrixXd dgram;

  /// int_a^b phi phi^T dx; a and b may be infinite. Throws InputError for
  /// a > b and NumericalError if the rule does not resolve the interval.
  Eigen::MatrixXd interval(double a, double b) const;
};

OverlapMatrices overlap_matrices(const Basis& basis);

/// Free-standing form of OverlapMatrices::interval.
Eigen::MatrixXd interval_overlap(const Basis& basis, double a, double b);

}  // namespace mpobm
