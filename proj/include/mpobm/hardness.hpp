#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpobm/rng.hpp"

namespace mpobm {

enum class FormulaOp { var, negation, conjunction, disjunction };

/**
 * Boolean formula over z_1..z_n.
 *
 * Nodes are stored children-first, so evaluating in index order visits every
 * operand before its parent; the root is the last node.
 */
struct Formula {
  struct Node {
    FormulaOp op = FormulaOp::var;
    int var = 0;  ///< 1-based, var nodes only
    int left = -1;
    int right = -1;
  };

  int n = 0;
  std::vector<Node> nodes;

  int root() const { return static_cast<int>(nodes.size()) - 1; }
  int variable(int index);
  int negate(int a);
  int conjoin(int a, int b);
  int disjoin(int a, int b);
};

/// Infix ("(x1 & x2) | !x3"), s-expression ("(or (and x1 x2) (not x3))") or
/// DIMACS CNF. Throws InputError with the offending position.
Formula parse_formula(const std::string& text);

/// Infix form that parses back to the same tree.
std::string to_string(const Formula& f);

/// Bit i of assignment holds z_{i+1}.
bool evaluate(const Formula& f, std::uint64_t assignment);

/// Polynomial extension: NOT a -> 1 - a, a AND b -> ab, a OR b -> a + b - ab.
double poly_extend(const Formula& f, std::span<const double> x);

/// Satisfying assignments by enumeration; SizeError when n > cap.
std::uint64_t model_count(const Formula& f, int cap = 20);

/// Random CNF with the given clause width; every clause uses distinct variables.
Formula random_cnf(int n, int clauses, int width, Rng& rng);

enum class BumpKind { box, smooth };

std::string to_string(BumpKind kind);
BumpKind bump_kind_from_string(const std::string& name);

/// Unit-mass bump supported in [-1/4, 1/4].
class Bump {
 public:
  explicit Bump(BumpKind kind = BumpKind::box);
  BumpKind kind() const { return kind_; }
  double operator()(double x) const;
  double zero(double x) const { return (*this)(x); }
  double one(double x) const { return (*this)(x - 1.0); }

 private:
  BumpKind kind_;
  double scale_ = 2.0;
};

/**
 * Unnormalized density g(x) eta_1(y) + u(x) eta_0(y) on R^n x R whose mass on
 * R^n x [3/4, 5/4] is MC(f) / (MC(f) + 1) after normalization.
 */
class HardDensity {
 public:
  HardDensity(Formula f, BumpKind bump = BumpKind::box);

  const Formula& formula() const { return f_; }
  const Bump& bump() const { return bump_; }
  int n() const { return f_.n; }

  /// eta_1 / (eta_0 + eta_1) inside either support, 0 elsewhere.
  double soft(double x) const;
  double g(std::span<const double> x) const;
  double u(std::span<const double> x) const;
  double p_tilde(std::span<const double> x, double y) const;

 private:
  Formula f_;
  Bump bump_;
};

struct GapReport {
  int n = 0;
  std::uint64_t model_count = 0;
  double predicted = 0.0;        ///< MC / (MC + 1)
  double p_a = 0.0;              ///< estimated mass of R^n x [3/4, 5/4]
  double std_error = 0.0;
  double normalizer = 0.0;       ///< estimated total unnormalized mass
  double normalizer_std_error = 0.0;
  std::uint64_t samples = 0;
  std::uint64_t seed = 0;
  bool within_tolerance = false; ///< |p_a - predicted| <= 3 se + 1e-12
  bool decided_sat = false;      ///< p_a > 1/4
  bool decision_correct = false;
  std::string bump;
};

/// Stratified estimate over the 2^n assignment boxes and both y supports.
GapReport verify_gap(const HardDensity& hd, std::uint64_t samples, std::uint64_t seed, int cap = 20);

}  // namespace mpobm
