#include "mpobm/targets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mpobm/errors.hpp"
#include "mpobm/target_constants.hpp"

namespace mpobm {

namespace tc = target_constants;

std::string to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::gaussian_tridiag: return "gaussian";
    case TargetKind::gmm3: return "gmm3";
    case TargetKind::xshape: return "xshape";
    case TargetKind::ring: return "ring";
    case TargetKind::funnel: return "funnel";
  }
  return "unknown";
}

TargetKind target_kind_from_string(const std::string& name) {
  if (name == "gaussian" || name == "gaussian-tridiag" || name == "gaussian_tridiag") return TargetKind::gaussian_tridiag;
  if (name == "gmm3" || name == "gmm-3") return TargetKind::gmm3;
  if (name == "xshape" || name == "x-shape") return TargetKind::xshape;
  if (name == "ring") return TargetKind::ring;
  if (name == "funnel") return TargetKind::funnel;
  throw ConfigError("unknown target kind '" + name + "'");
}

const std::vector<TargetKind>& all_target_kinds() {
  static const std::vector<TargetKind> kinds{TargetKind::gaussian_tridiag, TargetKind::gmm3, TargetKind::xshape,
                                             TargetKind::ring, TargetKind::funnel};
  return kinds;
}

void to_json(nlohmann::json& j, const TargetParams& p) {
  j = nlohmann::json{{"sigma_aug", p.sigma_aug}, {"offdiag", p.offdiag}, {"diag", p.diag}};
}

void from_json(const nlohmann::json& j, TargetParams& p) {
  p = TargetParams{};
  if (j.contains("sigma_aug")) j.at("sigma_aug").get_to(p.sigma_aug);
  if (j.contains("offdiag")) j.at("offdiag").get_to(p.offdiag);
  if (j.contains("diag")) j.at("diag").get_to(p.diag);
}

// ---------------------------------------------------------------------------

double FunctionBank::value(int index, double x) {
  const double sign = (index % 2 == 0) ? 1.5 : -1.5;
  switch (index / 2) {
    case 0: return sign * std::sin(x);
    case 1: return sign * std::cos(x);
    case 2: return sign * std::sin(2.0 * x);
    case 3: return sign * std::cos(2.0 * x);
    case 4: return sign * (1.0 / (1.0 + std::exp(-4.0 * x)) - 0.5);
    case 5: return sign * std::tanh(2.0 * x);
    case 6: return sign * std::tanh(4.0 * x);
    case 7: return sign * std::sin(x) * std::tanh(x);
    case 8: return sign * std::cos(x) * std::tanh(x);
    case 9: return sign * x / (1.0 + x * x);
  }
  throw ContractViolation("function bank index out of range");
}

double FunctionBank::derivative(int index, double x) {
  const double sign = (index % 2 == 0) ? 1.5 : -1.5;
  switch (index / 2) {
    case 0: return sign * std::cos(x);
    case 1: return -sign * std::sin(x);
    case 2: return 2.0 * sign * std::cos(2.0 * x);
    case 3: return -2.0 * sign * std::sin(2.0 * x);
    case 4: {
      const double s = 1.0 / (1.0 + std::exp(-4.0 * x));
      return sign * 4.0 * s * (1.0 - s);
    }
    case 5: {
      const double t = std::tanh(2.0 * x);
      return sign * 2.0 * (1.0 - t * t);
    }
    case 6: {
      const double t = std::tanh(4.0 * x);
      return sign * 4.0 * (1.0 - t * t);
    }
    case 7: {
      const double t = std::tanh(x);
      return sign * (std::cos(x) * t + std::sin(x) * (1.0 - t * t));
    }
    case 8: {
      const double t = std::tanh(x);
      return sign * (-std::sin(x) * t + std::cos(x) * (1.0 - t * t));
    }
    case 9: {
      const double d = 1.0 + x * x;
      return sign * (1.0 - x * x) / (d * d);
    }
  }
  throw ContractViolation("function bank index out of range");
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct Gauss2Eval {
  double log_norm;
  double p11, p12, p22;  // precision
  double mx, my;
  double l11, l21, l22;  // Cholesky of covariance for sampling
};

Gauss2Eval prepare(double mx, double my, double s11, double s12, double s22) {
  const double det = s11 * s22 - s12 * s12;
  Gauss2Eval g{};
  g.log_norm = -kLog2Pi - 0.5 * std::log(det);
  g.p11 = s22 / det;
  g.p12 = -s12 / det;
  g.p22 = s11 / det;
  g.mx = mx;
  g.my = my;
  g.l11 = std::sqrt(s11);
  g.l21 = s12 / g.l11;
  g.l22 = std::sqrt(s22 - g.l21 * g.l21);
  return g;
}

double gauss2_log(const Gauss2Eval& g, double x, double y, double* gx, double* gy) {
  const double dx = x - g.mx, dy = y - g.my;
  const double ax = g.p11 * dx + g.p12 * dy;
  const double ay = g.p12 * dx + g.p22 * dy;
  *gx = -ax;
  *gy = -ay;
  return g.log_norm - 0.5 * (dx * ax + dy * ay);
}

struct Mixture2 {
  std::vector<double> log_weights;
  std::vector<double> weights;
  std::vector<Gauss2Eval> comps;
};

const Mixture2& gmm3_mixture() {
  static const Mixture2 m = [] {
    Mixture2 out;
    for (const auto& c : tc::gmm3) {
      out.weights.push_back(c.weight);
      out.log_weights.push_back(std::log(c.weight));
      out.comps.push_back(prepare(c.mean[0], c.mean[1], c.cov[0], c.cov[1], c.cov[2]));
    }
    return out;
  }();
  return m;
}

const Mixture2& xshape_mixture() {
  static const Mixture2 m = [] {
    Mixture2 out;
    const double a = tc::xshape_sigma_long * tc::xshape_sigma_long;
    const double b = tc::xshape_sigma_short * tc::xshape_sigma_short;
    for (double sgn : {1.0, -1.0}) {
      // R(+-45 deg) diag(a, b) R^T
      const double s11 = 0.5 * (a + b);
      const double s22 = 0.5 * (a + b);
      const double s12 = sgn * 0.5 * (a - b);
      out.weights.push_back(0.5);
      out.log_weights.push_back(std::log(0.5));
      out.comps.push_back(prepare(0.0, 0.0, s11, s12, s22));
    }
    return out;
  }();
  return m;
}

double mixture_log(const Mixture2& m, double x, double y, double* gx, double* gy) {
  const std::size_t n = m.comps.size();
  double logs[4], gxs[4], gys[4];
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    logs[k] = m.log_weights[k] + gauss2_log(m.comps[k], x, y, &gxs[k], &gys[k]);
    top = std::max(top, logs[k]);
  }
  double sum = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = std::exp(logs[k] - top);
    sum += w;
    sx += w * gxs[k];
    sy += w * gys[k];
  }
  *gx = sx / sum;
  *gy = sy / sum;
  return top + std::log(sum);
}

double ring_log_norm() {
  const double s = tc::ring_sigma, mu = tc::ring_radius;
  // int_0^inf r exp(-(r-mu)^2 / 2s^2) dr
  const double radial = s * s * std::exp(-mu * mu / (2 * s * s)) +
                        mu * s * std::sqrt(2 * std::numbers::pi) * 0.5 * std::erfc(-mu / (s * std::numbers::sqrt2));
  return -std::log(2 * std::numbers::pi * radial);
}

}  // namespace

// ---------------------------------------------------------------------------

ScoreTarget ScoreTarget::make(TargetKind kind, int D, const TargetParams& params) {
  if (kind == TargetKind::gaussian_tridiag) {
    if (D < 1) throw ConfigError("gaussian target needs D >= 1");
  } else if (D < 2) {
    throw ConfigError("lifted targets need D >= 2");
  }
  if (!(params.sigma_aug > 0.0)) throw ConfigError("sigma_aug must be positive");

  ScoreTarget t;
  t.kind_ = kind;
  t.D_ = D;
  t.params_ = params;
  t.cliques_.resize(D);

  if (kind == TargetKind::gaussian_tridiag) {
    t.precision_ = Eigen::MatrixXd::Zero(D, D);
    for (int i = 0; i < D; ++i) {
      t.precision_(i, i) = params.diag;
      if (i + 1 < D) t.precision_(i, i + 1) = t.precision_(i + 1, i) = params.offdiag;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(t.precision_);
    if (llt.info() != Eigen::Success) {
      throw ConfigError("tridiagonal precision is not positive definite (diag=" + std::to_string(params.diag) +
                        ", offdiag=" + std::to_string(params.offdiag) + ")");
    }
    const Eigen::MatrixXd L = llt.matrixL();
    t.sample_factor_ = L.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(D, D));
    double logdet = 0.0;
    for (int i = 0; i < D; ++i) logdet += 2.0 * std::log(L(i, i));
    t.gaussian_log_norm_ = 0.5 * logdet - 0.5 * D * kLog2Pi;
    for (int j = 0; j < D; ++j) {
      for (int k = std::max(0, j - 1); k <= std::min(D - 1, j + 1); ++k) t.cliques_[j].push_back(k);
    }
  } else {
    t.cliques_[0] = {0, 1};
    t.cliques_[1] = D > 2 ? std::vector<int>{0, 1, 2} : std::vector<int>{0, 1};
    for (int j = 2; j < D; ++j) {
      t.cliques_[j] = {j - 1, j};
      if (j + 1 < D) t.cliques_[j].push_back(j + 1);
    }
  }
  return t;
}

const Eigen::MatrixXd& ScoreTarget::precision() const {
  if (kind_ != TargetKind::gaussian_tridiag) throw ContractViolation("precision() is only defined for gaussian targets");
  return precision_;
}

void ScoreTarget::base_log_and_grad(double x1, double x2, double* logp, double* g1, double* g2) const {
  double lp = 0.0;
  switch (kind_) {
    case TargetKind::gmm3: lp = mixture_log(gmm3_mixture(), x1, x2, g1, g2); break;
    case TargetKind::xshape: lp = mixture_log(xshape_mixture(), x1, x2, g1, g2); break;
    case TargetKind::ring: {
      static const double log_norm = ring_log_norm();
      const double r = std::hypot(x1, x2);
      const double s2 = tc::ring_sigma * tc::ring_sigma;
      lp = log_norm - (r - tc::ring_radius) * (r - tc::ring_radius) / (2 * s2);
      if (r > 0.0) {
        const double c = -(r - tc::ring_radius) / (s2 * r);
        *g1 = c * x1;
        *g2 = c * x2;
      } else {
        *g1 = *g2 = 0.0;
      }
      break;
    }
    case TargetKind::funnel: {
      const double s2 = tc::funnel_sigma * tc::funnel_sigma;
      const double e = std::exp(-x1);
      lp = -x1 * x1 / (2 * s2) - 0.5 * std::log(2 * std::numbers::pi * s2) - 0.5 * kLog2Pi - 0.5 * x1 -
           0.5 * x2 * x2 * e;
      *g1 = -x1 / s2 - 0.5 + 0.5 * x2 * x2 * e;
      *g2 = -x2 * e;
      break;
    }
    case TargetKind::gaussian_tridiag: throw ContractViolation("gaussian target has no 2-D base");
  }
  if (logp) *logp = lp;
}

double ScoreTarget::log_density(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != D_) throw InputError("log_density: wrong dimension");
  for (double v : x) {
    if (!std::isfinite(v)) throw InputError("log_density: non-finite coordinate");
  }
  if (kind_ == TargetKind::gaussian_tridiag) {
    double quad = 0.0;
    for (int i = 0; i < D_; ++i) {
      double row = params_.diag * x[i];
      if (i > 0) row += params_.offdiag * x[i - 1];
      if (i + 1 < D_) row += params_.offdiag * x[i + 1];
      quad += x[i] * row;
    }
    return gaussian_log_norm_ - 0.5 * quad;
  }
  double lp = 0.0, g1 = 0.0, g2 = 0.0;
  base_log_and_grad(x[0], x[1], &lp, &g1, &g2);
  const int N = D_ - 2;
  const double s2 = params_.sigma_aug * params_.sigma_aug;
  lp -= 0.5 * N * std::log(2 * std::numbers::pi * s2);
  for (int i = 1; i <= N; ++i) {
    const double r = x[i + 1] - FunctionBank::value(FunctionBank::index_for_link(i), x[i]);
    lp -= r * r / (2 * s2);
  }
  return lp;
}

// Reads only x[k] for k in cliques_[j].
double ScoreTarget::score_component(int j, const double* x) const {
  if (kind_ == TargetKind::gaussian_tridiag) {
    double s = -params_.diag * x[j];
    if (j > 0) s -= params_.offdiag * x[j - 1];
    if (j + 1 < D_) s -= params_.offdiag * x[j + 1];
    return s;
  }
  const int N = D_ - 2;
  const double s2 = params_.sigma_aug * params_.sigma_aug;
  auto child_term = [&](int link, double parent, double child) {
    const int b = FunctionBank::index_for_link(link);
    return FunctionBank::derivative(b, parent) * (child - FunctionBank::value(b, parent)) / s2;
  };
  if (j <= 1) {
    double g1 = 0.0, g2 = 0.0;
    base_log_and_grad(x[0], x[1], nullptr, &g1, &g2);
    if (j == 0) return g1;
    return g2 + (N >= 1 ? child_term(1, x[1], x[2]) : 0.0);
  }
  const int i = j - 1;  // chain link of z_i = x[j]
  const double own = (FunctionBank::value(FunctionBank::index_for_link(i), x[j - 1]) - x[j]) / s2;
  return own + (i < N ? child_term(i + 1, x[j], x[j + 1]) : 0.0);
}

Eigen::VectorXd ScoreTarget::score(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != D_) throw InputError("score: wrong dimension");
  for (double v : x) {
    if (!std::isfinite(v)) throw InputError("score: non-finite coordinate");
  }
  counter_.add();
  Eigen::VectorXd s(D_);
  for (int j = 0; j < D_; ++j) s[j] = score_component(j, x.data());
  return s;
}

double ScoreTarget::local_score(int j, std::span<const double> clique_values) const {
  if (j < 0 || j >= D_) throw ContractViolation("local_score: coordinate out of range");
  const auto& clique = cliques_[j];
  if (clique_values.size() != clique.size()) {
    throw ContractViolation("local_score: expected " + std::to_string(clique.size()) + " clique values for coordinate " +
                            std::to_string(j) + ", got " + std::to_string(clique_values.size()));
  }
  counter_.add();
  // Out-of-clique entries are NaN so any stray read poisons the result.
  double scratch[64];
  std::vector<double> heap;
  double* x = scratch;
  if (D_ > 64) {
    heap.resize(D_);
    x = heap.data();
  }
  std::fill(x, x + D_, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < clique.size(); ++k) x[clique[k]] = clique_values[k];
  return score_component(j, x);
}

void ScoreTarget::sample_base(Rng& rng, double& x1, double& x2) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto draw_mixture = [&](const Mixture2& m) {
    double u = unif(rng);
    std::size_t k = 0;
    while (k + 1 < m.weights.size() && u >= m.weights[k]) {
      u -= m.weights[k];
      ++k;
    }
    const auto& g = m.comps[k];
    const double e1 = normal(rng), e2 = normal(rng);
    x1 = g.mx + g.l11 * e1;
    x2 = g.my + g.l21 * e1 + g.l22 * e2;
  };
  switch (kind_) {
    case TargetKind::gmm3: draw_mixture(gmm3_mixture()); return;
    case TargetKind::xshape: draw_mixture(xshape_mixture()); return;
    case TargetKind::ring: {
      // radial density r exp(-(r-mu)^2/2s^2) on r > 0, by rejection from
      // N(mu, (1.25 s)^2); the ratio r exp(-a (r-mu)^2) has a closed-form max.
      const double s = tc::ring_sigma, mu = tc::ring_radius, sp = 1.25 * s;
      const double a = 1.0 / (2 * s * s) - 1.0 / (2 * sp * sp);
      const double rstar = (2 * a * mu + std::sqrt(4 * a * a * mu * mu + 8 * a)) / (4 * a);
      const double bound = rstar * std::exp(-a * (rstar - mu) * (rstar - mu));
      double r = 0.0;
      for (;;) {
        r = mu + sp * normal(rng);
        const double u = unif(rng);
        if (r > 0.0 && u * bound <= r * std::exp(-a * (r - mu) * (r - mu))) break;
      }
      const double theta = 2 * std::numbers::pi * unif(rng);
      x1 = r * std::cos(theta);
      x2 = r * std::sin(theta);
      return;
    }
    case TargetKind::funnel: {
      x1 = tc::funnel_sigma * normal(rng);
      x2 = std::exp(0.5 * x1) * normal(rng);
      return;
    }
    case TargetKind::gaussian_tridiag: break;
  }
  throw ContractViolation("sample_base called on gaussian target");
}

Eigen::MatrixXd ScoreTarget::sample(std::size_t n, Rng& rng) const {
  if (n < 1) throw InputError("sample: n must be >= 1");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), D_);
  std::normal_distribution<double> normal(0.0, 1.0);
  if (kind_ == TargetKind::gaussian_tridiag) {
    Eigen::VectorXd eps(D_);
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < D_; ++d) eps[d] = normal(rng);
      out.row(static_cast<Eigen::Index>(i)) = (sample_factor_ * eps).transpose();
    }
    return out;
  }
  const int N = D_ - 2;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    double x1 = 0.0, x2 = 0.0;
    sample_base(rng, x1, x2);
    out(row, 0) = x1;
    out(row, 1) = x2;
    for (int link = 1; link <= N; ++link) {
      const double parent = out(row, link);
      out(row, link + 1) = FunctionBank::value(FunctionBank::index_for_link(link), parent) +
                           params_.sigma_aug * normal(rng);
    }
  }
  return out;
}

}  // namespace mpobm
