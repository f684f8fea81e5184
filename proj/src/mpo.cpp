#include "mpobm/mpo.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mpobm/errors.hpp"
#include "mpobm/hamiltonian.hpp"

namespace mpobm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Tensor train with uniform physical dimension p; core d is (R_d, p, R_{d+1}).
struct Train {
  int p = 0;
  std::vector<int> bonds;
  std::vector<std::vector<double>> cores;
};

struct SweepStats {
  double discarded_sq = 0.0;
  bool cap_hit = false;
};

int keep_count(const Eigen::VectorXd& s, double err, int cap, SweepStats& stats) {
  int count = 0;
  if (s.size() > 0 && s[0] > 0.0) {
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (s[i] > 0.0 && s[i] >= err * s[0]) ++count;
    }
  }
  count = std::max(count, 1);
  if (count > cap) stats.cap_hit = true;
  const int k = std::min(count, cap);
  for (Eigen::Index i = k; i < s.size(); ++i) stats.discarded_sq += s[i] * s[i];
  return k;
}

std::vector<double> to_flat(const RowMat& m) { return {m.data(), m.data() + m.size()}; }

// Left-to-right sequential SVD of a flat tensor with D sites of dimension p.
Train tt_svd(std::vector<double> data, int p, int D, double err, int cap, SweepStats& stats) {
  Train t;
  t.p = p;
  t.bonds.assign(D + 1, 1);
  t.cores.resize(D);
  int Rl = 1;
  for (int d = 0; d + 1 < D; ++d) {
    const Eigen::Index rows = static_cast<Eigen::Index>(Rl) * p;
    const Eigen::Index cols = static_cast<Eigen::Index>(data.size()) / rows;
    const Eigen::MatrixXd A = Eigen::Map<const RowMat>(data.data(), rows, cols);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const int k = keep_count(s, err, cap, stats);
    t.cores[d] = to_flat(RowMat(svd.matrixU().leftCols(k)));
    data = to_flat(RowMat(s.head(k).asDiagonal() * svd.matrixV().leftCols(k).transpose()));
    t.bonds[d + 1] = k;
    Rl = k;
  }
  t.cores[D - 1] = std::move(data);
  return t;
}

// QR sweep leaving cores 0..D-2 left-orthonormal.
void left_orthonormalize(Train& t) {
  const int D = static_cast<int>(t.cores.size());
  for (int d = 0; d + 1 < D; ++d) {
    const Eigen::Index rows = static_cast<Eigen::Index>(t.bonds[d]) * t.p, cols = t.bonds[d + 1];
    const Eigen::MatrixXd A = Eigen::Map<const RowMat>(t.cores[d].data(), rows, cols);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    const Eigen::Index k = std::min(rows, cols);
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, k);
    const Eigen::MatrixXd R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    t.cores[d] = to_flat(RowMat(Q));
    const Eigen::Index next_cols = static_cast<Eigen::Index>(t.p) * t.bonds[d + 2];
    const Eigen::MatrixXd B = Eigen::Map<const RowMat>(t.cores[d + 1].data(), cols, next_cols);
    t.cores[d + 1] = to_flat(RowMat(R * B));
    t.bonds[d + 1] = static_cast<int>(k);
  }
}

// Right-to-left truncating SVD sweep; exact Schmidt values if the left part is orthonormal.
void right_sweep(Train& t, double err, int cap, SweepStats& stats) {
  const int D = static_cast<int>(t.cores.size());
  for (int d = D - 1; d >= 1; --d) {
    const Eigen::Index Rl = t.bonds[d], cols = static_cast<Eigen::Index>(t.p) * t.bonds[d + 1];
    const Eigen::MatrixXd A = Eigen::Map<const RowMat>(t.cores[d].data(), Rl, cols);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const int k = keep_count(s, err, cap, stats);
    t.cores[d] = to_flat(RowMat(svd.matrixV().leftCols(k).transpose()));
    const Eigen::MatrixXd US = svd.matrixU().leftCols(k) * s.head(k).asDiagonal();
    const Eigen::Index prev_rows = static_cast<Eigen::Index>(t.bonds[d - 1]) * t.p;
    const Eigen::MatrixXd P = Eigen::Map<const RowMat>(t.cores[d - 1].data(), prev_rows, Rl);
    t.cores[d - 1] = to_flat(RowMat(P * US));
    t.bonds[d] = k;
  }
}

MPO train_to_mpo(Train&& t, int K) {
  MPO m;
  m.D = static_cast<int>(t.cores.size());
  m.K = K;
  m.bonds = std::move(t.bonds);
  m.cores = std::move(t.cores);
  return m;
}

void fill_report(CompressedMPO& out, const Eigen::MatrixXd* rho, double bound, double err, int cap, bool cap_hit) {
  auto& rep = out.report;
  rep.bonds = out.mpo.bonds;
  rep.max_bond = out.mpo.max_bond();
  rep.err = err;
  rep.max_bond_cap = cap;
  rep.cap_hit = cap_hit;
  if (rho) {
    rep.frobenius_error = (*rho - to_dense(out.mpo)).norm();
    rep.error_is_bound = false;
  } else {
    rep.frobenius_error = bound;
    rep.error_is_bound = true;
  }
}

void check_compression_args(double err, int max_bond) {
  if (!(err >= 0.0) || !std::isfinite(err)) throw ConfigError("err must be a finite non-negative number");
  if (max_bond < 1) throw ConfigError("max_bond must be >= 1");
}

}  // namespace

int MPO::max_bond() const {
  int m = 1;
  for (int d = 1; d < D; ++d) m = std::max(m, bonds[d]);
  return m;
}

Eigen::MatrixXd MPO::site_matrix(int d, const Eigen::MatrixXd& W) const {
  const int Rl = bonds[d], Rr = bonds[d + 1];
  // row a of the core holds the K x K grid of length-Rr blocks
  const Eigen::Map<const RowMatrix> C(cores[d].data(), Rl, static_cast<Eigen::Index>(K) * K * Rr);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(Rl, Rr);
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      if (W(i, j) != 0.0) M += W(i, j) * C.middleCols((static_cast<Eigen::Index>(i) * K + j) * Rr, Rr);
    }
  }
  return M;
}

double MPO::trace() const {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(K, K);
  Eigen::RowVectorXd env = Eigen::RowVectorXd::Ones(1);
  for (int d = 0; d < D; ++d) env = env * site_matrix(d, I);
  return env[0];
}

std::int64_t dense_bond_bound(int K, int D, int cut) {
  if (cut < 1 || cut >= D) throw ContractViolation("dense_bond_bound: cut must be in [1, D-1]");
  const auto left = state_dim(K * K, cut, 0), right = state_dim(K * K, D - cut, 0);
  return std::min(left, right);
}

CompressedMPO to_mpo(const Eigen::MatrixXd& rho, int K, int D, double err, int max_bond) {
  check_compression_args(err, max_bond);
  const auto N = state_dim(K, D);
  if (rho.rows() != N || rho.cols() != N) throw ContractViolation("to_mpo: rho is not K^D x K^D");
  // spread(I) places the digits of I at every other position in base K
  std::vector<std::int64_t> spread(N);
  for (std::int64_t I = 0; I < N; ++I) {
    std::int64_t rem = I, s = 0, place = 1;
    for (int d = 0; d < D; ++d) {
      s += (rem % K) * place;
      rem /= K;
      place *= static_cast<std::int64_t>(K) * K;
    }
    spread[I] = s;
  }
  std::vector<double> data(static_cast<std::size_t>(N * N));
  for (std::int64_t J = 0; J < N; ++J) {
    for (std::int64_t I = 0; I < N; ++I) data[K * spread[I] + spread[J]] = rho(I, J);
  }
  SweepStats stats;
  Train t = tt_svd(std::move(data), K * K, D, err, max_bond, stats);
  right_sweep(t, err, max_bond, stats);
  CompressedMPO out{train_to_mpo(std::move(t), K), {}};
  fill_report(out, &rho, 0.0, err, max_bond, stats.cap_hit);
  return out;
}

CompressedMPO to_mpo_factored(const Eigen::MatrixXd& U, const Eigen::VectorXd& weights, int K, int D, double err,
                              int max_bond) {
  check_compression_args(err, max_bond);
  const auto N = state_dim(K, D, 0);
  if (U.rows() != N || U.cols() != weights.size() || U.cols() < 1) {
    throw ContractViolation("to_mpo_factored: shape mismatch");
  }
  SweepStats stats;
  double vector_err = 0.0;
  std::vector<Train> mps;
  for (Eigen::Index k = 0; k < U.cols(); ++k) {
    SweepStats s;
    mps.push_back(tt_svd({U.col(k).data(), U.col(k).data() + N}, K, D, err, max_bond, s));
    const double e = std::sqrt(s.discarded_sq);
    vector_err += std::abs(weights[k]) * (2.0 * U.col(k).norm() * e + e * e);
    stats.cap_hit = stats.cap_hit || s.cap_hit;
  }

  // direct sum of the operators w_k u_k u_k^T, each with bond R^2
  Train t;
  t.p = K * K;
  t.bonds.assign(D + 1, 0);
  t.bonds[0] = t.bonds[D] = 1;
  for (int d = 1; d < D; ++d) {
    for (const auto& m : mps) t.bonds[d] += m.bonds[d] * m.bonds[d];
  }
  t.cores.resize(D);
  for (int d = 0; d < D; ++d) {
    const int Rl = t.bonds[d], Rr = t.bonds[d + 1];
    auto& core = t.cores[d];
    core.assign(static_cast<std::size_t>(Rl) * t.p * Rr, 0.0);
    int off_l = 0, off_r = 0;
    for (std::size_t k = 0; k < mps.size(); ++k) {
      const auto& m = mps[k];
      const int rl = m.bonds[d], rr = m.bonds[d + 1];
      const double scale = d == 0 ? weights[k] : 1.0;
      const auto& A = m.cores[d];
      for (int a = 0; a < rl; ++a)
        for (int a2 = 0; a2 < rl; ++a2)
          for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j)
              for (int b = 0; b < rr; ++b)
                for (int b2 = 0; b2 < rr; ++b2) {
                  const int row = d == 0 ? 0 : off_l + a * rl + a2;
                  const int col = d == D - 1 ? 0 : off_r + b * rr + b2;
                  core[((static_cast<std::size_t>(row) * K + i) * K + j) * Rr + col] +=
                      scale * A[(a * K + i) * rr + b] * A[(a2 * K + j) * rr + b2];
                }
      off_l += rl * rl;
      off_r += rr * rr;
    }
  }
  left_orthonormalize(t);
  SweepStats rec;
  right_sweep(t, err, max_bond, rec);
  stats.cap_hit = stats.cap_hit || rec.cap_hit;
  CompressedMPO out{train_to_mpo(std::move(t), K), {}};
  if (N <= kDenseCap) {
    const Eigen::MatrixXd rho = U * weights.asDiagonal() * U.transpose();
    fill_report(out, &rho, 0.0, err, max_bond, stats.cap_hit);
  } else {
    fill_report(out, nullptr, vector_err + std::sqrt(rec.discarded_sq), err, max_bond, stats.cap_hit);
  }
  return out;
}

Eigen::MatrixXd to_dense(const MPO& mpo) {
  const int K = mpo.K, D = mpo.D;
  const auto N = state_dim(K, D);
  // X holds rows (I, J) over the sites so far and columns for the open bond
  std::vector<double> X{1.0};
  std::int64_t n = 1;
  int R = 1;
  for (int d = 0; d < D; ++d) {
    const int Rr = mpo.bonds[d + 1];
    const Eigen::Map<const RowMat> G(mpo.cores[d].data(), R, static_cast<Eigen::Index>(K) * K * Rr);
    const Eigen::Map<const RowMat> Xm(X.data(), n * n, R);
    const RowMat Y = Xm * G;
    const std::int64_t n2 = n * K;
    std::vector<double> next(static_cast<std::size_t>(n2 * n2 * Rr));
    for (std::int64_t I = 0; I < n; ++I)
      for (std::int64_t J = 0; J < n; ++J)
        for (int i = 0; i < K; ++i)
          for (int j = 0; j < K; ++j) {
            const double* src = Y.data() + (I * n + J) * (static_cast<std::int64_t>(K) * K * Rr) + (i * K + j) * Rr;
            double* dst = next.data() + ((I * K + i) * n2 + (J * K + j)) * Rr;
            std::copy(src, src + Rr, dst);
          }
    X = std::move(next);
    n = n2;
    R = Rr;
  }
  Eigen::MatrixXd rho(N, N);
  for (std::int64_t I = 0; I < N; ++I)
    for (std::int64_t J = 0; J < N; ++J) rho(I, J) = X[I * N + J];
  return rho;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMpoMagic[8] = {'M', 'P', 'O', 'B', 'M', 'O', '1', '\0'};

}  // namespace

void save_mpo(const CompressedMPO& m, const std::filesystem::path& path, std::uint64_t seed) {
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot write " + path.string());
    os.write(kMpoMagic, sizeof kMpoMagic);
    for (const auto& core : m.mpo.cores) {
      os.write(reinterpret_cast<const char*>(core.data()), static_cast<std::streamsize>(core.size() * sizeof(double)));
    }
    if (!os) throw InputError("failed writing " + path.string());
  }
  nlohmann::json shapes = nlohmann::json::array();
  for (int d = 0; d < m.mpo.D; ++d) shapes.push_back({m.mpo.bonds[d], m.mpo.K, m.mpo.K, m.mpo.bonds[d + 1]});
  const nlohmann::json side{{"D", m.mpo.D},
                            {"K", m.mpo.K},
                            {"bonds", m.mpo.bonds},
                            {"core_shapes", shapes},
                            {"err", m.report.err},
                            {"max_bond", m.report.max_bond_cap},
                            {"achieved_max_bond", m.report.max_bond},
                            {"frobenius_error", m.report.frobenius_error},
                            {"error_is_bound", m.report.error_is_bound},
                            {"cap_hit", m.report.cap_hit},
                            {"seed", seed}};
  std::ofstream js(path.string() + ".json", std::ios::trunc);
  if (!js) throw InputError("cannot write sidecar for " + path.string());
  js << side.dump(2) << '\n';
}

CompressedMPO load_mpo(const std::filesystem::path& path) {
  std::ifstream js(path.string() + ".json");
  if (!js) throw InputError("missing sidecar " + path.string() + ".json");
  CompressedMPO out;
  try {
    const auto side = nlohmann::json::parse(js);
    out.mpo.D = side.at("D").get<int>();
    out.mpo.K = side.at("K").get<int>();
    out.mpo.bonds = side.at("bonds").get<std::vector<int>>();
    out.report.err = side.at("err").get<double>();
    out.report.max_bond_cap = side.at("max_bond").get<int>();
    out.report.frobenius_error = side.at("frobenius_error").get<double>();
    out.report.error_is_bound = side.at("error_is_bound").get<bool>();
    out.report.cap_hit = side.at("cap_hit").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad sidecar " + path.string() + ".json: " + e.what());
  }
  if (out.mpo.D < 1 || out.mpo.K < 1 || static_cast<int>(out.mpo.bonds.size()) != out.mpo.D + 1) {
    throw InputError("inconsistent MPO header in " + path.string());
  }
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMpoMagic, sizeof magic) != 0) throw InputError(path.string() + " is not an MPO file");
  out.mpo.cores.resize(out.mpo.D);
  for (int d = 0; d < out.mpo.D; ++d) {
    auto& core = out.mpo.cores[d];
    core.resize(static_cast<std::size_t>(out.mpo.bonds[d]) * out.mpo.K * out.mpo.K * out.mpo.bonds[d + 1]);
    is.read(reinterpret_cast<char*>(core.data()), static_cast<std::streamsize>(core.size() * sizeof(double)));
    if (!is) throw InputError("MPO file truncated: " + path.string());
  }
  out.report.bonds = out.mpo.bonds;
  out.report.max_bond = out.mpo.max_bond();
  return out;
}

// ---------------------------------------------------------------------------

BornModel BornModel::from_mpo(MPO mpo, const Basis& basis) {
  if (mpo.K != basis.size()) throw ContractViolation("BornModel: MPO and basis disagree on K");
  const double tr = mpo.trace();
  if (!(tr > 1e-300) || !std::isfinite(tr)) throw NumericalError("BornModel: MPO trace is not positive");
  for (auto& v : mpo.cores[0]) v /= tr;
  BornModel m(basis, mpo.D);
  m.mpo_ = std::move(mpo);
  return m;
}

BornModel BornModel::from_dense(const Eigen::MatrixXd& rho, const Basis& basis, int D) {
  const auto N = state_dim(basis.size(), D);
  if (rho.rows() != N || rho.cols() != N) throw ContractViolation("BornModel: rho is not K^D x K^D");
  const double tr = rho.trace();
  if (!(tr > 1e-300) || !std::isfinite(tr)) throw NumericalError("BornModel: rho trace is not positive");
  BornModel m(basis, D);
  m.rho_ = rho / tr;
  m.mpo_ = to_mpo(*m.rho_, basis.size(), D, 0.0, INT_MAX).mpo;
  return m;
}

BornModel BornModel::from_factors(const Eigen::MatrixXd& U, const Basis& basis, int D) {
  const auto N = state_dim(basis.size(), D, 0);
  if (U.rows() != N || U.cols() < 1) throw ContractViolation("BornModel: factor shape mismatch");
  const double f = U.norm();
  if (!(f > 0.0)) throw NumericalError("BornModel: zero factors");
  BornModel m(basis, D);
  m.factors_ = U / f;
  return m;
}

const MPO& BornModel::mpo() const {
  if (!mpo_) throw ContractViolation("model has no MPO; compress the factors first");
  return *mpo_;
}

const Eigen::MatrixXd& BornModel::dense() const {
  if (!rho_) throw ContractViolation("model has no dense density operator");
  return *rho_;
}

double BornModel::trace() const {
  if (rho_) return rho_->trace();
  if (factors_) return factors_->squaredNorm();
  return mpo_->trace();
}

Eigen::VectorXd BornModel::features(std::span<const double> x, int deriv) const {
  const int K = basis_.size();
  const auto N = state_dim(K, D_, 0);
  Eigen::VectorXd out(N);
  out[0] = 1.0;
  std::int64_t len = 1;
  Eigen::VectorXd f(K);
  for (int d = 0; d < D_; ++d) {
    f = d == deriv ? basis_.phi_dot(x[d]) : basis_.phi(x[d]);
    for (std::int64_t idx = len - 1; idx >= 0; --idx) {
      const double v = out[idx];
      for (int k = K - 1; k >= 0; --k) out[idx * K + k] = v * f[k];
    }
    len *= K;
  }
  return out;
}

namespace {

void check_point(std::span<const double> x, int D) {
  if (static_cast<int>(x.size()) != D) throw InputError("point has the wrong dimension");
  for (double v : x) {
    if (!std::isfinite(v)) throw InputError("non-finite coordinate");
  }
}

}  // namespace

double BornModel::eval(std::span<const double> x) const {
  check_point(x, D_);
  if (rho_) {
    const Eigen::VectorXd phi = features(x, -1);
    return phi.dot(*rho_ * phi);
  }
  if (factors_) return (factors_->transpose() * features(x, -1)).squaredNorm();
  Eigen::MatrixXd X(1, D_);
  for (int d = 0; d < D_; ++d) X(0, d) = x[d];
  return eval_batch(X)[0];
}

Eigen::VectorXd BornModel::eval_batch(const Eigen::MatrixXd& X) const {
  if (X.cols() != D_) throw InputError("points have the wrong dimension");
  if (!X.allFinite()) throw InputError("non-finite coordinate");
  const Eigen::Index n = X.rows();
  const int K = basis_.size();
  if (rho_ || factors_) {
    Eigen::MatrixXd Phi(state_dim(K, D_, 0), n);
    std::vector<double> x(D_);
    for (Eigen::Index s = 0; s < n; ++s) {
      for (int d = 0; d < D_; ++d) x[d] = X(s, d);
      Phi.col(s) = features(x, -1);
    }
    if (rho_) return Phi.cwiseProduct(*rho_ * Phi).colwise().sum().transpose();
    return (factors_->transpose() * Phi).colwise().squaredNorm().transpose();
  }
  // left environments for all points at once: E (n x R_d) times the core
  // flattened to R_d x (K K R_{d+1}), then the site weights phi_i phi_j
  Eigen::MatrixXd E = Eigen::MatrixXd::Ones(n, 1);
  Eigen::MatrixXd P(n, K);
  for (int d = 0; d < D_; ++d) {
    const int Rl = mpo_->bonds[d], Rr = mpo_->bonds[d + 1];
    const Eigen::Map<const RowMatrix> C(mpo_->cores[d].data(), Rl, static_cast<Eigen::Index>(K) * K * Rr);
    const Eigen::MatrixXd T = E * C;
    for (Eigen::Index s = 0; s < n; ++s) P.row(s) = basis_.phi(X(s, d)).transpose();
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(n, Rr);
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < K; ++j) {
        const Eigen::VectorXd w = P.col(i).cwiseProduct(P.col(j));
        next += w.asDiagonal() * T.middleCols((static_cast<Eigen::Index>(i) * K + j) * Rr, Rr);
      }
    }
    E = std::move(next);
  }
  return E.col(0);
}

LogValue BornModel::log(std::span<const double> x, double floor) const {
  const double q = eval(x);
  if (q > floor) return {std::log(q), false};
  return {std::log(floor), true};
}

ScoreValue BornModel::score(std::span<const double> x, double floor) const {
  check_point(x, D_);
  Eigen::VectorXd dq(D_);
  double q = 0.0;
  if (rho_ || factors_) {
    const Eigen::VectorXd phi = features(x, -1);
    if (rho_) {
      const Eigen::VectorXd rp = *rho_ * phi;
      q = phi.dot(rp);
      for (int d = 0; d < D_; ++d) dq[d] = 2.0 * features(x, d).dot(rp);
    } else {
      const Eigen::VectorXd a = factors_->transpose() * phi;
      q = a.squaredNorm();
      for (int d = 0; d < D_; ++d) dq[d] = 2.0 * a.dot(factors_->transpose() * features(x, d));
    }
  } else {
    std::vector<Eigen::MatrixXd> val(D_), der(D_);
    for (int d = 0; d < D_; ++d) {
      const Eigen::VectorXd p = basis_.phi(x[d]), dp = basis_.phi_dot(x[d]);
      val[d] = mpo_->site_matrix(d, p * p.transpose());
      der[d] = mpo_->site_matrix(d, dp * p.transpose() + p * dp.transpose());
    }
    std::vector<Eigen::RowVectorXd> left(D_ + 1);
    std::vector<Eigen::VectorXd> right(D_ + 1);
    left[0] = Eigen::RowVectorXd::Ones(1);
    for (int d = 0; d < D_; ++d) left[d + 1] = left[d] * val[d];
    right[D_] = Eigen::VectorXd::Ones(1);
    for (int d = D_ - 1; d >= 0; --d) right[d] = val[d] * right[d + 1];
    q = left[D_][0];
    for (int d = 0; d < D_; ++d) dq[d] = left[d] * der[d] * right[d + 1];
  }
  const bool ok = q > floor;
  return {dq / (ok ? q : floor), ok};
}

namespace {

void check_subset(const std::vector<int>& S, int D) {
  for (std::size_t k = 0; k < S.size(); ++k) {
    if (S[k] < 0 || S[k] >= D) throw InputError("coordinate subset out of range");
    if (k > 0 && S[k] <= S[k - 1]) throw InputError("coordinate subset must be strictly increasing");
  }
}

}  // namespace

double BornModel::marginal(const std::vector<int>& S, std::span<const double> x_S) const {
  if (S.empty()) throw InputError("marginal: empty coordinate subset");
  check_subset(S, D_);
  if (x_S.size() != S.size()) throw InputError("marginal: one value per coordinate in S");
  for (double v : x_S) {
    if (!std::isfinite(v)) throw InputError("non-finite coordinate");
  }
  const MPO& m = mpo();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(basis_.size(), basis_.size());
  Eigen::RowVectorXd env = Eigen::RowVectorXd::Ones(1);
  std::size_t k = 0;
  for (int d = 0; d < D_; ++d) {
    if (k < S.size() && S[k] == d) {
      const Eigen::VectorXd p = basis_.phi(x_S[k++]);
      env = env * m.site_matrix(d, p * p.transpose());
    } else {
      env = env * m.site_matrix(d, I);
    }
  }
  return env[0];
}

BoxProbability BornModel::box_probability(const std::vector<int>& S, const std::vector<Interval>& box) const {
  check_subset(S, D_);
  if (box.size() != S.size()) throw InputError("box_probability: one interval per coordinate in S");
  const MPO& m = mpo();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(basis_.size(), basis_.size());
  Eigen::RowVectorXd env = Eigen::RowVectorXd::Ones(1);
  std::size_t k = 0;
  for (int d = 0; d < D_; ++d) {
    if (k < S.size() && S[k] == d) {
      const auto [a, b] = box[k++];
      env = env * m.site_matrix(d, interval_overlap(basis_, a, b));
    } else {
      env = env * m.site_matrix(d, I);
    }
  }
  const double raw = env[0];
  BoxProbability out;
  out.clipped = raw < -1e-8 || raw > 1.0 + 1e-8;
  out.value = std::clamp(raw, 0.0, 1.0);
  return out;
}

BornModel density_from_ground(const GroundSpace& gs, const Basis& basis, int D) {
  const auto N = state_dim(basis.size(), D, 0);
  if (gs.U.rows() != N || gs.U.cols() != gs.r) throw ContractViolation("density_from_ground: shape mismatch");
  if (N <= kDenseCap) return BornModel::from_dense(gs.U * gs.U.transpose() / gs.r, basis, D);
  return BornModel::from_factors(gs.U, basis, D);
}

}  // namespace mpobm
