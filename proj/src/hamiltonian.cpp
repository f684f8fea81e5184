#include "mpobm/hamiltonian.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mpobm/errors.hpp"
#include "mpobm/parallel.hpp"
#include "mpobm/quadrature.hpp"
#include "mpobm/rng.hpp"

namespace mpobm {

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::exact: return "exact";
    case EstimatorKind::global: return "global";
    case EstimatorKind::local: return "local";
  }
  return "unknown";
}

EstimatorKind estimator_kind_from_string(const std::string& name) {
  if (name == "exact" || name == "quadrature") return EstimatorKind::exact;
  if (name == "global") return EstimatorKind::global;
  if (name == "local") return EstimatorKind::local;
  throw ConfigError("unknown estimator '" + name + "'");
}

std::int64_t state_dim(int K, int D, std::int64_t cap) {
  std::int64_t n = 1;
  for (int d = 0; d < D; ++d) {
    n *= K;
    if (n > (std::int64_t{1} << 40)) throw SizeError("K^D overflows");
  }
  if (cap > 0 && n > cap) {
    throw SizeError("K^D = " + std::to_string(n) + " exceeds the dense cap " + std::to_string(cap));
  }
  return n;
}

std::vector<std::uint64_t> SamplingPlan::edge_counts(int n_edges) const {
  if (n_edges < 1) throw ContractViolation("edge_counts: no edges");
  std::vector<std::uint64_t> out(n_edges, budget / n_edges);
  for (std::uint64_t e = 0; e < budget % n_edges; ++e) ++out[e];
  return out;
}

const Eigen::MatrixXd& HamiltonianRep::dense() const {
  if (!is_dense()) throw ContractViolation("Hamiltonian is not dense");
  return std::get<DenseH>(data).matrix;
}

const LocalSum& HamiltonianRep::local() const {
  if (is_dense()) throw ContractViolation("Hamiltonian is not a local sum");
  return std::get<LocalSum>(data);
}

std::int64_t HamiltonianRep::dim() const { return state_dim(meta.K, meta.D, 0); }

namespace {

// out <- f_0 (x) f_1 (x) ... (x) f_{n-1}, first factor most significant.
void kron_chain(const double* const* factors, int n, int K, double* out) {
  out[0] = 1.0;
  std::int64_t len = 1;
  for (int s = 0; s < n; ++s) {
    const double* f = factors[s];
    for (std::int64_t idx = len - 1; idx >= 0; --idx) {
      const double v = out[idx];
      for (int k = K - 1; k >= 0; --k) out[idx * K + k] = v * f[k];
    }
    len *= K;
  }
}

// Site-local basis values for a window of coordinates.
class WindowFeatures {
 public:
  WindowFeatures(const Basis& basis, int width)
      : basis_(basis), K_(basis.size()), w_(width), phi_(width * K_), dphi_(width * K_), ptrs_(width) {}

  void load(const double* x) {
    for (int s = 0; s < w_; ++s) {
      basis_.eval(x[s], {phi_.data() + s * K_, static_cast<std::size_t>(K_)},
                  {dphi_.data() + s * K_, static_cast<std::size_t>(K_)});
    }
  }

  // Product features with the derivative at site `deriv` (-1 for none).
  void features(int deriv, double* out) {
    for (int s = 0; s < w_; ++s) ptrs_[s] = (s == deriv ? dphi_.data() : phi_.data()) + s * K_;
    kron_chain(ptrs_.data(), w_, K_, out);
  }

 private:
  const Basis& basis_;
  int K_;
  int w_;
  std::vector<double> phi_, dphi_;
  std::vector<const double*> ptrs_;
};

// sum_i w_i (H1 - 2 H2 + 4 H3)(x_i) over the rows of X, not symmetrized.
Eigen::MatrixXd integrand_sum(const Basis& basis, const ScoreTarget& target, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& w) {
  const int D = target.dim();
  const auto N = state_dim(basis.size(), D);
  const Eigen::Index m = X.rows();
  const Eigen::Index per = D + 2;
  Eigen::MatrixXd P(N, m * per), Q(N, m * per);
  WindowFeatures feats(basis, D);
  std::vector<double> x(D);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (int d = 0; d < D; ++d) x[d] = X(i, d);
    const Eigen::VectorXd s = target.score(x);
    feats.load(x.data());
    const Eigen::Index c0 = i * per;
    feats.features(-1, P.col(c0).data());
    auto g = P.col(c0 + 1);
    g.setZero();
    for (int j = 0; j < D; ++j) {
      double* dcol = P.col(c0 + 2 + j).data();
      feats.features(j, dcol);
      g += s[j] * P.col(c0 + 2 + j);
      Q.col(c0 + 2 + j) = (4.0 * w[i]) * P.col(c0 + 2 + j);
    }
    Q.col(c0) = (w[i] * s.squaredNorm()) * P.col(c0) - (2.0 * w[i]) * g;
    Q.col(c0 + 1) = (-2.0 * w[i]) * P.col(c0);
  }
  Eigen::MatrixXd out(N, N);
  out.noalias() = P * Q.transpose();
  return out;
}

void symmetrize(Eigen::MatrixXd& H) { H = (0.5 * (H + H.transpose())).eval(); }

}  // namespace

PointBlocks h_blocks_at(const Basis& basis, const ScoreTarget& target, std::span<const double> x) {
  const int D = target.dim();
  if (static_cast<int>(x.size()) != D) throw InputError("h_blocks_at: wrong dimension");
  const auto N = state_dim(basis.size(), D);
  const Eigen::VectorXd s = target.score(x);
  WindowFeatures feats(basis, D);
  feats.load(x.data());
  Eigen::VectorXd phi(N), g = Eigen::VectorXd::Zero(N), dphi(N);
  feats.features(-1, phi.data());
  PointBlocks out;
  out.h3 = Eigen::MatrixXd::Zero(N, N);
  for (int j = 0; j < D; ++j) {
    feats.features(j, dphi.data());
    g += s[j] * dphi;
    out.h3.noalias() += dphi * dphi.transpose();
  }
  out.h1 = s.squaredNorm() * phi * phi.transpose();
  out.h2 = phi * g.transpose() + g * phi.transpose();
  return out;
}

HamiltonianRep exact_H_quadrature(const Basis& basis, const ScoreTarget& target, const QuadratureHOptions& opts) {
  const int D = target.dim();
  const int K = basis.size();
  const auto N = state_dim(K, D);
  if (opts.nodes < 2) throw ConfigError("quadrature H needs at least 2 nodes");
  if (!(opts.box_halfwidth > 0.0)) throw ConfigError("box half-width must be positive");
  double total = 1.0;
  for (int d = 0; d < D; ++d) total *= opts.nodes;
  if (total > double(1 << 24)) throw SizeError("quadrature grid has more than 2^24 points");
  const auto n_points = static_cast<std::int64_t>(total);
  const auto rule = gauss_legendre(opts.nodes, -opts.box_halfwidth, opts.box_halfwidth);
  const std::uint64_t q0 = target.queries();

  constexpr std::int64_t batch = 256;
  const std::int64_t n_chunks = (n_points + batch - 1) / batch;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(N, N);
  ordered_reduce<Eigen::MatrixXd>(
      static_cast<std::size_t>(n_chunks),
      [&](std::size_t c) {
        const std::int64_t begin = static_cast<std::int64_t>(c) * batch;
        const std::int64_t end = std::min(n_points, begin + batch);
        Eigen::MatrixXd X(end - begin, D);
        Eigen::VectorXd w(end - begin);
        for (std::int64_t p = begin; p < end; ++p) {
          std::int64_t rem = p;
          double wt = 1.0;
          for (int d = D - 1; d >= 0; --d) {
            const int k = static_cast<int>(rem % opts.nodes);
            rem /= opts.nodes;
            X(p - begin, d) = rule.nodes[k];
            wt *= rule.weights[k];
          }
          w[p - begin] = wt;
        }
        return integrand_sum(basis, target, X, w);
      },
      [&](Eigen::MatrixXd&& part) { H += part; });
  symmetrize(H);

  HamiltonianRep rep{DenseH{std::move(H)}, {}};
  rep.meta.D = D;
  rep.meta.K = K;
  rep.meta.estimator = EstimatorKind::exact;
  rep.meta.queries = target.queries() - q0;
  rep.meta.box_halfwidth = opts.box_halfwidth;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rep.dense(), Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
  if (lmin < -1e-6 * scale) {
    std::ostringstream msg;
    msg << "quadrature H is not PSD: lambda_min = " << lmin << " (||H|| = " << scale << "); refine the grid";
    rep.meta.warnings.push_back(msg.str());
  }
  return rep;
}

HamiltonianRep estimate_H_global(const Basis& basis, const ScoreTarget& target, const SamplingPlan& plan) {
  const int D = target.dim();
  const int K = basis.size();
  const auto N = state_dim(K, D);
  if (plan.budget < 1) throw ConfigError("global estimator needs a budget of at least 1");
  if (!(plan.box_halfwidth > 0.0)) throw ConfigError("box half-width must be positive");
  if (plan.chunk < 1) throw ConfigError("chunk size must be positive");
  const double weight = std::pow(plan.box_length(), D) / static_cast<double>(plan.budget);
  const std::uint64_t chunk = static_cast<std::uint64_t>(plan.chunk);
  const std::uint64_t n_chunks = (plan.budget + chunk - 1) / chunk;
  const std::uint64_t q0 = target.queries();

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(N, N);
  ordered_reduce<Eigen::MatrixXd>(
      n_chunks,
      [&](std::size_t c) {
        const std::uint64_t m = std::min(chunk, plan.budget - c * chunk);
        Rng rng = make_stream(plan.seed, c);
        std::uniform_real_distribution<double> unif(-plan.box_halfwidth, plan.box_halfwidth);
        Eigen::MatrixXd X(m, D);
        for (std::uint64_t i = 0; i < m; ++i) {
          for (int d = 0; d < D; ++d) X(i, d) = unif(rng);
        }
        return integrand_sum(basis, target, X, Eigen::VectorXd::Constant(m, weight));
      },
      [&](Eigen::MatrixXd&& part) { H += part; });
  symmetrize(H);

  HamiltonianRep rep{DenseH{std::move(H)}, {}};
  rep.meta.D = D;
  rep.meta.K = K;
  rep.meta.estimator = EstimatorKind::global;
  rep.meta.queries = target.queries() - q0;
  rep.meta.budget = plan.budget;
  rep.meta.box_halfwidth = plan.box_halfwidth;
  rep.meta.seed = plan.seed;
  return rep;
}

namespace {

struct EdgeBlocks {
  LocalTerm score2, cross, dgram;
};

EdgeBlocks estimate_edge(const Basis& basis, const ScoreTarget& target, const SamplingPlan& plan, int j,
                         std::uint64_t m) {
  const int D = target.dim();
  const int K = basis.size();
  const int lo = std::max(0, j - 1), hi = std::min(D - 1, j + 1);
  const int C = hi - lo + 1;
  const auto& clique = target.clique_map()[j];
  for (int k : clique) {
    if (k < lo || k > hi) {
      throw ContractViolation("clique of coordinate " + std::to_string(j) + " leaves its window");
    }
  }
  const auto Nw = state_dim(K, C, 0);
  const double weight = std::pow(plan.box_length(), C) / static_cast<double>(m);

  Eigen::MatrixXd h1 = Eigen::MatrixXd::Zero(Nw, Nw), hL = Eigen::MatrixXd::Zero(Nw, Nw);
  Eigen::MatrixXd h3 = Eigen::MatrixXd::Zero(Nw, Nw);
  Rng rng = make_stream(plan.seed, static_cast<std::uint64_t>(j));
  std::uniform_real_distribution<double> unif(-plan.box_halfwidth, plan.box_halfwidth);
  WindowFeatures feats(basis, C);
  std::vector<double> xw(C), vals(clique.size());

  constexpr std::uint64_t batch = 1024;
  for (std::uint64_t start = 0; start < m; start += batch) {
    const auto nb = static_cast<Eigen::Index>(std::min(batch, m - start));
    Eigen::MatrixXd phi(Nw, nb), dphi(Nw, nb);
    Eigen::VectorXd s(nb);
    for (Eigen::Index i = 0; i < nb; ++i) {
      for (int c = 0; c < C; ++c) xw[c] = unif(rng);
      for (std::size_t k = 0; k < clique.size(); ++k) vals[k] = xw[clique[k] - lo];
      s[i] = target.local_score(j, vals);
      feats.load(xw.data());
      feats.features(-1, phi.col(i).data());
      feats.features(j - lo, dphi.col(i).data());
    }
    const Eigen::MatrixXd ws2 = phi * (weight * s.array().square()).matrix().asDiagonal();
    h1.noalias() += ws2 * phi.transpose();
    const Eigen::MatrixXd ws = phi * (weight * s).asDiagonal();
    hL.noalias() += ws * dphi.transpose();
    if (plan.sample_h3) h3.noalias() += weight * dphi * dphi.transpose();
  }

  std::vector<int> coords(C);
  for (int c = 0; c < C; ++c) coords[c] = lo + c;
  EdgeBlocks out;
  symmetrize(h1);
  out.score2 = LocalTerm{lo, hi, coords, std::move(h1), 1.0, "score2"};
  Eigen::MatrixXd cross = hL + hL.transpose();
  out.cross = LocalTerm{lo, hi, coords, std::move(cross), -2.0, "cross"};
  if (plan.sample_h3) {
    symmetrize(h3);
    out.dgram = LocalTerm{lo, hi, coords, std::move(h3), 4.0, "dgram"};
  }
  return out;
}

}  // namespace

HamiltonianRep estimate_H_local(const Basis& basis, const ScoreTarget& target, const SamplingPlan& plan) {
  const int D = target.dim();
  const int K = basis.size();
  if (!(plan.box_halfwidth > 0.0)) throw ConfigError("box half-width must be positive");
  if (plan.budget < static_cast<std::uint64_t>(D)) {
    throw ConfigError("local estimator needs a budget of at least one query per edge (B=" +
                      std::to_string(plan.budget) + ", edges=" + std::to_string(D) + ")");
  }
  if (static_cast<int>(target.clique_map().size()) != D) throw ContractViolation("target has no clique metadata");
  const auto counts = plan.edge_counts(D);
  const std::uint64_t q0 = target.queries();

  std::vector<EdgeBlocks> edges(D);
  parallel_for(D, [&](std::size_t j) { edges[j] = estimate_edge(basis, target, plan, static_cast<int>(j), counts[j]); });

  LocalSum sum;
  for (auto& e : edges) {
    sum.terms.push_back(std::move(e.score2));
    sum.terms.push_back(std::move(e.cross));
    if (plan.sample_h3) sum.terms.push_back(std::move(e.dgram));
  }
  if (!plan.sample_h3) {
    const Eigen::MatrixXd dgram = overlap_matrices(basis).dgram;
    for (int j = 0; j < D; ++j) sum.terms.push_back(LocalTerm{j, j, {}, dgram, 4.0, "dgram"});
  }

  HamiltonianRep rep{std::move(sum), {}};
  rep.meta.D = D;
  rep.meta.K = K;
  rep.meta.estimator = EstimatorKind::local;
  rep.meta.queries = target.queries() - q0;
  rep.meta.budget = plan.budget;
  rep.meta.box_halfwidth = plan.box_halfwidth;
  rep.meta.seed = plan.seed;
  return rep;
}

namespace {

void check_term(const LocalTerm& t, int K, int D) {
  if (t.lo < 0 || t.hi >= D || t.lo > t.hi) throw ContractViolation("local term window out of range");
  const auto w = state_dim(K, t.width(), 0);
  if (t.block.rows() != w || t.block.cols() != w) throw ContractViolation("local term block has the wrong size");
}

}  // namespace

Eigen::MatrixXd assemble_dense(const LocalSum& local, int K, int D) {
  const auto N = state_dim(K, D);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(N, N);
  for (const auto& t : local.terms) {
    check_term(t, K, D);
    const auto left = state_dim(K, t.lo, 0);
    const auto mid = state_dim(K, t.width(), 0);
    const auto right = state_dim(K, D - 1 - t.hi, 0);
    for (std::int64_t a = 0; a < left; ++a) {
      for (std::int64_t i = 0; i < mid; ++i) {
        for (std::int64_t k = 0; k < mid; ++k) {
          const double v = t.coefficient * t.block(i, k);
          if (v == 0.0) continue;
          const std::int64_t r0 = (a * mid + i) * right, c0 = (a * mid + k) * right;
          for (std::int64_t b = 0; b < right; ++b) H(r0 + b, c0 + b) += v;
        }
      }
    }
  }
  symmetrize(H);
  return H;
}

Eigen::VectorXd apply_H(const LocalSum& local, int K, int D, const Eigen::VectorXd& v) {
  const auto N = state_dim(K, D, 0);
  if (v.size() != N) throw InputError("apply_H: vector length is not K^D");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(N);
  for (const auto& t : local.terms) {
    check_term(t, K, D);
    const auto left = state_dim(K, t.lo, 0);
    const auto mid = state_dim(K, t.width(), 0);
    const auto right = state_dim(K, D - 1 - t.hi, 0);
    for (std::int64_t a = 0; a < left; ++a) {
      // slice (right x mid), column-major: element (b, i) sits at (a*mid + i)*right + b
      Eigen::Map<const Eigen::MatrixXd> vin(v.data() + a * mid * right, right, mid);
      Eigen::Map<Eigen::MatrixXd> vout(out.data() + a * mid * right, right, mid);
      vout.noalias() += t.coefficient * (vin * t.block.transpose());
    }
  }
  return out;
}

Eigen::VectorXd apply_H(const HamiltonianRep& H, const Eigen::VectorXd& v) {
  if (H.is_dense()) {
    if (v.size() != H.dense().rows()) throw InputError("apply_H: vector length is not K^D");
    return H.dense() * v;
  }
  return apply_H(H.local(), H.meta.K, H.meta.D, v);
}

Eigen::MatrixXd to_dense(const HamiltonianRep& H) {
  if (H.is_dense()) return H.dense();
  return assemble_dense(H.local(), H.meta.K, H.meta.D);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'P', 'O', 'B', 'M', 'H', '1', '\0'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw InputError("hamiltonian file truncated");
  return v;
}

void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  put<std::int64_t>(os, m.rows());
  put<std::int64_t>(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Eigen::MatrixXd get_matrix(std::istream& is) {
  const auto rows = get<std::int64_t>(is);
  const auto cols = get<std::int64_t>(is);
  if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 31)) throw InputError("hamiltonian file: bad matrix shape");
  Eigen::MatrixXd m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw InputError("hamiltonian file truncated");
  return m;
}

}  // namespace

void save_hamiltonian(const HamiltonianRep& H, const std::filesystem::path& path) {
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot write " + path.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint8_t>(os, H.is_dense() ? 0 : 1);
    if (H.is_dense()) {
      put_matrix(os, H.dense());
    } else {
      const auto& terms = H.local().terms;
      put<std::int64_t>(os, static_cast<std::int64_t>(terms.size()));
      for (const auto& t : terms) {
        put<std::int32_t>(os, t.lo);
        put<std::int32_t>(os, t.hi);
        put<double>(os, t.coefficient);
        put<std::int32_t>(os, static_cast<std::int32_t>(t.coords.size()));
        for (int c : t.coords) put<std::int32_t>(os, c);
        put<std::int32_t>(os, static_cast<std::int32_t>(t.family.size()));
        os.write(t.family.data(), static_cast<std::streamsize>(t.family.size()));
        put_matrix(os, t.block);
      }
    }
    if (!os) throw InputError("failed writing " + path.string());
  }
  nlohmann::json side{{"D", H.meta.D},
                      {"K", H.meta.K},
                      {"estimator", to_string(H.meta.estimator)},
                      {"representation", H.is_dense() ? "dense" : "local_sum"},
                      {"seed", H.meta.seed},
                      {"B", H.meta.budget},
                      {"queries", H.meta.queries},
                      {"L", 2.0 * H.meta.box_halfwidth},
                      {"warnings", H.meta.warnings}};
  std::ofstream js(path.string() + ".json", std::ios::trunc);
  if (!js) throw InputError("cannot write sidecar for " + path.string());
  js << side.dump(2) << '\n';
}

HamiltonianRep load_hamiltonian(const std::filesystem::path& path) {
  std::ifstream js(path.string() + ".json");
  if (!js) throw InputError("missing sidecar " + path.string() + ".json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad sidecar " + path.string() + ".json: " + e.what());
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot read " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw InputError(path.string() + " is not a hamiltonian file");
  const auto kind = get<std::uint8_t>(is);

  HamiltonianRep rep{DenseH{}, {}};
  if (kind == 0) {
    rep.data = DenseH{get_matrix(is)};
  } else {
    LocalSum sum;
    const auto n = get<std::int64_t>(is);
    for (std::int64_t i = 0; i < n; ++i) {
      LocalTerm t;
      t.lo = get<std::int32_t>(is);
      t.hi = get<std::int32_t>(is);
      t.coefficient = get<double>(is);
      const auto nc = get<std::int32_t>(is);
      for (int c = 0; c < nc; ++c) t.coords.push_back(get<std::int32_t>(is));
      const auto nf = get<std::int32_t>(is);
      t.family.resize(nf);
      is.read(t.family.data(), nf);
      t.block = get_matrix(is);
      sum.terms.push_back(std::move(t));
    }
    rep.data = std::move(sum);
  }
  try {
    rep.meta.D = side.at("D").get<int>();
    rep.meta.K = side.at("K").get<int>();
    rep.meta.estimator = estimator_kind_from_string(side.at("estimator").get<std::string>());
    rep.meta.seed = side.at("seed").get<std::uint64_t>();
    rep.meta.budget = side.at("B").get<std::uint64_t>();
    rep.meta.queries = side.at("queries").get<std::uint64_t>();
    rep.meta.box_halfwidth = 0.5 * side.at("L").get<double>();
    rep.meta.warnings = side.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad sidecar " + path.string() + ".json: " + e.what());
  }
  return rep;
}

}  // namespace mpobm
