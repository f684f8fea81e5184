#include "mpobm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "mpobm/divergence.hpp"
#include "mpobm/errors.hpp"
#include "mpobm/parallel.hpp"

namespace mpobm {

const char* version() { return MPOBM_VERSION_STRING; }

namespace {

using json = nlohmann::json;

// KL draws use their own stream family so they never share bits with the
// estimator draws of the same seed.
constexpr std::uint64_t kKlStream = 0x4b4c5f73616d70ULL;

template <typename T>
void require_nonempty(const std::vector<T>& v, const char* name) {
  if (v.empty()) throw ConfigError(std::string("config: ") + name + " must not be empty");
}

std::string join_ints(const std::vector<int>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(v[i]);
  }
  return out;
}

std::string header_line(const std::string& config_hash) {
  return std::string("# mpobm ") + version() + " config=" + config_hash + "\n";
}

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// config

void ExperimentConfig::validate() const {
  require_nonempty(targets, "targets");
  require_nonempty(dims, "dims");
  require_nonempty(estimators, "estimators");
  require_nonempty(budgets, "budgets");
  require_nonempty(seeds, "seeds");
  for (int D : dims) {
    if (D < 1) throw ConfigError("config: dimensions must be >= 1");
  }
  if (K < 1) throw ConfigError("config: K must be >= 1");
  if (r < 1) throw ConfigError("config: r must be >= 1");
  for (int D : dims) {
    if (static_cast<std::int64_t>(r) > state_dim(K, D, 0)) throw ConfigError("config: r exceeds K^D");
  }
  for (auto B : budgets) {
    if (B == 0) throw ConfigError("config: budgets must be positive");
  }
  for (auto e : estimators) {
    if (e == EstimatorKind::exact) throw ConfigError("config: estimators are 'global' or 'local'");
  }
  if (!(basis_scale > 0.0)) throw ConfigError("config: basis_scale must be positive");
  if (!(box_halfwidth > 0.0)) throw ConfigError("config: box_halfwidth must be positive");
  if (!(err >= 0.0)) throw ConfigError("config: err must be >= 0");
  if (max_bond < 1) throw ConfigError("config: max_bond must be >= 1");
  if (kl_samples < 2) throw ConfigError("config: kl_samples must be >= 2");
  if (n_eigs < 1) throw ConfigError("config: n_eigs must be >= 1");
  if (kl_threshold && !(*kl_threshold > 0.0)) throw ConfigError("config: kl_threshold must be positive");
}

std::string ExperimentConfig::hash() const {
  json j = *this;
  j.erase("out");
  return fnv1a(j.dump());
}

Basis ExperimentConfig::make_basis() const {
  return basis == BasisKind::hermite ? Basis::hermite(K, basis_scale) : Basis::fourier(K, basis_scale);
}

void to_json(json& j, const ExperimentConfig& c) {
  std::vector<std::string> targets;
  for (auto t : c.targets) targets.push_back(to_string(t));
  std::vector<std::string> estimators;
  for (auto e : c.estimators) estimators.push_back(to_string(e));
  j = json{{"targets", targets},
           {"params", c.params},
           {"dims", c.dims},
           {"K", c.K},
           {"r", c.r},
           {"basis", to_string(c.basis)},
           {"basis_scale", c.basis_scale},
           {"estimators", estimators},
           {"budgets", c.budgets},
           {"box_halfwidth", c.box_halfwidth},
           {"sample_h3", c.sample_h3},
           {"err", c.err},
           {"max_bond", c.max_bond},
           {"kl_samples", c.kl_samples},
           {"seeds", c.seeds},
           {"kl_threshold", c.kl_threshold ? json(*c.kl_threshold) : json(nullptr)},
           {"n_eigs", c.n_eigs},
           {"out", c.out}};
}

void from_json(const json& j, ExperimentConfig& c) {
  static const std::set<std::string> known{"targets", "params", "dims", "K", "r", "basis", "basis_scale",
                                           "estimators", "budgets", "box_halfwidth", "sample_h3", "err",
                                           "max_bond", "kl_samples", "seeds", "kl_threshold", "n_eigs", "out"};
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  }
  try {
    c = ExperimentConfig{};
    if (j.contains("targets")) {
      c.targets.clear();
      for (const auto& t : j.at("targets")) {
        const auto name = t.get<std::string>();
        if (name == "all") {
          c.targets.insert(c.targets.end(), all_target_kinds().begin(), all_target_kinds().end());
        } else {
          c.targets.push_back(target_kind_from_string(name));
        }
      }
    }
    if (j.contains("params")) j.at("params").get_to(c.params);
    if (j.contains("dims")) j.at("dims").get_to(c.dims);
    if (j.contains("K")) j.at("K").get_to(c.K);
    if (j.contains("r")) j.at("r").get_to(c.r);
    if (j.contains("basis")) c.basis = basis_kind_from_string(j.at("basis").get<std::string>());
    if (j.contains("basis_scale")) j.at("basis_scale").get_to(c.basis_scale);
    if (j.contains("estimators")) {
      c.estimators.clear();
      for (const auto& e : j.at("estimators")) c.estimators.push_back(estimator_kind_from_string(e.get<std::string>()));
    }
    if (j.contains("budgets")) j.at("budgets").get_to(c.budgets);
    if (j.contains("box_halfwidth")) j.at("box_halfwidth").get_to(c.box_halfwidth);
    if (j.contains("sample_h3")) j.at("sample_h3").get_to(c.sample_h3);
    if (j.contains("err")) j.at("err").get_to(c.err);
    if (j.contains("max_bond")) j.at("max_bond").get_to(c.max_bond);
    if (j.contains("kl_samples")) j.at("kl_samples").get_to(c.kl_samples);
    if (j.contains("seeds")) j.at("seeds").get_to(c.seeds);
    if (j.contains("kl_threshold") && !j.at("kl_threshold").is_null()) c.kl_threshold = j.at("kl_threshold").get<double>();
    if (j.contains("n_eigs")) j.at("n_eigs").get_to(c.n_eigs);
    if (j.contains("out")) j.at("out").get_to(c.out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return j.get<ExperimentConfig>();
}

std::string Cell::run_id() const {
  return to_string(target) + "-D" + std::to_string(D) + "-" + to_string(estimator) + "-B" + std::to_string(budget) +
         "-s" + std::to_string(seed);
}

std::vector<Cell> expand_cells(const ExperimentConfig& c) {
  std::vector<Cell> cells;
  for (auto t : c.targets)
    for (int D : c.dims)
      for (auto e : c.estimators)
        for (auto B : c.budgets)
          for (auto s : c.seeds) cells.push_back({t, D, e, B, s});
  return cells;
}

// ---------------------------------------------------------------------------
// results

const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{"run_id",    "target",     "D",          "K",       "r",
                                             "estimator", "B",          "seed",       "kl",      "kl_stderr",
                                             "max_bond",  "trace_energy", "wall_seconds", "queries", "bonds",
                                             "mpo_error", "kl_clamps"};
  return cols;
}

void write_results_csv(std::ostream& os, const std::string& config_hash, const std::vector<ResultRow>& rows) {
  os << header_line(config_hash);
  const auto& cols = result_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.run_id << ',' << r.target << ',' << r.D << ',' << r.K << ',' << r.r << ',' << r.estimator << ','
       << r.budget << ',' << r.seed << ',' << r.kl << ',' << r.kl_stderr << ',' << r.max_bond << ',' << r.trace_energy
       << ',' << std::setprecision(6) << r.wall_seconds << std::setprecision(17) << ',' << r.queries << ','
       << join_ints(r.bonds, ';') << ',' << r.mpo_error << ',' << r.kl_clamps << '\n';
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

FitOutcome run_cell(const ExperimentConfig& c, const Cell& cell) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const Basis basis = c.make_basis();
    const ScoreTarget target = ScoreTarget::make(cell.target, cell.D, c.params);
    SamplingPlan plan;
    plan.budget = cell.budget;
    plan.box_halfwidth = c.box_halfwidth;
    plan.seed = cell.seed;
    plan.sample_h3 = c.sample_h3;

    const auto before = target.queries();
    HamiltonianRep H = cell.estimator == EstimatorKind::global ? estimate_H_global(basis, target, plan)
                                                                : estimate_H_local(basis, target, plan);
    const auto queries = target.queries() - before;

    GroundSpace gs = ground_space(H, c.r);
    CompressedMPO mpo;
    if (state_dim(c.K, cell.D, 0) <= kDenseCap) {
      const Eigen::MatrixXd rho = gs.U * gs.U.transpose() / static_cast<double>(c.r);
      mpo = to_mpo(rho, c.K, cell.D, c.err, c.max_bond);
    } else {
      mpo = to_mpo_factored(gs.U, Eigen::VectorXd::Constant(c.r, 1.0 / c.r), c.K, cell.D, c.err, c.max_bond);
    }
    BornModel model = BornModel::from_mpo(mpo.mpo, basis);
    const auto kl = forward_kl(target, model, c.kl_samples, derive_seed(cell.seed, kKlStream));

    FitOutcome out{{}, std::move(H), std::move(gs), std::move(mpo), std::move(model)};
    ResultRow& row = out.row;
    row.run_id = cell.run_id();
    row.target = to_string(cell.target);
    row.D = cell.D;
    row.K = c.K;
    row.r = c.r;
    row.estimator = to_string(cell.estimator);
    row.budget = cell.budget;
    row.seed = cell.seed;
    row.kl = kl.value;
    row.kl_stderr = kl.std_error;
    row.kl_clamps = kl.clamps;
    row.max_bond = out.mpo.report.max_bond;
    row.bonds.assign(out.mpo.report.bonds.begin() + 1, out.mpo.report.bonds.end() - 1);
    row.mpo_error = out.mpo.report.frobenius_error;
    row.trace_energy = trace_energy(out.ground, out.H);
    row.queries = queries;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
  } catch (const Error& e) {
    // keep the exception type, add the cell
    const std::string what = cell.run_id() + ": " + e.what();
    if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(what);
    if (dynamic_cast<const SizeError*>(&e)) throw SizeError(what);
    if (dynamic_cast<const NumericalError*>(&e)) throw NumericalError(what);
    if (dynamic_cast<const InputError*>(&e)) throw InputError(what);
    if (dynamic_cast<const ContractViolation*>(&e)) throw ContractViolation(what);
    throw Error(what);
  }
}

std::vector<ResultRow> run_sweep(const ExperimentConfig& c, const std::optional<std::filesystem::path>& results_path) {
  c.validate();
  const auto cells = expand_cells(c);
  const std::string hash = c.hash();
  std::vector<std::optional<ResultRow>> rows(cells.size());
  std::mutex mu;
  std::exception_ptr failure;
  parallel_for(cells.size(), [&](std::size_t i) {
    {
      std::lock_guard<std::mutex> lock(mu);
      if (failure) return;
    }
    try {
      ResultRow row = run_cell(c, cells[i]).row;
      std::lock_guard<std::mutex> lock(mu);
      rows[i] = std::move(row);
      if (results_path) {
        std::vector<ResultRow> done;
        for (const auto& r : rows)
          if (r) done.push_back(*r);
        std::ostringstream os;
        write_results_csv(os, hash, done);
        write_file_atomic(*results_path, os.str());
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);
  std::vector<ResultRow> out;
  for (auto& r : rows) out.push_back(std::move(*r));
  return out;
}

// ---------------------------------------------------------------------------
// gaps

void write_gaps_file(std::ostream& os, const std::string& config_hash, const Cell& cell, const SpectralReport& report) {
  os << header_line(config_hash) << "# run=" << cell.run_id() << " seed=" << cell.seed
     << " ground_gap_index=" << report.ground_gap_index << '\n';
  write_gaps_csv(os, report);
}

std::vector<GapsResult> run_gaps(const ExperimentConfig& c) {
  c.validate();
  const auto cells = expand_cells(c);
  const std::string hash = c.hash();
  std::vector<GapsResult> out(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) {
    const Cell& cell = cells[i];
    const Basis basis = c.make_basis();
    const ScoreTarget target = ScoreTarget::make(cell.target, cell.D, c.params);
    SamplingPlan plan;
    plan.budget = cell.budget;
    plan.box_halfwidth = c.box_halfwidth;
    plan.seed = cell.seed;
    plan.sample_h3 = c.sample_h3;
    const auto H = cell.estimator == EstimatorKind::global ? estimate_H_global(basis, target, plan)
                                                            : estimate_H_local(basis, target, plan);
    GapsResult& res = out[i];
    res.cell = cell;
    res.report = spectral_report(to_dense(H), c.n_eigs, c.r);
    if (res.report.clipped) {
      res.notices.push_back(cell.run_id() + ": n_eigs " + std::to_string(c.n_eigs) + " clipped to " +
                            std::to_string(res.report.eigenvalues.size()));
    }
    res.path = std::filesystem::path(c.out) / ("gaps_" + cell.run_id() + ".csv");
    std::ostringstream os;
    write_gaps_file(os, hash, cell, res.report);
    write_file_atomic(res.path, os.str());
  });
  return out;
}

// ---------------------------------------------------------------------------
// scaling

LawFit fit_law(ScalingLaw law, const std::vector<int>& dims, const std::vector<double>& budgets) {
  if (dims.size() != budgets.size()) throw ContractViolation("fit_law: size mismatch");
  LawFit fit;
  fit.law = law;
  fit.dims = dims;
  fit.budgets = budgets;
  const std::size_t n = dims.size();
  if (n < 2) {
    fit.notice = "fewer than 2 reached points; fit skipped";
    return fit;
  }
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = law == ScalingLaw::exponential ? dims[i] : std::log(static_cast<double>(dims[i]));
    ys[i] = std::log(budgets[i]);
  }
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0) {
    fit.notice = "all reached points share one dimension; fit skipped";
    return fit;
  }
  fit.b = sxy / sxx;
  const double log_a = my - fit.b * mx;
  fit.a = std::exp(log_a);
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double res = ys[i] - (log_a + fit.b * xs[i]);
    fit.residuals.push_back(res);
    ss_res += res * res;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : (ss_res == 0.0 ? 1.0 : 0.0);
  fit.fitted = true;
  return fit;
}

std::optional<std::uint64_t> ScalingReport::required_for(const std::string& estimator, int D) const {
  for (const auto& r : required) {
    if (r.estimator == estimator && r.D == D) return r.budget;
  }
  return std::nullopt;
}

const LawFit* ScalingReport::fit_for(const std::string& estimator) const {
  for (const auto& f : fits) {
    if (f.estimator == estimator) return &f;
  }
  return nullptr;
}

ScalingReport summarize_scaling(double threshold, const std::vector<ResultRow>& rows) {
  ScalingReport rep;
  rep.threshold = threshold;
  rep.rows = rows;
  // (estimator, D) -> B -> kls, in ascending B
  std::map<std::pair<std::string, int>, std::map<std::uint64_t, std::vector<double>>> grid;
  for (const auto& r : rows) grid[{r.estimator, r.D}][r.budget].push_back(r.kl);

  std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> reached;
  for (const auto& [key, by_budget] : grid) {
    RequiredBudget req{key.first, key.second, std::nullopt};
    for (const auto& [B, kls] : by_budget) {
      ScalingPoint p{key.first, key.second, B, kls, mean(kls), false};
      rep.points.push_back(p);
      if (!req.budget && p.mean_kl <= threshold) req.budget = B;
    }
    if (req.budget) {
      reached[key.first].first.push_back(key.second);
      reached[key.first].second.push_back(static_cast<double>(*req.budget));
    }
    rep.required.push_back(req);
  }
  std::set<std::string> estimators;
  for (const auto& r : rows) estimators.insert(r.estimator);
  for (const auto& e : estimators) {
    const auto law = e == "global" ? ScalingLaw::exponential : ScalingLaw::power;
    const auto it = reached.find(e);
    LawFit fit = it == reached.end() ? fit_law(law, {}, {}) : fit_law(law, it->second.first, it->second.second);
    if (it == reached.end()) fit.notice = "threshold not reached at any dimension; fit skipped";
    fit.estimator = e;
    rep.fits.push_back(fit);
  }
  return rep;
}

ScalingReport run_scaling(const ExperimentConfig& c) {
  if (!c.kl_threshold) throw ConfigError("scaling: kl_threshold is required");
  c.validate();
  ExperimentConfig run = c;
  run.targets.resize(1);
  const std::string hash = run.hash();
  const auto out_dir = std::filesystem::path(c.out);

  // local estimation needs one query per coordinate; smaller budgets are skipped
  std::vector<std::pair<Cell, bool>> cells;
  for (const auto& cell : expand_cells(run)) {
    cells.push_back({cell, cell.estimator == EstimatorKind::local && cell.budget < static_cast<std::uint64_t>(cell.D)});
  }
  std::vector<std::optional<ResultRow>> rows(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) {
    if (!cells[i].second) rows[i] = run_cell(run, cells[i].first).row;
  });
  std::vector<ResultRow> done;
  for (auto& r : rows)
    if (r) done.push_back(std::move(*r));

  ScalingReport rep = summarize_scaling(*c.kl_threshold, done);
  for (const auto& [cell, skipped] : cells) {
    if (skipped) rep.points.push_back({to_string(cell.estimator), cell.D, cell.budget, {}, 0.0, true});
  }
  std::sort(rep.points.begin(), rep.points.end(), [](const ScalingPoint& a, const ScalingPoint& b) {
    return std::tie(a.estimator, a.D, a.budget) < std::tie(b.estimator, b.D, b.budget);
  });
  rep.points.erase(std::unique(rep.points.begin(), rep.points.end(),
                               [](const ScalingPoint& a, const ScalingPoint& b) {
                                 return a.estimator == b.estimator && a.D == b.D && a.budget == b.budget;
                               }),
                   rep.points.end());

  std::ostringstream csv;
  write_results_csv(csv, hash, done);
  write_file_atomic(out_dir / "results.csv", csv.str());
  write_file_atomic(out_dir / "scaling.json", to_json(rep, hash).dump(2) + "\n");
  return rep;
}

json to_json(const ScalingReport& rep, const std::string& config_hash) {
  json points = json::array();
  for (const auto& p : rep.points) {
    points.push_back({{"estimator", p.estimator},
                      {"D", p.D},
                      {"B", p.budget},
                      {"kls", p.kls},
                      {"mean_kl", p.skipped ? json(nullptr) : json(p.mean_kl)},
                      {"skipped", p.skipped}});
  }
  json required = json::array();
  for (const auto& r : rep.required) {
    required.push_back({{"estimator", r.estimator},
                        {"D", r.D},
                        {"required_B", r.budget ? json(*r.budget) : json(nullptr)},
                        {"reached", r.budget.has_value()}});
  }
  json fits = json::array();
  for (const auto& f : rep.fits) {
    json jf{{"estimator", f.estimator},
            {"law", f.law == ScalingLaw::exponential ? "a*exp(b*D)" : "a*D^b"},
            {"fitted", f.fitted},
            {"dims", f.dims},
            {"budgets", f.budgets}};
    if (f.fitted) {
      jf["a"] = f.a;
      jf["b"] = f.b;
      jf["r2"] = f.r2;
      jf["residuals"] = f.residuals;
    }
    if (!f.notice.empty()) jf["notice"] = f.notice;
    fits.push_back(jf);
  }
  return json{{"version", version()},
              {"config", config_hash},
              {"threshold", rep.threshold},
              {"points", points},
              {"required", required},
              {"fits", fits}};
}

json to_json(const GapReport& rep, const std::string& formula) {
  return json{{"version", version()},
              {"formula", formula},
              {"n", rep.n},
              {"bump", rep.bump},
              {"seed", rep.seed},
              {"samples", rep.samples},
              {"model_count", rep.model_count},
              {"predicted", rep.predicted},
              {"p_a", rep.p_a},
              {"stderr", rep.std_error},
              {"normalizer", rep.normalizer},
              {"normalizer_stderr", rep.normalizer_std_error},
              {"within_tolerance", rep.within_tolerance},
              {"decided_sat", rep.decided_sat},
              {"decision_correct", rep.decision_correct}};
}

}  // namespace mpobm
