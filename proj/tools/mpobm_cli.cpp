// mpobm command line: fit, sweep, gaps, scaling, hardness, oracle.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mpobm/errors.hpp"
#include "mpobm/harness.hpp"
#include "mpobm/parallel.hpp"

using namespace mpobm;

namespace {

struct Overrides {
  std::string config_path;
  std::vector<std::string> targets;
  std::vector<int> dims;
  std::string basis;
  double basis_scale = 0.0;
  int K = 0;
  int r = 0;
  std::vector<std::string> estimators;
  std::vector<std::uint64_t> budgets;
  double box_halfwidth = 0.0;
  double err = -1.0;
  int max_bond = 0;
  std::uint64_t kl_samples = 0;
  std::vector<std::uint64_t> seeds;
  double threshold = 0.0;
  int n_eigs = 0;
  std::string out;
  bool sample_h3 = false;
};

void add_experiment_flags(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_path, "JSON config; flags override its keys")->check(CLI::ExistingFile);
  app->add_option("--target", o.targets, "target kinds, or 'all'")->delimiter(',');
  app->add_option("--dims", o.dims, "dimensions D")->delimiter(',');
  app->add_option("--basis", o.basis, "hermite or fourier");
  app->add_option("--basis-scale", o.basis_scale, "hermite length scale or fourier period");
  app->add_option("-K", o.K, "basis functions per coordinate");
  app->add_option("-r", o.r, "ground-space rank");
  app->add_option("--estimator", o.estimators, "global and/or local")->delimiter(',');
  app->add_option("--budget", o.budgets, "score-query budgets B")->delimiter(',');
  app->add_option("--box-halfwidth", o.box_halfwidth, "proposal box is [-h, h]^D");
  app->add_option("--err", o.err, "relative MPO truncation threshold");
  app->add_option("--max-bond", o.max_bond, "MPO bond cap");
  app->add_option("--kl-samples", o.kl_samples, "target samples for forward KL");
  app->add_option("--seeds", o.seeds, "seeds")->delimiter(',');
  app->add_option("--threshold", o.threshold, "KL threshold for scaling runs");
  app->add_option("--n-eigs", o.n_eigs, "eigenvalues kept by gaps");
  app->add_option("--out", o.out, "output directory");
  app->add_flag("--sample-h3", o.sample_h3, "estimate the derivative-gram term from samples (local)");
}

ExperimentConfig build_config(const CLI::App* app, const Overrides& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  auto given = [&](const char* name) { return app->count(name) > 0; };
  if (given("--target")) {
    c.targets.clear();
    for (const auto& t : o.targets) {
      if (t == "all") {
        c.targets.insert(c.targets.end(), all_target_kinds().begin(), all_target_kinds().end());
      } else {
        c.targets.push_back(target_kind_from_string(t));
      }
    }
  }
  if (given("--dims")) c.dims = o.dims;
  if (given("--basis")) c.basis = basis_kind_from_string(o.basis);
  if (given("--basis-scale")) c.basis_scale = o.basis_scale;
  if (given("-K")) c.K = o.K;
  if (given("-r")) c.r = o.r;
  if (given("--estimator")) {
    c.estimators.clear();
    for (const auto& e : o.estimators) c.estimators.push_back(estimator_kind_from_string(e));
  }
  if (given("--budget")) c.budgets = o.budgets;
  if (given("--box-halfwidth")) c.box_halfwidth = o.box_halfwidth;
  if (given("--err")) c.err = o.err;
  if (given("--max-bond")) c.max_bond = o.max_bond;
  if (given("--kl-samples")) c.kl_samples = o.kl_samples;
  if (given("--seeds")) c.seeds = o.seeds;
  if (given("--threshold")) c.kl_threshold = o.threshold;
  if (given("--n-eigs")) c.n_eigs = o.n_eigs;
  if (given("--out")) c.out = o.out;
  if (given("--sample-h3")) c.sample_h3 = o.sample_h3;
  c.validate();
  return c;
}

void print_row(const ResultRow& r) {
  std::cout << r.run_id << "  kl=" << r.kl << " +- " << r.kl_stderr << "  max_bond=" << r.max_bond
            << "  queries=" << r.queries << "  " << r.wall_seconds << "s\n";
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MPO Born machine score-based variational inference"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);
  int workers = 0;
  app.add_option("--workers", workers, "worker threads (default: MPOBM_WORKERS or all cores)");

  Overrides fit_o, sweep_o, gaps_o, scaling_o;
  auto* fit = app.add_subcommand("fit", "fit every cell of the config and write results.csv");
  add_experiment_flags(fit, fit_o);
  bool keep_mpo = false;
  fit->add_flag("--save-mpo", keep_mpo, "also write each compressed MPO");

  auto* sweep = app.add_subcommand("sweep", "parallel grid of fits, results.csv rewritten as cells finish");
  add_experiment_flags(sweep, sweep_o);

  auto* gaps = app.add_subcommand("gaps", "relative eigengaps of the estimated H per cell");
  add_experiment_flags(gaps, gaps_o);

  auto* scaling = app.add_subcommand("scaling", "required budget per dimension and fitted laws");
  add_experiment_flags(scaling, scaling_o);

  auto* hardness = app.add_subcommand("hardness", "verify the probability gap of the SAT-embedding density");
  std::string formula, formula_file, bump = "box", hard_out = "out/hardness.json";
  std::uint64_t hard_samples = 100000, hard_seed = 43;
  auto* fopt = hardness->add_option("--formula", formula, "infix, s-expression or one-line DIMACS");
  hardness->add_option("--formula-file", formula_file, "file holding the formula")
      ->check(CLI::ExistingFile)
      ->excludes(fopt);
  hardness->add_option("--bump", bump, "box or smooth");
  hardness->add_option("--samples", hard_samples, "total stratified samples");
  hardness->add_option("--seed", hard_seed, "seed");
  hardness->add_option("--out", hard_out, "report path");

  auto* oracle = app.add_subcommand("oracle", "dump the quadrature Hamiltonian");
  std::string o_target = "gaussian", o_basis = "hermite", o_out = "out/H_quadrature.bin";
  int o_D = 2, o_K = 2, o_nodes = 64;
  double o_scale = 1.4142135623730951, o_half = 5.0;
  oracle->add_option("--target", o_target, "target kind");
  oracle->add_option("-D", o_D, "dimension");
  oracle->add_option("-K", o_K, "basis functions per coordinate");
  oracle->add_option("--basis", o_basis, "hermite or fourier");
  oracle->add_option("--basis-scale", o_scale, "hermite length scale or fourier period");
  oracle->add_option("--nodes", o_nodes, "Gauss-Legendre nodes per coordinate");
  oracle->add_option("--box-halfwidth", o_half, "integration box [-h, h]^D");
  oracle->add_option("--out", o_out, "binary output (JSON sidecar alongside)");

  CLI11_PARSE(app, argc, argv);
  if (workers > 0) set_worker_count(workers);

  try {
    if (*fit) {
      const auto c = build_config(fit, fit_o);
      std::vector<ResultRow> rows;
      for (const auto& cell : expand_cells(c)) {
        auto outcome = run_cell(c, cell);
        print_row(outcome.row);
        if (keep_mpo)
          save_mpo(outcome.mpo, std::filesystem::path(c.out) / ("mpo_" + cell.run_id() + ".bin"), cell.seed);
        rows.push_back(std::move(outcome.row));
      }
      std::ostringstream os;
      write_results_csv(os, c.hash(), rows);
      write_file_atomic(std::filesystem::path(c.out) / "results.csv", os.str());
    } else if (*sweep) {
      const auto c = build_config(sweep, sweep_o);
      const auto rows = run_sweep(c, std::filesystem::path(c.out) / "results.csv");
      for (const auto& r : rows) print_row(r);
    } else if (*gaps) {
      const auto c = build_config(gaps, gaps_o);
      for (const auto& g : run_gaps(c)) {
        for (const auto& n : g.notices) std::cerr << "notice: " << n << '\n';
        const int k = g.report.ground_gap_index;
        std::cout << g.cell.run_id() << "  ground rel-gap=" << (k < g.report.rel_gaps.size() ? g.report.rel_gaps[k] : 0.0)
                  << "  -> " << g.path.string() << '\n';
      }
    } else if (*scaling) {
      const auto c = build_config(scaling, scaling_o);
      const auto rep = run_scaling(c);
      for (const auto& r : rep.required) {
        std::cout << r.estimator << " D=" << r.D << " required_B="
                  << (r.budget ? std::to_string(*r.budget) : std::string("not reached")) << '\n';
      }
      for (const auto& f : rep.fits) {
        if (f.fitted) {
          std::cout << f.estimator << (f.law == ScalingLaw::exponential ? " B = a exp(b D)" : " B = a D^b")
                    << "  a=" << f.a << " b=" << f.b << " R2=" << f.r2 << '\n';
        } else {
          std::cerr << "notice: " << f.estimator << ": " << f.notice << '\n';
        }
      }
    } else if (*hardness) {
      const std::string text = formula_file.empty() ? formula : read_text(formula_file);
      if (text.empty()) throw InputError("hardness: give --formula or --formula-file");
      const HardDensity hd(parse_formula(text), bump_kind_from_string(bump));
      const auto rep = verify_gap(hd, hard_samples, hard_seed);
      const auto j = to_json(rep, to_string(hd.formula()));
      write_file_atomic(hard_out, j.dump(2) + "\n");
      std::cout << j.dump(2) << '\n';
    } else if (*oracle) {
      const Basis basis = basis_kind_from_string(o_basis) == BasisKind::hermite ? Basis::hermite(o_K, o_scale)
                                                                                : Basis::fourier(o_K, o_scale);
      const auto target = ScoreTarget::make(target_kind_from_string(o_target), o_D);
      const auto H = exact_H_quadrature(basis, target, {o_nodes, o_half});
      for (const auto& w : H.meta.warnings) std::cerr << "warning: " << w << '\n';
      save_hamiltonian(H, o_out);
      std::cout << "wrote " << o_out << " (" << H.dim() << " x " << H.dim() << ")\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
