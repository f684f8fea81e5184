#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpobm/basis.hpp"
#include "mpobm/hamiltonian.hpp"
#include "mpobm/hardness.hpp"
#include "mpobm/mpo.hpp"
#include "mpobm/spectral.hpp"
#include "mpobm/targets.hpp"

namespace mpobm {

/// Library version, with the git description when the build had one.
const char* version();

/**
 * Experiment settings. Every list must be nonempty; the cell grid is
 * targets x dims x estimators x budgets x seeds.
 */
struct ExperimentConfig {
  std::vector<TargetKind> targets{TargetKind::gaussian_tridiag};
  TargetParams params;
  std::vector<int> dims{5};
  int K = 4;
  int r = 2;
  BasisKind basis = BasisKind::hermite;
  double basis_scale = 1.4142135623730951;  ///< hermite length scale or fourier period
  std::vector<EstimatorKind> estimators{EstimatorKind::local};
  std::vector<std::uint64_t> budgets{5000};
  double box_halfwidth = 5.0;
  bool sample_h3 = false;
  double err = 1e-6;
  int max_bond = 256;
  std::uint64_t kl_samples = 10000;
  std::vector<std::uint64_t> seeds{43};
  std::optional<double> kl_threshold;
  int n_eigs = 100;
  std::string out = "out";

  /// Throws ConfigError on the first violated rule.
  void validate() const;
  /// FNV-1a of the canonical JSON without the output directory, 16 hex digits.
  std::string hash() const;
  Basis make_basis() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Cell {
  TargetKind target = TargetKind::gaussian_tridiag;
  int D = 0;
  EstimatorKind estimator = EstimatorKind::local;
  std::uint64_t budget = 0;
  std::uint64_t seed = 0;

  std::string run_id() const;
};

/// Cells in the fixed order targets, dims, estimators, budgets, seeds.
std::vector<Cell> expand_cells(const ExperimentConfig& c);

struct ResultRow {
  std::string run_id;
  std::string target;
  int D = 0;
  int K = 0;
  int r = 0;
  std::string estimator;
  std::uint64_t budget = 0;
  std::uint64_t seed = 0;
  double kl = 0.0;
  double kl_stderr = 0.0;
  int max_bond = 0;
  double trace_energy = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t queries = 0;
  std::vector<int> bonds;     ///< internal bonds, cut 1..D-1
  double mpo_error = 0.0;     ///< ||rho - rho_mpo||_F (or its bound)
  std::uint64_t kl_clamps = 0;
};

/// Column order of results.csv.
const std::vector<std::string>& result_columns();

/// "# mpobm <version> config=<hash>" then the header and one line per row.
void write_results_csv(std::ostream& os, const std::string& config_hash, const std::vector<ResultRow>& rows);
/// Write to a temporary sibling, then rename over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

struct FitOutcome {
  ResultRow row;
  HamiltonianRep H;
  GroundSpace ground;
  CompressedMPO mpo;
  std::optional<BornModel> model;
};

/// target -> H -> ground space -> density -> MPO -> forward KL for one cell.
FitOutcome run_cell(const ExperimentConfig& c, const Cell& cell);

/// Runs every cell in a worker pool. When results_path is set the CSV is
/// rewritten atomically after each finished cell, rows in cell order.
std::vector<ResultRow> run_sweep(const ExperimentConfig& c, const std::optional<std::filesystem::path>& results_path = {});

struct GapsResult {
  Cell cell;
  SpectralReport report;
  std::filesystem::path path;
  std::vector<std::string> notices;
};

/// One gaps CSV per (target, D, estimator, budget, seed) cell in c.out.
std::vector<GapsResult> run_gaps(const ExperimentConfig& c);
void write_gaps_file(std::ostream& os, const std::string& config_hash, const Cell& cell, const SpectralReport& report);

enum class ScalingLaw { exponential, power };

struct LawFit {
  std::string estimator;
  ScalingLaw law = ScalingLaw::power;
  double a = 0.0;
  double b = 0.0;
  double r2 = 0.0;
  std::vector<int> dims;
  std::vector<double> budgets;
  std::vector<double> residuals;  ///< in log B
  bool fitted = false;
  std::string notice;
};

/// Least squares on log B against D (exponential) or log D (power).
LawFit fit_law(ScalingLaw law, const std::vector<int>& dims, const std::vector<double>& budgets);

struct ScalingPoint {
  std::string estimator;
  int D = 0;
  std::uint64_t budget = 0;
  std::vector<double> kls;  ///< one per seed
  double mean_kl = 0.0;
  bool skipped = false;     ///< local with B < D
};

struct RequiredBudget {
  std::string estimator;
  int D = 0;
  std::optional<std::uint64_t> budget;  ///< empty when not reached
};

struct ScalingReport {
  double threshold = 0.0;
  std::vector<ScalingPoint> points;
  std::vector<RequiredBudget> required;
  std::vector<LawFit> fits;
  std::vector<ResultRow> rows;

  std::optional<std::uint64_t> required_for(const std::string& estimator, int D) const;
  const LawFit* fit_for(const std::string& estimator) const;
};

/// Required budgets from per-cell rows; global gets the exponential law and
/// local the power law.
ScalingReport summarize_scaling(double threshold, const std::vector<ResultRow>& rows);
/// Sweeps c (first target only) and summarizes. Writes results.csv and scaling.json to c.out.
ScalingReport run_scaling(const ExperimentConfig& c);
nlohmann::json to_json(const ScalingReport& rep, const std::string& config_hash);

nlohmann::json to_json(const GapReport& rep, const std::string& formula);

}  // namespace mpobm
