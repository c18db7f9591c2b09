#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ropdf/case_model.hpp"
#include "ropdf/closure_regression.hpp"
#include "ropdf/density_metrics.hpp"
#include "ropdf/fv_solver.hpp"

namespace ropdf {

/// Everything an experiment needs. Loaded from an INI file; the key list and
/// defaults are documented in configs/README.md.
struct ExperimentConfig {
  std::string case_name;            // [case] name, defaults to the bundle directory name
  std::filesystem::path bundle;     // [case] bundle, relative to the config file

  double theta = 1.0;               // [noise]
  double alpha = 0.05;
  double r = 0.0;

  double dt = 1e-2;                 // [scenario]
  double burn_in = 50.0;
  double post = 10.0;
  std::optional<LineId> trip;
  std::vector<LineId> record_lines;
  int record_stride = 1;

  int m_R = 5000;                   // [ensemble]
  int m_KDE = 10000;
  std::uint64_t seed = 1;

  int n_cells = 400;                // [grid]
  int n_cells_2d = 200;
  double padding = 1.0;

  ClosureKind closure_1d = ClosureKind::local_linear;  // [closure]
  ClosureKind closure_2d = ClosureKind::global_linear;
  int folds = 10;
  int cv_stride = 50;
  int cv_max_samples = 5000;
  double span = 0.3;
  int lattice = 64;

  double cfl = 0.9;                 // [solver]
  int output_stride_2d = 10;
  bool wall_at_zero = false;        // closed lower boundary at U = 0 (default: open)

  std::vector<int> ladder{4096, 8192, 16384};  // [complexity]
  int benchmark_m = 32768;
  double gamma = 0.01;
  int repeats = 1;
  std::optional<std::vector<LineId>> complexity_lines;  // absent: every edge

  std::filesystem::path out_dir = "out";  // [output] dir

  /// Smoke-test settings: m_R = 500, burn-in 5 s, smaller benchmark ensembles.
  void apply_quick();
};

/// Strict INI parsing: unknown sections or keys and malformed values raise ConfigError.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Loads the bundle and checks the config against it (lines exist, trip keeps
/// the network connected). Throws ConfigError or the topology/parse error.
CaseBundle validate_config(const ExperimentConfig& cfg);

/// One recorded line of a marginal run.
struct LineMarginal {
  LineId line;
  double rating = 0.0;
  double peak_time = 0.0;
  double predicted = 0.0;     // RO-PDF tail mass above the rating at the peak time
  double kde = 0.0;           // benchmark KDE tail mass at the same time
  double empirical = 0.0;     // benchmark ECDF
  double empirical_se = 0.0;
  double empirical_ro = 0.0;  // ECDF of the m_R ensemble
  bool threshold_clamped = false;  // rating outside the grid
  double l1 = 0.0;
  double boundary_outflow = 0.0;
  std::vector<double> bandwidths;
  DensityField ropdf;
  DensityField bench;
  std::vector<double> predicted_series;  // per RO-PDF frame
  std::vector<double> empirical_series;
};

struct MarginalResult {
  std::string case_name;
  int m_R = 0;
  int m_KDE = 0;
  int diverged = 0;
  std::vector<LineMarginal> lines;
};

struct JointResult {
  std::string case_name;
  LineId first;
  LineId second;
  bool share_bus = true;
  double peak_time = 0.0;
  double predicted = 0.0;     // 2D RO-PDF union exceedance
  double kde = 0.0;
  double empirical = 0.0;
  double empirical_se = 0.0;
  double independent = 0.0;   // from the two 1D RO-PDF marginals
  double p_first = 0.0;       // 1D predicted exceedances feeding `independent`
  double p_second = 0.0;
  bool threshold_clamped = false;
  double l1 = 0.0;
  double mi_peak = 0.0;
  std::vector<double> mi_times;
  std::vector<double> mi_ropdf;  // raw values
  std::vector<double> mi_kde;
  DensityField ropdf;
  DensityField bench;
  MarginalResult marginals;
};

struct ComplexityCase {
  std::string case_name;
  int edges = 0;                // lines analyzed
  std::vector<int> seeds;
  /// errors[method][line label][m], averaged over seeds; method is "ropdf" or "kde".
  std::map<std::string, std::map<std::string, ErrorCurve>> errors;
  /// Per-seed raw rows: seed, line, m, method, error.
  struct Row {
    std::uint64_t seed;
    std::string line;
    long m;
    std::string method;
    double error;
  };
  std::vector<Row> rows;
  std::map<std::string, ComplexityResult> complexity;  // per method
};

struct ComplexityResultSet {
  double gamma = 0.01;
  std::vector<ComplexityCase> cases;
  std::map<std::string, std::optional<double>> slope;  // per method, over cases
};

MarginalResult run_marginal(const ExperimentConfig& cfg);
JointResult run_joint(const ExperimentConfig& cfg);
ComplexityResultSet run_complexity(const std::vector<ExperimentConfig>& cfgs);

/// File layout: {case}_{lines}_{kind}.{ext} under `dir`.
void emit_marginal(const MarginalResult& r, const std::filesystem::path& dir);
void emit_joint(const JointResult& r, const std::filesystem::path& dir, bool mi_only = false);
void emit_complexity(const ComplexityResultSet& r, const std::filesystem::path& dir);

}  // namespace ropdf
