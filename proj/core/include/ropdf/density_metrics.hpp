#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ropdf/case_model.hpp"
#include "ropdf/fv_solver.hpp"

namespace ropdf {

/// {u_l > rating} for one line, or the union over two lines.
struct ExceedanceEvent {
  enum class Mode { single, union_of_lines };

  std::vector<LineId> lines;
  std::vector<double> thresholds;
  Mode mode = Mode::single;

  void validate() const;  // DomainError on size mismatch or thresholds <= 0
};

/// 0.9 min(sd, IQR/1.34) m^(-1/5); the IQR term is skipped when it is zero.
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian KDE at the cell centres, renormalized to unit mass on the grid.
/// A bandwidth below the cell width switches to cell-averaged kernel mass.
/// Throws DomainError for m < 2 or zero variance.
Eigen::VectorXd kde_1d(std::span<const double> samples, const Grid1D& grid);
Eigen::VectorXd kde_1d(std::span<const double> samples, const Grid1D& grid, double bandwidth);

/// Product-Gaussian KDE with h_k = sd_k m^(-1/6), flattened with axis 2 fastest.
/// Cell-averaged along any axis whose bandwidth is below its cell width.
Eigen::VectorXd kde_2d(std::span<const double> s1, std::span<const double> s2, const Grid2D& grid);

/// KDE of every selected column of `samples` (m x N_t, column k at times[k]).
/// An empty `columns` selects all of them.
DensityField kde_series_1d(const Eigen::MatrixXd& samples, const std::vector<double>& times, const Grid1D& grid,
                           const std::vector<std::size_t>& columns = {});
DensityField kde_series_2d(const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2, const std::vector<double>& times,
                           const Grid2D& grid, const std::vector<std::size_t>& columns = {});

/// Fraction of samples strictly above the threshold.
double ecdf_exceedance(std::span<const double> samples, double threshold);
/// Fraction of rows where either column exceeds its threshold.
double ecdf_union_exceedance(std::span<const double> s1, std::span<const double> s2, double t1, double t2);
/// Binomial standard error sqrt(p(1-p)/m).
double ecdf_standard_error(double p, Eigen::Index m);

/// Mass above the threshold (midpoint rule, the cell holding the threshold
/// contributes its fraction above it).
double tail_probability(const Eigen::VectorXd& frame, const Grid1D& grid, double threshold);
/// 1 - mass of {U1 <= t1, U2 <= t2}.
double joint_exceedance(const Eigen::VectorXd& frame, const Grid2D& grid, double t1, double t2);
/// Union probability if the lines were independent: 1 - p1 p2, with p the
/// non-exceedance probabilities.
double independence_joint(double p1, double p2);

/// Per-frame L1 distance; bench frames are interpolated linearly in time.
std::vector<double> l1_frame_errors(const DensityField& fhat, const DensityField& fbench);
/// Space-time L1 distance (trapezoid rule over the frames of fhat).
double l1_error(const DensityField& fhat, const DensityField& fbench);

struct MutualInformation {
  double raw = 0.0;
  [[nodiscard]] double reported() const { return raw > 0.0 ? raw : 0.0; }
};

/// Grid quadrature of f12 log(f12 / (f1 f2)); cells with f12 <= 1e-12 count as 0.
MutualInformation mutual_information(const Eigen::VectorXd& joint, const Eigen::VectorXd& marg1,
                                     const Eigen::VectorXd& marg2, const Grid2D& grid);

using ErrorCurve = std::map<long, double>;  // ensemble size -> L1 error

/// Smallest sampled m with error < gamma (first crossing); nullopt when never met.
std::optional<long> first_crossing(const ErrorCurve& curve, double gamma);

struct ComplexityResult {
  std::map<std::string, std::optional<long>> per_line;
  long aggregate = 0;  // sum over the lines that reached gamma
  std::vector<std::string> not_achieved;
};

ComplexityResult sample_complexity(const std::map<std::string, ErrorCurve>& curves, double gamma);

/// Least-squares slope of log y against log x; nullopt with fewer than two
/// distinct x or any nonpositive value.
std::optional<double> loglog_slope(const std::vector<std::pair<double, double>>& points);

}  // namespace ropdf
