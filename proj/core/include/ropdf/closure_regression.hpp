#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ropdf {

enum class ClosureKind { global_linear, local_linear, lowess_2d };

[[nodiscard]] std::string to_string(ClosureKind kind);
/// Accepts "global-linear", "local-linear", "lowess-2d" (underscores also accepted).
ClosureKind parse_closure_kind(const std::string& text);

/// y ~ intercept + slope^T x.
struct AffineFit {
  double intercept = 0.0;
  Eigen::VectorXd slope;

  [[nodiscard]] double operator()(const Eigen::VectorXd& x) const { return intercept + slope.dot(x); }
};

/// Ordinary least squares on [1, X]. X is m x d (d = 1 or 2).
/// Throws DomainError naming the coordinate when a column of X is constant.
AffineFit fit_global_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

struct LocalLinearOptions {
  std::optional<double> bandwidth;  // absent: choose by cross validation
  int folds = 10;
  int grid_points = 10;
  double grid_lo = 0.1;  // multiples of the sample std of x
  double grid_hi = 2.0;
  std::uint64_t fold_seed = 0;
};

/// Gaussian-kernel local linear smoother in one variable. Queries outside the
/// sample range take the value of the boundary local fit.
class LocalLinearFit {
 public:
  LocalLinearFit(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double bandwidth);

  [[nodiscard]] double bandwidth() const { return h_; }
  [[nodiscard]] double operator()(double x0) const { return predict(x0, h_); }
  [[nodiscard]] Eigen::VectorXd evaluate(const Eigen::VectorXd& xq) const;

  /// Prediction with an arbitrary bandwidth over the same data.
  [[nodiscard]] double predict(double x0, double h) const;

 private:
  Eigen::VectorXd x_;  // sorted
  Eigen::VectorXd y_;
  double h_;
};

struct BandwidthSelection {
  double bandwidth = 0.0;
  std::vector<double> grid;
  std::vector<double> cv_mse;
};

/// K-fold CV over a log-spaced grid [lo, hi] x std(x): seeded shuffle, then
/// contiguous folds; mean squared error; ties go to the larger bandwidth.
BandwidthSelection select_bandwidth_cv(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                       const LocalLinearOptions& opts = {});

LocalLinearFit fit_local_linear(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const LocalLinearOptions& opts = {});

/// Lowess in two variables: tricube weights over the span*m nearest samples
/// (Euclidean distance after standardizing each axis), local affine fit.
class Lowess2DFit {
 public:
  Lowess2DFit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double span);

  [[nodiscard]] double operator()(double x1, double x2) const;
  [[nodiscard]] Eigen::VectorXd evaluate(const Eigen::MatrixXd& points) const;
  [[nodiscard]] double span() const { return span_; }

 private:
  Eigen::MatrixXd Z_;  // standardized samples, m x 2
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  Eigen::Vector2d mean_;
  Eigen::Vector2d scale_;
  double span_;
  int k_;
};

Lowess2DFit fit_lowess_2d(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double span = 0.3);

/// A fitted closure at one time knot, kept in a compact form that can be
/// evaluated anywhere on the solver grid.
class ClosureKnot {
 public:
  static ClosureKnot affine(AffineFit fit);
  /// Values at increasing abscissae; linear in between, constant outside.
  static ClosureKnot tabulated_1d(Eigen::VectorXd points, Eigen::VectorXd values);
  /// Values on a tensor lattice (ax1 x ax2); bilinear in between, clamped outside.
  static ClosureKnot lattice_2d(Eigen::VectorXd ax1, Eigen::VectorXd ax2, Eigen::MatrixXd values);

  [[nodiscard]] int dim() const { return dim_; }
  /// points is q x dim.
  [[nodiscard]] Eigen::VectorXd evaluate(const Eigen::MatrixXd& points) const;

 private:
  enum class Form { affine, tabulated, lattice };
  Form form_ = Form::affine;
  int dim_ = 1;
  AffineFit affine_;
  Eigen::VectorXd ax1_;
  Eigen::VectorXd ax2_;
  Eigen::MatrixXd values_;
};

/// Closure fitted at every time knot; coefficient fields are linear in time
/// between knots.
struct ClosureModel {
  ClosureKind kind = ClosureKind::global_linear;
  std::vector<double> knots;
  std::vector<ClosureKnot> fields;
  std::vector<double> bandwidths;  // local-linear only, one per knot

  [[nodiscard]] double first() const { return knots.front(); }
  [[nodiscard]] double last() const { return knots.back(); }

  /// Index k with knots[k] <= t <= knots[k+1] and the weight of knot k+1.
  /// Throws DomainError outside [first, last].
  [[nodiscard]] std::pair<std::size_t, double> bracket(double t) const;

  [[nodiscard]] Eigen::VectorXd evaluate_knot(std::size_t k, const Eigen::MatrixXd& points) const;
  [[nodiscard]] Eigen::VectorXd coefficient_field(double t, const Eigen::MatrixXd& points) const;
};

struct ClosureOptions {
  ClosureKind kind = ClosureKind::local_linear;
  LocalLinearOptions local;
  /// Cross validation runs at every cv_stride-th knot; knots in between reuse
  /// the most recent selection.
  int cv_stride = 50;
  /// Larger ensembles select the bandwidth on a seeded subsample of this size
  /// and rescale it by (subsample/m)^(1/5).
  int cv_max_samples = 5000;
  double span = 0.3;
  int lattice = 64;  // Lowess evaluation lattice per axis
};

/// 1D closure. x and y are m x N_t with column k at knots[k]; fields are
/// tabulated at eval_points (normally the solver faces).
ClosureModel fit_closure_1d(const std::vector<double>& knots, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            const Eigen::VectorXd& eval_points, const ClosureOptions& opts);

/// 2D closure of y on (x1, x2); the Lowess lattice spans [lo, hi] per axis.
ClosureModel fit_closure_2d(const std::vector<double>& knots, const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                            const Eigen::MatrixXd& y, const Eigen::Vector2d& lo, const Eigen::Vector2d& hi,
                            const ClosureOptions& opts);

/// CSV with columns t,U1[,U2],value at every knot.
void write_closure_csv(const ClosureModel& model, const Eigen::MatrixXd& points, const std::filesystem::path& path);

}  // namespace ropdf
