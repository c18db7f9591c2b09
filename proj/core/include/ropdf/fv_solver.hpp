#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ropdf/closure_regression.hpp"

namespace ropdf {

/// Uniform cell-centred grid on [lo, hi].
struct Grid1D {
  double lo = 0.0;
  double hi = 1.0;
  int n_cells = 16;

  Grid1D() = default;
  Grid1D(double lo, double hi, int n_cells);  // validates

  [[nodiscard]] double dx() const { return (hi - lo) / n_cells; }
  [[nodiscard]] double center(int i) const { return lo + (i + 0.5) * dx(); }
  [[nodiscard]] double face(int i) const { return lo + i * dx(); }
  [[nodiscard]] Eigen::VectorXd centers() const;
  [[nodiscard]] Eigen::VectorXd faces() const;  // n_cells + 1 values

  bool operator==(const Grid1D&) const = default;
};

struct Grid2D {
  Grid1D ax1;
  Grid1D ax2;

  [[nodiscard]] double cell_area() const { return ax1.dx() * ax2.dx(); }
  /// Points of the axis-1 faces, (n1+1)*n2 rows ordered face-major.
  [[nodiscard]] Eigen::MatrixXd faces1() const;
  /// Points of the axis-2 faces, n1*(n2+1) rows ordered cell-major.
  [[nodiscard]] Eigen::MatrixXd faces2() const;
  [[nodiscard]] Eigen::MatrixXd centers() const;  // n1*n2 rows

  bool operator==(const Grid2D&) const = default;
};

/// Bounds [min - p*sd, max + p*sd] over every value of `samples` (all times
/// pooled), lower bound floored at 0 when requested. p must lie in [0.5, 1].
Grid1D build_grid(const Eigen::MatrixXd& samples, int n_cells, double padding_stds = 1.0, bool floor_at_zero = true);
Grid2D build_grid_2d(const Eigen::MatrixXd& samples1, const Eigen::MatrixXd& samples2, int n1, int n2,
                     double padding_stds = 1.0, bool floor_at_zero = true);

/// Space-time density on a 1D or 2D grid. Frames are flattened with the
/// axis-2 index running fastest.
struct DensityField {
  std::vector<Grid1D> axes;
  std::vector<double> times;
  std::vector<Eigen::VectorXd> frames;
  double boundary_outflow = 0.0;  // mass that left through the boundary

  [[nodiscard]] int dim() const { return static_cast<int>(axes.size()); }
  [[nodiscard]] double cell_volume() const;
  [[nodiscard]] Eigen::Index cells() const;
  /// Frame k as an n1 x n2 matrix (2D only).
  [[nodiscard]] Eigen::MatrixXd frame_2d(std::size_t k) const;
};

/// Explicit step bound: cfl / (max_k |a_k|/dx_k + 2 D dim / min dx^2), never
/// above `cap`. Zero speeds and zero diffusion give `cap`.
double cfl_dt(std::span<const double> max_speed, std::span<const double> dx, double d_max, double cfl, double cap);

struct StepResult {
  double net_outflow = 0.0;  // boundary flux out of the domain per unit time
};

/// One conservative step of f_t + (a f)_U = (D f)_UU: limited Lax-Wendroff
/// advective fluxes (monotonized central limiter), central diffusion fluxes,
/// zero Dirichlet ghost cells. `a` lives on the n+1 faces, `D` on the n cells
/// (empty span: no diffusion). Throws NumericError when the CFL bound is broken.
StepResult step_1d(Eigen::VectorXd& f, std::span<const double> a, std::span<const double> D, double dt,
                   const Grid1D& grid);

/// One corner-transport-upwind step of f_t + (a1 f)_1 + (a2 f)_2 = 0.
/// f is n1 x n2; a1 is (n1+1) x n2 on axis-1 faces, a2 is n1 x (n2+1).
/// Second-order corrections use the van Leer limiter.
StepResult step_2d(Eigen::MatrixXd& f, const Eigen::MatrixXd& a1, const Eigen::MatrixXd& a2, double dt,
                   const Grid2D& grid);

struct SolveOptions {
  double cfl = 0.9;
  /// Frames are stored at these times (plus t=first knot); default: every
  /// closure knot up to T.
  std::optional<std::vector<double>> output_times;
  /// Close a lower boundary sitting at U = 0 to advection. Nonnegative QoIs
  /// turn around at zero; a closure fitted above the smallest sample would
  /// otherwise carry mass out through that face.
  bool wall_at_zero = false;
};

/// Adaptive-step RO-PDF solve on [first knot, T]. The advection field is
/// advection_scale * closure; diffusion (optional) is evaluated at cell centres.
DensityField solve_ropdf_1d(const Eigen::VectorXd& f0, const Grid1D& grid, const ClosureModel& advection,
                            double advection_scale, const ClosureModel* diffusion, double T,
                            const SolveOptions& opts = {});

DensityField solve_ropdf_2d(const Eigen::MatrixXd& f0, const Grid2D& grid, const ClosureModel& advection1,
                            const ClosureModel& advection2, double scale1, double scale2, double T,
                            const SolveOptions& opts = {});

/// t,U,f (1D) or t,U1,U2,f (2D), one row per cell and frame.
void write_density_csv(const DensityField& field, const std::filesystem::path& path);
/// Little-endian frames behind the magic "ROPDFDEN".
void write_density_binary(const DensityField& field, const std::filesystem::path& path);
DensityField read_density_binary(const std::filesystem::path& path);

}  // namespace ropdf
