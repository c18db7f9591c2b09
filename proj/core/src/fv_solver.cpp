#include "ropdf/fv_solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>

#include <spdlog/spdlog.h>

#include "binary_io.hpp"
#include "ropdf/error.hpp"
#include "text_format.hpp"

namespace ropdf {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Grid1D::Grid1D(double lo_, double hi_, int n) : lo(lo_), hi(hi_), n_cells(n) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw DomainError("grid needs finite lo < hi");
  if (n < 16) throw DomainError("grid needs at least 16 cells");
}

Eigen::VectorXd Grid1D::centers() const {
  Eigen::VectorXd c(n_cells);
  for (int i = 0; i < n_cells; ++i) c[i] = center(i);
  return c;
}

Eigen::VectorXd Grid1D::faces() const {
  Eigen::VectorXd f(n_cells + 1);
  for (int i = 0; i <= n_cells; ++i) f[i] = face(i);
  return f;
}

Eigen::MatrixXd Grid2D::faces1() const {
  const int n1 = ax1.n_cells, n2 = ax2.n_cells;
  Eigen::MatrixXd p((n1 + 1) * n2, 2);
  for (int i = 0; i <= n1; ++i)
    for (int j = 0; j < n2; ++j) p.row(i * n2 + j) << ax1.face(i), ax2.center(j);
  return p;
}

Eigen::MatrixXd Grid2D::faces2() const {
  const int n1 = ax1.n_cells, n2 = ax2.n_cells;
  Eigen::MatrixXd p(n1 * (n2 + 1), 2);
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j <= n2; ++j) p.row(i * (n2 + 1) + j) << ax1.center(i), ax2.face(j);
  return p;
}

Eigen::MatrixXd Grid2D::centers() const {
  const int n1 = ax1.n_cells, n2 = ax2.n_cells;
  Eigen::MatrixXd p(n1 * n2, 2);
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j) p.row(i * n2 + j) << ax1.center(i), ax2.center(j);
  return p;
}

Grid1D build_grid(const Eigen::MatrixXd& samples, int n_cells, double padding_stds, bool floor_at_zero) {
  if (samples.size() == 0) throw DomainError("cannot build a grid from no samples");
  if (padding_stds < 0.5 || padding_stds > 1.0) throw DomainError("padding must lie in [0.5, 1] standard deviations");
  if (!samples.allFinite()) throw NumericError("non-finite samples while building the grid");
  const double mean = samples.mean();
  const double var = (samples.array() - mean).square().sum() / static_cast<double>(std::max<Eigen::Index>(samples.size() - 1, 1));
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) throw DomainError("zero-variance samples: cannot size the grid");
  double lo = samples.minCoeff() - padding_stds * sd;
  const double hi = samples.maxCoeff() + padding_stds * sd;
  if (floor_at_zero) lo = std::max(lo, 0.0);
  return Grid1D(lo, hi, n_cells);
}

Grid2D build_grid_2d(const Eigen::MatrixXd& samples1, const Eigen::MatrixXd& samples2, int n1, int n2,
                     double padding_stds, bool floor_at_zero) {
  return {build_grid(samples1, n1, padding_stds, floor_at_zero), build_grid(samples2, n2, padding_stds, floor_at_zero)};
}

double DensityField::cell_volume() const {
  double v = 1.0;
  for (const auto& ax : axes) v *= ax.dx();
  return v;
}

Eigen::Index DensityField::cells() const {
  Eigen::Index c = 1;
  for (const auto& ax : axes) c *= ax.n_cells;
  return c;
}

Eigen::MatrixXd DensityField::frame_2d(std::size_t k) const {
  if (dim() != 2) throw DomainError("frame_2d on a non-2D field");
  return Eigen::Map<const RowMajor>(frames.at(k).data(), axes[0].n_cells, axes[1].n_cells);
}

double cfl_dt(std::span<const double> max_speed, std::span<const double> dx, double d_max, double cfl, double cap) {
  if (max_speed.size() != dx.size() || dx.empty()) throw DomainError("cfl_dt: one speed per axis");
  if (!(cfl > 0.0)) throw DomainError("cfl number must be > 0");
  if (!(cap > 0.0)) throw DomainError("cfl_dt: cap must be > 0");
  double rate = 0.0;
  double dx_min = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < dx.size(); ++k) {
    if (!std::isfinite(max_speed[k])) throw NumericError("non-finite advection speed");
    rate = std::max(rate, std::abs(max_speed[k]) / dx[k]);
    dx_min = std::min(dx_min, dx[k]);
  }
  if (!std::isfinite(d_max)) throw NumericError("non-finite diffusion coefficient");
  if (d_max > 0.0) rate += 2.0 * d_max * static_cast<double>(dx.size()) / (dx_min * dx_min);
  if (rate == 0.0) return cap;
  return std::min(cap, cfl / rate);
}

namespace {

double mc_limiter(double theta) { return std::max(0.0, std::min({0.5 * (1.0 + theta), 2.0, 2.0 * theta})); }
double van_leer(double theta) { return (theta + std::abs(theta)) / (1.0 + std::abs(theta)); }

// Limited second-order correction for a face with jump w and upwind jump wu.
template <typename Limiter>
double correction(double speed, double nu, double w, double wu, Limiter phi) {
  if (w == 0.0) return 0.0;
  return 0.5 * std::abs(speed) * (1.0 - nu) * phi(wu / w) * w;
}

}  // namespace

StepResult step_1d(Eigen::VectorXd& f, std::span<const double> a, std::span<const double> D, double dt,
                   const Grid1D& grid) {
  const int n = grid.n_cells;
  if (f.size() != n || static_cast<int>(a.size()) != n + 1) throw DomainError("step_1d: field sizes do not match the grid");
  if (!D.empty() && static_cast<int>(D.size()) != n) throw DomainError("step_1d: diffusion needs one value per cell");
  if (!(dt > 0.0)) throw DomainError("step_1d: dt must be > 0");
  const double dx = grid.dx();

  double amax = 0.0;
  for (double v : a) amax = std::max(amax, std::abs(v));
  double dmax = 0.0;
  for (double v : D) dmax = std::max(dmax, v);
  const double courant = amax * dt / dx + 2.0 * dmax * dt / (dx * dx);
  if (!(courant <= 1.0 + 1e-9)) {
    throw NumericError("CFL violated: Courant number " + detail::format_double(courant));
  }

  // Two zero ghost cells on each side.
  std::vector<double> q(static_cast<std::size_t>(n) + 4, 0.0);
  for (int i = 0; i < n; ++i) q[i + 2] = f[i];
  std::vector<double> flux(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    const double u = a[i];
    const double left = q[i + 1];
    const double right = q[i + 2];
    const double w = right - left;
    const double wu = u > 0.0 ? left - q[i] : q[i + 3] - right;
    double F = std::max(u, 0.0) * left + std::min(u, 0.0) * right;
    F += correction(u, std::abs(u) * dt / dx, w, wu, mc_limiter);
    if (!D.empty()) {
      const double dr = i < n ? D[i] * right : 0.0;
      const double dl = i > 0 ? D[i - 1] * left : 0.0;
      F -= (dr - dl) / dx;
    }
    flux[i] = F;
  }
  const double r = dt / dx;
  for (int i = 0; i < n; ++i) {
    f[i] -= r * (flux[i + 1] - flux[i]);
    if (!std::isfinite(f[i])) throw NumericError("non-finite density in cell " + std::to_string(i));
  }
  return {flux[n] - flux[0]};
}

StepResult step_2d(Eigen::MatrixXd& f, const Eigen::MatrixXd& a1, const Eigen::MatrixXd& a2, double dt,
                   const Grid2D& grid) {
  const int n1 = grid.ax1.n_cells;
  const int n2 = grid.ax2.n_cells;
  if (f.rows() != n1 || f.cols() != n2 || a1.rows() != n1 + 1 || a1.cols() != n2 || a2.rows() != n1 ||
      a2.cols() != n2 + 1) {
    throw DomainError("step_2d: field sizes do not match the grid");
  }
  if (!(dt > 0.0)) throw DomainError("step_2d: dt must be > 0");
  const double dx = grid.ax1.dx();
  const double dy = grid.ax2.dx();
  const double c1 = a1.cwiseAbs().maxCoeff() * dt / dx;
  const double c2 = a2.cwiseAbs().maxCoeff() * dt / dy;
  if (!(std::max(c1, c2) <= 1.0 + 1e-9)) {
    throw NumericError("CFL violated: Courant number " + detail::format_double(std::max(c1, c2)));
  }

  // q has two zero ghost layers; Q(i, j) addresses interior cell (i, j).
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n1 + 4, n2 + 4);
  q.block(2, 2, n1, n2) = f;
  auto Q = [&](int i, int j) { return q(i + 2, j + 2); };

  // Donor-cell fluxes, used for the transverse predictor.
  Eigen::MatrixXd F0(n1 + 1, n2), G0(n1, n2 + 1);
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i <= n1; ++i) {
      const double u = a1(i, j);
      F0(i, j) = std::max(u, 0.0) * Q(i - 1, j) + std::min(u, 0.0) * Q(i, j);
    }
  for (int j = 0; j <= n2; ++j)
    for (int i = 0; i < n1; ++i) {
      const double v = a2(i, j);
      G0(i, j) = std::max(v, 0.0) * Q(i, j - 1) + std::min(v, 0.0) * Q(i, j);
    }

  Eigen::MatrixXd F(n1 + 1, n2), G(n1, n2 + 1);
  for (int j = 0; j < n2; ++j) {
    for (int i = 0; i <= n1; ++i) {
      const double u = a1(i, j);
      const int up = u >= 0.0 ? i - 1 : i;
      double state = 0.0;
      if (up >= 0 && up < n1) state = Q(up, j) - 0.5 * dt / dy * (G0(up, j + 1) - G0(up, j));
      const double w = Q(i, j) - Q(i - 1, j);
      const double wu = u > 0.0 ? Q(i - 1, j) - Q(i - 2, j) : Q(i + 1, j) - Q(i, j);
      F(i, j) = u * state + correction(u, std::abs(u) * dt / dx, w, wu, van_leer);
    }
  }
  for (int j = 0; j <= n2; ++j) {
    for (int i = 0; i < n1; ++i) {
      const double v = a2(i, j);
      const int up = v >= 0.0 ? j - 1 : j;
      double state = 0.0;
      if (up >= 0 && up < n2) state = Q(i, up) - 0.5 * dt / dx * (F0(i + 1, up) - F0(i, up));
      const double w = Q(i, j) - Q(i, j - 1);
      const double wu = v > 0.0 ? Q(i, j - 1) - Q(i, j - 2) : Q(i, j + 1) - Q(i, j);
      G(i, j) = v * state + correction(v, std::abs(v) * dt / dy, w, wu, van_leer);
    }
  }

  const double rx = dt / dx;
  const double ry = dt / dy;
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) f(i, j) -= rx * (F(i + 1, j) - F(i, j)) + ry * (G(i, j + 1) - G(i, j));
  if (!f.allFinite()) throw NumericError("non-finite density after 2D step");

  const double out1 = (F.row(n1).sum() - F.row(0).sum()) * dy;
  const double out2 = (G.col(n2).sum() - G.col(0).sum()) * dx;
  return {out1 + out2};
}

namespace {

std::vector<double> output_schedule(const ClosureModel& model, double T, const SolveOptions& opts) {
  const double t0 = model.first();
  std::vector<double> out;
  if (opts.output_times) {
    for (double t : *opts.output_times) {
      if (t > t0 && t <= T) out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  } else {
    for (double t : model.knots) {
      if (t > t0 && t <= T) out.push_back(t);
    }
    if (out.empty() || out.back() < T) out.push_back(T);
  }
  return out;
}

void check_horizon(const ClosureModel& model, double T) {
  if (model.knots.empty()) throw DomainError("closure has no knots");
  if (T < model.first()) throw DomainError("final time precedes the first closure knot");
  if (T > model.last() * (1.0 + 1e-12) + 1e-12) {
    throw DomainError("closure knots end at " + detail::format_double(model.last()) + " before T=" + detail::format_double(T));
  }
}

// Time loop shared by the 1D and 2D solvers. eval_knot(k) builds the fields
// of knot k; do_step(lo, hi, w, cap) advances with the fields blended by w and
// returns the dt it took.
template <typename Fields, typename EvalKnot, typename Step>
void run_time_loop(const ClosureModel& model, double T, const SolveOptions& opts, DensityField& out, EvalKnot&& eval_knot,
                   Step&& do_step, std::function<Eigen::VectorXd()> snapshot) {
  const std::vector<double> outputs = output_schedule(model, T, opts);
  double t = model.first();
  std::size_t next_out = 0;
  std::size_t cached = std::numeric_limits<std::size_t>::max();
  Fields lo, hi;
  long steps = 0;
  bool warned = false;
  auto record = [&] {
    Eigen::VectorXd fr = snapshot();
    // Limited schemes may leave round-off negatives; report them, do not clip.
    if (!warned && fr.minCoeff() < -1e-12 * std::max(1.0, fr.maxCoeff())) {
      spdlog::warn("density dips to {} at t={}", fr.minCoeff(), t);
      warned = true;
    }
    out.times.push_back(t);
    out.frames.push_back(std::move(fr));
    ++next_out;
  };
  while (next_out < outputs.size()) {
    auto [k, w] = model.bracket(t);
    if (k + 1 < model.knots.size() && w == 1.0) {
      ++k;
      w = 0.0;
    }
    if (k != cached) {
      lo = eval_knot(k);
      hi = k + 1 < model.knots.size() ? eval_knot(k + 1) : lo;
      cached = k;
    }
    double event = outputs[next_out];
    if (k + 1 < model.knots.size()) event = std::min(event, model.knots[k + 1]);
    const double cap = event - t;
    if (!(cap > 0.0)) {
      // Already at the event (knot or output); record if it is an output.
      if (t >= outputs[next_out]) record();
      continue;
    }
    double dt = 0.0;
    try {
      dt = do_step(lo, hi, w, cap);
    } catch (const Error& e) {
      throw NumericError("solver failed at step " + std::to_string(steps) + " (t=" + detail::format_double(t) +
                         "): " + e.what());
    }
    ++steps;
    if (steps > 50'000'000) throw NumericError("solver exceeded the step budget at t=" + detail::format_double(t));
    t = dt >= cap ? event : t + dt;
    if (t >= outputs[next_out]) record();
  }
}

}  // namespace

DensityField solve_ropdf_1d(const Eigen::VectorXd& f0, const Grid1D& grid, const ClosureModel& advection,
                            double advection_scale, const ClosureModel* diffusion, double T, const SolveOptions& opts) {
  if (f0.size() != grid.n_cells) throw DomainError("initial density does not match the grid");
  check_horizon(advection, T);
  if (diffusion) {
    check_horizon(*diffusion, T);
    if (diffusion->knots != advection.knots) throw DomainError("advection and diffusion closures need the same knots");
  }
  const Eigen::MatrixXd faces = grid.faces();
  const Eigen::MatrixXd centers = grid.centers();

  DensityField out;
  out.axes = {grid};
  out.times = {advection.first()};
  out.frames = {f0};
  Eigen::VectorXd f = f0;

  struct Fields {
    Eigen::VectorXd a;
    Eigen::VectorXd D;
  };
  auto eval_knot = [&](std::size_t k) {
    Fields fl;
    fl.a = advection_scale * advection.evaluate_knot(k, faces);
    if (opts.wall_at_zero && grid.lo == 0.0) fl.a[0] = 0.0;
    if (diffusion) fl.D = diffusion->evaluate_knot(k, centers);
    return fl;
  };
  Eigen::VectorXd a(grid.n_cells + 1), D(diffusion ? grid.n_cells : 0);
  const double dx = grid.dx();
  auto do_step = [&](const Fields& lo, const Fields& hi, double w, double cap) {
    a = (1.0 - w) * lo.a + w * hi.a;
    double dmax = 0.0;
    if (diffusion) {
      D = (1.0 - w) * lo.D + w * hi.D;
      if (D.minCoeff() < 0.0) throw NumericError("negative diffusion coefficient");
      dmax = D.maxCoeff();
    }
    const double amax = a.cwiseAbs().maxCoeff();
    const double dt = cfl_dt(std::span<const double>(&amax, 1), std::span<const double>(&dx, 1), dmax, opts.cfl, cap);
    const auto res = step_1d(f, {a.data(), static_cast<std::size_t>(a.size())},
                             {D.data(), static_cast<std::size_t>(D.size())}, dt, grid);
    out.boundary_outflow += dt * res.net_outflow;
    return dt;
  };
  run_time_loop<Fields>(advection, T, opts, out, eval_knot, do_step, [&] { return Eigen::VectorXd(f); });
  return out;
}

DensityField solve_ropdf_2d(const Eigen::MatrixXd& f0, const Grid2D& grid, const ClosureModel& advection1,
                            const ClosureModel& advection2, double scale1, double scale2, double T,
                            const SolveOptions& opts) {
  const int n1 = grid.ax1.n_cells;
  const int n2 = grid.ax2.n_cells;
  if (f0.rows() != n1 || f0.cols() != n2) throw DomainError("initial density does not match the grid");
  check_horizon(advection1, T);
  check_horizon(advection2, T);
  if (advection1.knots != advection2.knots) throw DomainError("both advection closures need the same knots");
  const Eigen::MatrixXd p1 = grid.faces1();
  const Eigen::MatrixXd p2 = grid.faces2();

  auto flatten = [](const Eigen::MatrixXd& m) {
    RowMajor r = m;
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(r.data(), r.size()));
  };

  DensityField out;
  out.axes = {grid.ax1, grid.ax2};
  out.times = {advection1.first()};
  out.frames = {flatten(f0)};
  Eigen::MatrixXd f = f0;

  struct Fields {
    Eigen::MatrixXd a1;
    Eigen::MatrixXd a2;
  };
  auto eval_knot = [&](std::size_t k) {
    const Eigen::VectorXd v1 = scale1 * advection1.evaluate_knot(k, p1);
    const Eigen::VectorXd v2 = scale2 * advection2.evaluate_knot(k, p2);
    Fields fl{Eigen::Map<const RowMajor>(v1.data(), n1 + 1, n2), Eigen::Map<const RowMajor>(v2.data(), n1, n2 + 1)};
    if (opts.wall_at_zero && grid.ax1.lo == 0.0) fl.a1.row(0).setZero();
    if (opts.wall_at_zero && grid.ax2.lo == 0.0) fl.a2.col(0).setZero();
    return fl;
  };
  Eigen::MatrixXd a1, a2;
  const double dxs[2] = {grid.ax1.dx(), grid.ax2.dx()};
  auto do_step = [&](const Fields& lo, const Fields& hi, double w, double cap) {
    a1 = (1.0 - w) * lo.a1 + w * hi.a1;
    a2 = (1.0 - w) * lo.a2 + w * hi.a2;
    const double speeds[2] = {a1.cwiseAbs().maxCoeff(), a2.cwiseAbs().maxCoeff()};
    const double dt = cfl_dt(speeds, dxs, 0.0, opts.cfl, cap);
    const auto res = step_2d(f, a1, a2, dt, grid);
    out.boundary_outflow += dt * res.net_outflow;
    return dt;
  };
  run_time_loop<Fields>(advection1, T, opts, out, eval_knot, do_step, [&] { return flatten(f); });
  return out;
}

void write_density_csv(const DensityField& field, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const bool two = field.dim() == 2;
  out << (two ? "t,U1,U2,f\n" : "t,U,f\n");
  std::string line;
  for (std::size_t k = 0; k < field.frames.size(); ++k) {
    const Eigen::VectorXd& fr = field.frames[k];
    for (Eigen::Index c = 0; c < fr.size(); ++c) {
      line.clear();
      detail::append_double(line, field.times[k]);
      line += ',';
      if (two) {
        const int n2 = field.axes[1].n_cells;
        detail::append_double(line, field.axes[0].center(static_cast<int>(c / n2)));
        line += ',';
        detail::append_double(line, field.axes[1].center(static_cast<int>(c % n2)));
      } else {
        detail::append_double(line, field.axes[0].center(static_cast<int>(c)));
      }
      line += ',';
      detail::append_double(line, fr[c]);
      out << line << '\n';
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

namespace {
constexpr std::string_view kDensityMagic = "ROPDFDEN";
constexpr std::uint32_t kDensityVersion = 1;
}  // namespace

void write_density_binary(const DensityField& field, const std::filesystem::path& path) {
  detail::BinaryWriter w(path.string(), kDensityMagic, kDensityVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(field.dim()));
  for (const auto& ax : field.axes) {
    w.put<double>(ax.lo);
    w.put<double>(ax.hi);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ax.n_cells));
  }
  w.put<double>(field.boundary_outflow);
  w.put<std::uint64_t>(field.frames.size());
  w.put_doubles(field.times);
  for (const auto& fr : field.frames) w.put_doubles({fr.data(), static_cast<std::size_t>(fr.size())});
}

DensityField read_density_binary(const std::filesystem::path& path) {
  detail::BinaryReader r(path.string(), kDensityMagic, kDensityVersion);
  DensityField field;
  const auto dim = r.get<std::uint32_t>();
  if (dim < 1 || dim > 2) throw Error(path.string() + ": unsupported dimension");
  for (std::uint32_t k = 0; k < dim; ++k) {
    const double lo = r.get<double>();
    const double hi = r.get<double>();
    const auto n = static_cast<int>(r.get<std::uint32_t>());
    field.axes.emplace_back(lo, hi, n);
  }
  field.boundary_outflow = r.get<double>();
  const auto frames = r.get<std::uint64_t>();
  field.times.resize(frames);
  r.get_doubles(field.times);
  for (std::uint64_t k = 0; k < frames; ++k) {
    Eigen::VectorXd fr(field.cells());
    r.get_doubles({fr.data(), static_cast<std::size_t>(fr.size())});
    field.frames.push_back(std::move(fr));
  }
  return field;
}

}  // namespace ropdf
