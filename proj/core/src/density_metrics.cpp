#include "ropdf/density_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>

#include "ropdf/error.hpp"
#include "text_format.hpp"

namespace ropdf {

namespace {

// Kernel contributions beyond this many bandwidths are below 3e-18 of the
// peak and are skipped.
constexpr double kCutoff = 9.0;

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

Moments moments(std::span<const double> x) {
  const double m = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / m;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (m - 1.0))};
}

void check_samples(std::span<const double> x, const char* what) {
  if (x.size() < 2) throw DomainError(std::string(what) + ": need at least 2 samples");
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite sample");
  }
}

// Type-7 (linear interpolation) quantile of sorted data.
double quantile_sorted(const std::vector<double>& s, double p) {
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

void normalize(Eigen::VectorXd& f, double cell_volume) {
  const double mass = f.sum() * cell_volume;
  if (!(mass > 0.0) || !std::isfinite(mass)) throw NumericError("KDE has no mass on the grid");
  f /= mass;
}

// Kernel mass of a sample at x inside each cell, for kernels narrower than a
// cell: point values at the centres would miss a packet sitting between them.
void add_cell_masses(Eigen::Ref<Eigen::VectorXd> f, const Grid1D& g, double x, double h) {
  const double dx = g.dx();
  const double reach = kCutoff * h;
  const int j0 = std::max(0, static_cast<int>(std::floor((x - reach - g.lo) / dx)));
  const int j1 = std::min(g.n_cells - 1, static_cast<int>(std::floor((x + reach - g.lo) / dx)));
  const double s = 1.0 / (h * std::numbers::sqrt2);
  for (int j = j0; j <= j1; ++j) {
    const double a = g.lo + j * dx;
    f[j] += 0.5 * (std::erfc((a - x) * s) - std::erfc((a + dx - x) * s));
  }
}

// Fraction of cell [a, a + dx] lying below t.
double fraction_below(double a, double dx, double t) { return std::clamp((t - a) / dx, 0.0, 1.0); }

void check_in_grid(const Grid1D& g, double t, const char* what) {
  if (!(t >= g.lo && t <= g.hi)) {
    throw DomainError(std::string(what) + " threshold " + detail::format_double(t) + " outside grid [" +
                      detail::format_double(g.lo) + ", " + detail::format_double(g.hi) + "]");
  }
}

std::vector<std::size_t> all_columns(const std::vector<std::size_t>& columns, Eigen::Index cols) {
  if (!columns.empty()) return columns;
  std::vector<std::size_t> c(static_cast<std::size_t>(cols));
  std::iota(c.begin(), c.end(), std::size_t{0});
  return c;
}

std::span<const double> column(const Eigen::MatrixXd& m, std::size_t k) {
  return {m.col(static_cast<Eigen::Index>(k)).data(), static_cast<std::size_t>(m.rows())};
}

}  // namespace

void ExceedanceEvent::validate() const {
  if (lines.empty() || lines.size() > 2) throw DomainError("exceedance event needs one or two lines");
  if (thresholds.size() != lines.size()) throw DomainError("one threshold per line");
  for (double t : thresholds) {
    if (!(t > 0.0)) throw DomainError("exceedance thresholds must be > 0");
  }
  if (mode == Mode::single && lines.size() != 1) throw DomainError("single-line event with two lines");
  if (mode == Mode::union_of_lines && lines.size() != 2) throw DomainError("union event needs two lines");
}

double silverman_bandwidth(std::span<const double> samples) {
  check_samples(samples, "bandwidth");
  const auto [mean, sd] = moments(samples);
  (void)mean;
  if (!(sd > 0.0)) throw DomainError("degenerate variance: all samples are equal");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(static_cast<double>(samples.size()), -0.2);
}

Eigen::VectorXd kde_1d(std::span<const double> samples, const Grid1D& grid) {
  return kde_1d(samples, grid, silverman_bandwidth(samples));
}

Eigen::VectorXd kde_1d(std::span<const double> samples, const Grid1D& grid, double h) {
  check_samples(samples, "kde");
  if (!(h > 0.0)) throw DomainError("kde bandwidth must be > 0");
  const int n = grid.n_cells;
  const double dx = grid.dx();
  const double c0 = grid.center(0);
  const double inv = 0.5 / (h * h);
  const double q = std::exp(-dx * dx / (h * h));
  const double reach = kCutoff * h;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  if (h < dx) {
    for (double x : samples) add_cell_masses(f, grid, x, h);
    normalize(f, dx);
    return f;
  }

  // exp(-d^2/2h^2) along equally spaced d: e <- e r, r <- r q.
  for (double x : samples) {
    const double pos = std::clamp((x - c0) / dx, -1.0, static_cast<double>(n));
    int jr = static_cast<int>(std::ceil(pos));  // first centre at or right of x
    jr = std::clamp(jr, 0, n);
    double d = grid.center(jr) - x;
    if (jr < n && d <= reach) {
      double e = std::exp(-d * d * inv);
      double r = std::exp(-(2.0 * d * dx + dx * dx) * inv);
      for (int j = jr; j < n && d <= reach; ++j, d += dx) {
        f[j] += e;
        e *= r;
        r *= q;
      }
    }
    const int jl = std::min(jr - 1, n - 1);
    d = x - grid.center(jl);
    if (jl >= 0 && d <= reach) {
      double e = std::exp(-d * d * inv);
      double r = std::exp(-(2.0 * d * dx + dx * dx) * inv);
      for (int j = jl; j >= 0 && d <= reach; --j, d += dx) {
        f[j] += e;
        e *= r;
        r *= q;
      }
    }
  }
  normalize(f, dx);
  return f;
}

Eigen::VectorXd kde_2d(std::span<const double> s1, std::span<const double> s2, const Grid2D& grid) {
  check_samples(s1, "kde");
  check_samples(s2, "kde");
  if (s1.size() != s2.size()) throw DomainError("kde_2d: sample columns differ in length");
  const double m = static_cast<double>(s1.size());
  const double sd1 = moments(s1).sd;
  const double sd2 = moments(s2).sd;
  if (!(sd1 > 0.0) || !(sd2 > 0.0)) throw DomainError("degenerate variance: constant samples on one axis");
  const double h1 = sd1 * std::pow(m, -1.0 / 6.0);
  const double h2 = sd2 * std::pow(m, -1.0 / 6.0);
  const int n1 = grid.ax1.n_cells;
  const int n2 = grid.ax2.n_cells;
  const Eigen::VectorXd c1 = grid.ax1.centers();
  const Eigen::VectorXd c2 = grid.ax2.centers();

  auto kernel = [](double d, double h) {
    const double z = d / h;
    return std::abs(z) > kCutoff ? 0.0 : std::exp(-0.5 * z * z);
  };
  // Sum of outer products K1^T K2, in chunks to bound memory.
  constexpr Eigen::Index kChunk = 2048;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n1, n2);
  Eigen::MatrixXd K1, K2;
  const bool narrow1 = h1 < grid.ax1.dx();
  const bool narrow2 = h2 < grid.ax2.dx();
  for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(s1.size()); start += kChunk) {
    const Eigen::Index rows = std::min<Eigen::Index>(kChunk, static_cast<Eigen::Index>(s1.size()) - start);
    K1.setZero(rows, n1);
    K2.setZero(rows, n2);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double x1 = s1[static_cast<std::size_t>(start + r)];
      const double x2 = s2[static_cast<std::size_t>(start + r)];
      if (narrow1) {
        Eigen::VectorXd row = Eigen::VectorXd::Zero(n1);
        add_cell_masses(row, grid.ax1, x1, h1);
        K1.row(r) = row.transpose();
      } else {
        for (int i = 0; i < n1; ++i) K1(r, i) = kernel(c1[i] - x1, h1);
      }
      if (narrow2) {
        Eigen::VectorXd row = Eigen::VectorXd::Zero(n2);
        add_cell_masses(row, grid.ax2, x2, h2);
        K2.row(r) = row.transpose();
      } else {
        for (int j = 0; j < n2; ++j) K2(r, j) = kernel(c2[j] - x2, h2);
      }
    }
    acc.noalias() += K1.transpose() * K2;
  }
  Eigen::VectorXd f(static_cast<Eigen::Index>(n1) * n2);
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j) f[static_cast<Eigen::Index>(i) * n2 + j] = acc(i, j);
  normalize(f, grid.cell_area());
  return f;
}

DensityField kde_series_1d(const Eigen::MatrixXd& samples, const std::vector<double>& times, const Grid1D& grid,
                           const std::vector<std::size_t>& columns) {
  if (static_cast<Eigen::Index>(times.size()) != samples.cols()) throw DomainError("one time per sample column");
  DensityField out;
  out.axes = {grid};
  for (std::size_t k : all_columns(columns, samples.cols())) {
    out.times.push_back(times.at(k));
    out.frames.push_back(kde_1d(column(samples, k), grid));
  }
  return out;
}

DensityField kde_series_2d(const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2, const std::vector<double>& times,
                           const Grid2D& grid, const std::vector<std::size_t>& columns) {
  if (static_cast<Eigen::Index>(times.size()) != s1.cols() || s1.cols() != s2.cols() || s1.rows() != s2.rows()) {
    throw DomainError("kde_series_2d: sample shapes do not match");
  }
  DensityField out;
  out.axes = {grid.ax1, grid.ax2};
  for (std::size_t k : all_columns(columns, s1.cols())) {
    out.times.push_back(times.at(k));
    out.frames.push_back(kde_2d(column(s1, k), column(s2, k), grid));
  }
  return out;
}

double ecdf_exceedance(std::span<const double> samples, double threshold) {
  if (samples.empty()) throw DomainError("ecdf needs at least one sample");
  const auto above = std::count_if(samples.begin(), samples.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(above) / static_cast<double>(samples.size());
}

double ecdf_union_exceedance(std::span<const double> s1, std::span<const double> s2, double t1, double t2) {
  if (s1.empty() || s1.size() != s2.size()) throw DomainError("union ecdf needs paired, nonempty samples");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < s1.size(); ++k) hits += (s1[k] > t1 || s2[k] > t2) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(s1.size());
}

double ecdf_standard_error(double p, Eigen::Index m) {
  if (m < 1) throw DomainError("standard error needs m >= 1");
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(m));
}

double tail_probability(const Eigen::VectorXd& frame, const Grid1D& grid, double threshold) {
  if (frame.size() != grid.n_cells) throw DomainError("frame does not match the grid");
  check_in_grid(grid, threshold, "tail");
  const double dx = grid.dx();
  double p = 0.0;
  for (int i = 0; i < grid.n_cells; ++i) p += frame[i] * (1.0 - fraction_below(grid.face(i), dx, threshold));
  // Solver mass can sit a few ulps above 1 (or the tail a few below 0).
  return std::clamp(p * dx, 0.0, 1.0);
}

double joint_exceedance(const Eigen::VectorXd& frame, const Grid2D& grid, double t1, double t2) {
  const int n1 = grid.ax1.n_cells;
  const int n2 = grid.ax2.n_cells;
  if (frame.size() != static_cast<Eigen::Index>(n1) * n2) throw DomainError("frame does not match the grid");
  check_in_grid(grid.ax1, t1, "joint");
  check_in_grid(grid.ax2, t2, "joint");
  Eigen::VectorXd w2(n2);
  for (int j = 0; j < n2; ++j) w2[j] = fraction_below(grid.ax2.face(j), grid.ax2.dx(), t2);
  double below = 0.0;
  for (int i = 0; i < n1; ++i) {
    const double w1 = fraction_below(grid.ax1.face(i), grid.ax1.dx(), t1);
    if (w1 == 0.0) continue;
    below += w1 * frame.segment(static_cast<Eigen::Index>(i) * n2, n2).dot(w2);
  }
  return std::clamp(1.0 - below * grid.cell_area(), 0.0, 1.0);
}

double independence_joint(double p1, double p2) {
  if (!(p1 >= 0.0 && p1 <= 1.0 && p2 >= 0.0 && p2 <= 1.0)) throw DomainError("probabilities must lie in [0, 1]");
  return 1.0 - p1 * p2;
}

std::vector<double> l1_frame_errors(const DensityField& fhat, const DensityField& fbench) {
  if (fhat.axes != fbench.axes) throw DomainError("l1_error: grids differ");
  if (fhat.frames.empty() || fbench.frames.empty()) throw DomainError("l1_error: empty density field");
  const auto& bt = fbench.times;
  const double span = std::max(1.0, std::abs(bt.back() - bt.front()));
  const double tol = 1e-9 * span;
  const double vol = fhat.cell_volume();
  std::vector<double> err;
  err.reserve(fhat.frames.size());
  for (std::size_t k = 0; k < fhat.frames.size(); ++k) {
    const double t = fhat.times[k];
    if (t < bt.front() - tol || t > bt.back() + tol) {
      throw DomainError("l1_error: time " + detail::format_double(t) + " outside the benchmark frames");
    }
    Eigen::VectorXd bench;
    if (bt.size() == 1) {
      bench = fbench.frames.front();
    } else {
      auto it = std::upper_bound(bt.begin(), bt.end(), t);
      std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - bt.begin()), 1, bt.size() - 1);
      const std::size_t lo = hi - 1;
      const double w = std::clamp((t - bt[lo]) / (bt[hi] - bt[lo]), 0.0, 1.0);
      bench = (1.0 - w) * fbench.frames[lo] + w * fbench.frames[hi];
    }
    err.push_back((fhat.frames[k] - bench).cwiseAbs().sum() * vol);
  }
  return err;
}

double l1_error(const DensityField& fhat, const DensityField& fbench) {
  if (fhat.frames.size() < 2) throw DomainError("l1_error needs at least two frames");
  const auto e = l1_frame_errors(fhat, fbench);
  double total = 0.0;
  for (std::size_t k = 1; k < e.size(); ++k) total += 0.5 * (e[k] + e[k - 1]) * (fhat.times[k] - fhat.times[k - 1]);
  return total;
}

MutualInformation mutual_information(const Eigen::VectorXd& joint, const Eigen::VectorXd& marg1,
                                     const Eigen::VectorXd& marg2, const Grid2D& grid) {
  const int n1 = grid.ax1.n_cells;
  const int n2 = grid.ax2.n_cells;
  if (joint.size() != static_cast<Eigen::Index>(n1) * n2 || marg1.size() != n1 || marg2.size() != n2) {
    throw DomainError("mutual_information: densities do not match the grid");
  }
  constexpr double kFloor = 1e-12;
  const double area = grid.cell_area();
  double mi = 0.0;
  for (int i = 0; i < n1; ++i) {
    for (int j = 0; j < n2; ++j) {
      const double f12 = joint[static_cast<Eigen::Index>(i) * n2 + j];
      if (f12 <= kFloor) continue;
      const double prod = marg1[i] * marg2[j];
      if (!(prod > 0.0)) {
        if (f12 * area > 1e-9) {
          throw NumericError("mutual_information: marginal vanishes under joint mass at cell (" + std::to_string(i) +
                             ", " + std::to_string(j) + ")");
        }
        continue;
      }
      mi += f12 * std::log(f12 / prod);
    }
  }
  return {mi * area};
}

std::optional<long> first_crossing(const ErrorCurve& curve, double gamma) {
  if (curve.empty()) throw DomainError("empty error curve");
  for (const auto& [m, e] : curve) {
    if (e < gamma) return m;
  }
  return std::nullopt;
}

ComplexityResult sample_complexity(const std::map<std::string, ErrorCurve>& curves, double gamma) {
  if (curves.empty()) throw DomainError("no error curves");
  ComplexityResult r;
  for (const auto& [line, curve] : curves) {
    const auto m = first_crossing(curve, gamma);
    r.per_line[line] = m;
    if (m) {
      r.aggregate += *m;
    } else {
      r.not_achieved.push_back(line);
    }
  }
  return r;
}

std::optional<double> loglog_slope(const std::vector<std::pair<double, double>>& points) {
  std::vector<std::pair<double, double>> logs;
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0)) return std::nullopt;
    logs.emplace_back(std::log(x), std::log(y));
  }
  if (logs.size() < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : logs) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(logs.size());
  my /= static_cast<double>(logs.size());
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : logs) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx <= 1e-300) return std::nullopt;
  return sxy / sxx;
}

}  // namespace ropdf
