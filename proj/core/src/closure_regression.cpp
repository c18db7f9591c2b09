#include "ropdf/closure_regression.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "ropdf/error.hpp"
#include "text_format.hpp"

namespace ropdf {

std::string to_string(ClosureKind kind) {
  switch (kind) {
    case ClosureKind::global_linear: return "global-linear";
    case ClosureKind::local_linear: return "local-linear";
    case ClosureKind::lowess_2d: return "lowess-2d";
  }
  return "unknown";
}

ClosureKind parse_closure_kind(const std::string& text) {
  std::string t = text;
  std::replace(t.begin(), t.end(), '_', '-');
  if (t == "global-linear") return ClosureKind::global_linear;
  if (t == "local-linear") return ClosureKind::local_linear;
  if (t == "lowess-2d" || t == "lowess") return ClosureKind::lowess_2d;
  throw DomainError("unknown closure method '" + text + "'");
}

namespace {

double sample_std(const Eigen::VectorXd& x) {
  const double mean = x.mean();
  return std::sqrt((x.array() - mean).square().sum() / static_cast<double>(x.size() - 1));
}

}  // namespace

AffineFit fit_global_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index m = X.rows();
  const Eigen::Index d = X.cols();
  if (y.size() != m) throw DomainError("x and y lengths differ");
  if (m < d + 1) throw DomainError("global linear fit needs at least dim+1 samples");
  for (Eigen::Index c = 0; c < d; ++c) {
    if (X.col(c).maxCoeff() == X.col(c).minCoeff()) {
      throw DomainError("rank-deficient design: coordinate " + std::to_string(c + 1) + " is constant");
    }
  }
  // Center for conditioning, solve, then shift the intercept back.
  const Eigen::RowVectorXd mean = X.colwise().mean();
  Eigen::MatrixXd A(m, d + 1);
  A.col(0).setOnes();
  A.rightCols(d) = X.rowwise() - mean;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < d + 1) throw DomainError("rank-deficient design: coordinates are collinear");
  const Eigen::VectorXd beta = qr.solve(y);
  AffineFit fit;
  fit.slope = beta.tail(d);
  fit.intercept = beta[0] - mean.dot(fit.slope);
  return fit;
}

LocalLinearFit::LocalLinearFit(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double bandwidth) : h_(bandwidth) {
  if (x.size() != y.size()) throw DomainError("x and y lengths differ");
  if (x.size() < 2) throw DomainError("local linear fit needs at least 2 samples");
  if (!(bandwidth > 0.0)) throw DomainError("bandwidth must be > 0");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  x_.resize(x.size());
  y_.resize(y.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    x_[static_cast<Eigen::Index>(k)] = x[order[k]];
    y_[static_cast<Eigen::Index>(k)] = y[order[k]];
  }
}

double LocalLinearFit::predict(double x0, double h) const {
  const Eigen::Index m = x_.size();
  x0 = std::clamp(x0, x_[0], x_[m - 1]);
  // exp(-r^2/2) is exactly 0.0 in double precision once r > 38.6, so the window
  // below drops only terms that would contribute nothing.
  constexpr double kReach = 39.0;
  const double* begin = x_.data();
  const double* end = begin + m;
  const auto lo = static_cast<Eigen::Index>(std::lower_bound(begin, end, x0 - kReach * h) - begin);
  const auto hi = static_cast<Eigen::Index>(std::upper_bound(begin, end, x0 + kReach * h) - begin);
  const Eigen::Index len = hi - lo;

  const Eigen::ArrayXd dx = x_.segment(lo, len).array() - x0;
  const Eigen::ArrayXd yy = y_.segment(lo, len).array();
  const Eigen::ArrayXd w = (-0.5 * (dx / h).square()).exp();
  const double s0 = w.sum();
  if (!(s0 > 0.0)) {
    // Every kernel weight underflowed: fall back to the nearest sample.
    const auto it = std::lower_bound(begin, end, x0);
    Eigen::Index k = it - begin;
    if (k == m || (k > 0 && x0 - x_[k - 1] < x_[k] - x0)) --k;
    return y_[k];
  }
  const Eigen::ArrayXd wdx = w * dx;
  const double s1 = wdx.sum();
  const double s2 = (wdx * dx).sum();
  const double t0 = (w * yy).sum();
  const double t1 = (wdx * yy).sum();
  const double det = s0 * s2 - s1 * s1;
  if (!(det > 1e-12 * s0 * s2)) return t0 / s0;  // effectively one support point: local constant
  return (s2 * t0 - s1 * t1) / det;
}

Eigen::VectorXd LocalLinearFit::evaluate(const Eigen::VectorXd& xq) const {
  Eigen::VectorXd out(xq.size());
  for (Eigen::Index k = 0; k < xq.size(); ++k) out[k] = predict(xq[k], h_);
  return out;
}

BandwidthSelection select_bandwidth_cv(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const LocalLinearOptions& opts) {
  const Eigen::Index m = x.size();
  if (y.size() != m) throw DomainError("x and y lengths differ");
  if (opts.folds < 2) throw DomainError("cross validation needs at least 2 folds");
  if (m < opts.folds) {
    throw DomainError("cross validation needs at least as many samples as folds (" + std::to_string(m) + " < " +
                      std::to_string(opts.folds) + ")");
  }
  const double sd = sample_std(x);
  if (!(sd > 0.0)) throw DomainError("zero sample variance in x");
  if (opts.grid_points < 1 || !(opts.grid_lo > 0.0) || opts.grid_hi < opts.grid_lo) {
    throw DomainError("invalid bandwidth grid");
  }

  BandwidthSelection sel;
  for (int g = 0; g < opts.grid_points; ++g) {
    const double frac = opts.grid_points == 1 ? 0.0 : static_cast<double>(g) / (opts.grid_points - 1);
    sel.grid.push_back(sd * opts.grid_lo * std::pow(opts.grid_hi / opts.grid_lo, frac));
  }
  sel.cv_mse.assign(sel.grid.size(), 0.0);

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(opts.fold_seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  for (int f = 0; f < opts.folds; ++f) {
    const Eigen::Index a = m * f / opts.folds;
    const Eigen::Index b = m * (f + 1) / opts.folds;
    Eigen::VectorXd xt(m - (b - a)), yt(m - (b - a));
    Eigen::Index r = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k >= a && k < b) continue;
      xt[r] = x[perm[static_cast<std::size_t>(k)]];
      yt[r] = y[perm[static_cast<std::size_t>(k)]];
      ++r;
    }
    if (xt.maxCoeff() == xt.minCoeff()) continue;  // degenerate training fold carries no information
    const LocalLinearFit fit(xt, yt, sel.grid.front());
    for (std::size_t g = 0; g < sel.grid.size(); ++g) {
      double sse = 0.0;
      for (Eigen::Index k = a; k < b; ++k) {
        const auto idx = perm[static_cast<std::size_t>(k)];
        const double e = fit.predict(x[idx], sel.grid[g]) - y[idx];
        sse += e * e;
      }
      sel.cv_mse[g] += sse;
    }
  }
  for (double& v : sel.cv_mse) v /= static_cast<double>(m);

  // Ascending grid: a later (larger) bandwidth that ties the best wins.
  std::size_t best = 0;
  for (std::size_t g = 1; g < sel.grid.size(); ++g) {
    if (sel.cv_mse[g] <= sel.cv_mse[best] * (1.0 + 1e-12)) best = g;
  }
  sel.bandwidth = sel.grid[best];
  return sel;
}

LocalLinearFit fit_local_linear(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const LocalLinearOptions& opts) {
  if (x.size() < 30) throw DomainError("local linear fit needs at least 30 samples");
  if (opts.bandwidth) return LocalLinearFit(x, y, *opts.bandwidth);
  return LocalLinearFit(x, y, select_bandwidth_cv(x, y, opts).bandwidth);
}

Lowess2DFit::Lowess2DFit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double span) : X_(X), y_(y), span_(span) {
  const Eigen::Index m = X.rows();
  if (X.cols() != 2) throw DomainError("Lowess 2D needs an m x 2 design");
  if (y.size() != m) throw DomainError("x and y lengths differ");
  if (!(span > 0.0 && span <= 1.0)) throw DomainError("span must be in (0, 1]");
  k_ = static_cast<int>(std::ceil(span * static_cast<double>(m)));
  if (span * static_cast<double>(m) < 4.0) {
    throw DomainError("insufficient local points: span*m = " + std::to_string(span * static_cast<double>(m)) + " < 4");
  }
  for (int c = 0; c < 2; ++c) {
    mean_[c] = X.col(c).mean();
    scale_[c] = sample_std(X.col(c));
    if (!(scale_[c] > 0.0)) throw DomainError("zero sample variance in coordinate " + std::to_string(c + 1));
  }
  Z_ = (X.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
}

double Lowess2DFit::operator()(double x1, double x2) const {
  const Eigen::Index m = Z_.rows();
  const double z1 = (x1 - mean_[0]) / scale_[0];
  const double z2 = (x2 - mean_[1]) / scale_[1];
  Eigen::ArrayXd dist = ((Z_.col(0).array() - z1).square() + (Z_.col(1).array() - z2).square()).sqrt();
  std::vector<double> tmp(dist.data(), dist.data() + m);
  std::nth_element(tmp.begin(), tmp.begin() + (k_ - 1), tmp.end());
  const double radius = tmp[static_cast<std::size_t>(k_ - 1)];

  // Weighted affine fit centered at the query.
  Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
  double wsum = 0.0;
  double wy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    double w;
    if (radius > 0.0) {
      const double r = dist[i] / radius;
      if (r >= 1.0) continue;
      const double c = 1.0 - r * r * r;
      w = c * c * c;
    } else {
      if (dist[i] > 0.0) continue;
      w = 1.0;
    }
    const Eigen::Vector3d phi(1.0, X_(i, 0) - x1, X_(i, 1) - x2);
    A.noalias() += w * phi * phi.transpose();
    rhs.noalias() += w * y_[i] * phi;
    wsum += w;
    wy += w * y_[i];
  }
  if (!(wsum > 0.0)) return y_.mean();
  const Eigen::LDLT<Eigen::Matrix3d> ldlt(A);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    const Eigen::Vector3d beta = ldlt.solve(rhs);
    const double cond = ldlt.vectorD().cwiseAbs().minCoeff() / ldlt.vectorD().cwiseAbs().maxCoeff();
    if (std::isfinite(beta[0]) && cond > 1e-12) return beta[0];
  }
  return wy / wsum;
}

Eigen::VectorXd Lowess2DFit::evaluate(const Eigen::MatrixXd& points) const {
  if (points.cols() != 2) throw DomainError("Lowess 2D queries must be q x 2");
  Eigen::VectorXd out(points.rows());
  for (Eigen::Index q = 0; q < points.rows(); ++q) out[q] = (*this)(points(q, 0), points(q, 1));
  return out;
}

Lowess2DFit fit_lowess_2d(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double span) {
  return Lowess2DFit(X, y, span);
}

ClosureKnot ClosureKnot::affine(AffineFit fit) {
  ClosureKnot k;
  k.form_ = Form::affine;
  k.dim_ = static_cast<int>(fit.slope.size());
  k.affine_ = std::move(fit);
  return k;
}

ClosureKnot ClosureKnot::tabulated_1d(Eigen::VectorXd points, Eigen::VectorXd values) {
  if (points.size() != values.size() || points.size() < 1) throw DomainError("tabulated closure: size mismatch");
  ClosureKnot k;
  k.form_ = Form::tabulated;
  k.dim_ = 1;
  k.ax1_ = std::move(points);
  k.values_ = std::move(values);
  return k;
}

ClosureKnot ClosureKnot::lattice_2d(Eigen::VectorXd ax1, Eigen::VectorXd ax2, Eigen::MatrixXd values) {
  if (values.rows() != ax1.size() || values.cols() != ax2.size() || ax1.size() < 2 || ax2.size() < 2) {
    throw DomainError("lattice closure: size mismatch");
  }
  ClosureKnot k;
  k.form_ = Form::lattice;
  k.dim_ = 2;
  k.ax1_ = std::move(ax1);
  k.ax2_ = std::move(ax2);
  k.values_ = std::move(values);
  return k;
}

namespace {

// Segment index and weight of x on a strictly increasing axis, clamped at the ends.
std::pair<Eigen::Index, double> locate(const Eigen::VectorXd& ax, double x) {
  const Eigen::Index n = ax.size();
  if (n == 1 || x <= ax[0]) return {0, 0.0};
  if (x >= ax[n - 1]) return {n - 2, 1.0};
  const auto k = static_cast<Eigen::Index>(std::upper_bound(ax.data(), ax.data() + n, x) - ax.data()) - 1;
  return {k, (x - ax[k]) / (ax[k + 1] - ax[k])};
}

}  // namespace

Eigen::VectorXd ClosureKnot::evaluate(const Eigen::MatrixXd& points) const {
  if (points.cols() != dim_) throw DomainError("closure evaluated with the wrong dimension");
  const Eigen::Index q = points.rows();
  Eigen::VectorXd out(q);
  switch (form_) {
    case Form::affine:
      out = (points * affine_.slope).array() + affine_.intercept;
      break;
    case Form::tabulated:
      for (Eigen::Index r = 0; r < q; ++r) {
        if (ax1_.size() == 1) {
          out[r] = values_(0, 0);
          continue;
        }
        const auto [k, w] = locate(ax1_, points(r, 0));
        out[r] = (1.0 - w) * values_(k, 0) + w * values_(k + 1, 0);
      }
      break;
    case Form::lattice:
      for (Eigen::Index r = 0; r < q; ++r) {
        const auto [i, wi] = locate(ax1_, points(r, 0));
        const auto [j, wj] = locate(ax2_, points(r, 1));
        out[r] = (1.0 - wi) * ((1.0 - wj) * values_(i, j) + wj * values_(i, j + 1)) +
                 wi * ((1.0 - wj) * values_(i + 1, j) + wj * values_(i + 1, j + 1));
      }
      break;
  }
  return out;
}

std::pair<std::size_t, double> ClosureModel::bracket(double t) const {
  if (knots.empty()) throw DomainError("closure has no knots");
  const double span = knots.back() - knots.front();
  const double tol = 1e-12 * std::max(1.0, std::abs(span));
  if (t < knots.front() - tol || t > knots.back() + tol) {
    throw DomainError("time " + detail::format_double(t) + " outside closure knots [" +
                      detail::format_double(knots.front()) + ", " + detail::format_double(knots.back()) + "]");
  }
  if (knots.size() == 1) return {0, 0.0};
  t = std::clamp(t, knots.front(), knots.back());
  auto k = static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), t) - knots.begin());
  k = std::min(k, knots.size() - 1);
  k = k == 0 ? 0 : k - 1;
  const double w = (t - knots[k]) / (knots[k + 1] - knots[k]);
  return {k, w};
}

Eigen::VectorXd ClosureModel::evaluate_knot(std::size_t k, const Eigen::MatrixXd& points) const {
  return fields.at(k).evaluate(points);
}

Eigen::VectorXd ClosureModel::coefficient_field(double t, const Eigen::MatrixXd& points) const {
  const auto [k, w] = bracket(t);
  if (w == 0.0) return evaluate_knot(k, points);
  if (w == 1.0) return evaluate_knot(k + 1, points);
  return (1.0 - w) * evaluate_knot(k, points) + w * evaluate_knot(k + 1, points);
}

namespace {

void check_knots(const std::vector<double>& knots, Eigen::Index cols) {
  if (knots.empty()) throw DomainError("closure needs at least one knot");
  if (static_cast<Eigen::Index>(knots.size()) != cols) throw DomainError("knot count does not match sample columns");
  for (std::size_t k = 1; k < knots.size(); ++k) {
    if (!(knots[k] > knots[k - 1])) throw DomainError("closure knots must be strictly increasing");
  }
}

double select_bandwidth(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const LocalLinearOptions& lo, int cap) {
  const Eigen::Index m = x.size();
  if (cap < lo.folds || m <= cap) return select_bandwidth_cv(x, y, lo).bandwidth;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(lo.fold_seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  Eigen::VectorXd xs(cap), ys(cap);
  for (int k = 0; k < cap; ++k) {
    xs[k] = x[idx[static_cast<std::size_t>(k)]];
    ys[k] = y[idx[static_cast<std::size_t>(k)]];
  }
  const double h = select_bandwidth_cv(xs, ys, lo).bandwidth;
  return h * std::pow(static_cast<double>(cap) / static_cast<double>(m), 0.2);
}

[[noreturn]] void rethrow_at_knot(std::size_t k, double t, const std::exception& e) {
  throw NumericError("closure fit failed at knot " + std::to_string(k) + " (t=" + detail::format_double(t) +
                     "): " + e.what());
}

}  // namespace

ClosureModel fit_closure_1d(const std::vector<double>& knots, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            const Eigen::VectorXd& eval_points, const ClosureOptions& opts) {
  check_knots(knots, x.cols());
  if (y.rows() != x.rows() || y.cols() != x.cols()) throw DomainError("closure samples: shape mismatch");
  if (opts.kind == ClosureKind::lowess_2d) throw DomainError("lowess-2d is a two-variable closure");
  if (opts.cv_stride < 1) throw DomainError("cv_stride must be >= 1");

  ClosureModel model;
  model.kind = opts.kind;
  model.knots = knots;
  model.fields.resize(knots.size());
  std::optional<double> h;
  for (std::size_t k = 0; k < knots.size(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    try {
      if (opts.kind == ClosureKind::global_linear) {
        model.fields[k] = ClosureKnot::affine(fit_global_linear(x.col(col), y.col(col)));
        continue;
      }
      if (opts.local.bandwidth) {
        h = opts.local.bandwidth;
      } else if (k % static_cast<std::size_t>(opts.cv_stride) == 0 || !h) {
        LocalLinearOptions lo = opts.local;
        lo.fold_seed = opts.local.fold_seed + k;
        h = select_bandwidth(x.col(col), y.col(col), lo, opts.cv_max_samples);
      }
      const LocalLinearFit fit = fit_local_linear(x.col(col), y.col(col), LocalLinearOptions{h});
      model.fields[k] = ClosureKnot::tabulated_1d(eval_points, fit.evaluate(eval_points));
      model.bandwidths.push_back(*h);
    } catch (const Error& e) {
      rethrow_at_knot(k, knots[k], e);
    }
  }
  return model;
}

ClosureModel fit_closure_2d(const std::vector<double>& knots, const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                            const Eigen::MatrixXd& y, const Eigen::Vector2d& lo, const Eigen::Vector2d& hi,
                            const ClosureOptions& opts) {
  check_knots(knots, x1.cols());
  if (x2.rows() != x1.rows() || x2.cols() != x1.cols() || y.rows() != x1.rows() || y.cols() != x1.cols()) {
    throw DomainError("closure samples: shape mismatch");
  }
  if (opts.kind == ClosureKind::local_linear) throw DomainError("local-linear is a one-variable closure");
  if (opts.lattice < 2) throw DomainError("Lowess lattice needs at least 2 points per axis");

  ClosureModel model;
  model.kind = opts.kind;
  model.knots = knots;
  model.fields.resize(knots.size());
  const Eigen::VectorXd ax1 = Eigen::VectorXd::LinSpaced(opts.lattice, lo[0], hi[0]);
  const Eigen::VectorXd ax2 = Eigen::VectorXd::LinSpaced(opts.lattice, lo[1], hi[1]);
  Eigen::MatrixXd lattice_points(ax1.size() * ax2.size(), 2);
  for (Eigen::Index i = 0; i < ax1.size(); ++i) {
    for (Eigen::Index j = 0; j < ax2.size(); ++j) lattice_points.row(i * ax2.size() + j) << ax1[i], ax2[j];
  }

  for (std::size_t k = 0; k < knots.size(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    Eigen::MatrixXd X(x1.rows(), 2);
    X.col(0) = x1.col(col);
    X.col(1) = x2.col(col);
    try {
      if (opts.kind == ClosureKind::global_linear) {
        model.fields[k] = ClosureKnot::affine(fit_global_linear(X, y.col(col)));
      } else {
        const Lowess2DFit fit(X, y.col(col), opts.span);
        const Eigen::VectorXd v = fit.evaluate(lattice_points);
        Eigen::MatrixXd values(ax1.size(), ax2.size());
        for (Eigen::Index i = 0; i < ax1.size(); ++i) {
          for (Eigen::Index j = 0; j < ax2.size(); ++j) values(i, j) = v[i * ax2.size() + j];
        }
        model.fields[k] = ClosureKnot::lattice_2d(ax1, ax2, std::move(values));
      }
    } catch (const Error& e) {
      rethrow_at_knot(k, knots[k], e);
    }
  }
  return model;
}

void write_closure_csv(const ClosureModel& model, const Eigen::MatrixXd& points, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << (points.cols() == 1 ? "t,U,value\n" : "t,U1,U2,value\n");
  std::string line;
  for (std::size_t k = 0; k < model.knots.size(); ++k) {
    const Eigen::VectorXd v = model.evaluate_knot(k, points);
    for (Eigen::Index r = 0; r < points.rows(); ++r) {
      line.clear();
      detail::append_double(line, model.knots[k]);
      for (Eigen::Index c = 0; c < points.cols(); ++c) {
        line += ',';
        detail::append_double(line, points(r, c));
      }
      line += ',';
      detail::append_double(line, v[r]);
      out << line << '\n';
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace ropdf
