#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "ropdf/closure_regression.hpp"
#include "ropdf/error.hpp"
#include "ropdf/fv_solver.hpp"
#include "test_support.hpp"

using namespace ropdf;

namespace {

double normal_cdf(double x, double mu, double sd) { return 0.5 * std::erfc(-(x - mu) / (sd * std::numbers::sqrt2)); }

// Exact cell averages of a normal density.
Eigen::VectorXd normal_cells(const Grid1D& g, double mu, double sd) {
  Eigen::VectorXd f(g.n_cells);
  for (int i = 0; i < g.n_cells; ++i) f[i] = (normal_cdf(g.face(i + 1), mu, sd) - normal_cdf(g.face(i), mu, sd)) / g.dx();
  return f;
}

Eigen::MatrixXd normal_cells_2d(const Grid2D& g, Eigen::Vector2d mu, double sd) {
  return normal_cells(g.ax1, mu[0], sd) * normal_cells(g.ax2, mu[1], sd).transpose();
}

double rel_l1(const Eigen::ArrayXd& f, const Eigen::ArrayXd& ref) { return (f - ref).abs().sum() / ref.abs().sum(); }

// Closure that is the same affine map at every knot.
ClosureModel affine_model(std::vector<double> knots, double intercept, Eigen::VectorXd slope) {
  ClosureModel m;
  m.knots = std::move(knots);
  for (std::size_t k = 0; k < m.knots.size(); ++k) m.fields.push_back(ClosureKnot::affine({intercept, slope}));
  return m;
}

ClosureModel affine_model(std::vector<double> knots, double intercept, double slope) {
  return affine_model(std::move(knots), intercept, Eigen::VectorXd::Constant(1, slope));
}

std::vector<double> knots_to(double T, int n) {
  std::vector<double> k(n + 1);
  for (int i = 0; i <= n; ++i) k[i] = T * i / n;
  return k;
}

double total_variation(const Eigen::VectorXd& f) {
  double tv = std::abs(f[0]) + std::abs(f[f.size() - 1]);
  for (Eigen::Index i = 1; i < f.size(); ++i) tv += std::abs(f[i] - f[i - 1]);
  return tv;
}

}  // namespace

TEST_CASE("cfl_dt examples") {
  const double dx = 0.1;
  const double two = 2.0, zero = 0.0;
  CHECK(cfl_dt({&two, 1}, {&dx, 1}, 0.0, 0.9, 1.0) == doctest::Approx(0.045));
  // Pure diffusion: 0.9 dx^2 / (2 D) = 1.8, then the knot spacing caps it.
  CHECK(cfl_dt({&zero, 1}, {&dx, 1}, 0.0025, 0.9, 10.0) == doctest::Approx(1.8));
  CHECK(cfl_dt({&zero, 1}, {&dx, 1}, 0.0025, 0.9, 0.05) == 0.05);
  CHECK(cfl_dt({&zero, 1}, {&dx, 1}, 0.0, 0.9, 0.3) == 0.3);
  const double speeds[2] = {1.0, 4.0};
  const double dxs[2] = {0.1, 0.1};
  CHECK(cfl_dt(speeds, dxs, 0.0, 0.9, 1.0) == doctest::Approx(0.9 * 0.025));
  // Advection and diffusion together: the rates add.
  CHECK(cfl_dt({&two, 1}, {&dx, 1}, 0.0025, 0.9, 1.0) == doctest::Approx(0.9 / (20.0 + 0.5)));
  CHECK_THROWS_AS((void)cfl_dt({&two, 1}, {&dx, 1}, 0.0, 0.0, 1.0), DomainError);
}

TEST_CASE("build_grid examples") {
  Eigen::MatrixXd s(2, 2);
  s << 1.0, 2.0, 3.0, 4.0;  // sd = sqrt(5/3)
  const double sd = std::sqrt(5.0 / 3.0);
  auto g = build_grid(s, 100, 1.0, false);
  CHECK(g.lo == doctest::Approx(1.0 - sd));
  CHECK(g.hi == doctest::Approx(4.0 + sd));
  CHECK(g.n_cells == 100);
  g = build_grid(s, 100, 1.0, true);
  CHECK(g.lo == 0.0);
  g = build_grid(s, 50, 0.5, true);
  CHECK(g.lo == doctest::Approx(1.0 - 0.5 * sd));
  CHECK(g.dx() == doctest::Approx((3.0 + sd) / 50.0));
  CHECK_THROWS_AS((void)build_grid(s, 100, 2.0), DomainError);
  CHECK_THROWS_AS((void)build_grid(Eigen::MatrixXd::Constant(3, 3, 1.0), 100), DomainError);
  CHECK_THROWS_AS(Grid1D(0.0, 1.0, 8), DomainError);
  CHECK_THROWS_AS(Grid1D(1.0, 1.0, 32), DomainError);
}

TEST_CASE("1D translation of a normal profile") {
  const Grid1D g(-5.0, 5.0, 400);
  const auto model = affine_model(knots_to(2.0, 4), 1.0, 0.0);
  const auto out = solve_ropdf_1d(normal_cells(g, -2.0, 0.5), g, model, 1.0, nullptr, 2.0);
  REQUIRE(out.times.size() == 5);
  CHECK(out.times.back() == 2.0);
  CHECK(rel_l1(out.frames.back(), normal_cells(g, 0.0, 0.5)) <= 0.02);
  CHECK(out.frames.back().minCoeff() >= 0.0);
}

TEST_CASE("translation error shrinks under refinement") {
  auto error_at = [](int n) {
    const Grid1D g(-5.0, 5.0, n);
    const auto model = affine_model(knots_to(0.5, 1), 1.0, 0.0);
    const auto out = solve_ropdf_1d(normal_cells(g, -1.0, 0.4), g, model, 1.0, nullptr, 0.5);
    return rel_l1(out.frames.back(), normal_cells(g, -0.5, 0.4));
  };
  const double coarse = error_at(100);
  const double fine = error_at(200);
  CHECK(fine * 1.5 <= coarse);
  CHECK(error_at(400) <= 0.02);
}

TEST_CASE("linear speed follows the characteristics") {
  // f_t + (U f)_U = 0 stretches the profile: f(U, t) = e^-t f0(U e^-t).
  const Grid1D g(-2.0, 10.0, 600);
  const auto model = affine_model(knots_to(1.0, 10), 0.0, 1.0);
  const auto out = solve_ropdf_1d(normal_cells(g, 1.0, 0.3), g, model, 1.0, nullptr, 1.0);
  const double e = std::exp(1.0);
  CHECK(rel_l1(out.frames.back(), normal_cells(g, e, 0.3 * e)) <= 0.02);
  // Advection scale doubles the speed.
  const auto fast = solve_ropdf_1d(normal_cells(g, 1.0, 0.3), g, model, 2.0, nullptr, 0.5);
  CHECK(rel_l1(fast.frames.back(), normal_cells(g, e, 0.3 * e)) <= 0.02);
}

TEST_CASE("pure diffusion spreads the variance by 2 D t") {
  const Grid1D g(-8.0, 8.0, 320);
  const auto zero = affine_model(knots_to(1.0, 2), 0.0, 0.0);
  const auto diff = affine_model(knots_to(1.0, 2), 0.5, 0.0);
  const auto out = solve_ropdf_1d(normal_cells(g, 0.0, 0.5), g, zero, 1.0, &diff, 1.0);
  const Eigen::VectorXd c = g.centers();
  const Eigen::VectorXd& f = out.frames.back();
  const double mass = f.sum() * g.dx();
  const double mean = c.dot(f) * g.dx() / mass;
  const double var = (c.array() - mean).square().matrix().dot(f) * g.dx() / mass;
  CHECK(var == doctest::Approx(0.25 + 1.0).epsilon(0.02));
  CHECK(rel_l1(f, normal_cells(g, 0.0, std::sqrt(1.25))) <= 0.02);
}

TEST_CASE("OU density matches the analytic Gaussian") {
  const double theta = 1.0, s = 0.8, m0 = 1.5, v0 = 0.04, T = 2.0;
  const Grid1D g(-3.0, 3.0, 400);
  const auto adv = affine_model(knots_to(T, 20), 0.0, -theta);
  const auto diff = affine_model(knots_to(T, 20), 0.5 * s * s, 0.0);
  const auto out = solve_ropdf_1d(normal_cells(g, m0, std::sqrt(v0)), g, adv, 1.0, &diff, T);
  const double mean = m0 * std::exp(-theta * T);
  const double var = v0 * std::exp(-2 * theta * T) + s * s / (2 * theta) * (1 - std::exp(-2 * theta * T));
  CHECK(rel_l1(out.frames.back(), normal_cells(g, mean, std::sqrt(var))) <= 0.02);
}

TEST_CASE("zero closure leaves the density unchanged") {
  const Grid1D g(0.0, 4.0, 64);
  const auto zero = affine_model(knots_to(1.0, 3), 0.0, 0.0);
  const Eigen::VectorXd f0 = normal_cells(g, 2.0, 0.5);
  const auto out = solve_ropdf_1d(f0, g, zero, 1.0, &zero, 1.0);
  for (const auto& fr : out.frames) CHECK((fr - f0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.boundary_outflow == 0.0);
}

TEST_CASE("conservation including boundary outflow") {
  const Grid1D g(-3.0, 3.0, 200);
  const auto adv = affine_model(knots_to(2.0, 8), 0.0, 1.0);  // pushes mass out
  const auto diff = affine_model(knots_to(2.0, 8), 0.1, 0.0);
  const Eigen::VectorXd f0 = normal_cells(g, 1.0, 0.6);
  const auto out = solve_ropdf_1d(f0, g, adv, 1.0, &diff, 2.0);
  const double m0 = f0.sum() * g.dx();
  const double m1 = out.frames.back().sum() * g.dx();
  CHECK(out.boundary_outflow > 0.1);
  CHECK(std::abs(m1 + out.boundary_outflow - m0) <= 1e-12 * m0);

  const Grid2D g2{Grid1D(-3, 3, 60), Grid1D(-3, 3, 60)};
  Eigen::VectorXd s1(2), s2(2);
  s1 << 0.5, -1.0;
  s2 << 1.0, 0.3;
  const auto a1 = affine_model(knots_to(1.0, 4), 0.2, s1);
  const auto a2 = affine_model(knots_to(1.0, 4), -0.1, s2);
  const Eigen::MatrixXd q0 = normal_cells_2d(g2, {0.5, 0.5}, 0.7);
  const auto o2 = solve_ropdf_2d(q0, g2, a1, a2, 1.0, 1.0, 1.0);
  const double M0 = q0.sum() * g2.cell_area();
  const double M1 = o2.frames.back().sum() * g2.cell_area();
  CHECK(o2.boundary_outflow > 0.0);
  CHECK(std::abs(M1 + o2.boundary_outflow - M0) <= 1e-12 * M0);
}

TEST_CASE("limited step is TVD and keeps the density nonnegative") {
  const Grid1D g(0.0, 1.0, 100);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(100);
  f.segment(20, 30).setConstant(1.0);
  f.segment(60, 5).setConstant(2.0);
  std::vector<double> a(101, 0.8);
  double tv = total_variation(f);
  for (int s = 0; s < 80; ++s) {
    step_1d(f, a, {}, 0.9 * g.dx() / 0.8, g);
    const double next = total_variation(f);
    CHECK(next <= tv + 1e-12);
    tv = next;
    CHECK(f.minCoeff() >= -1e-14);
  }
  // Variable speed: compressing then stretching flow, still nonnegative.
  std::vector<double> b(101);
  for (int i = 0; i <= 100; ++i) b[i] = std::sin(2 * std::numbers::pi * g.face(i));
  f.setZero();
  f.segment(10, 40).setConstant(1.0);
  for (int s = 0; s < 200; ++s) {
    step_1d(f, b, {}, 0.9 * g.dx(), g);
    CHECK(f.minCoeff() >= -1e-12);
  }
}

TEST_CASE("CFL violation throws") {
  const Grid1D g(0.0, 1.0, 20);
  Eigen::VectorXd f = Eigen::VectorXd::Ones(20);
  std::vector<double> a(21, 1.0);
  CHECK_THROWS_AS(step_1d(f, a, {}, 0.051 * 1.01, g), NumericError);
  const Grid2D g2{g, g};
  Eigen::MatrixXd q = Eigen::MatrixXd::Ones(20, 20);
  CHECK_THROWS_AS(step_2d(q, Eigen::MatrixXd::Zero(21, 20), Eigen::MatrixXd::Constant(20, 21, 2.0), 0.03, g2),
                  NumericError);
}

TEST_CASE("2D translation") {
  const Grid2D g{Grid1D(-5, 5, 200), Grid1D(-5, 5, 200)};
  const auto a1 = affine_model(knots_to(2.0, 2), 1.0, Eigen::Vector2d::Zero());
  const auto a2 = affine_model(knots_to(2.0, 2), 0.5, Eigen::Vector2d::Zero());
  const auto out = solve_ropdf_2d(normal_cells_2d(g, {-1.0, -0.5}, 0.6), g, a1, a2, 1.0, 1.0, 2.0);
  const Eigen::MatrixXd f = out.frame_2d(out.frames.size() - 1);
  CHECK(rel_l1(f.reshaped(), normal_cells_2d(g, {1.0, 0.5}, 0.6).reshaped()) <= 0.03);
  CHECK(f.minCoeff() >= -1e-12 * f.maxCoeff());
}

TEST_CASE("2D solid-body rotation") {
  const Grid2D g{Grid1D(-3, 3, 200), Grid1D(-3, 3, 200)};
  const double T = 2 * std::numbers::pi;
  const auto a1 = affine_model(knots_to(T, 2), 0.0, Eigen::Vector2d(0.0, -1.0));
  const auto a2 = affine_model(knots_to(T, 2), 0.0, Eigen::Vector2d(1.0, 0.0));
  const auto out = solve_ropdf_2d(normal_cells_2d(g, {1.5, 0.0}, 0.4), g, a1, a2, 1.0, 1.0, T);
  const Eigen::MatrixXd f = out.frame_2d(out.frames.size() - 1);
  CHECK(rel_l1(f.reshaped(), normal_cells_2d(g, {1.5, 0.0}, 0.4).reshaped()) <= 0.10);
}

TEST_CASE("separable data stays separable when axis 2 is frozen") {
  const Grid2D g{Grid1D(-3, 3, 80), Grid1D(-2, 2, 40)};
  const auto a1 = affine_model(knots_to(1.0, 4), 0.3, Eigen::Vector2d(-0.8, 0.0));
  const auto a2 = affine_model(knots_to(1.0, 4), 0.0, Eigen::Vector2d::Zero());
  const Eigen::VectorXd h = normal_cells(g.ax2, 0.2, 0.5);
  const Eigen::MatrixXd q0 = normal_cells(g.ax1, 1.0, 0.4) * h.transpose();
  const auto out = solve_ropdf_2d(q0, g, a1, a2, 1.0, 1.0, 1.0);
  const Eigen::MatrixXd f = out.frame_2d(out.frames.size() - 1);
  // Every column is the same profile scaled by h_j.
  const Eigen::VectorXd ref = f.col(20) / h[20];
  for (int j = 0; j < 40; ++j) CHECK((f.col(j) / h[j] - ref).cwiseAbs().maxCoeff() <= 1e-10 * ref.cwiseAbs().maxCoeff());
  // No mass has reached the boundary, so the axis-2 marginal is unchanged.
  for (std::size_t k = 0; k < out.frames.size(); ++k) {
    const Eigen::VectorXd marg = out.frame_2d(k).colwise().sum().transpose() * g.ax1.dx();
    const Eigen::VectorXd marg0 = q0.colwise().sum().transpose() * g.ax1.dx();
    CHECK((marg - marg0).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("solver validation") {
  const Grid1D g(0.0, 1.0, 32);
  const auto m = affine_model(knots_to(1.0, 2), 0.0, 0.0);
  const Eigen::VectorXd f0 = Eigen::VectorXd::Ones(32);
  CHECK_THROWS_AS((void)solve_ropdf_1d(f0, g, m, 1.0, nullptr, 1.5), DomainError);
  CHECK_THROWS_AS((void)solve_ropdf_1d(Eigen::VectorXd::Ones(10), g, m, 1.0, nullptr, 1.0), DomainError);
  const auto other = affine_model(knots_to(1.0, 3), 0.0, 0.0);
  CHECK_THROWS_AS((void)solve_ropdf_1d(f0, g, m, 1.0, &other, 1.0), DomainError);

  SolveOptions opts;
  opts.output_times = std::vector<double>{0.25, 0.6, 0.25, 2.0};
  const auto out = solve_ropdf_1d(f0, g, m, 1.0, nullptr, 1.0, opts);
  REQUIRE(out.times.size() == 3);
  CHECK(out.times[1] == 0.25);
  CHECK(out.times[2] == 0.6);
}

TEST_CASE("density export round trip") {
  testing::TempDir dir;
  const Grid2D g{Grid1D(0, 1, 16), Grid1D(-1, 1, 20)};
  DensityField field;
  field.axes = {g.ax1, g.ax2};
  field.times = {0.0, 0.5};
  field.boundary_outflow = 0.125;
  for (int k = 0; k < 2; ++k) field.frames.push_back(Eigen::VectorXd::LinSpaced(320, k, k + 1.0 / 3.0));
  write_density_binary(field, dir / "d.bin");
  const auto back = read_density_binary(dir / "d.bin");
  CHECK(back.axes == field.axes);
  CHECK(back.times == field.times);
  CHECK(back.boundary_outflow == 0.125);
  REQUIRE(back.frames.size() == 2);
  CHECK(back.frames[1] == field.frames[1]);
  CHECK(back.frame_2d(0)(1, 0) == field.frames[0][20]);

  write_density_csv(field, dir / "d.csv");
  std::ifstream in(dir / "d.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "t,U1,U2,f");
  CHECK(first == "0,0.03125,-0.95,0");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 639);
  CHECK_THROWS_AS((void)read_density_binary(dir / "d.csv"), Error);
}

TEST_CASE("wall at zero keeps a nonnegative quantity in the domain") {
  const Grid1D g(0.0, 2.0, 100);
  const auto adv = affine_model(knots_to(2.0, 4), -1.0, 0.0);  // everything drifts toward 0
  const Eigen::VectorXd f0 = normal_cells(g, 1.0, 0.2);
  SolveOptions opts;
  opts.wall_at_zero = true;
  const auto out = solve_ropdf_1d(f0, g, adv, 1.0, nullptr, 2.0, opts);
  CHECK(out.boundary_outflow == 0.0);
  CHECK(std::abs(out.frames.back().sum() * g.dx() - f0.sum() * g.dx()) <= 1e-12);
  CHECK(out.frames.back().head(5).sum() * g.dx() >= 0.95);  // piled up against the wall
  CHECK(out.frames.back().minCoeff() >= 0.0);

  // Without the wall the same run loses nearly all of its mass.
  const auto open = solve_ropdf_1d(f0, g, adv, 1.0, nullptr, 2.0);
  CHECK(open.boundary_outflow >= 0.95);

  // A grid that does not start at zero is left open.
  const Grid1D shifted(0.5, 2.5, 100);
  const auto s = solve_ropdf_1d(normal_cells(shifted, 1.5, 0.2), shifted, adv, 1.0, nullptr, 2.0, opts);
  CHECK(s.boundary_outflow >= 0.95);

  const Grid2D g2{Grid1D(0.0, 2.0, 40), Grid1D(0.0, 2.0, 40)};
  const auto a1 = affine_model(knots_to(1.5, 3), -1.0, Eigen::Vector2d::Zero());
  const auto a2 = affine_model(knots_to(1.5, 3), -1.0, Eigen::Vector2d::Zero());
  const Eigen::MatrixXd q0 = normal_cells_2d(g2, {1.0, 1.0}, 0.2);
  const auto o2 = solve_ropdf_2d(q0, g2, a1, a2, 1.0, 1.0, 1.5, opts);
  CHECK(o2.boundary_outflow == 0.0);
  CHECK(std::abs(o2.frames.back().sum() - q0.sum()) * g2.cell_area() <= 1e-12);
}
