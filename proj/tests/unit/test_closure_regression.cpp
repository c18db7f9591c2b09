#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "ropdf/closure_regression.hpp"
#include "ropdf/error.hpp"
#include "ropdf/qoi_energy.hpp"
#include "ropdf/stochastic_sim.hpp"
#include "test_support.hpp"

using namespace ropdf;

namespace {

// Equal-width binned conditional means, the oracle for E[y | x].
struct Binned {
  double lo, hi;
  Eigen::VectorXd mean;
  Eigen::VectorXi count;

  Binned(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int bins, double lo_, double hi_)
      : lo(lo_), hi(hi_), mean(Eigen::VectorXd::Zero(bins)), count(Eigen::VectorXi::Zero(bins)) {
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const int b = bin(x[k]);
      if (b < 0) continue;
      mean[b] += y[k];
      ++count[b];
    }
    for (int b = 0; b < bins; ++b) mean[b] = count[b] ? mean[b] / count[b] : NAN;
  }
  [[nodiscard]] int bin(double x) const {
    const int bins = static_cast<int>(mean.size());
    const int b = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
    return b >= 0 && b < bins ? b : -1;
  }
  [[nodiscard]] double center(int b) const { return lo + (b + 0.5) * (hi - lo) / mean.size(); }
};

}  // namespace

TEST_CASE("global linear fit") {
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(20, -1.0, 3.0);
  Eigen::VectorXd y = 2.0 * x.array() + 1.0;
  auto fit = fit_global_linear(x, y);
  CHECK(fit.intercept == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(fit.slope[0] == doctest::Approx(2.0).epsilon(1e-10));

  Eigen::VectorXd x3(3), y3(3);
  x3 << -1, 0, 1;
  y3 << 1, 0, 1;
  fit = fit_global_linear(x3, y3);
  CHECK(std::abs(fit.slope[0]) <= 1e-12);
  CHECK(fit.intercept == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(fit_global_linear(Eigen::VectorXd::Constant(5, 2.0), Eigen::VectorXd::LinSpaced(5, 0, 1)), DomainError);

  Eigen::MatrixXd X(4, 2);
  X << 0, 1, 1, 1, 2, 1, 3, 1;
  try {
    fit_global_linear(X, Eigen::VectorXd::LinSpaced(4, 0, 1));
    FAIL("expected rank error");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("coordinate 2") != std::string::npos);
  }
}

TEST_CASE("local linear reproduces affine data for any bandwidth") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Eigen::VectorXd x(300);
  for (auto& v : x) v = g(rng);
  const Eigen::VectorXd y = 3.0 * x.array() - 2.0;
  for (double h : {0.05, 0.3, 1.0, 50.0}) {
    const auto fit = fit_local_linear(x, y, {h});
    for (double q : {-1.5, -0.2, 0.0, 0.7, 1.9}) CHECK(fit(q) == doctest::Approx(3.0 * q - 2.0).epsilon(1e-8).scale(1.0));
  }
  // cross-validated bandwidth too
  const auto cv = fit_local_linear(x, y);
  CHECK(cv(0.5) == doctest::Approx(-0.5).epsilon(1e-8));
}

TEST_CASE("local linear extrapolates with the boundary fit") {
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(100, 0.0, 1.0);
  Eigen::VectorXd y = x.array().square();
  const auto fit = fit_local_linear(x, y, {0.1});
  CHECK(fit(5.0) == fit(1.0));
  CHECK(fit(-3.0) == fit(0.0));
}

TEST_CASE("huge bandwidth approaches the global affine fit") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  Eigen::VectorXd x(500), y(500);
  for (int k = 0; k < 500; ++k) {
    x[k] = g(rng);
    y[k] = x[k] * x[k] + 0.1 * g(rng);
  }
  const auto global = fit_global_linear(x, y);
  const auto wide = fit_local_linear(x, y, {1e6});
  for (double q : {-1.0, 0.0, 1.0}) {
    CHECK(wide(q) == doctest::Approx(global.intercept + global.slope[0] * q).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("local linear recovers a quadratic conditional mean") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const int m = 5000;
  Eigen::VectorXd x(m), y(m);
  for (int k = 0; k < m; ++k) {
    x[k] = g(rng);
    y[k] = x[k] * x[k] + 0.01 * g(rng);
  }
  const auto fit = fit_local_linear(x, y);
  const Binned oracle(x, y, 50, -3.0, 3.0);
  const int b = oracle.bin(1.0);
  CHECK(std::abs(fit(1.0) - 1.0) <= 0.05);
  CHECK(std::abs(fit(oracle.center(b)) - oracle.mean[b]) <= 0.05);
}

TEST_CASE("cross validation") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  Eigen::VectorXd x(400), y(400);
  for (int k = 0; k < 400; ++k) {
    x[k] = g(rng);
    y[k] = std::sin(2 * x[k]) + 0.2 * g(rng);
  }
  LocalLinearOptions opts;
  opts.fold_seed = 17;
  const auto a = select_bandwidth_cv(x, y, opts);
  const auto b = select_bandwidth_cv(x, y, opts);
  CHECK(a.bandwidth == b.bandwidth);
  CHECK(a.cv_mse == b.cv_mse);
  REQUIRE(a.grid.size() == 10);
  double sd = std::sqrt((x.array() - x.mean()).square().sum() / 399.0);
  CHECK(a.grid.front() == doctest::Approx(0.1 * sd));
  CHECK(a.grid.back() == doctest::Approx(2.0 * sd));
  CHECK(a.grid[1] / a.grid[0] == doctest::Approx(a.grid[9] / a.grid[8]));

  // exact data: every bandwidth scores ~0 and the largest wins the tie
  const Eigen::VectorXd lin = 2.0 * x.array() + 1.0;
  const auto tie = select_bandwidth_cv(x, lin, opts);
  CHECK(tie.bandwidth == tie.grid.back());

  CHECK_THROWS_AS(select_bandwidth_cv(x.head(5), y.head(5), opts), DomainError);
  CHECK_THROWS_AS(select_bandwidth_cv(Eigen::VectorXd::Ones(40), y.head(40), opts), DomainError);
}

TEST_CASE("OU projection closure recovers the mean-reversion slope") {
  ropdf::testing::TempDir dir;
  ropdf::testing::chain3().write(dir.path());
  const auto cb = parse_case_bundle(dir.path());
  const double theta = 1.3;
  const auto nm = build_noise(3, 0.0, theta, 0.05);
  const auto st = sample_initial(cb.power_case, cb.equilibrium, nm, 5000, 21);
  const auto pr = coordinate_projection_coeffs(st, {StateCoordinate::Block::eta, 2}, cb.power_case, nm);
  const auto fit = fit_local_linear(st.eta.col(1), pr.mu);
  const double slope = (fit(0.05) - fit(-0.05)) / 0.1;
  CHECK(slope == doctest::Approx(-theta).epsilon(0.05));
}

TEST_CASE("more samples do not worsen the local linear estimate") {
  auto draw = [](int m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::normal_distribution<double> g(0.0, 0.3);
    Eigen::VectorXd x(m), y(m);
    for (int k = 0; k < m; ++k) {
      x[k] = u(rng);
      y[k] = std::sin(2 * x[k]) + g(rng);
    }
    return std::pair{x, y};
  };
  const auto [bx, by] = draw(400000, 999);
  const Binned oracle(bx, by, 50, -2.0, 2.0);
  auto discrepancy = [&](int m, std::uint64_t seed) {
    const auto [x, y] = draw(m, seed);
    const auto fit = fit_local_linear(x, y);
    double err = 0.0;
    for (int b = 2; b < 48; ++b) err += std::abs(fit(oracle.center(b)) - oracle.mean[b]);
    return err / 46.0;
  };
  double small = 0.0, large = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    small += discrepancy(500, 100 + s);
    large += discrepancy(1000, 200 + s);
  }
  CHECK(large <= small);
}

TEST_CASE("lowess 2d") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  SUBCASE("affine exactness") {
    Eigen::MatrixXd X(200, 2);
    for (auto& v : X.reshaped()) v = g(rng);
    const Eigen::VectorXd y = (1.5 - 2.0 * X.col(0).array() + 0.5 * X.col(1).array()).matrix();
    for (double span : {0.1, 0.3, 1.0}) {
      const auto fit = fit_lowess_2d(X, y, span);
      CHECK(fit(0.3, -0.4) == doctest::Approx(1.5 - 0.6 - 0.2).epsilon(1e-6));
      CHECK(fit(-1.0, 1.0) == doctest::Approx(1.5 + 2.0 + 0.5).epsilon(1e-6));
    }
  }
  SUBCASE("product surface") {
    const int m = 10000;
    Eigen::MatrixXd X(m, 2);
    Eigen::VectorXd y(m);
    for (int k = 0; k < m; ++k) {
      X(k, 0) = g(rng);
      X(k, 1) = g(rng);
      y[k] = X(k, 0) * X(k, 1) + 0.01 * g(rng);
    }
    const auto fit = fit_lowess_2d(X, y);
    CHECK(std::abs(fit(1.0, 1.0) - 1.0) <= 0.1);
    // 20 x 20 binned mean over [-3, 3]^2 around (1, 1)
    double s = 0.0;
    int c = 0;
    for (int k = 0; k < m; ++k) {
      if (std::floor((X(k, 0) + 3) / 0.3) == std::floor(4.0 / 0.3) && std::floor((X(k, 1) + 3) / 0.3) == std::floor(4.0 / 0.3)) {
        s += y[k];
        ++c;
      }
    }
    REQUIRE(c > 0);
    const double centre = -3.0 + (std::floor(4.0 / 0.3) + 0.5) * 0.3;
    CHECK(std::abs(fit(centre, centre) - s / c) <= 0.1);
  }
  SUBCASE("insufficient points") {
    Eigen::MatrixXd X(20, 2);
    for (auto& v : X.reshaped()) v = g(rng);
    CHECK_THROWS_AS(fit_lowess_2d(X, X.col(0), 0.1), DomainError);
  }
}

TEST_CASE("closure knots interpolate in time") {
  ClosureModel model;
  model.knots = {0.0, 1.0, 3.0};
  for (double c : {2.0, 4.0, -1.0}) model.fields.push_back(ClosureKnot::affine({c, Eigen::VectorXd::Zero(1)}));
  Eigen::MatrixXd pts = Eigen::VectorXd::LinSpaced(5, 0, 1);
  CHECK((model.coefficient_field(1.0, pts).array() == 4.0).all());
  CHECK((model.coefficient_field(0.5, pts).array() == 3.0).all());
  CHECK(model.coefficient_field(2.0, pts)[2] == doctest::Approx(1.5));
  CHECK((model.coefficient_field(3.0, pts).array() == -1.0).all());
  CHECK_THROWS_AS((void)model.coefficient_field(3.5, pts), DomainError);
  CHECK_THROWS_AS((void)model.coefficient_field(-0.1, pts), DomainError);
}

TEST_CASE("closure series over knots") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  const int m = 200, nt = 7;
  Eigen::MatrixXd x(m, nt), y(m, nt), x2(m, nt);
  std::vector<double> knots;
  for (int k = 0; k < nt; ++k) {
    knots.push_back(0.1 * k);
    for (int s = 0; s < m; ++s) {
      x(s, k) = g(rng);
      x2(s, k) = g(rng);
      y(s, k) = (1.0 + k) * x(s, k) - 0.5 * x2(s, k);
    }
  }
  const Eigen::VectorXd faces = Eigen::VectorXd::LinSpaced(11, -1, 1);
  ClosureOptions opts;
  opts.cv_stride = 3;
  auto model = fit_closure_1d(knots, x, (x.array() * 2.0).matrix(), faces, opts);
  CHECK(model.bandwidths.size() == static_cast<std::size_t>(nt));
  CHECK(model.bandwidths[1] == model.bandwidths[0]);
  CHECK((model.coefficient_field(0.25, faces) - 2.0 * faces).cwiseAbs().maxCoeff() <= 1e-8);

  opts.kind = ClosureKind::global_linear;
  model = fit_closure_1d(knots, x, (x.array() * 2.0).matrix(), faces, opts);
  CHECK((model.evaluate_knot(3, faces) - 2.0 * faces).cwiseAbs().maxCoeff() <= 1e-10);

  Eigen::MatrixXd pts(3, 2);
  pts << 0.1, 0.2, -0.5, 0.4, 0.9, -0.9;
  for (auto kind : {ClosureKind::global_linear, ClosureKind::lowess_2d}) {
    opts.kind = kind;
    opts.lattice = 9;
    const auto m2 = fit_closure_2d(knots, x, x2, y, {-1, -1}, {1, 1}, opts);
    for (int r = 0; r < 3; ++r) {
      CHECK(m2.evaluate_knot(2, pts)[r] == doctest::Approx(3.0 * pts(r, 0) - 0.5 * pts(r, 1)).epsilon(1e-6));
    }
  }

  Eigen::MatrixXd bad = x;
  bad.col(4).setConstant(1.0);
  opts.kind = ClosureKind::global_linear;
  try {
    fit_closure_1d(knots, bad, y, faces, opts);
    FAIL("expected failure");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("knot 4") != std::string::npos);
  }
}

TEST_CASE("closure csv export") {
  ropdf::testing::TempDir dir;
  ClosureModel model;
  model.knots = {0.0, 1.0};
  model.fields = {ClosureKnot::affine({1.0, Eigen::VectorXd::Ones(1)}), ClosureKnot::affine({2.0, Eigen::VectorXd::Ones(1)})};
  write_closure_csv(model, Eigen::VectorXd::LinSpaced(3, 0, 1), dir / "c.csv");
  std::ifstream in(dir / "c.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,U,value");
  std::getline(in, line);
  CHECK(line == "0,0,1");
}
