#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ropdf/case_model.hpp"
#include "ropdf/qoi_energy.hpp"
#include "ropdf/stochastic_sim.hpp"
#include "test_support.hpp"

using namespace ropdf;

namespace {

double energy_of(const Eigen::VectorXd& z, int n, const LineQoi& q) {
  const int i = q.line.i - 1;
  const int j = q.line.j - 1;
  return line_energy(q.b, z[i], z[j], z[2 * n + i], z[2 * n + j]);
}

Eigen::VectorXd random_state(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uv(0.9, 1.1), ud(-0.8, 0.8), uw(0.98, 1.02), ue(-0.1, 0.1);
  Eigen::VectorXd z(4 * n);
  for (int i = 0; i < n; ++i) {
    z[i] = uv(rng);
    z[n + i] = uw(rng);
    z[2 * n + i] = ud(rng);
    z[3 * n + i] = ue(rng);
  }
  return z;
}

EnsembleState state_from(const std::vector<Eigen::VectorXd>& zs, int n) {
  EnsembleState st;
  const int m = static_cast<int>(zs.size());
  st.v.resize(m, n);
  st.omega.resize(m, n);
  st.delta.resize(m, n);
  st.eta.resize(m, n);
  for (int s = 0; s < m; ++s) st.set_z(s, zs[s]);
  return st;
}

}  // namespace

TEST_CASE("line energy values") {
  CHECK(line_energy(3.0, 1.0, 1.0, 0.4, 0.4) == 0.0);
  CHECK(line_energy(1.0, 1.0, 1.0, std::numbers::pi / 2, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  const double expect = 0.5 * 4.0 * (1.21 - 2.0 * 0.99 * std::cos(0.3) + 0.81);
  CHECK(line_energy(2.0, 1.1, 0.9, 0.3, 0.0) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("line energy drift values") {
  CHECK(line_energy_drift(2.0, 1.0, 1.1, 0.3, 0.1, 1.01, 1.01) == 0.0);
  CHECK(line_energy_drift(1.0, 1.0, 1.0, std::numbers::pi / 6, 0.0, 1.02, 1.0) == doctest::Approx(0.01).epsilon(1e-12));
  const double a = line_energy_drift(5.0, 1.02, 0.97, 0.2, -0.1, 1.003, 0.998);
  const double b = line_energy_drift(5.0, 0.97, 1.02, -0.1, 0.2, 0.998, 1.003);
  CHECK(a == b);
}

TEST_CASE("energy is nonnegative and vanishes only on coincident endpoints") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> uv(0.5, 1.5), ud(-3.0, 3.0);
  for (int k = 0; k < 1000; ++k) {
    const double vi = uv(rng), vj = uv(rng), di = ud(rng), dj = ud(rng);
    const double u = line_energy(7.0, vi, vj, di, dj);
    CHECK(u >= 0.0);
    CHECK(u > 0.0);
    CHECK(line_energy(7.0, vi, vi, di, di + 2.0 * std::numbers::pi) == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("gradient at synchronized equal voltages") {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(8);
  z.head(2).setOnes();
  const auto d = qoi_derivatives(z, 2, LineQoi{{1, 2}, -5.0});
  CHECK(d.gradient[0] == 0.0);
  CHECK(d.gradient[1] == 0.0);
}

TEST_CASE("derivatives match central finite differences on shipped cases") {
  std::mt19937_64 rng(2024);
  for (const char* name : {"case9", "case30", "case57"}) {
    CAPTURE(name);
    const auto pc = parse_case_bundle(ropdf::testing::case_dir(name)).power_case;
    const int n = pc.n;
    double worst_grad = 0.0;
    double worst_hess = 0.0;
    for (int k = 0; k < 100; ++k) {
      const LineId l = pc.edges[rng() % pc.edges.size()];
      const LineQoi q = LineQoi::from_case(pc, l);
      const Eigen::VectorXd z = random_state(n, rng);
      const auto d = qoi_derivatives(z, n, q);

      Eigen::VectorXd full = Eigen::VectorXd::Zero(4 * n);
      for (int a = 0; a < 4; ++a) full[d.index[a]] = d.gradient[a];
      const double gscale = std::max(1.0, full.cwiseAbs().maxCoeff());
      const double h = 1e-6;
      for (int c = 0; c < 4 * n; ++c) {
        Eigen::VectorXd zp = z, zm = z;
        zp[c] += h;
        zm[c] -= h;
        const double fd = (energy_of(zp, n, q) - energy_of(zm, n, q)) / (2 * h);
        worst_grad = std::max(worst_grad, std::abs(fd - full[c]) / gscale);
      }

      const double hscale = std::max(1.0, d.hessian.cwiseAbs().maxCoeff());
      const double hh = 1e-4;
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          auto at = [&](double sa, double sb) {
            Eigen::VectorXd y = z;
            y[d.index[a]] += sa * hh;
            y[d.index[b]] += sb * hh;
            return energy_of(y, n, q);
          };
          const double fd = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * hh * hh);
          worst_hess = std::max(worst_hess, std::abs(fd - d.hessian(a, b)) / hscale);
        }
      }
    }
    CHECK(worst_grad <= 1e-6);
    CHECK(worst_hess <= 1e-5);
  }
}

TEST_CASE("Ito assembly reproduces the closed-form drift with zero diffusion") {
  const auto pc = parse_case_bundle(ropdf::testing::case_dir("case9")).power_case;
  const auto nm = build_noise(9, 0.44, 1.0, 0.05);
  const SwingModel model(pc, nm);
  std::mt19937_64 rng(5);
  std::vector<Eigen::VectorXd> zs;
  for (int k = 0; k < 200; ++k) zs.push_back(random_state(9, rng));
  const auto st = state_from(zs, 9);
  const auto mu = system_drift(st, pc, nm);
  for (LineId l : pc.edges) {
    const LineQoi q = LineQoi::from_case(pc, l);
    const auto closed = line_energy_drift(st, q);
    const auto derivs = qoi_derivatives(st, q);
    for (int s = 0; s < st.m(); ++s) {
      const auto ito = assemble_ito(derivs[s], {mu.row(s).data(), 36}, nm);
      CHECK(std::abs(ito.drift - closed[s]) <= 1e-12 * std::max(1.0, std::abs(closed[s])));
      CHECK(ito.diffusion == 0.0);
      CHECK(ito.hessian_trace == 0.0);
    }
    const auto resp = line_response(st, q);
    CHECK((resp.d_u.array() == 0.0).all());
  }
}

TEST_CASE("joint drift stacks the scalar drifts") {
  std::mt19937_64 rng(8);
  const Eigen::VectorXd z = random_state(9, rng);
  const LineQoi a{{4, 9}, 11.6}, b{{7, 8}, 13.7};
  const auto j = joint_drift(z, 9, a, b);
  CHECK(j[0] == line_energy_drift(a.b, z[3], z[8], z[21], z[26], z[12], z[17]));
  CHECK(j[1] == line_energy_drift(b.b, z[6], z[7], z[24], z[25], z[15], z[16]));
}

TEST_CASE("coordinate projection coefficients") {
  const auto pc = parse_case_bundle(ropdf::testing::case_dir("case9")).power_case;
  const auto nm = build_noise(9, 0.44, 1.0, 0.05);
  std::mt19937_64 rng(3);
  std::vector<Eigen::VectorXd> zs;
  for (int k = 0; k < 10; ++k) zs.push_back(random_state(9, rng));
  const auto st = state_from(zs, 9);
  using B = StateCoordinate::Block;

  const auto v1 = coordinate_projection_coeffs(st, {B::v, 1}, pc, nm);
  CHECK((v1.mu.array() == 0.0).all());
  CHECK(v1.diffusion == 0.0);

  const auto e1 = coordinate_projection_coeffs(st, {B::eta, 1}, pc, nm);
  CHECK(e1.diffusion == doctest::Approx(0.0025).epsilon(1e-12));
  CHECK((e1.mu - (-1.0) * st.eta.col(0)).cwiseAbs().maxCoeff() == 0.0);

  const auto d1 = coordinate_projection_coeffs(st, {B::delta, 1}, pc, nm);
  CHECK((d1.mu.array() - (st.omega.col(0).array() - 1.0)).abs().maxCoeff() == 0.0);
  CHECK(d1.diffusion == 0.0);

  CHECK(StateCoordinate::from_index(StateCoordinate{B::delta, 4}.index(9), 9).bus == 4);
  CHECK(StateCoordinate{B::eta, 9}.index(9) == 35);
  CHECK_THROWS((void)StateCoordinate{B::eta, 10}.index(9));
}
