#include "ropdf/qoi_energy.hpp"

#include <cmath>

#include "ropdf/error.hpp"

namespace ropdf {

LineQoi LineQoi::from_case(const PowerCase& pc, LineId l) {
  if (!pc.has_edge(l)) throw TopologyError(TopologyError::Kind::no_such_line, "line " + l.label() + " is not in service");
  return {l, pc.B(l.i - 1, l.j - 1)};
}

double line_energy(double b, double v_i, double v_j, double delta_i, double delta_j) {
  return 0.5 * b * b * (v_i * v_i - 2.0 * v_i * v_j * std::cos(delta_i - delta_j) + v_j * v_j);
}

double line_energy_drift(double b, double v_i, double v_j, double delta_i, double delta_j, double omega_i,
                         double omega_j) {
  return b * b * v_i * v_j * std::sin(delta_i - delta_j) * (omega_i - omega_j);
}

namespace {

void check_line(const EnsembleState& state, const LineQoi& q) {
  if (q.line.i < 1 || q.line.j > state.n() || q.line.i >= q.line.j) {
    throw DomainError("line " + q.line.label() + " outside the state's bus range");
  }
}

}  // namespace

Eigen::VectorXd line_energy(const EnsembleState& state, const LineQoi& q) {
  check_line(state, q);
  const int i = q.line.i - 1;
  const int j = q.line.j - 1;
  Eigen::VectorXd u(state.m());
  for (int s = 0; s < state.m(); ++s) {
    u[s] = line_energy(q.b, state.v(s, i), state.v(s, j), state.delta(s, i), state.delta(s, j));
  }
  return u;
}

Eigen::VectorXd line_energy_drift(const EnsembleState& state, const LineQoi& q) {
  check_line(state, q);
  const int i = q.line.i - 1;
  const int j = q.line.j - 1;
  Eigen::VectorXd mu(state.m());
  for (int s = 0; s < state.m(); ++s) {
    mu[s] = line_energy_drift(q.b, state.v(s, i), state.v(s, j), state.delta(s, i), state.delta(s, j),
                              state.omega(s, i), state.omega(s, j));
  }
  return mu;
}

ResponseSamples line_response(const EnsembleState& state, const LineQoi& q) {
  return {line_energy(state, q), line_energy_drift(state, q), Eigen::VectorXd::Zero(state.m())};
}

int StateCoordinate::index(int n) const {
  if (bus < 1 || bus > n) throw DomainError("state coordinate bus " + std::to_string(bus) + " outside 1.." + std::to_string(n));
  return static_cast<int>(block) * n + (bus - 1);
}

StateCoordinate StateCoordinate::from_index(int k, int n) {
  if (k < 0 || k >= 4 * n) throw DomainError("state index " + std::to_string(k) + " outside 0.." + std::to_string(4 * n - 1));
  return {static_cast<Block>(k / n), k % n + 1};
}

SparseDerivatives qoi_derivatives(std::span<const double> z, int n, const LineQoi& q) {
  if (static_cast<int>(z.size()) != 4 * n) throw DomainError("state vector length must be 4n");
  const int i = q.line.i - 1;
  const int j = q.line.j - 1;
  const double vi = z[i];
  const double vj = z[j];
  const double di = z[2 * n + i];
  const double dj = z[2 * n + j];
  const double b2 = q.b * q.b;
  const double c = std::cos(di - dj);
  const double s = std::sin(di - dj);

  SparseDerivatives out;
  out.index = {i, j, 2 * n + i, 2 * n + j};
  // order: v_i, v_j, delta_i, delta_j
  out.gradient << b2 * (vi - vj * c), b2 * (vj - vi * c), b2 * vi * vj * s, -b2 * vi * vj * s;

  auto& H = out.hessian;
  H(0, 0) = b2;
  H(1, 1) = b2;
  H(0, 1) = H(1, 0) = -b2 * c;
  H(2, 2) = H(3, 3) = b2 * vi * vj * c;
  H(2, 3) = H(3, 2) = -b2 * vi * vj * c;
  // mixed voltage/angle block
  H(0, 2) = H(2, 0) = b2 * vj * s;
  H(0, 3) = H(3, 0) = -b2 * vj * s;
  H(1, 2) = H(2, 1) = b2 * vi * s;
  H(1, 3) = H(3, 1) = -b2 * vi * s;
  return out;
}

std::vector<SparseDerivatives> qoi_derivatives(const EnsembleState& state, const LineQoi& q) {
  check_line(state, q);
  std::vector<SparseDerivatives> out;
  out.reserve(state.m());
  for (int s = 0; s < state.m(); ++s) {
    const Eigen::VectorXd z = state.z(s);
    out.push_back(qoi_derivatives(z, state.n(), q));
  }
  return out;
}

ItoResponse assemble_ito(const SparseDerivatives& derivs, std::span<const double> state_drift, const NoiseModel& noise) {
  const int n = noise.n();
  if (static_cast<int>(state_drift.size()) != 4 * n) throw DomainError("drift length must be 4n");
  // sigma is zero outside rows/cols [3n, 4n), where it equals alpha sqrt(2 theta) C.
  auto sigma = [&](int row, int col) {
    if (row < 3 * n || col < 3 * n) return 0.0;
    return noise.diffusion_scale() * noise.C(row - 3 * n, col - 3 * n);
  };

  ItoResponse out;
  for (int a = 0; a < 4; ++a) out.drift += derivs.gradient[a] * state_drift[derivs.index[a]];

  double trace = 0.0;
  double diffusion = 0.0;
  for (int col = 0; col < 4 * n; ++col) {
    Eigen::Vector4d s;
    for (int a = 0; a < 4; ++a) s[a] = sigma(derivs.index[a], col);
    trace += s.dot(derivs.hessian * s);
    const double g = derivs.gradient.dot(s);
    diffusion += g * g;
  }
  out.hessian_trace = 0.5 * trace;
  out.drift += out.hessian_trace;
  out.diffusion = 0.5 * diffusion;
  return out;
}

Eigen::Vector2d joint_drift(std::span<const double> z, int n, const LineQoi& first, const LineQoi& second) {
  Eigen::Vector2d out;
  int k = 0;
  for (const LineQoi* q : {&first, &second}) {
    const int i = q->line.i - 1;
    const int j = q->line.j - 1;
    out[k++] = line_energy_drift(q->b, z[i], z[j], z[2 * n + i], z[2 * n + j], z[n + i], z[n + j]);
  }
  return out;
}

ProjectionCoefficients coordinate_projection_coeffs(const EnsembleState& state, StateCoordinate k, const PowerCase& pc,
                                                    const NoiseModel& noise) {
  const int n = state.n();
  const int idx = k.index(n);
  const RowMatrix drift = system_drift(state, pc, noise);
  ProjectionCoefficients out;
  out.mu = drift.col(idx);
  if (k.block == StateCoordinate::Block::eta) {
    const double s = noise.diffusion_scale();
    const double cc = noise.C.row(k.bus - 1).squaredNorm();  // [C C^T]_kk
    out.diffusion = 0.5 * s * s * cc;
  }
  return out;
}

}  // namespace ropdf
