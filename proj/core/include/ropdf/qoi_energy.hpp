#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ropdf/case_model.hpp"
#include "ropdf/stochastic_sim.hpp"

namespace ropdf {

/// Energy of one monitored line; b is taken from the pre-trip network.
struct LineQoi {
  LineId line;
  double b = 0.0;

  static LineQoi from_case(const PowerCase& pc, LineId l);
};

/// Per-sample QoI values and Ito responses.
struct ResponseSamples {
  Eigen::VectorXd u;
  Eigen::VectorXd mu_u;
  Eigen::VectorXd d_u;  // identically zero for line energies
};

/// u = 1/2 b^2 [v_i^2 - 2 v_i v_j cos(delta_i - delta_j) + v_j^2].
double line_energy(double b, double v_i, double v_j, double delta_i, double delta_j);
/// mu^u = b^2 v_i v_j sin(delta_i - delta_j) (omega_i - omega_j).
double line_energy_drift(double b, double v_i, double v_j, double delta_i, double delta_j, double omega_i,
                         double omega_j);

Eigen::VectorXd line_energy(const EnsembleState& state, const LineQoi& q);
Eigen::VectorXd line_energy_drift(const EnsembleState& state, const LineQoi& q);
ResponseSamples line_response(const EnsembleState& state, const LineQoi& q);

/// Position of a state coordinate inside z = [v, omega, delta, eta].
struct StateCoordinate {
  enum class Block { v = 0, omega = 1, delta = 2, eta = 3 };
  Block block;
  int bus;  // 1-based

  /// 0-based index into z for a network of n buses.
  [[nodiscard]] int index(int n) const;
  /// Inverse of index(); k is 0-based.
  static StateCoordinate from_index(int k, int n);
};

/// Gradient and Hessian of a line energy restricted to the coordinates it
/// depends on: (v_i, v_j, delta_i, delta_j). All other entries are zero.
struct SparseDerivatives {
  std::array<int, 4> index{};  // z indices, 0-based
  Eigen::Vector4d gradient = Eigen::Vector4d::Zero();
  Eigen::Matrix4d hessian = Eigen::Matrix4d::Zero();
};

SparseDerivatives qoi_derivatives(std::span<const double> z, int n, const LineQoi& q);
inline SparseDerivatives qoi_derivatives(const Eigen::VectorXd& z, int n, const LineQoi& q) {
  return qoi_derivatives(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())), n, q);
}
std::vector<SparseDerivatives> qoi_derivatives(const EnsembleState& state, const LineQoi& q);

/// Ito drift and diffusion of u assembled from its derivatives:
/// mu^u = grad(u)^T mu + 1/2 tr(sigma^T H sigma), D^u = grad(u)^T (1/2 sigma sigma^T) grad(u).
struct ItoResponse {
  double drift = 0.0;
  double diffusion = 0.0;
  double hessian_trace = 0.0;  // the 1/2 tr(...) term alone
};

/// `state_drift` is the 4n drift of the same sample.
ItoResponse assemble_ito(const SparseDerivatives& derivs, std::span<const double> state_drift, const NoiseModel& noise);

/// Drift vector of a stacked pair of line energies (2-line joint QoI).
Eigen::Vector2d joint_drift(std::span<const double> z, int n, const LineQoi& first, const LineQoi& second);
inline Eigen::Vector2d joint_drift(const Eigen::VectorXd& z, int n, const LineQoi& first, const LineQoi& second) {
  return joint_drift(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())), n, first, second);
}

/// Coefficients of the coordinate-projection QoI u = z_k.
struct ProjectionCoefficients {
  Eigen::VectorXd mu;  // k-th drift coordinate per sample
  double diffusion = 0.0;  // constant D_kk = 1/2 [sigma sigma^T]_kk
};

ProjectionCoefficients coordinate_projection_coeffs(const EnsembleState& state, StateCoordinate k, const PowerCase& pc,
                                                    const NoiseModel& noise);

}  // namespace ropdf
