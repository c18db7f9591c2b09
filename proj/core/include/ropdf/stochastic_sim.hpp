#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ropdf/case_model.hpp"

namespace ropdf {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Correlated Ornstein-Uhlenbeck load noise: d eta = -theta eta dt + alpha sqrt(2 theta) C dW.
struct NoiseModel {
  double theta = 1.0;
  double alpha = 0.05;
  Eigen::MatrixXd R;  // correlation, unit diagonal
  Eigen::MatrixXd C;  // lower-triangular factor, C C^T = R

  [[nodiscard]] int n() const { return static_cast<int>(R.rows()); }
  /// Nonzero diagonal-block value of the diffusion matrix, alpha sqrt(2 theta).
  [[nodiscard]] double diffusion_scale() const;
};

/// Constant-correlation noise, R = (1 - r) I + r 1 1^T.
NoiseModel build_noise(int n, double r_offdiag, double theta, double alpha);

/// Noise with an arbitrary correlation matrix; throws NumericError when R is not PSD.
NoiseModel make_noise(const Eigen::MatrixXd& R, double theta, double alpha);

/// One independent normal stream per ensemble member. Stream k depends only
/// on (seed, k), so results do not depend on how samples are scheduled.
class SampleStreams {
 public:
  SampleStreams() = default;
  SampleStreams(std::uint64_t seed, int m);

  double normal(int sample);
  void fill_normal(int sample, std::span<double> out);

  [[nodiscard]] int size() const { return static_cast<int>(engine_.size()); }

  /// Keeps only the listed samples, in order.
  void select(const std::vector<int>& keep);

 private:
  std::vector<std::mt19937_64> engine_;
};

/// Ensemble of z = [v, omega, delta, eta]; every block is m x n, one row per sample.
struct EnsembleState {
  double t = 0.0;
  RowMatrix v;
  RowMatrix omega;
  RowMatrix delta;
  RowMatrix eta;
  SampleStreams streams;

  [[nodiscard]] int m() const { return static_cast<int>(v.rows()); }
  [[nodiscard]] int n() const { return static_cast<int>(v.cols()); }

  /// Full state vector of one sample, length 4n.
  [[nodiscard]] Eigen::VectorXd z(int sample) const;
  void set_z(int sample, const Eigen::VectorXd& z);
};

/// Sparse evaluation of the swing-equation drift. Built once per topology.
class SwingModel {
 public:
  SwingModel(const PowerCase& pc, const NoiseModel& noise);

  [[nodiscard]] int n() const { return n_; }

  /// Drift of one sample, written to `out` (length 4n) as [0; omega'; delta'; eta'].
  void drift(std::span<const double> v, std::span<const double> omega, std::span<const double> delta,
             std::span<const double> eta, std::span<double> out) const;

  /// Electrical power p_e of one sample (length n).
  void electrical_power(std::span<const double> v, std::span<const double> delta, std::span<double> out) const;

  /// Nonzero entries d sigma_{row,col} / d z_k of the state derivative of the
  /// diffusion matrix. The OU noise is additive, so this list is empty.
  struct DiffusionDerivative {
    int row;
    int col;
    int k;
    double value;
  };
  [[nodiscard]] const std::vector<DiffusionDerivative>& diffusion_derivatives() const { return dsigma_; }

  [[nodiscard]] const NoiseModel& noise() const { return noise_; }

 private:
  struct Branch {
    int i;
    int j;
    double g;
    double b;
  };
  int n_;
  std::vector<Branch> branches_;
  Eigen::VectorXd g_diag_;
  Eigen::VectorXd h_;
  Eigen::VectorXd d_;
  Eigen::VectorXd p_m_;
  double omega_r_;
  NoiseModel noise_;
  std::vector<DiffusionDerivative> dsigma_;
};

/// m x 4n drift of every sample.
RowMatrix system_drift(const EnsembleState& state, const PowerCase& pc, const NoiseModel& noise);

/// Initial ensemble: v = |N(v*, 0.01 sd(v*)^2 I)|, omega = omega_R, delta = delta*, eta ~ N(0, alpha^2 R).
EnsembleState sample_initial(const PowerCase& pc, const EquilibriumPoint& eq, const NoiseModel& noise, int m,
                             std::uint64_t seed);

enum class StepScheme { euler_maruyama, milstein };

/// Indices of samples whose state became non-finite during a step.
struct StepReport {
  std::vector<int> diverged;
};

/// Advances every sample by dt. For additive noise the Milstein correction is
/// identically zero and both schemes produce the same update.
StepReport step(EnsembleState& state, const SwingModel& model, double dt,
                StepScheme scheme = StepScheme::euler_maruyama);

/// Convenience overload that builds the SwingModel.
StepReport step(EnsembleState& state, const PowerCase& pc, const NoiseModel& noise, double dt,
                StepScheme scheme = StepScheme::euler_maruyama);

struct ScenarioConfig {
  double dt = 1e-2;
  double burn_in_T = 50.0;
  double post_T = 10.0;
  std::optional<LineId> tripped_line;
  int m = 5000;
  std::uint64_t seed = 1;
  std::vector<LineId> record_lines;
  int record_stride = 1;
  bool record_response = true;  // false: only u is kept, mu stays empty
};

/// Recorded line-energy series. Matrices are m x N_t; column k is time k.
struct LineSeries {
  LineId line;
  double b = 0.0;  // pre-trip imaginary admittance
  Eigen::MatrixXd u;
  Eigen::MatrixXd mu;  // empty when the response was not recorded
};

struct TrajectoryRecord {
  std::vector<double> times;  // relative to the trip instant
  std::vector<LineSeries> lines;
  int diverged = 0;

  [[nodiscard]] int m() const { return lines.empty() ? 0 : static_cast<int>(lines.front().u.rows()); }
  [[nodiscard]] const LineSeries& series(LineId l) const;
};

/// Burn-in on the intact network, optional line trip, then the recorded phase.
/// Diverged samples are dropped; more than 0.1% diverged raises NumericError.
TrajectoryRecord run_scenario(const PowerCase& pc, const EquilibriumPoint& eq, const NoiseModel& noise,
                              const ScenarioConfig& cfg);

/// Columnar little-endian binary: magic "ROPDFTRJ", u32 version, then sizes and f64 payloads.
void write_trajectory_binary(const TrajectoryRecord& rec, const std::filesystem::path& path);
TrajectoryRecord read_trajectory_binary(const std::filesystem::path& path);
/// One row per (time, sample): t,sample,u_<line>,mu_<line>,...
void write_trajectory_csv(const TrajectoryRecord& rec, const std::filesystem::path& path);

}  // namespace ropdf
