#include "ropdf/stochastic_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <boost/random/normal_distribution.hpp>
#include <spdlog/spdlog.h>

#include "binary_io.hpp"
#include "ropdf/error.hpp"
#include "ropdf/qoi_energy.hpp"
#include "text_format.hpp"

namespace ropdf {

double NoiseModel::diffusion_scale() const { return alpha * std::sqrt(2.0 * theta); }

NoiseModel make_noise(const Eigen::MatrixXd& R, double theta, double alpha) {
  if (R.rows() != R.cols() || R.rows() == 0) throw DomainError("correlation matrix must be square and nonempty");
  if (!(theta > 0.0)) throw DomainError("theta must be > 0");
  if (!(alpha >= 0.0)) throw DomainError("alpha must be >= 0");
  if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw DomainError("correlation matrix is not symmetric");
  if ((R.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12) throw DomainError("correlation matrix needs a unit diagonal");

  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) throw NumericError("correlation matrix is not positive definite; Cholesky failed");
  NoiseModel out{theta, alpha, R, llt.matrixL()};
  if ((out.C * out.C.transpose() - R).cwiseAbs().maxCoeff() > 1e-10) {
    throw NumericError("Cholesky factor does not reproduce the correlation matrix");
  }
  return out;
}

NoiseModel build_noise(int n, double r_offdiag, double theta, double alpha) {
  if (n < 1) throw DomainError("noise dimension must be >= 1");
  Eigen::MatrixXd R = Eigen::MatrixXd::Constant(n, n, r_offdiag);
  R.diagonal().setOnes();
  return make_noise(R, theta, alpha);
}

namespace {
// Ziggurat sampler; stateless between calls, so one instance serves every stream.
// std::normal_distribution spends most of its time in generate_canonical here.
const boost::random::normal_distribution<double> kStdNormal{0.0, 1.0};
}  // namespace

SampleStreams::SampleStreams(std::uint64_t seed, int m) {
  engine_.reserve(m);
  for (int k = 0; k < m; ++k) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(k), 0x5eedu};
    engine_.emplace_back(seq);
  }
}

double SampleStreams::normal(int sample) {
  auto dist = kStdNormal;
  return dist(engine_[sample]);
}

void SampleStreams::fill_normal(int sample, std::span<double> out) {
  auto& eng = engine_[sample];
  auto dist = kStdNormal;
  for (double& x : out) x = dist(eng);
}

void SampleStreams::select(const std::vector<int>& keep) {
  std::vector<std::mt19937_64> e;
  e.reserve(keep.size());
  for (int k : keep) e.push_back(engine_[k]);
  engine_ = std::move(e);
}

Eigen::VectorXd EnsembleState::z(int sample) const {
  const int nn = n();
  Eigen::VectorXd out(4 * nn);
  out.segment(0, nn) = v.row(sample).transpose();
  out.segment(nn, nn) = omega.row(sample).transpose();
  out.segment(2 * nn, nn) = delta.row(sample).transpose();
  out.segment(3 * nn, nn) = eta.row(sample).transpose();
  return out;
}

void EnsembleState::set_z(int sample, const Eigen::VectorXd& z) {
  const int nn = n();
  if (z.size() != 4 * nn) throw DomainError("state vector length must be 4n");
  v.row(sample) = z.segment(0, nn).transpose();
  omega.row(sample) = z.segment(nn, nn).transpose();
  delta.row(sample) = z.segment(2 * nn, nn).transpose();
  eta.row(sample) = z.segment(3 * nn, nn).transpose();
}

SwingModel::SwingModel(const PowerCase& pc, const NoiseModel& noise)
    : n_(pc.n), g_diag_(pc.G.diagonal()), h_(pc.h), d_(pc.d), p_m_(pc.p_m), omega_r_(pc.omega_R), noise_(noise) {
  if (noise.n() != pc.n) throw DomainError("noise dimension does not match the case");
  // Any nonzero off-diagonal coupling is a branch, whether or not it is listed as an edge.
  for (int i = 0; i < n_; ++i) {
    for (int j = i + 1; j < n_; ++j) {
      if (pc.G(i, j) != 0.0 || pc.B(i, j) != 0.0) branches_.push_back({i, j, pc.G(i, j), pc.B(i, j)});
    }
  }
}

void SwingModel::electrical_power(std::span<const double> v, std::span<const double> delta, std::span<double> out) const {
  for (int i = 0; i < n_; ++i) out[i] = g_diag_[i] * v[i] * v[i];
  for (const Branch& br : branches_) {
    const double x = delta[br.i] - delta[br.j];
    const double c = std::cos(x);
    const double s = std::sin(x);
    const double vv = v[br.i] * v[br.j];
    out[br.i] += vv * (br.g * c + br.b * s);
    out[br.j] += vv * (br.g * c - br.b * s);
  }
}

void SwingModel::drift(std::span<const double> v, std::span<const double> omega, std::span<const double> delta,
                       std::span<const double> eta, std::span<double> out) const {
  const int n = n_;
  std::span<double> pe = out.subspan(n, n);  // reuse the omega slot as scratch
  electrical_power(v, delta, pe);
  for (int i = 0; i < n; ++i) {
    const double dw = omega[i] - omega_r_;
    out[i] = 0.0;
    out[n + i] = 0.5 * omega_r_ / h_[i] * (-dw * d_[i] + p_m_[i] - pe[i] + eta[i]);
    out[2 * n + i] = dw;
    out[3 * n + i] = -noise_.theta * eta[i];
  }
}

RowMatrix system_drift(const EnsembleState& state, const PowerCase& pc, const NoiseModel& noise) {
  if (state.n() != pc.n) throw DomainError("state dimension does not match the case");
  const SwingModel model(pc, noise);
  const int n = pc.n;
  RowMatrix out(state.m(), 4 * n);
  for (int s = 0; s < state.m(); ++s) {
    std::span<double> row(out.row(s).data(), 4 * n);
    model.drift({state.v.row(s).data(), static_cast<std::size_t>(n)},
                {state.omega.row(s).data(), static_cast<std::size_t>(n)},
                {state.delta.row(s).data(), static_cast<std::size_t>(n)},
                {state.eta.row(s).data(), static_cast<std::size_t>(n)}, row);
    if (!row.empty() && !out.row(s).allFinite()) {
      throw NumericError("non-finite drift for sample " + std::to_string(s));
    }
  }
  return out;
}

EnsembleState sample_initial(const PowerCase& pc, const EquilibriumPoint& eq, const NoiseModel& noise, int m,
                             std::uint64_t seed) {
  if (m < 1) throw DomainError("ensemble size must be >= 1");
  const int n = pc.n;
  if (eq.v_star.size() != n || noise.n() != n) throw DomainError("equilibrium/noise dimension does not match the case");

  // Population standard deviation of v* across machines.
  const double mean = eq.v_star.mean();
  double sd_v = std::sqrt((eq.v_star.array() - mean).square().mean());
  double perturb = 0.1 * sd_v;  // variance 0.01 sd^2
  if (sd_v == 0.0) {
    spdlog::warn("equilibrium voltages are all equal; using an absolute initial perturbation of 1e-4");
    perturb = 1e-4;
  }

  EnsembleState st;
  st.v.resize(m, n);
  st.omega = RowMatrix::Constant(m, n, pc.omega_R);
  st.delta.resize(m, n);
  st.eta.resize(m, n);
  st.streams = SampleStreams(seed, m);

  Eigen::VectorXd xi(n);
  for (int s = 0; s < m; ++s) {
    st.streams.fill_normal(s, {xi.data(), static_cast<std::size_t>(n)});
    st.v.row(s) = (eq.v_star + perturb * xi).cwiseAbs().transpose();
    st.delta.row(s) = eq.delta_star.transpose();
    st.streams.fill_normal(s, {xi.data(), static_cast<std::size_t>(n)});
    st.eta.row(s) = (noise.alpha * (noise.C * xi)).transpose();
  }
  return st;
}

StepReport step(EnsembleState& state, const SwingModel& model, double dt, StepScheme scheme) {
  if (!(dt > 0.0)) throw DomainError("step size must be > 0");
  const int m = state.m();
  const int n = state.n();
  if (model.n() != n) throw DomainError("state dimension does not match the model");
  const NoiseModel& noise = model.noise();

  // Increments for every sample, drawn from its own stream, then mixed by C in one product.
  RowMatrix xi(m, n);
  for (int s = 0; s < m; ++s) state.streams.fill_normal(s, {xi.row(s).data(), static_cast<std::size_t>(n)});
  const double scale = noise.diffusion_scale() * std::sqrt(dt);
  RowMatrix dW = xi * noise.C.transpose();

  const auto& dsigma = model.diffusion_derivatives();
  const bool milstein = scheme == StepScheme::milstein && !dsigma.empty();

  std::vector<char> bad(m, 0);
#pragma omp parallel
  {
    std::vector<double> mu(4 * n);
    std::vector<double> z_new(4 * n);
#pragma omp for schedule(static)
    for (int s = 0; s < m; ++s) {
      double* v = state.v.row(s).data();
      double* w = state.omega.row(s).data();
      double* d = state.delta.row(s).data();
      double* e = state.eta.row(s).data();
      const auto un = static_cast<std::size_t>(n);
      model.drift({v, un}, {w, un}, {d, un}, {e, un}, mu);

      bool finite = true;
      for (int i = 0; i < n; ++i) {
        z_new[i] = v[i] + mu[i] * dt;
        z_new[n + i] = w[i] + mu[n + i] * dt;
        z_new[2 * n + i] = d[i] + mu[2 * n + i] * dt;
        z_new[3 * n + i] = e[i] + mu[3 * n + i] * dt + scale * dW(s, i);
      }
      if (milstein) {
        // 1/2 sum_k sigma_{k,col} d sigma_{row,col}/dz_k ((dW_col)^2 - dt), commutative-noise form.
        const double sc = noise.diffusion_scale();
        for (const auto& ds : dsigma) {
          if (ds.k < 3 * n || ds.col < 3 * n) continue;
          const double sigma_k = sc * noise.C(ds.k - 3 * n, ds.col - 3 * n);
          const double inc = std::sqrt(dt) * xi(s, ds.col - 3 * n);
          z_new[ds.row] += 0.5 * sigma_k * ds.value * (inc * inc - dt);
        }
      }
      for (double x : z_new) finite = finite && std::isfinite(x);
      if (!finite) {
        bad[s] = 1;  // frozen at its last finite state
        continue;
      }
      for (int i = 0; i < n; ++i) {
        v[i] = z_new[i];
        w[i] = z_new[n + i];
        d[i] = z_new[2 * n + i];
        e[i] = z_new[3 * n + i];
      }
    }
  }
  state.t += dt;

  StepReport rep;
  for (int s = 0; s < m; ++s) {
    if (bad[s]) rep.diverged.push_back(s);
  }
  return rep;
}

StepReport step(EnsembleState& state, const PowerCase& pc, const NoiseModel& noise, double dt, StepScheme scheme) {
  return step(state, SwingModel(pc, noise), dt, scheme);
}

const LineSeries& TrajectoryRecord::series(LineId l) const {
  for (const auto& s : lines) {
    if (s.line == l) return s;
  }
  throw DomainError("line " + l.label() + " was not recorded");
}

namespace {

long steps_for(double T, double dt) {
  const double k = T / dt;
  const long r = std::lround(k);
  if (std::abs(k - static_cast<double>(r)) > 1e-9 * std::max(1.0, k)) {
    spdlog::warn("duration {} is not a multiple of dt {}; using {} steps", T, dt, r);
  }
  return r;
}

}  // namespace

TrajectoryRecord run_scenario(const PowerCase& pc, const EquilibriumPoint& eq, const NoiseModel& noise,
                              const ScenarioConfig& cfg) {
  if (!(cfg.dt > 0.0)) throw DomainError("dt must be > 0");
  if (cfg.burn_in_T < 0.0 || cfg.post_T < 0.0) throw DomainError("durations must be >= 0");
  if (cfg.record_stride < 1) throw DomainError("record_stride must be >= 1");
  if (cfg.m < 1) throw DomainError("ensemble size must be >= 1");

  // Topology problems surface before any integration.
  const PowerCase post = cfg.tripped_line ? remove_line(pc, *cfg.tripped_line) : pc;
  std::vector<LineQoi> qois;
  for (LineId l : cfg.record_lines) {
    if (!post.has_edge(l)) {
      throw TopologyError(TopologyError::Kind::no_such_line, "recorded line " + l.label() + " is not in service after the trip");
    }
    qois.push_back(LineQoi::from_case(pc, l));
  }

  EnsembleState state = sample_initial(pc, eq, noise, cfg.m, cfg.seed);
  std::vector<char> dead(cfg.m, 0);
  auto integrate = [&](const SwingModel& model, long steps, auto&& on_step) {
    for (long k = 1; k <= steps; ++k) {
      const StepReport rep = step(state, model, cfg.dt);
      for (int s : rep.diverged) {
        if (!dead[s]) spdlog::warn("sample {} diverged at t={}", s, state.t);
        dead[s] = 1;
      }
      on_step(k);
    }
  };

  const long burn = steps_for(cfg.burn_in_T, cfg.dt);
  integrate(SwingModel(pc, noise), burn, [](long) {});

  TrajectoryRecord rec;
  const long post_steps = steps_for(cfg.post_T, cfg.dt);
  const long frames = cfg.post_T > 0.0 ? post_steps / cfg.record_stride + 1 : 0;
  for (const LineQoi& q : qois) {
    rec.lines.push_back({q.line, q.b, Eigen::MatrixXd(cfg.m, frames),
                         cfg.record_response ? Eigen::MatrixXd(cfg.m, frames) : Eigen::MatrixXd()});
  }
  state.t = 0.0;
  long frame = 0;
  auto record = [&] {
    rec.times.push_back(state.t);
    for (std::size_t l = 0; l < qois.size(); ++l) {
      rec.lines[l].u.col(frame) = line_energy(state, qois[l]);
      if (cfg.record_response) rec.lines[l].mu.col(frame) = line_energy_drift(state, qois[l]);
    }
    ++frame;
  };
  if (frames > 0) {
    record();
    integrate(SwingModel(post, noise), post_steps, [&](long k) {
      if (k % cfg.record_stride == 0) record();
    });
  }
  // Re-anchor times on the step counter so they are exact multiples of dt.
  for (std::size_t k = 0; k < rec.times.size(); ++k) rec.times[k] = static_cast<double>(k * cfg.record_stride) * cfg.dt;

  std::vector<int> keep;
  for (int s = 0; s < cfg.m; ++s) {
    if (!dead[s]) keep.push_back(s);
  }
  rec.diverged = cfg.m - static_cast<int>(keep.size());
  if (rec.diverged > 0) {
    if (rec.diverged > 0.001 * cfg.m) {
      throw NumericError(std::to_string(rec.diverged) + " of " + std::to_string(cfg.m) +
                         " samples diverged (more than 0.1%)");
    }
    spdlog::warn("dropping {} diverged samples", rec.diverged);
    for (auto& ls : rec.lines) {
      Eigen::MatrixXd u(keep.size(), frames), mu(ls.mu.size() ? keep.size() : 0, ls.mu.size() ? frames : 0);
      for (std::size_t r = 0; r < keep.size(); ++r) {
        u.row(r) = ls.u.row(keep[r]);
        if (ls.mu.size()) mu.row(r) = ls.mu.row(keep[r]);
      }
      ls.u = std::move(u);
      ls.mu = std::move(mu);
    }
  }
  return rec;
}

namespace {
constexpr std::string_view kTrajMagic = "ROPDFTRJ";
constexpr std::uint32_t kTrajVersion = 1;
}  // namespace

void write_trajectory_binary(const TrajectoryRecord& rec, const std::filesystem::path& path) {
  detail::BinaryWriter w(path.string(), kTrajMagic, kTrajVersion);
  const std::uint64_t nt = rec.times.size();
  w.put<std::uint64_t>(static_cast<std::uint64_t>(rec.m()));
  w.put<std::uint64_t>(nt);
  w.put<std::uint64_t>(rec.lines.size());
  w.put<std::int32_t>(rec.diverged);
  w.put_doubles(rec.times);
  for (const auto& ls : rec.lines) {
    w.put<std::int32_t>(ls.line.i);
    w.put<std::int32_t>(ls.line.j);
    w.put<double>(ls.b);
    w.put<std::uint8_t>(ls.mu.size() ? 1 : 0);
    w.put_doubles({ls.u.data(), static_cast<std::size_t>(ls.u.size())});
    w.put_doubles({ls.mu.data(), static_cast<std::size_t>(ls.mu.size())});
  }
}

TrajectoryRecord read_trajectory_binary(const std::filesystem::path& path) {
  detail::BinaryReader r(path.string(), kTrajMagic, kTrajVersion);
  const auto m = static_cast<Eigen::Index>(r.get<std::uint64_t>());
  const auto nt = static_cast<Eigen::Index>(r.get<std::uint64_t>());
  const auto nl = r.get<std::uint64_t>();
  TrajectoryRecord rec;
  rec.diverged = r.get<std::int32_t>();
  rec.times.resize(nt);
  r.get_doubles(rec.times);
  for (std::uint64_t l = 0; l < nl; ++l) {
    LineSeries ls;
    const int i = r.get<std::int32_t>();
    const int j = r.get<std::int32_t>();
    ls.line = LineId::canonical(i, j);
    ls.b = r.get<double>();
    const bool has_mu = r.get<std::uint8_t>() != 0;
    ls.u.resize(m, nt);
    if (has_mu) ls.mu.resize(m, nt);
    r.get_doubles({ls.u.data(), static_cast<std::size_t>(ls.u.size())});
    r.get_doubles({ls.mu.data(), static_cast<std::size_t>(ls.mu.size())});
    rec.lines.push_back(std::move(ls));
  }
  return rec;
}

void write_trajectory_csv(const TrajectoryRecord& rec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  std::string line = "t,sample";
  for (const auto& ls : rec.lines) line += ",u_" + ls.line.label() + ",mu_" + ls.line.label();
  out << line << '\n';
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    for (int s = 0; s < rec.m(); ++s) {
      line.clear();
      detail::append_double(line, rec.times[k]);
      line += ',' + std::to_string(s);
      for (const auto& ls : rec.lines) {
        line += ',';
        detail::append_double(line, ls.u(s, static_cast<Eigen::Index>(k)));
        line += ',';
        if (ls.mu.size()) detail::append_double(line, ls.mu(s, static_cast<Eigen::Index>(k)));
      }
      out << line << '\n';
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace ropdf
