// Hot kernels of one pipeline run: SDE stepping, line-energy responses,
// closure fitting, KDE and the finite-volume updates.
#include <random>

#include <benchmark/benchmark.h>

#include "ropdf/case_model.hpp"
#include "ropdf/closure_regression.hpp"
#include "ropdf/density_metrics.hpp"
#include "ropdf/fv_solver.hpp"
#include "ropdf/qoi_energy.hpp"
#include "ropdf/stochastic_sim.hpp"

using namespace ropdf;

namespace {

const CaseBundle& bundle(const std::string& name) {
  static std::map<std::string, CaseBundle> cache;
  auto it = cache.find(name);
  if (it == cache.end()) it = cache.emplace(name, parse_case_bundle(std::string(ROPDF_DATA_DIR) + "/cases/" + name)).first;
  return it->second;
}

std::vector<double> normals(std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> v(m);
  for (auto& x : v) x = z(rng);
  return v;
}

// Cases by index so the benchmark name shows the size.
const char* const kCases[] = {"case9", "case30", "case57"};

void BM_SdeStep(benchmark::State& st) {
  const auto& cb = bundle(kCases[st.range(0)]);
  const int n = cb.power_case.n;
  const NoiseModel noise = build_noise(n, 0.44, 1.0, 0.05);
  const SwingModel model(cb.power_case, noise);
  EnsembleState s = sample_initial(cb.power_case, cb.equilibrium, noise, static_cast<int>(st.range(1)), 1);
  for (auto _ : st) benchmark::DoNotOptimize(step(s, model, 1e-2));
  st.SetItemsProcessed(st.iterations() * st.range(1));
}
BENCHMARK(BM_SdeStep)->Args({0, 5000})->Args({1, 5000})->Args({2, 5000})->Unit(benchmark::kMillisecond);

void BM_LineResponse(benchmark::State& st) {
  const auto& cb = bundle("case9");
  const NoiseModel noise = build_noise(cb.power_case.n, 0.44, 1.0, 0.05);
  const EnsembleState s = sample_initial(cb.power_case, cb.equilibrium, noise, static_cast<int>(st.range(0)), 1);
  const LineQoi q = LineQoi::from_case(cb.power_case, LineId::canonical(4, 9));
  for (auto _ : st) benchmark::DoNotOptimize(line_response(s, q));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_LineResponse)->Arg(5000)->Arg(50000);

void BM_LocalLinearCv(benchmark::State& st) {
  const auto m = static_cast<Eigen::Index>(st.range(0));
  const auto xs = normals(static_cast<std::size_t>(m), 3);
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(xs.data(), m);
  const Eigen::VectorXd y = x.array().sin() + 0.1 * x.array().square();
  for (auto _ : st) benchmark::DoNotOptimize(select_bandwidth_cv(x, y).bandwidth);
}
BENCHMARK(BM_LocalLinearCv)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_LocalLinearEval(benchmark::State& st) {
  const auto m = static_cast<Eigen::Index>(st.range(0));
  const auto xs = normals(static_cast<std::size_t>(m), 4);
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(xs.data(), m);
  const Eigen::VectorXd y = x.array().cos();
  const LocalLinearFit fit(x, y, 0.2);
  const Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(401, -4.0, 4.0);
  for (auto _ : st) benchmark::DoNotOptimize(fit.evaluate(q));
}
BENCHMARK(BM_LocalLinearEval)->Arg(5000)->Arg(50000)->Unit(benchmark::kMillisecond);

void BM_Kde1d(benchmark::State& st) {
  const auto s = normals(static_cast<std::size_t>(st.range(0)), 5);
  const Grid1D grid(-6.0, 6.0, 400);
  for (auto _ : st) benchmark::DoNotOptimize(kde_1d(s, grid));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_Kde1d)->Arg(10000)->Arg(32768);

void BM_Kde2d(benchmark::State& st) {
  const auto s1 = normals(static_cast<std::size_t>(st.range(0)), 6);
  const auto s2 = normals(static_cast<std::size_t>(st.range(0)), 7);
  const Grid2D grid(Grid1D(-6.0, 6.0, 200), Grid1D(-6.0, 6.0, 200));
  for (auto _ : st) benchmark::DoNotOptimize(kde_2d(s1, s2, grid));
}
BENCHMARK(BM_Kde2d)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_FvStep1d(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  const Grid1D grid(-5.0, 5.0, n);
  Eigen::VectorXd f = (-0.5 * grid.centers().array().square()).exp();
  const Eigen::VectorXd a = -grid.faces();
  const Eigen::VectorXd D = Eigen::VectorXd::Constant(n, 0.05);
  const double dt = cfl_dt(std::vector<double>{5.0}, std::vector<double>{grid.dx()}, 0.05, 0.9, 1.0);
  for (auto _ : st) {
    benchmark::DoNotOptimize(step_1d(f, {a.data(), static_cast<std::size_t>(a.size())},
                                     {D.data(), static_cast<std::size_t>(D.size())}, dt, grid));
    f /= f.sum() * grid.dx();
  }
}
BENCHMARK(BM_FvStep1d)->Arg(400)->Arg(1600);

void BM_FvStep2d(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  const Grid1D ax(-5.0, 5.0, n);
  const Grid2D grid(ax, ax);
  Eigen::MatrixXd f(n, n);
  const Eigen::VectorXd c = ax.centers();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) f(i, j) = std::exp(-0.5 * (c[i] * c[i] + c[j] * c[j]));
  const Eigen::MatrixXd a1 = Eigen::MatrixXd::Constant(n + 1, n, 0.7);
  const Eigen::MatrixXd a2 = Eigen::MatrixXd::Constant(n, n + 1, -0.4);
  const double dt = 0.9 * ax.dx() / 1.1;
  for (auto _ : st) benchmark::DoNotOptimize(step_2d(f, a1, a2, dt, grid));
}
BENCHMARK(BM_FvStep2d)->Arg(100)->Arg(200);

}  // namespace

BENCHMARK_MAIN();
