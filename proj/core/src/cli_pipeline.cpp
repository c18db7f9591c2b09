#include "ropdf/cli_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "ropdf/error.hpp"
#include "ropdf/stochastic_sim.hpp"
#include "text_format.hpp"

namespace ropdf {

namespace {

namespace pt = boost::property_tree;
using nlohmann::json;

// Rethrows `e` with the same dynamic type and a stage prefix, so callers can
// still map error classes to exit codes.
template <typename F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  auto tag = [&](const std::exception& e) { return "[" + stage + "] " + e.what(); };
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e));
  } catch (const CaseParseError& e) {
    throw CaseParseError(e.kind(), tag(e));
  } catch (const TopologyError& e) {
    throw TopologyError(e.kind(), tag(e));
  } catch (const NumericError& e) {
    throw NumericError(tag(e));
  } catch (const DomainError& e) {
    throw DomainError(tag(e));
  } catch (const Error& e) {
    throw Error(tag(e));
  }
}

// ---------------------------------------------------------------- config

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"case", {"name", "bundle"}},
      {"noise", {"theta", "alpha", "r"}},
      {"scenario", {"dt", "burn_in", "post", "trip", "record", "record_stride"}},
      {"ensemble", {"m_R", "m_KDE", "seed"}},
      {"grid", {"n_cells", "n_cells_2d", "padding"}},
      {"closure", {"method", "method_2d", "folds", "cv_stride", "cv_max_samples", "span", "lattice"}},
      {"solver", {"cfl", "output_stride_2d", "wall_at_zero"}},
      {"complexity", {"ladder", "benchmark_m", "gamma", "repeats", "lines"}},
      {"output", {"dir"}},
  };
  return s;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  [[nodiscard]] std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  void number(const std::string& sec, const std::string& key, double& out) const {
    if (auto v = raw(sec, key)) out = parse_double(sec, key, *v);
  }

  template <typename Int>
  void integer(const std::string& sec, const std::string& key, Int& out) const {
    if (auto v = raw(sec, key)) out = parse_int<Int>(sec, key, *v);
  }

  void boolean(const std::string& sec, const std::string& key, bool& out) const {
    const auto v = raw(sec, key);
    if (!v) return;
    if (*v == "true" || *v == "1") {
      out = true;
    } else if (*v == "false" || *v == "0") {
      out = false;
    } else {
      throw ConfigError("[" + sec + "] " + key + ": expected true or false, got '" + *v + "'");
    }
  }

  static double parse_double(const std::string& sec, const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("[" + sec + "] " + key + ": expected a number, got '" + v + "'");
  }

  template <typename Int>
  static Int parse_int(const std::string& sec, const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const long long i = std::stoll(v, &used);
      if (used == v.size() && i >= 0) return static_cast<Int>(i);
    } catch (const std::exception&) {
    }
    throw ConfigError("[" + sec + "] " + key + ": expected a nonnegative integer, got '" + v + "'");
  }

  static LineId parse_line(const std::string& sec, const std::string& key, const std::string& v) {
    try {
      return LineId::parse(v);
    } catch (const Error& e) {
      throw ConfigError("[" + sec + "] " + key + ": bad line '" + v + "': " + e.what());
    }
  }

 private:
  const pt::ptree& tree_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void check_ranges(const ExperimentConfig& c) {
  require(c.theta > 0.0, "[noise] theta must be > 0");
  require(c.alpha >= 0.0, "[noise] alpha must be >= 0");
  require(c.r >= 0.0 && c.r < 1.0, "[noise] r must lie in [0, 1)");
  require(c.dt > 0.0, "[scenario] dt must be > 0");
  require(c.burn_in >= 0.0, "[scenario] burn_in must be >= 0");
  require(c.post >= 0.0, "[scenario] post must be >= 0");
  require(c.record_stride >= 1, "[scenario] record_stride must be >= 1");
  require(c.m_R >= 30, "[ensemble] m_R must be >= 30");
  require(c.m_KDE >= 2, "[ensemble] m_KDE must be >= 2");
  require(c.n_cells >= 16 && c.n_cells_2d >= 16, "[grid] cell counts must be >= 16");
  require(c.padding >= 0.5 && c.padding <= 1.0, "[grid] padding must lie in [0.5, 1]");
  require(c.closure_1d != ClosureKind::lowess_2d, "[closure] method must be global-linear or local-linear");
  require(c.closure_2d != ClosureKind::local_linear, "[closure] method_2d must be global-linear or lowess-2d");
  require(c.folds >= 2, "[closure] folds must be >= 2");
  require(c.cv_stride >= 1, "[closure] cv_stride must be >= 1");
  require(c.cv_max_samples >= c.folds, "[closure] cv_max_samples must be >= folds");
  require(c.span > 0.0 && c.span <= 1.0, "[closure] span must lie in (0, 1]");
  require(c.lattice >= 2, "[closure] lattice must be >= 2");
  require(c.cfl > 0.0 && c.cfl <= 1.0, "[solver] cfl must lie in (0, 1]");
  require(c.output_stride_2d >= 1, "[solver] output_stride_2d must be >= 1");
  require(!c.ladder.empty(), "[complexity] ladder must not be empty");
  for (std::size_t k = 0; k < c.ladder.size(); ++k) {
    require(c.ladder[k] >= 30, "[complexity] ladder sizes must be >= 30");
    require(k == 0 || c.ladder[k] > c.ladder[k - 1], "[complexity] ladder must be increasing");
  }
  require(c.benchmark_m >= 2, "[complexity] benchmark_m must be >= 2");
  require(c.gamma > 0.0, "[complexity] gamma must be > 0");
  require(c.repeats >= 1, "[complexity] repeats must be >= 1");
}

ClosureOptions closure_options(const ExperimentConfig& cfg, ClosureKind kind) {
  ClosureOptions o;
  o.kind = kind;
  o.local.folds = cfg.folds;
  o.local.fold_seed = cfg.seed;
  o.cv_stride = cfg.cv_stride;
  o.cv_max_samples = cfg.cv_max_samples;
  o.span = cfg.span;
  o.lattice = cfg.lattice;
  return o;
}

// ---------------------------------------------------------------- helpers

std::span<const double> col(const Eigen::MatrixXd& m, Eigen::Index k) {
  return {m.col(k).data(), static_cast<std::size_t>(m.rows())};
}

Eigen::Index peak_index(const Eigen::MatrixXd& u) {
  Eigen::Index k = 0;
  u.colwise().mean().maxCoeff(&k);
  return k;
}

double clamp_to(const Grid1D& g, double t, bool& clamped) {
  const double c = std::clamp(t, g.lo, g.hi);
  if (c != t) clamped = true;
  return c;
}

std::size_t frame_at(const DensityField& f, double t) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < f.times.size(); ++k) {
    if (std::abs(f.times[k] - t) < std::abs(f.times[best] - t)) best = k;
  }
  return best;
}

TrajectoryRecord simulate(const CaseBundle& cb, const NoiseModel& noise, const ExperimentConfig& cfg, int m,
                          std::uint64_t seed, const std::vector<LineId>& lines, bool response) {
  ScenarioConfig sc;
  sc.dt = cfg.dt;
  sc.burn_in_T = cfg.burn_in;
  sc.post_T = cfg.post;
  sc.tripped_line = cfg.trip;
  sc.m = m;
  sc.seed = seed;
  sc.record_lines = lines;
  sc.record_stride = cfg.record_stride;
  sc.record_response = response;
  spdlog::info("{}: simulating m={} seed={} ({} lines)", cfg.case_name, m, seed, lines.size());
  return run_scenario(cb.power_case, cb.equilibrium, noise, sc);
}

NoiseModel noise_for(const ExperimentConfig& cfg, const CaseBundle& cb) {
  return staged("noise", [&] { return build_noise(cb.power_case.n, cfg.r, cfg.theta, cfg.alpha); });
}

// Closure, RO-PDF solve and benchmark comparison for one line.
LineMarginal marginal_line(const ExperimentConfig& cfg, const std::vector<double>& times, const LineSeries& ro,
                           const LineSeries& bench, double rating) {
  const std::string tag = " line " + ro.line.label();
  LineMarginal lm;
  lm.line = ro.line;
  lm.rating = rating;

  const Grid1D grid = staged("grid" + tag, [&] { return build_grid(ro.u, cfg.n_cells, cfg.padding, true); });
  const ClosureModel closure = staged("closure" + tag, [&] {
    return fit_closure_1d(times, ro.u, ro.mu, grid.faces(), closure_options(cfg, cfg.closure_1d));
  });
  lm.bandwidths = closure.bandwidths;
  const Eigen::VectorXd f0 = staged("kde" + tag, [&] { return kde_1d(col(ro.u, 0), grid); });
  SolveOptions so;
  so.cfl = cfg.cfl;
  so.wall_at_zero = cfg.wall_at_zero;
  lm.ropdf = staged("solve" + tag, [&] { return solve_ropdf_1d(f0, grid, closure, 1.0, nullptr, times.back(), so); });
  lm.boundary_outflow = lm.ropdf.boundary_outflow;
  lm.bench = staged("benchmark kde" + tag, [&] { return kde_series_1d(bench.u, times, grid); });

  staged("metrics" + tag, [&] {
    lm.l1 = l1_error(lm.ropdf, lm.bench);
    const double thr = clamp_to(grid, rating, lm.threshold_clamped);
    for (std::size_t k = 0; k < lm.ropdf.frames.size(); ++k) {
      lm.predicted_series.push_back(tail_probability(lm.ropdf.frames[k], grid, thr));
      const auto bk = static_cast<Eigen::Index>(frame_at(lm.bench, lm.ropdf.times[k]));
      lm.empirical_series.push_back(ecdf_exceedance(col(bench.u, bk), rating));
    }
    const Eigen::Index kp = peak_index(ro.u);
    lm.peak_time = times[static_cast<std::size_t>(kp)];
    const std::size_t fr = frame_at(lm.ropdf, lm.peak_time);
    lm.predicted = lm.predicted_series[fr];
    lm.kde = tail_probability(lm.bench.frames[frame_at(lm.bench, lm.peak_time)], grid, thr);
    lm.empirical = ecdf_exceedance(col(bench.u, kp), rating);
    lm.empirical_se = ecdf_standard_error(lm.empirical, bench.u.rows());
    lm.empirical_ro = ecdf_exceedance(col(ro.u, kp), rating);
  });
  spdlog::info("{}{}: peak t={} predicted={} empirical={} L1={}", cfg.case_name, tag, lm.peak_time, lm.predicted,
               lm.empirical, lm.l1);
  return lm;
}

void require_post(const ExperimentConfig& cfg) {
  if (!(cfg.post > 0.0)) throw ConfigError("[scenario] post must be > 0 for a density study");
  if (cfg.record_lines.empty()) throw ConfigError("[scenario] record must list at least one line");
}

MarginalResult marginals_from(const ExperimentConfig& cfg, const CaseBundle& cb, const TrajectoryRecord& rec,
                              const TrajectoryRecord& bench) {
  MarginalResult r;
  r.case_name = cfg.case_name;
  r.m_R = rec.m();
  r.m_KDE = bench.m();
  r.diverged = rec.diverged + bench.diverged;
  for (LineId l : cfg.record_lines) {
    const double rating = line_rating(cb.power_case, l);
    r.lines.push_back(marginal_line(cfg, rec.times, rec.series(l), bench.series(l), rating));
  }
  return r;
}

// ---------------------------------------------------------------- output

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_json(const json& j, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  return detail::format_double(v);
}

json marginal_record(const std::string& case_name, const LineMarginal& lm) {
  return {{"case", case_name},
          {"lines", json::array({lm.line.label()})},
          {"t", lm.peak_time},
          {"predicted", lm.predicted},
          {"empirical", lm.empirical},
          {"independent", nullptr},
          {"empirical_se", lm.empirical_se},
          {"empirical_ro", lm.empirical_ro},
          {"kde", lm.kde},
          {"rating", lm.rating},
          {"threshold_clamped", lm.threshold_clamped},
          {"l1", lm.l1},
          {"boundary_outflow", lm.boundary_outflow}};
}

DensityField single_frame(const DensityField& f, std::size_t k) {
  DensityField out;
  out.axes = f.axes;
  out.times = {f.times.at(k)};
  out.frames = {f.frames.at(k)};
  out.boundary_outflow = f.boundary_outflow;
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config API

void ExperimentConfig::apply_quick() {
  m_R = 500;
  burn_in = 5.0;
  m_KDE = std::min(m_KDE, 1000);
  ladder = {256, 512};
  benchmark_m = std::min(benchmark_m, 1024);
  cv_max_samples = std::min(cv_max_samples, 1000);
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  for (const auto& [section, child] : tree) {
    const auto it = schema().find(section);
    if (child.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    if (it == schema().end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : child) {
      if (!it->second.contains(key)) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
    }
  }

  const Reader rd(tree);
  ExperimentConfig c;
  const auto bundle = rd.raw("case", "bundle");
  if (!bundle || bundle->empty()) throw ConfigError("[case] bundle is required");
  c.bundle = std::filesystem::path(*bundle).is_absolute() ? std::filesystem::path(*bundle) : base_dir / *bundle;
  c.case_name = rd.raw("case", "name").value_or(std::filesystem::path(*bundle).filename().string());
  if (c.case_name.empty()) c.case_name = c.bundle.filename().string();

  rd.number("noise", "theta", c.theta);
  rd.number("noise", "alpha", c.alpha);
  rd.number("noise", "r", c.r);

  rd.number("scenario", "dt", c.dt);
  rd.number("scenario", "burn_in", c.burn_in);
  rd.number("scenario", "post", c.post);
  if (auto v = rd.raw("scenario", "trip"); v && !v->empty() && *v != "none") {
    c.trip = Reader::parse_line("scenario", "trip", *v);
  }
  if (auto v = rd.raw("scenario", "record")) {
    for (const auto& item : split_list(*v)) c.record_lines.push_back(Reader::parse_line("scenario", "record", item));
  }
  rd.integer("scenario", "record_stride", c.record_stride);

  rd.integer("ensemble", "m_R", c.m_R);
  rd.integer("ensemble", "m_KDE", c.m_KDE);
  rd.integer("ensemble", "seed", c.seed);

  rd.integer("grid", "n_cells", c.n_cells);
  rd.integer("grid", "n_cells_2d", c.n_cells_2d);
  rd.number("grid", "padding", c.padding);

  auto kind = [&](const std::string& key, ClosureKind& out) {
    if (auto v = rd.raw("closure", key)) {
      try {
        out = parse_closure_kind(*v);
      } catch (const Error& e) {
        throw ConfigError("[closure] " + key + ": " + e.what());
      }
    }
  };
  kind("method", c.closure_1d);
  kind("method_2d", c.closure_2d);
  rd.integer("closure", "folds", c.folds);
  rd.integer("closure", "cv_stride", c.cv_stride);
  rd.integer("closure", "cv_max_samples", c.cv_max_samples);
  rd.number("closure", "span", c.span);
  rd.integer("closure", "lattice", c.lattice);

  rd.number("solver", "cfl", c.cfl);
  rd.integer("solver", "output_stride_2d", c.output_stride_2d);
  rd.boolean("solver", "wall_at_zero", c.wall_at_zero);

  if (auto v = rd.raw("complexity", "ladder")) {
    c.ladder.clear();
    for (const auto& item : split_list(*v)) c.ladder.push_back(Reader::parse_int<int>("complexity", "ladder", item));
  }
  rd.integer("complexity", "benchmark_m", c.benchmark_m);
  rd.number("complexity", "gamma", c.gamma);
  rd.integer("complexity", "repeats", c.repeats);
  if (auto v = rd.raw("complexity", "lines"); v && *v != "all") {
    std::vector<LineId> lines;
    for (const auto& item : split_list(*v)) lines.push_back(Reader::parse_line("complexity", "lines", item));
    c.complexity_lines = lines;
  }

  if (auto v = rd.raw("output", "dir")) {
    c.out_dir = std::filesystem::path(*v).is_absolute() ? std::filesystem::path(*v) : base_dir / *v;
  } else {
    c.out_dir = base_dir / "out";
  }
  check_ranges(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

CaseBundle validate_config(const ExperimentConfig& cfg) {
  check_ranges(cfg);
  CaseBundle cb = staged("case", [&] { return parse_case_bundle(cfg.bundle); });
  const PowerCase& pc = cb.power_case;
  PowerCase post = pc;
  if (cfg.trip) post = staged("trip", [&] { return remove_line(pc, *cfg.trip); });
  for (LineId l : cfg.record_lines) {
    if (!pc.has_edge(l)) throw ConfigError("[scenario] record: line " + l.label() + " is not an edge of the case");
    if (!post.has_edge(l)) throw ConfigError("[scenario] record: line " + l.label() + " is the tripped line");
    staged("ratings", [&] { return line_rating(pc, l); });
  }
  if (cfg.complexity_lines) {
    for (LineId l : *cfg.complexity_lines) {
      if (!pc.has_edge(l)) throw ConfigError("[complexity] lines: " + l.label() + " is not an edge of the case");
    }
  }
  if (cfg.m_KDE < cfg.m_R) spdlog::warn("m_KDE={} is below m_R={}", cfg.m_KDE, cfg.m_R);
  return cb;
}

// ---------------------------------------------------------------- runs

MarginalResult run_marginal(const ExperimentConfig& cfg) {
  require_post(cfg);
  const CaseBundle cb = validate_config(cfg);
  const NoiseModel noise = noise_for(cfg, cb);
  const auto rec = staged("simulate", [&] { return simulate(cb, noise, cfg, cfg.m_R, cfg.seed, cfg.record_lines, true); });
  const auto bench = staged("benchmark",
                            [&] { return simulate(cb, noise, cfg, cfg.m_KDE, cfg.seed + 1, cfg.record_lines, false); });
  return marginals_from(cfg, cb, rec, bench);
}

JointResult run_joint(const ExperimentConfig& cfg) {
  require_post(cfg);
  if (cfg.record_lines.size() != 2) {
    throw ConfigError("[scenario] record: joint runs need exactly 2 lines (got " +
                      std::to_string(cfg.record_lines.size()) + "; three or more are unsupported)");
  }
  const CaseBundle cb = validate_config(cfg);
  const LineId l1 = cfg.record_lines[0];
  const LineId l2 = cfg.record_lines[1];
  JointResult jr;
  jr.case_name = cfg.case_name;
  jr.first = l1;
  jr.second = l2;
  jr.share_bus = l1.i == l2.i || l1.i == l2.j || l1.j == l2.i || l1.j == l2.j;
  if (!jr.share_bus) spdlog::warn("lines {} and {} do not share a bus", l1.label(), l2.label());

  const NoiseModel noise = noise_for(cfg, cb);
  const auto rec = staged("simulate", [&] { return simulate(cb, noise, cfg, cfg.m_R, cfg.seed, cfg.record_lines, true); });
  const auto bench = staged("benchmark",
                            [&] { return simulate(cb, noise, cfg, cfg.m_KDE, cfg.seed + 1, cfg.record_lines, false); });
  jr.marginals = marginals_from(cfg, cb, rec, bench);

  const LineSeries& s1 = rec.series(l1);
  const LineSeries& s2 = rec.series(l2);
  const LineSeries& b1 = bench.series(l1);
  const LineSeries& b2 = bench.series(l2);
  const auto& times = rec.times;
  const std::string tag = " lines " + l1.label() + "," + l2.label();

  const Grid2D grid = staged("grid" + tag, [&] {
    return build_grid_2d(s1.u, s2.u, cfg.n_cells_2d, cfg.n_cells_2d, cfg.padding, true);
  });
  const Eigen::Vector2d lo(grid.ax1.lo, grid.ax2.lo);
  const Eigen::Vector2d hi(grid.ax1.hi, grid.ax2.hi);
  const ClosureOptions opts = closure_options(cfg, cfg.closure_2d);
  const ClosureModel c1 = staged("closure line " + l1.label() + " (2D)",
                                 [&] { return fit_closure_2d(times, s1.u, s2.u, s1.mu, lo, hi, opts); });
  const ClosureModel c2 = staged("closure line " + l2.label() + " (2D)",
                                 [&] { return fit_closure_2d(times, s1.u, s2.u, s2.mu, lo, hi, opts); });

  // Peak time of whichever line carries the larger mean energy.
  const Eigen::Index k1 = peak_index(s1.u);
  const Eigen::Index k2 = peak_index(s2.u);
  const bool first_larger = s1.u.col(k1).mean() >= s2.u.col(k2).mean();
  const Eigen::Index kp = first_larger ? k1 : k2;
  jr.peak_time = times[static_cast<std::size_t>(kp)];

  std::vector<std::size_t> columns;
  for (std::size_t k = 0; k < times.size(); k += static_cast<std::size_t>(cfg.output_stride_2d)) columns.push_back(k);
  if (columns.back() != times.size() - 1) columns.push_back(times.size() - 1);
  if (!std::binary_search(columns.begin(), columns.end(), static_cast<std::size_t>(kp))) {
    columns.insert(std::upper_bound(columns.begin(), columns.end(), static_cast<std::size_t>(kp)),
                   static_cast<std::size_t>(kp));
  }
  SolveOptions so;
  so.cfl = cfg.cfl;
  so.wall_at_zero = cfg.wall_at_zero;
  so.output_times = std::vector<double>{};
  for (std::size_t k : columns) so.output_times->push_back(times[k]);

  const Eigen::VectorXd f0flat = staged("kde" + tag, [&] { return kde_2d(col(s1.u, 0), col(s2.u, 0), grid); });
  const Eigen::MatrixXd f0 =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          f0flat.data(), grid.ax1.n_cells, grid.ax2.n_cells);
  jr.ropdf = staged("solve" + tag, [&] { return solve_ropdf_2d(f0, grid, c1, c2, 1.0, 1.0, times.back(), so); });
  jr.bench = staged("benchmark kde" + tag, [&] { return kde_series_2d(b1.u, b2.u, times, grid, columns); });

  staged("metrics" + tag, [&] {
    jr.l1 = l1_error(jr.ropdf, jr.bench);
    const double r1 = line_rating(cb.power_case, l1);
    const double r2 = line_rating(cb.power_case, l2);
    const double t1 = clamp_to(grid.ax1, r1, jr.threshold_clamped);
    const double t2 = clamp_to(grid.ax2, r2, jr.threshold_clamped);
    const std::size_t fp = frame_at(jr.ropdf, jr.peak_time);
    jr.predicted = joint_exceedance(jr.ropdf.frames[fp], grid, t1, t2);
    jr.kde = joint_exceedance(jr.bench.frames[frame_at(jr.bench, jr.peak_time)], grid, t1, t2);
    jr.empirical = ecdf_union_exceedance(col(b1.u, kp), col(b2.u, kp), r1, r2);
    jr.empirical_se = ecdf_standard_error(jr.empirical, b1.u.rows());

    auto at_peak = [&](const LineMarginal& lm) {
      return std::clamp(lm.predicted_series[frame_at(lm.ropdf, jr.peak_time)], 0.0, 1.0);
    };
    jr.p_first = at_peak(jr.marginals.lines[0]);
    jr.p_second = at_peak(jr.marginals.lines[1]);
    jr.independent = independence_joint(1.0 - jr.p_first, 1.0 - jr.p_second);

    auto mi_of = [&](const Eigen::VectorXd& frame) {
      const int n1 = grid.ax1.n_cells;
      const int n2 = grid.ax2.n_cells;
      // Solver undershoots are dropped here so the own marginals dominate every positive cell.
      const Eigen::VectorXd pos = frame.cwiseMax(0.0);
      const Eigen::MatrixXd f =
          Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(pos.data(), n1, n2);
      const Eigen::VectorXd m1 = f.rowwise().sum() * grid.ax2.dx();
      const Eigen::VectorXd m2 = f.colwise().sum().transpose() * grid.ax1.dx();
      return mutual_information(pos, m1, m2, grid).raw;
    };
    for (std::size_t k = 0; k < jr.ropdf.frames.size(); ++k) {
      jr.mi_times.push_back(jr.ropdf.times[k]);
      jr.mi_ropdf.push_back(mi_of(jr.ropdf.frames[k]));
      jr.mi_kde.push_back(mi_of(jr.bench.frames[frame_at(jr.bench, jr.ropdf.times[k])]));
    }
    jr.mi_peak = MutualInformation{jr.mi_ropdf[fp]}.reported();
  });
  spdlog::info("{}{}: peak t={} predicted={} independent={} empirical={} MI={}", cfg.case_name, tag, jr.peak_time,
               jr.predicted, jr.independent, jr.empirical, jr.mi_peak);
  return jr;
}

ComplexityResultSet run_complexity(const std::vector<ExperimentConfig>& cfgs) {
  if (cfgs.empty()) throw ConfigError("complexity needs at least one config");
  ComplexityResultSet out;
  out.gamma = cfgs.front().gamma;
  for (const ExperimentConfig& cfg : cfgs) {
    if (cfg.trip) throw ConfigError("[scenario] trip must be none for a complexity study");
    if (!(cfg.post > 0.0)) throw ConfigError("[scenario] post must be > 0 for a complexity study");
    if (cfg.gamma != out.gamma) throw ConfigError("[complexity] gamma differs between configs");
    const CaseBundle cb = validate_config(cfg);
    const std::vector<LineId> lines = cfg.complexity_lines.value_or(cb.power_case.edges);
    const NoiseModel noise = noise_for(cfg, cb);

    ComplexityCase cc;
    cc.case_name = cfg.case_name;
    cc.edges = static_cast<int>(lines.size());

    const auto bench = staged("benchmark", [&] {
      return simulate(cb, noise, cfg, cfg.benchmark_m, cfg.seed + 1, lines, false);
    });
    const auto& times = bench.times;
    std::map<LineId, Grid1D> grids;
    std::map<LineId, DensityField> bench_fields;
    for (LineId l : lines) {
      const std::string tag = " line " + l.label();
      grids[l] = staged("grid" + tag, [&] { return build_grid(bench.series(l).u, cfg.n_cells, cfg.padding, true); });
      bench_fields[l] = staged("benchmark kde" + tag, [&] { return kde_series_1d(bench.series(l).u, times, grids[l]); });
    }

    const int m_max = cfg.ladder.back();
    for (int rep = 0; rep < cfg.repeats; ++rep) {
      const std::uint64_t seed = cfg.seed + 100ULL * static_cast<std::uint64_t>(rep);
      cc.seeds.push_back(static_cast<int>(seed));
      // Ensembles of every ladder size are prefixes of the largest one.
      const auto rec = staged("simulate", [&] { return simulate(cb, noise, cfg, m_max, seed, lines, true); });
      for (LineId l : lines) {
        const std::string tag = " line " + l.label();
        const LineSeries& s = rec.series(l);
        const Grid1D& grid = grids[l];
        for (int m : cfg.ladder) {
          const Eigen::MatrixXd U = s.u.topRows(std::min<Eigen::Index>(m, s.u.rows()));
          const Eigen::MatrixXd MU = s.mu.topRows(U.rows());
          const std::string mtag = tag + " m=" + std::to_string(m);
          const ClosureModel closure = staged("closure" + mtag, [&] {
            return fit_closure_1d(times, U, MU, grid.faces(), closure_options(cfg, cfg.closure_1d));
          });
          SolveOptions so;
          so.cfl = cfg.cfl;
          so.wall_at_zero = cfg.wall_at_zero;
          const Eigen::VectorXd f0 = staged("kde" + mtag, [&] { return kde_1d(col(U, 0), grid); });
          const DensityField ro = staged("solve" + mtag, [&] {
            return solve_ropdf_1d(f0, grid, closure, 1.0, nullptr, times.back(), so);
          });
          const DensityField kd = staged("kde" + mtag, [&] { return kde_series_1d(U, times, grid); });
          const double e_ro = staged("metrics" + mtag, [&] { return l1_error(ro, bench_fields[l]); });
          const double e_kd = staged("metrics" + mtag, [&] { return l1_error(kd, bench_fields[l]); });
          cc.rows.push_back({seed, l.label(), m, "ropdf", e_ro});
          cc.rows.push_back({seed, l.label(), m, "kde", e_kd});
          spdlog::info("{}{}: L1 ropdf={} kde={}", cfg.case_name, mtag, e_ro, e_kd);
        }
      }
    }
    for (const auto& row : cc.rows) cc.errors[row.method][row.line][row.m] += row.error / cfg.repeats;
    for (const auto& [method, curves] : cc.errors) cc.complexity[method] = sample_complexity(curves, out.gamma);
    out.cases.push_back(std::move(cc));
  }
  for (const std::string method : {"ropdf", "kde"}) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& cc : out.cases) {
      const auto& c = cc.complexity.at(method);
      if (c.aggregate > 0) pts.emplace_back(cc.edges, static_cast<double>(c.aggregate));
    }
    out.slope[method] = loglog_slope(pts);
  }
  return out;
}

// ---------------------------------------------------------------- emit

void emit_marginal(const MarginalResult& r, const std::filesystem::path& dir) {
  ensure_dir(dir);
  json records = json::array();
  for (const LineMarginal& lm : r.lines) {
    const std::string stem = r.case_name + "_" + lm.line.label();
    write_density_csv(lm.ropdf, dir / (stem + "_pdf.csv"));
    write_density_csv(lm.bench, dir / (stem + "_kde.csv"));
    auto out = open_out(dir / (stem + "_ratio.csv"));
    out << "t,predicted,empirical,ratio\n";
    for (std::size_t k = 0; k < lm.predicted_series.size(); ++k) {
      const double p = lm.predicted_series[k];
      const double e = lm.empirical_series[k];
      out << num(lm.ropdf.times[k]) << ',' << num(p) << ',' << num(e) << ',' << (e > 0.0 ? num(p / e) : "") << '\n';
    }
    if (!out) throw Error("write failed for " + (dir / (stem + "_ratio.csv")).string());
    records.push_back(marginal_record(r.case_name, lm));
  }
  write_json({{"case", r.case_name}, {"m_R", r.m_R}, {"m_KDE", r.m_KDE}, {"diverged", r.diverged}, {"records", records}},
             dir / (r.case_name + "_summary.json"));
}

void emit_joint(const JointResult& r, const std::filesystem::path& dir, bool mi_only) {
  ensure_dir(dir);
  const std::string stem = r.case_name + "_" + r.first.label() + "_" + r.second.label();
  {
    auto out = open_out(dir / (stem + "_mi.csv"));
    out << "t,mi_ropdf,mi_kde\n";
    for (std::size_t k = 0; k < r.mi_times.size(); ++k) {
      out << num(r.mi_times[k]) << ',' << num(r.mi_ropdf[k]) << ',' << num(r.mi_kde[k]) << '\n';
    }
    if (!out) throw Error("write failed for " + (dir / (stem + "_mi.csv")).string());
  }
  json j{{"case", r.case_name},
         {"lines", json::array({r.first.label(), r.second.label()})},
         {"t", r.peak_time},
         {"mi", r.mi_peak}};
  if (!mi_only) {
    emit_marginal(r.marginals, dir);
    write_density_binary(r.ropdf, dir / (stem + "_pdf2d.bin"));
    write_density_binary(r.bench, dir / (stem + "_kde2d.bin"));
    write_density_csv(single_frame(r.ropdf, frame_at(r.ropdf, r.peak_time)), dir / (stem + "_pdf2d_peak.csv"));
    write_density_csv(single_frame(r.bench, frame_at(r.bench, r.peak_time)), dir / (stem + "_kde2d_peak.csv"));
    j["predicted"] = r.predicted;
    j["empirical"] = r.empirical;
    j["independent"] = r.independent;
    j["empirical_se"] = r.empirical_se;
    j["kde"] = r.kde;
    j["marginal_predicted"] = json::array({r.p_first, r.p_second});
    j["threshold_clamped"] = r.threshold_clamped;
    j["share_bus"] = r.share_bus;
    j["l1"] = r.l1;
    j["m_R"] = r.marginals.m_R;
    j["m_KDE"] = r.marginals.m_KDE;
  }
  write_json(j, dir / (stem + "_summary.json"));
}

void emit_complexity(const ComplexityResultSet& r, const std::filesystem::path& dir) {
  ensure_dir(dir);
  json cases = json::array();
  for (const auto& cc : r.cases) {
    auto out = open_out(dir / (cc.case_name + "_complexity_curves.csv"));
    out << "seed,line,m,method,l1\n";
    for (const auto& row : cc.rows) {
      out << row.seed << ',' << row.line << ',' << row.m << ',' << row.method << ',' << num(row.error) << '\n';
    }
    if (!out) throw Error("write failed for " + (dir / (cc.case_name + "_complexity_curves.csv")).string());

    json methods = json::object();
    for (const auto& [method, res] : cc.complexity) {
      json per_line = json::object();
      for (const auto& [line, m] : res.per_line) per_line[line] = m ? json(*m) : json(nullptr);
      // Mean error over lines at each ensemble size.
      const auto& curves = cc.errors.at(method);
      std::map<long, double> avg;
      for (const auto& [line, curve] : curves) {
        for (const auto& [m, e] : curve) avg[m] += e / static_cast<double>(curves.size());
      }
      json mean = json::object();
      for (const auto& [m, e] : avg) mean[std::to_string(m)] = e;
      methods[method] = {{"per_line", per_line},
                         {"aggregate", res.aggregate},
                         {"not_achieved", res.not_achieved},
                         {"mean_l1", mean}};
    }
    json cj{{"case", cc.case_name}, {"lines", cc.edges}, {"seeds", cc.seeds}, {"gamma", r.gamma}, {"methods", methods}};
    write_json(cj, dir / (cc.case_name + "_complexity.json"));
    cases.push_back(cj);
  }
  json slope = json::object();
  for (const auto& [method, s] : r.slope) slope[method] = s ? json(*s) : json(nullptr);
  write_json({{"gamma", r.gamma}, {"slope", slope}, {"cases", cases}}, dir / "complexity_summary.json");
}

}  // namespace ropdf
