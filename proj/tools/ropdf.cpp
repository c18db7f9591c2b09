// Command-line front end: one subcommand per study.
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "ropdf/cli_pipeline.hpp"
#include "ropdf/error.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfig = 2;
constexpr int kNumeric = 3;

struct Common {
  std::vector<std::string> configs;
  std::optional<std::uint64_t> seed;
  bool quick = false;
  std::string out;
  bool verbose = false;
};

ropdf::ExperimentConfig load(const std::string& path, const Common& c) {
  auto cfg = ropdf::load_config(path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.quick) cfg.apply_quick();
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

void add_common(CLI::App* sub, Common& c, bool many_configs) {
  if (many_configs) {
    sub->add_option("--config", c.configs, "experiment config (repeat for several cases)")->required();
  } else {
    sub->add_option("--config", c.configs, "experiment config")->required()->expected(1);
  }
  sub->add_option("--seed", c.seed, "override the ensemble seed");
  sub->add_flag("--quick", c.quick, "smoke-test sizes (m_R=500, burn-in 5 s)");
  sub->add_option("--out", c.out, "output directory (overrides [output] dir)");
  sub->add_flag("-v,--verbose", c.verbose, "log progress");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced-order PDF studies of line energies in stochastic power grids"};
  app.require_subcommand(1);
  Common c;
  auto* marginal = app.add_subcommand("marginal", "1D densities and single-line exceedance probabilities");
  auto* joint = app.add_subcommand("joint", "2D density, union exceedance and mutual information");
  auto* mutualinfo = app.add_subcommand("mutualinfo", "joint run that emits only the mutual information curve");
  auto* complexity = app.add_subcommand("complexity", "sample-complexity curves against a large KDE benchmark");
  auto* validate = app.add_subcommand("validate", "check a config and its case bundle");
  for (auto* sub : {marginal, joint, mutualinfo, validate}) add_common(sub, c, false);
  add_common(complexity, c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  spdlog::set_level(c.verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    if (marginal->parsed()) {
      const auto cfg = load(c.configs.front(), c);
      const auto r = ropdf::run_marginal(cfg);
      ropdf::emit_marginal(r, cfg.out_dir);
      for (const auto& lm : r.lines) {
        std::cout << cfg.case_name << ' ' << lm.line.label() << " t=" << lm.peak_time << " predicted=" << lm.predicted
                  << " empirical=" << lm.empirical << " (se " << lm.empirical_se << ") L1=" << lm.l1 << '\n';
      }
    } else if (joint->parsed() || mutualinfo->parsed()) {
      const auto cfg = load(c.configs.front(), c);
      const auto r = ropdf::run_joint(cfg);
      ropdf::emit_joint(r, cfg.out_dir, mutualinfo->parsed());
      std::cout << cfg.case_name << ' ' << r.first.label() << ',' << r.second.label() << " t=" << r.peak_time;
      if (joint->parsed()) {
        std::cout << " predicted=" << r.predicted << " independent=" << r.independent << " empirical=" << r.empirical
                  << " (se " << r.empirical_se << ")";
      }
      std::cout << " MI=" << r.mi_peak << '\n';
    } else if (complexity->parsed()) {
      std::vector<ropdf::ExperimentConfig> cfgs;
      for (const auto& p : c.configs) cfgs.push_back(load(p, c));
      const auto r = ropdf::run_complexity(cfgs);
      ropdf::emit_complexity(r, cfgs.front().out_dir);
      for (const auto& cc : r.cases) {
        std::cout << cc.case_name << " lines=" << cc.edges << " m*(ropdf)=" << cc.complexity.at("ropdf").aggregate
                  << " m*(kde)=" << cc.complexity.at("kde").aggregate << '\n';
      }
      for (const auto& [method, s] : r.slope) {
        std::cout << "slope " << method << ": " << (s ? std::to_string(*s) : std::string("null")) << '\n';
      }
    } else if (validate->parsed()) {
      const auto cfg = load(c.configs.front(), c);
      const auto cb = ropdf::validate_config(cfg);
      std::cout << cfg.case_name << ": n=" << cb.power_case.n << " edges=" << cb.power_case.edges.size() << " ok\n";
    }
  } catch (const ropdf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ropdf::CaseParseError& e) {
    std::cerr << "case bundle error: " << e.what() << '\n';
    return kConfig;
  } catch (const ropdf::TopologyError& e) {
    std::cerr << "topology error: " << e.what() << '\n';
    return kConfig;
  } catch (const ropdf::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const ropdf::DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
