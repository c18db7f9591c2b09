#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ropdf {

/// Undirected transmission line between two buses, 1-based, stored with i < j.
struct LineId {
  int i = 0;
  int j = 0;

  /// Orders the endpoints; throws DomainError for i == j or non-positive buses.
  static LineId canonical(int a, int b);
  /// Parses "4-9" or "4,9".
  static LineId parse(std::string_view text);

  [[nodiscard]] std::string label() const;  // "4-9"

  auto operator<=>(const LineId&) const = default;
};

/// Reduced multimachine network; every bus carries (v, omega, delta, eta) states.
struct PowerCase {
  int n = 0;
  std::vector<LineId> edges;
  Eigen::MatrixXd G;  // real part of the admittance matrix (p.u.)
  Eigen::MatrixXd B;  // imaginary part (p.u.)
  Eigen::VectorXd h;  // inertia constants (s)
  Eigen::VectorXd d;  // damping factors (p.u.)
  Eigen::VectorXd p_m;
  double omega_R = 1.0;
  std::map<LineId, double> ratings;

  [[nodiscard]] bool has_edge(LineId l) const;
};

/// Field-by-field exact equality (matrix shapes included).
bool operator==(const PowerCase& a, const PowerCase& b);

struct EquilibriumPoint {
  Eigen::VectorXd v_star;
  Eigen::VectorXd delta_star;
};

bool operator==(const EquilibriumPoint& a, const EquilibriumPoint& b);

struct CaseBundle {
  PowerCase power_case;
  EquilibriumPoint equilibrium;
};

/// Reads a case bundle directory (`network`, `machines`, `equilibrium`,
/// `ratings`). The grammar is documented in data/cases/README.md. Every
/// failure is a CaseParseError whose kind names the violated rule.
CaseBundle parse_case_bundle(const std::filesystem::path& dir);

/// Writes a bundle that parse_case_bundle reads back bit-exactly.
void write_case_bundle(const CaseBundle& bundle, const std::filesystem::path& dir);

/// Checks every PowerCase / EquilibriumPoint invariant; throws CaseParseError.
void validate(const PowerCase& pc, const EquilibriumPoint& eq);

/// Copy of `pc` with the off-diagonal G/B entries of `l` zeroed and `l`
/// dropped from the edge list. Diagonal entries are left untouched.
/// Throws TopologyError when the line is absent or removal islands a bus.
PowerCase remove_line(const PowerCase& pc, LineId l);

/// Long-term rating of `l` in energy-function units.
double line_rating(const PowerCase& pc, LineId l);

/// Whether the graph on buses 1..n with the given edges is connected.
bool is_connected(int n, const std::vector<LineId>& edges);

}  // namespace ropdf
