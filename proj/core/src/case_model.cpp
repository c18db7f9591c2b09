#include "ropdf/case_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <queue>
#include <set>
#include <sstream>

#include "ropdf/error.hpp"
#include "text_format.hpp"

namespace ropdf {

using detail::format_double;

const char* to_string(CaseParseError::Kind kind) noexcept {
  using K = CaseParseError::Kind;
  switch (kind) {
    case K::missing_file: return "missing_file";
    case K::syntax: return "syntax";
    case K::unknown_key: return "unknown_key";
    case K::duplicate_entry: return "duplicate_entry";
    case K::dimension_mismatch: return "dimension_mismatch";
    case K::asymmetric_matrix: return "asymmetric_matrix";
    case K::nonpositive_rating: return "nonpositive_rating";
    case K::invalid_value: return "invalid_value";
    case K::inconsistent_edge: return "inconsistent_edge";
  }
  return "unknown";
}

LineId LineId::canonical(int a, int b) {
  if (a <= 0 || b <= 0 || a == b) {
    throw DomainError("invalid line endpoints " + std::to_string(a) + "-" + std::to_string(b));
  }
  return a < b ? LineId{a, b} : LineId{b, a};
}

LineId LineId::parse(std::string_view text) {
  const auto sep = text.find_first_of("-,");
  int a = 0;
  int b = 0;
  if (sep != std::string_view::npos) {
    const auto lhs = text.substr(0, sep);
    const auto rhs = text.substr(sep + 1);
    const auto ra = std::from_chars(lhs.data(), lhs.data() + lhs.size(), a);
    const auto rb = std::from_chars(rhs.data(), rhs.data() + rhs.size(), b);
    if (ra.ec == std::errc{} && ra.ptr == lhs.data() + lhs.size() && rb.ec == std::errc{} &&
        rb.ptr == rhs.data() + rhs.size()) {
      return canonical(a, b);
    }
  }
  throw DomainError("cannot parse line id '" + std::string(text) + "' (expected i-j)");
}

std::string LineId::label() const { return std::to_string(i) + "-" + std::to_string(j); }

bool PowerCase::has_edge(LineId l) const {
  return std::find(edges.begin(), edges.end(), l) != edges.end();
}

namespace {

bool same(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

bool same(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

}  // namespace

bool operator==(const PowerCase& a, const PowerCase& b) {
  return a.n == b.n && a.edges == b.edges && same(a.G, b.G) && same(a.B, b.B) && same(a.h, b.h) &&
         same(a.d, b.d) && same(a.p_m, b.p_m) && a.omega_R == b.omega_R && a.ratings == b.ratings;
}

bool operator==(const EquilibriumPoint& a, const EquilibriumPoint& b) {
  return same(a.v_star, b.v_star) && same(a.delta_star, b.delta_star);
}

namespace {

using Kind = CaseParseError::Kind;

constexpr double kSymmetryTol = 1e-12;

// One tokenized, comment-stripped line of a bundle file.
struct Record {
  std::string file;
  int line_no = 0;
  std::vector<std::string> tokens;

  [[nodiscard]] std::string where() const { return file + ":" + std::to_string(line_no); }
};

[[noreturn]] void fail(Kind kind, const std::string& msg) { throw CaseParseError(kind, msg); }

std::vector<Record> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Kind::missing_file, "cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    Record rec{path.filename().string(), no, {}};
    for (std::string tok; ss >> tok;) rec.tokens.push_back(std::move(tok));
    if (!rec.tokens.empty()) out.push_back(std::move(rec));
  }
  return out;
}

double parse_double(const Record& rec, std::size_t idx) {
  const std::string& tok = rec.tokens.at(idx);
  double value = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    fail(Kind::syntax, rec.where() + ": expected a number, got '" + tok + "'");
  }
  if (!std::isfinite(value)) fail(Kind::invalid_value, rec.where() + ": non-finite value");
  return value;
}

int parse_int(const Record& rec, std::size_t idx) {
  const std::string& tok = rec.tokens.at(idx);
  int value = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    fail(Kind::syntax, rec.where() + ": expected an integer, got '" + tok + "'");
  }
  return value;
}

void expect_arity(const Record& rec, std::size_t n) {
  if (rec.tokens.size() != n) {
    fail(rec.tokens.size() > n ? Kind::syntax : Kind::dimension_mismatch,
         rec.where() + ": '" + rec.tokens[0] + "' expects " + std::to_string(n - 1) +
             " fields, found " + std::to_string(rec.tokens.size() - 1));
  }
}

int parse_bus(const Record& rec, std::size_t idx, int n) {
  const int bus = parse_int(rec, idx);
  if (bus < 1 || bus > n) {
    fail(Kind::dimension_mismatch,
         rec.where() + ": bus " + std::to_string(bus) + " outside 1.." + std::to_string(n));
  }
  return bus;
}

LineId parse_line(const Record& rec, std::size_t idx, int n) {
  const int a = parse_bus(rec, idx, n);
  const int b = parse_bus(rec, idx + 1, n);
  if (a == b) fail(Kind::invalid_value, rec.where() + ": self-loop " + std::to_string(a));
  return LineId::canonical(a, b);
}

void parse_network(const std::filesystem::path& path, PowerCase& pc) {
  const auto records = read_records(path);
  if (records.empty() || records.front().tokens[0] != "n") {
    fail(Kind::syntax, path.filename().string() + ": first directive must be 'n <count>'");
  }
  expect_arity(records.front(), 2);
  pc.n = parse_int(records.front(), 1);
  if (pc.n < 2) fail(Kind::invalid_value, "network: n must be at least 2");
  const int n = pc.n;
  pc.G = Eigen::MatrixXd::Zero(n, n);
  pc.B = Eigen::MatrixXd::Zero(n, n);
  std::vector<bool> g_seen(n, false);
  std::vector<bool> b_seen(n, false);
  struct EdgeEntry {
    LineId line;
    double g;
    double b;
    std::string where;
  };
  std::vector<EdgeEntry> listed;

  for (std::size_t r = 1; r < records.size(); ++r) {
    const Record& rec = records[r];
    const std::string& key = rec.tokens[0];
    if (key == "edge") {
      expect_arity(rec, 5);
      const LineId l = parse_line(rec, 1, n);
      for (const auto& e : listed) {
        if (e.line == l) fail(Kind::duplicate_entry, rec.where() + ": edge " + l.label() + " repeated");
      }
      listed.push_back({l, parse_double(rec, 3), parse_double(rec, 4), rec.where()});
    } else if (key == "G" || key == "B") {
      expect_arity(rec, static_cast<std::size_t>(n) + 2);
      const int row = parse_bus(rec, 1, n) - 1;
      auto& seen = key == "G" ? g_seen : b_seen;
      if (seen[row]) fail(Kind::duplicate_entry, rec.where() + ": row " + key + " " + std::to_string(row + 1) + " repeated");
      seen[row] = true;
      Eigen::MatrixXd& M = key == "G" ? pc.G : pc.B;
      for (int c = 0; c < n; ++c) M(row, c) = parse_double(rec, static_cast<std::size_t>(c) + 2);
    } else if (key == "n") {
      fail(Kind::duplicate_entry, rec.where() + ": 'n' given twice");
    } else {
      fail(Kind::unknown_key, rec.where() + ": unknown key '" + key + "'");
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!g_seen[i] || !b_seen[i]) {
      fail(Kind::dimension_mismatch, "network: matrix row " + std::to_string(i + 1) + " missing");
    }
  }
  std::sort(listed.begin(), listed.end(), [](const auto& a, const auto& b) { return a.line < b.line; });
  for (const auto& e : listed) {
    const int i = e.line.i - 1;
    const int j = e.line.j - 1;
    if (e.g != pc.G(i, j) || e.b != pc.B(i, j)) {
      fail(Kind::inconsistent_edge, e.where + ": edge " + e.line.label() + " disagrees with G/B rows");
    }
    pc.edges.push_back(e.line);
  }
}

void parse_machines(const std::filesystem::path& path, PowerCase& pc) {
  const int n = pc.n;
  pc.h = Eigen::VectorXd::Zero(n);
  pc.d = Eigen::VectorXd::Zero(n);
  pc.p_m = Eigen::VectorXd::Zero(n);
  std::vector<bool> seen(n, false);
  std::optional<double> omega_r;
  for (const Record& rec : read_records(path)) {
    const std::string& key = rec.tokens[0];
    if (key == "omega_R") {
      expect_arity(rec, 2);
      if (omega_r) fail(Kind::duplicate_entry, rec.where() + ": omega_R repeated");
      omega_r = parse_double(rec, 1);
    } else if (key == "machine") {
      expect_arity(rec, 5);
      const int bus = parse_bus(rec, 1, n) - 1;
      if (seen[bus]) fail(Kind::duplicate_entry, rec.where() + ": machine " + std::to_string(bus + 1) + " repeated");
      seen[bus] = true;
      pc.h[bus] = parse_double(rec, 2);
      pc.d[bus] = parse_double(rec, 3);
      pc.p_m[bus] = parse_double(rec, 4);
    } else {
      fail(Kind::unknown_key, rec.where() + ": unknown key '" + key + "'");
    }
  }
  if (!omega_r) fail(Kind::syntax, "machines: omega_R missing");
  pc.omega_R = *omega_r;
  for (int i = 0; i < n; ++i) {
    if (!seen[i]) fail(Kind::dimension_mismatch, "machines: bus " + std::to_string(i + 1) + " missing");
  }
}

void parse_equilibrium(const std::filesystem::path& path, int n, EquilibriumPoint& eq) {
  eq.v_star = Eigen::VectorXd::Zero(n);
  eq.delta_star = Eigen::VectorXd::Zero(n);
  std::vector<bool> seen(n, false);
  for (const Record& rec : read_records(path)) {
    if (rec.tokens[0] != "bus") fail(Kind::unknown_key, rec.where() + ": unknown key '" + rec.tokens[0] + "'");
    expect_arity(rec, 4);
    const int bus = parse_bus(rec, 1, n) - 1;
    if (seen[bus]) fail(Kind::duplicate_entry, rec.where() + ": bus " + std::to_string(bus + 1) + " repeated");
    seen[bus] = true;
    eq.v_star[bus] = parse_double(rec, 2);
    eq.delta_star[bus] = parse_double(rec, 3);
  }
  for (int i = 0; i < n; ++i) {
    if (!seen[i]) fail(Kind::dimension_mismatch, "equilibrium: bus " + std::to_string(i + 1) + " missing");
  }
}

void parse_ratings(const std::filesystem::path& path, PowerCase& pc) {
  for (const Record& rec : read_records(path)) {
    if (rec.tokens[0] != "rating") fail(Kind::unknown_key, rec.where() + ": unknown key '" + rec.tokens[0] + "'");
    expect_arity(rec, 4);
    const LineId l = parse_line(rec, 1, pc.n);
    const double u_max = parse_double(rec, 3);
    if (u_max <= 0.0) fail(Kind::nonpositive_rating, rec.where() + ": rating of " + l.label() + " must be > 0");
    if (!pc.ratings.emplace(l, u_max).second) fail(Kind::duplicate_entry, rec.where() + ": rating " + l.label() + " repeated");
  }
}

}  // namespace

void validate(const PowerCase& pc, const EquilibriumPoint& eq) {
  const int n = pc.n;
  if (pc.G.rows() != n || pc.G.cols() != n || pc.B.rows() != n || pc.B.cols() != n || pc.h.size() != n ||
      pc.d.size() != n || pc.p_m.size() != n || eq.v_star.size() != n || eq.delta_star.size() != n) {
    fail(Kind::dimension_mismatch, "array sizes disagree with n = " + std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(pc.G(i, i)) || !std::isfinite(pc.B(i, i))) {
      fail(Kind::invalid_value, "non-finite diagonal admittance at bus " + std::to_string(i + 1));
    }
    for (int j = i + 1; j < n; ++j) {
      if (std::abs(pc.G(i, j) - pc.G(j, i)) > kSymmetryTol) {
        fail(Kind::asymmetric_matrix, "G not symmetric at (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
      }
      if (std::abs(pc.B(i, j) - pc.B(j, i)) > kSymmetryTol) {
        fail(Kind::asymmetric_matrix, "B not symmetric at (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
      }
      const bool coupled = pc.G(i, j) != 0.0 || pc.B(i, j) != 0.0;
      if (coupled != pc.has_edge(LineId{i + 1, j + 1})) {
        fail(Kind::inconsistent_edge, "off-diagonal coupling (" + std::to_string(i + 1) + "," +
                                          std::to_string(j + 1) + ") does not match the edge list");
      }
    }
    if (!(pc.h[i] > 0.0)) fail(Kind::invalid_value, "inertia h must be > 0 at bus " + std::to_string(i + 1));
    if (!(pc.d[i] >= 0.0)) fail(Kind::invalid_value, "damping d must be >= 0 at bus " + std::to_string(i + 1));
    if (!(eq.v_star[i] > 0.0)) fail(Kind::invalid_value, "v* must be > 0 at bus " + std::to_string(i + 1));
  }
  for (const LineId& l : pc.edges) {
    if (l.i < 1 || l.j > n || l.i >= l.j) fail(Kind::invalid_value, "edge " + l.label() + " not canonical");
    if (pc.B(l.i - 1, l.j - 1) == 0.0) fail(Kind::inconsistent_edge, "edge " + l.label() + " has b_ij = 0");
  }
  for (const auto& [l, u_max] : pc.ratings) {
    if (!(u_max > 0.0)) fail(Kind::nonpositive_rating, "rating of " + l.label() + " must be > 0");
    if (!pc.has_edge(l)) fail(Kind::inconsistent_edge, "rating given for non-edge " + l.label());
  }
}

CaseBundle parse_case_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(Kind::missing_file, "case bundle directory not found: " + dir.string());
  CaseBundle bundle;
  parse_network(dir / "network", bundle.power_case);
  parse_machines(dir / "machines", bundle.power_case);
  parse_equilibrium(dir / "equilibrium", bundle.power_case.n, bundle.equilibrium);
  parse_ratings(dir / "ratings", bundle.power_case);
  validate(bundle.power_case, bundle.equilibrium);
  return bundle;
}

void write_case_bundle(const CaseBundle& bundle, const std::filesystem::path& dir) {
  const PowerCase& pc = bundle.power_case;
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw Error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("network");
    out << "n " << pc.n << '\n';
    for (const LineId& l : pc.edges) {
      out << "edge " << l.i << ' ' << l.j << ' ' << format_double(pc.G(l.i - 1, l.j - 1)) << ' '
          << format_double(pc.B(l.i - 1, l.j - 1)) << '\n';
    }
    for (const auto* name : {"G", "B"}) {
      const Eigen::MatrixXd& M = name[0] == 'G' ? pc.G : pc.B;
      for (int i = 0; i < pc.n; ++i) {
        out << name << ' ' << i + 1;
        for (int j = 0; j < pc.n; ++j) out << ' ' << format_double(M(i, j));
        out << '\n';
      }
    }
  }
  {
    auto out = open("machines");
    out << "omega_R " << format_double(pc.omega_R) << '\n';
    for (int i = 0; i < pc.n; ++i) {
      out << "machine " << i + 1 << ' ' << format_double(pc.h[i]) << ' ' << format_double(pc.d[i]) << ' '
          << format_double(pc.p_m[i]) << '\n';
    }
  }
  {
    auto out = open("equilibrium");
    for (int i = 0; i < pc.n; ++i) {
      out << "bus " << i + 1 << ' ' << format_double(bundle.equilibrium.v_star[i]) << ' '
          << format_double(bundle.equilibrium.delta_star[i]) << '\n';
    }
  }
  {
    auto out = open("ratings");
    for (const auto& [l, u_max] : pc.ratings) out << "rating " << l.i << ' ' << l.j << ' ' << format_double(u_max) << '\n';
  }
}

bool is_connected(int n, const std::vector<LineId>& edges) {
  if (n <= 1) return true;
  std::vector<std::vector<int>> adj(n);
  for (const LineId& l : edges) {
    adj[l.i - 1].push_back(l.j - 1);
    adj[l.j - 1].push_back(l.i - 1);
  }
  std::vector<bool> seen(n, false);
  std::queue<int> todo;
  todo.push(0);
  seen[0] = true;
  int reached = 1;
  while (!todo.empty()) {
    const int u = todo.front();
    todo.pop();
    for (int w : adj[u]) {
      if (!seen[w]) {
        seen[w] = true;
        ++reached;
        todo.push(w);
      }
    }
  }
  return reached == n;
}

PowerCase remove_line(const PowerCase& pc, LineId l) {
  if (!pc.has_edge(l)) {
    throw TopologyError(TopologyError::Kind::no_such_line, "line " + l.label() + " is not in service");
  }
  PowerCase out = pc;
  out.edges.erase(std::find(out.edges.begin(), out.edges.end(), l));
  if (!is_connected(out.n, out.edges)) {
    throw TopologyError(TopologyError::Kind::islanding, "removing line " + l.label() + " islands the network");
  }
  const int i = l.i - 1;
  const int j = l.j - 1;
  out.G(i, j) = out.G(j, i) = 0.0;
  out.B(i, j) = out.B(j, i) = 0.0;
  out.ratings.erase(l);
  return out;
}

double line_rating(const PowerCase& pc, LineId l) {
  const auto it = pc.ratings.find(l);
  if (it == pc.ratings.end()) {
    throw TopologyError(TopologyError::Kind::missing_rating, "no rating for line " + l.label());
  }
  return it->second;
}

}  // namespace ropdf
