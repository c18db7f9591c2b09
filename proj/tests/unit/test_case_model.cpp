#include <doctest.h>

#include <set>
#include <vector>

#include "ropdf/case_model.hpp"
#include "ropdf/error.hpp"
#include "test_support.hpp"

using namespace ropdf;
using ropdf::testing::TempDir;
using ropdf::testing::ToyFiles;
using Kind = CaseParseError::Kind;

namespace {

Kind parse_error_kind(const std::filesystem::path& dir) {
  try {
    parse_case_bundle(dir);
  } catch (const CaseParseError& e) {
    return e.kind();
  }
  FAIL("expected a CaseParseError");
  return Kind::syntax;
}

Kind toy_error(const ToyFiles& files) {
  TempDir dir;
  files.write(dir.path());
  return parse_error_kind(dir.path());
}

// Independent connectivity oracle: BFS over a dense adjacency matrix.
bool bfs_connected(int n, const std::vector<LineId>& edges) {
  std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
  for (auto e : edges) adj[e.i - 1][e.j - 1] = adj[e.j - 1][e.i - 1] = 1;
  std::vector<char> seen(n, 0);
  std::vector<int> frontier{0};
  seen[0] = 1;
  for (std::size_t k = 0; k < frontier.size(); ++k) {
    for (int j = 0; j < n; ++j) {
      if (adj[frontier[k]][j] && !seen[j]) {
        seen[j] = 1;
        frontier.push_back(j);
      }
    }
  }
  return static_cast<int>(frontier.size()) == n;
}

}  // namespace

TEST_CASE("line ids are canonical and parse from text") {
  CHECK(LineId::canonical(9, 4) == LineId{4, 9});
  CHECK(LineId::parse("7-8") == LineId{7, 8});
  CHECK(LineId::parse("9,4") == LineId{4, 9});
  CHECK(LineId{35, 36}.label() == "35-36");
  CHECK_THROWS_AS(LineId::parse("4-"), DomainError);
  CHECK_THROWS_AS(LineId::parse("4-4"), DomainError);
  CHECK_THROWS_AS(LineId::parse("x"), DomainError);
}

TEST_CASE("two-bus toy bundle parses") {
  TempDir dir;
  ToyFiles{}.write(dir.path());
  const auto bundle = parse_case_bundle(dir.path());
  const auto& pc = bundle.power_case;
  CHECK(pc.n == 2);
  REQUIRE(pc.edges.size() == 1);
  CHECK(pc.edges[0] == LineId{1, 2});
  CHECK(pc.B(0, 1) == -5.0);
  CHECK(pc.B(1, 0) == pc.B(0, 1));
  CHECK(line_rating(pc, {1, 2}) == 1.0);
  CHECK(bundle.equilibrium.v_star.size() == 2);
}

TEST_CASE("shipped case9 bundle") {
  const auto pc = parse_case_bundle(ropdf::testing::case_dir("case9")).power_case;
  CHECK(pc.n == 9);
  CHECK(pc.edges.size() == 9);
  CHECK(line_rating(pc, {4, 9}) == 1.0);
  CHECK(line_rating(pc, {7, 8}) == 1.0);
}

TEST_CASE("ratings of the monitored lines") {
  const auto c30 = parse_case_bundle(ropdf::testing::case_dir("case30")).power_case;
  CHECK(line_rating(c30, {6, 7}) == 1.3);
  CHECK(line_rating(c30, {6, 9}) == 0.65);
  const auto c57 = parse_case_bundle(ropdf::testing::case_dir("case57")).power_case;
  CHECK(line_rating(c57, {35, 36}) == 16.33);
  CHECK(line_rating(c57, {36, 40}) == 20.27);
}

TEST_CASE("missing rating is reported") {
  TempDir dir;
  ropdf::testing::chain3().write(dir.path());
  const auto pc = parse_case_bundle(dir.path()).power_case;
  try {
    line_rating(pc, {2, 3});
    FAIL("expected missing rating");
  } catch (const TopologyError& e) {
    CHECK(e.kind() == TopologyError::Kind::missing_rating);
  }
}

TEST_CASE("parse errors carry distinct kinds") {
  SUBCASE("asymmetric G") {
    ToyFiles t;
    t.network = "n 2\nedge 1 2 0.5 -5\nG 1 0 0.5\nG 2 0.25 0\nB 1 5 -5\nB 2 -5 5\n";
    CHECK(toy_error(t) == Kind::asymmetric_matrix);
  }
  SUBCASE("missing file") {
    TempDir dir;
    ToyFiles{}.write(dir.path());
    std::filesystem::remove(dir / "ratings");
    CHECK(parse_error_kind(dir.path()) == Kind::missing_file);
  }
  SUBCASE("dimension mismatch") {
    ToyFiles t;
    t.network = "n 3\nedge 1 2 0 -5\nG 1 0 0\nG 2 0 0\nB 1 5 -5\nB 2 -5 5\n";
    CHECK(toy_error(t) == Kind::dimension_mismatch);
  }
  SUBCASE("nonpositive rating") {
    ToyFiles t;
    t.ratings = "rating 1 2 0\n";
    CHECK(toy_error(t) == Kind::nonpositive_rating);
  }
  SUBCASE("unknown key") {
    ToyFiles t;
    t.machines += "inertia 1 2\n";
    CHECK(toy_error(t) == Kind::unknown_key);
  }
  SUBCASE("trailing garbage") {
    ToyFiles t;
    t.ratings = "rating 1 2 1.0 extra\n";
    CHECK(toy_error(t) == Kind::syntax);
    t.ratings = "rating 1 2 1.0x\n";
    CHECK(toy_error(t) == Kind::syntax);
  }
  SUBCASE("edge list disagrees with matrices") {
    ToyFiles t;
    t.network = "n 2\nedge 1 2 0 -4\nG 1 0 0\nG 2 0 0\nB 1 5 -5\nB 2 -5 5\n";
    CHECK(toy_error(t) == Kind::inconsistent_edge);
  }
  SUBCASE("comments are allowed") {
    ToyFiles t;
    t.ratings = "# header\nrating 1 2 1.0  # trailing comment\n";
    TempDir dir;
    t.write(dir.path());
    CHECK_NOTHROW(parse_case_bundle(dir.path()));
  }
}

TEST_CASE("parse, write, parse round trip is exact") {
  for (const char* name : {"case9", "case30", "case57"}) {
    CAPTURE(name);
    const auto a = parse_case_bundle(ropdf::testing::case_dir(name));
    TempDir dir;
    write_case_bundle(a, dir.path());
    const auto b = parse_case_bundle(dir.path());
    CHECK(a.power_case == b.power_case);
    CHECK(a.equilibrium == b.equilibrium);
  }
}

TEST_CASE("remove_line on case9") {
  const auto pc = parse_case_bundle(ropdf::testing::case_dir("case9")).power_case;
  const auto post = remove_line(pc, LineId::canonical(9, 8));
  CHECK(post.B(7, 8) == 0.0);
  CHECK(post.B(8, 7) == 0.0);
  CHECK(post.G(7, 8) == 0.0);
  CHECK(post.edges.size() == 8);
  CHECK_FALSE(post.has_edge({8, 9}));
  CHECK(post.B == post.B.transpose());
  CHECK(post.G == post.G.transpose());
  CHECK(post.B.diagonal() == pc.B.diagonal());
  CHECK(post.G.diagonal() == pc.G.diagonal());
  // exactly the four off-diagonal entries changed (G_89 is nonzero in this case)
  const int changed = static_cast<int>((post.G.array() != pc.G.array()).count() + (post.B.array() != pc.B.array()).count());
  CHECK(changed == 4);
  CHECK_FALSE(post.ratings.contains({8, 9}));

  try {
    remove_line(post, {8, 9});
    FAIL("second removal must fail");
  } catch (const TopologyError& e) {
    CHECK(e.kind() == TopologyError::Kind::no_such_line);
  }
}

TEST_CASE("removal that islands a bus is rejected") {
  TempDir dir;
  ToyFiles{}.write(dir.path());
  const auto pc = parse_case_bundle(dir.path()).power_case;
  try {
    remove_line(pc, {1, 2});
    FAIL("expected islanding error");
  } catch (const TopologyError& e) {
    CHECK(e.kind() == TopologyError::Kind::islanding);
  }
}

TEST_CASE("connectivity agrees with a BFS oracle on every single-line removal") {
  for (const char* name : {"case9", "case30", "case57"}) {
    const auto pc = parse_case_bundle(ropdf::testing::case_dir(name)).power_case;
    CHECK(is_connected(pc.n, pc.edges) == bfs_connected(pc.n, pc.edges));
    int islanding = 0;
    for (std::size_t k = 0; k < pc.edges.size(); ++k) {
      auto rest = pc.edges;
      rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(k));
      const bool oracle = bfs_connected(pc.n, rest);
      CHECK(is_connected(pc.n, rest) == oracle);
      if (!oracle) {
        ++islanding;
        CHECK_THROWS_AS(remove_line(pc, pc.edges[k]), TopologyError);
      }
    }
    MESSAGE(name << ": " << islanding << " islanding lines");
  }
}
