#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "odil/error.hpp"
#include "odil/problem.hpp"

using namespace odil;

namespace {

Grid point() { return Grid({1}, {0.0}, {1.0}, Centering::cell); }

// Small nonlinear two-field problem with a parameter, used by the
// algebraic identity checks.
Problem nonlinear_problem() {
  const Grid g({6, 5}, {0.0, 0.0}, {1.0, 1.0}, Centering::node);
  Problem p;
  p.add_unknown("u", g);
  p.add_unknown("v", g);
  p.add_param("k", 0.4);
  Field c(g);
  for (std::int64_t i = 0; i < g.size(); ++i) c[i] = std::sin(0.3 * i);
  p.set_known("c", c);
  const auto u = unknown_field("u");
  const auto v = unknown_field("v");
  p.add_block("pde", u(1, 0) * v(0, 0) - sin(u(0, -1)) + param("k") * v(0, 1) - known_field("c")(),
              IndexSet::interior(g));
  p.add_block("bc", u() * u() - 0.5 * v(), IndexSet::boundary_face(g, 0, 0), 2.0);
  p.add_block("reg", exp(0.2 * v()) - param("k") * param("k"), IndexSet::boundary_face(g, 1, 1), 0.5);
  return p;
}

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> x(n);
  for (auto& e : x) e = d(rng);
  return x;
}

}  // namespace

TEST_CASE("loss and gradient examples") {
  Problem p;
  p.add_unknown("u", point(), 1.0);
  p.set_known("g", Field(point(), 3.0));
  p.add_block("bc", unknown_field("u")() - known_field("g")(), IndexSet::interior(point(), 0));
  CHECK(p.loss(p.initial_vector()) == doctest::Approx(4.0));

  Problem q;
  q.add_unknown("u", point(), 3.0);
  q.add_block("sq", unknown_field("u")() * unknown_field("u")(), IndexSet::interior(point(), 0));
  CHECK(q.gradient(q.initial_vector()).at(0) == doctest::Approx(108.0));
}

TEST_CASE("linear block gives identity normal matrix") {
  const Grid g({4}, {0.0}, {1.0}, Centering::node);
  Problem p;
  p.add_unknown("u", g);
  Field gv(g, std::vector<double>{1.0, -2.0, 0.5, 4.0});
  p.set_known("g", gv);
  p.add_block("bc", unknown_field("u")() - known_field("g")(), IndexSet::interior(g, 0));
  const std::vector<double> x{0.25, 0.0, 1.0, -1.0};
  for (double lam : {0.0, 0.3}) {
    const auto sys = p.normal_system(x, lam);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) CHECK(sys.a.coeff(i, j) == doctest::Approx(i == j ? 1.0 + lam : 0.0));
      CHECK(sys.b[i] == doctest::Approx(gv[i] - x[i]));
    }
  }
  CHECK(p.loss(p.pack({{"u", gv}})) == 0.0);
  CHECK(norm(Field(g, p.gradient(p.pack({{"u", gv}}))), NormKind::Linf) < 1e-10);
}

TEST_CASE("normal system right-hand side is minus half the gradient") {
  const Problem p = nonlinear_problem();
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const auto x = random_vector(p.total_dofs(), seed);
    const auto g = p.gradient(x);
    const auto sys = p.normal_system(x, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(sys.b[i] == doctest::Approx(-0.5 * g[i]).epsilon(1e-13).scale(1e-12));
  }
}

TEST_CASE("normal matrix is exactly symmetric and positive semidefinite") {
  const Problem p = nonlinear_problem();
  const auto x = random_vector(p.total_dofs(), 9);
  const auto a = p.normal_system(x, 0.0).a;
  const auto at = a.transpose();
  CHECK(a.row_ptr() == at.row_ptr());
  CHECK(a.col_idx() == at.col_idx());
  CHECK(a.vals() == at.vals());
  for (unsigned seed = 20; seed < 30; ++seed) {
    const auto z = random_vector(p.total_dofs(), seed);
    const auto az = a.matvec(z);
    double q = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) q += z[i] * az[i];
    CHECK(q >= 0.0);
  }
}

TEST_CASE("gradient matches central finite differences") {
  const Problem p = nonlinear_problem();
  const auto x = random_vector(p.total_dofs(), 3);
  const auto g = p.gradient(x);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xp = x, xm = x;
    xp[i] += 1e-6;
    xm[i] -= 1e-6;
    const double fd = (p.loss(xp) - p.loss(xm)) / 2e-6;
    worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("a zero-weight block changes nothing") {
  const Problem p = nonlinear_problem();
  Problem q = nonlinear_problem();
  const Grid& g = q.unknown_grid("u");
  q.add_block("extra", exp(unknown_field("u")()) * 7.0, IndexSet::interior(g, 0), 0.0);
  const auto x = random_vector(p.total_dofs(), 4);
  CHECK(p.loss(x) == q.loss(x));
  CHECK(p.gradient(x) == q.gradient(x));
  const auto a = p.normal_system(x, 0.1), b = q.normal_system(x, 0.1);
  CHECK(a.a.vals() == b.a.vals());
  CHECK(a.a.col_idx() == b.a.col_idx());
  CHECK(a.b == b.b);
}

TEST_CASE("loss and Newton steps are invariant under layout permutation") {
  Problem p = nonlinear_problem();
  Problem q = nonlinear_problem();
  q.set_layout({"v", "u"});
  CHECK(q.field_offset("v") == 0);
  const auto x = random_vector(p.total_dofs(), 6);
  const auto fields = p.fields(x);
  const auto params = p.params(x);
  const auto y = q.pack(fields, params);
  CHECK(p.loss(x) == doctest::Approx(q.loss(y)).epsilon(1e-14));

  const auto sp = p.normal_system(x, 1e-3), sq = q.normal_system(y, 1e-3);
  const auto dp = solve_direct(sp.a, sp.b), dq = solve_direct(sq.a, sq.b);
  for (const auto& name : {"u", "v"}) {
    const auto fp = p.field(dp, name), fq = q.field(dq, name);
    for (std::size_t i = 0; i < fp.values.size(); ++i)
      CHECK(fp.values[i] == doctest::Approx(fq.values[i]).epsilon(1e-9).scale(1e-9));
  }
  CHECK(dp.back() == doctest::Approx(dq.back()).epsilon(1e-9));
  CHECK_THROWS_AS(q.set_layout({"u"}), Error);
}

TEST_CASE("non-finite residuals name the block and index") {
  const Grid g({3, 3}, {0.0, 0.0}, {1.0, 1.0}, Centering::node);
  Problem p;
  p.add_unknown("u", g, 1.0);
  p.add_block("root", sqrt(unknown_field("u")()), IndexSet::interior(g, 0));
  auto x = p.initial_vector();
  CHECK(p.loss(x) == doctest::Approx(9.0));
  x[g.flat_index({2, 1, 0})] = -1.0;
  try {
    p.loss(x);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'root'") != std::string::npos);
    CHECK(msg.find("(2, 1)") != std::string::npos);
  }
}

TEST_CASE("undeclared names and bad vectors are rejected") {
  Problem p;
  p.add_unknown("u", point());
  CHECK_THROWS_AS(p.add_block("b", unknown_field("w")(), IndexSet::interior(point(), 0)), Error);
  CHECK_THROWS_AS(p.add_block("b", param("k") * unknown_field("u")(), IndexSet::interior(point(), 0)), Error);
  CHECK_THROWS_AS(p.add_unknown("u", point()), Error);
  p.add_block("b", unknown_field("u")(), IndexSet::interior(point(), 0));
  CHECK_THROWS_AS(p.add_block("b", unknown_field("u")(), IndexSet::interior(point(), 0)), Error);
  CHECK_THROWS_AS(p.loss(std::vector<double>{1.0, 2.0}), Error);
}

TEST_CASE("reference error is relative L2 over the listed fields") {
  const Grid g({2}, {0.0}, {1.0}, Centering::node);
  Problem p;
  p.add_unknown("u", g);
  p.add_block("b", unknown_field("u")(), IndexSet::interior(g, 0));
  CHECK_FALSE(p.has_error_metric());
  p.set_reference({{"u", Field(g, std::vector<double>{3.0, 4.0})}});
  CHECK(p.error(std::vector<double>{3.0, 4.0}) == 0.0);
  CHECK(p.error(std::vector<double>{0.0, 0.0}) == doctest::Approx(1.0));
  CHECK(p.error(std::vector<double>{3.0, 4.5}) == doctest::Approx(0.1));
}
