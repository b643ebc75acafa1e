#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "odil/error.hpp"
#include "odil/parallel.hpp"
#include "odil/stencil.hpp"

using namespace odil;

namespace {

// Space-time grid, axis 0 = t, axis 1 = x.
Grid xt_grid(int nt, int nx) {
  return Grid({nt, nx}, {0.0, -1.0}, {1.0, 1.0}, Centering::node);
}

Expr wave_stencil(double dt, double dx) {
  const auto u = unknown_field("u");
  return (u(1, 0) - 2.0 * u(0, 0) + u(-1, 0)) / (dt * dt) -
         (u(0, 1) - 2.0 * u(0, 0) + u(0, -1)) / (dx * dx);
}

Grid point_grid() { return Grid({1}, {0.0}, {1.0}, Centering::cell); }

}  // namespace

TEST_CASE("wave stencil residuals") {
  const Grid g = xt_grid(7, 9);
  const double dt = g.spacing(0), dx = g.spacing(1);
  const ResidualBlock block("wave", wave_stencil(dt, dx), IndexSet::interior(g), {{"u", g}});
  CHECK(block.rows() == 5 * 7);

  const auto flat = eval_residuals(block, {{"u", Field(g, 1.7)}});
  for (double r : flat) CHECK(r == doctest::Approx(0.0).scale(1.0));

  const Field quad = eval_on_grid(g, [](std::span<const double> p) { return p[1] * p[1]; });
  for (double r : eval_residuals(block, {{"u", quad}})) CHECK(r == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("boundary block u - g vanishes when satisfied") {
  const Grid g = xt_grid(4, 4);
  Field gvals(g, 0.0);
  for (std::size_t k = 0; k < gvals.values.size(); ++k) gvals.values[k] = 0.1 * k;
  const ResidualBlock block("bc", unknown_field("u")() - known_field("g")(),
                            IndexSet::boundary_face(g, 1, 0), {{"u", g}, {"g", g}});
  for (double r : eval_residuals(block, {{"u", gvals}, {"g", gvals}})) CHECK(r == 0.0);
}

TEST_CASE("wave stencil Jacobian row") {
  const Grid g = xt_grid(5, 5);
  const double dt = g.spacing(0), dx = g.spacing(1);
  const ResidualBlock block("wave", wave_stencil(dt, dx),
                            IndexSet::explicit_list(g, {{2, 2, 0}}), {{"u", g}});
  const auto t = eval_jacobian(block, {{"u", Field(g, 0.3)}});
  REQUIRE(t.vals.size() == 5);
  std::map<std::int64_t, double> row;
  for (std::size_t k = 0; k < t.vals.size(); ++k) row[t.cols[k]] = t.vals[k];
  CHECK(row[g.flat_index({3, 2, 0})] == doctest::Approx(1 / (dt * dt)));
  CHECK(row[g.flat_index({1, 2, 0})] == doctest::Approx(1 / (dt * dt)));
  CHECK(row[g.flat_index({2, 3, 0})] == doctest::Approx(-1 / (dx * dx)));
  CHECK(row[g.flat_index({2, 1, 0})] == doctest::Approx(-1 / (dx * dx)));
  CHECK(row[g.flat_index({2, 2, 0})] == doctest::Approx(-2 / (dt * dt) + 2 / (dx * dx)));
}

TEST_CASE("scalar Jacobian and parameter gradient examples") {
  const Grid g = point_grid();
  const GridMap grids{{"u", g}};
  const auto u = unknown_field("u");
  const IndexSet one = IndexSet::interior(g, 0);

  const ResidualBlock sq("sq", u() * u(), one, grids);
  CHECK(eval_jacobian(sq, {{"u", Field(g, 3.0)}}).vals.at(0) == doctest::Approx(6.0));

  const ResidualBlock lin("lin", param("a") * u(), one, grids);
  for (double uv : {-4.0, 0.0, 9.0})
    CHECK(eval_jacobian(lin, {{"u", Field(g, uv)}}, {{"a", 2.0}}).vals.at(0) == doctest::Approx(2.0));
  CHECK(eval_param_gradient(lin, {{"u", Field(g, 5.0)}}, {{"a", 2.0}}, "a").at(0) == doctest::Approx(5.0));

  const ResidualBlock indep("indep", u() + 1.0, one, grids);
  CHECK(eval_param_gradient(indep, {{"u", Field(g, 5.0)}}, {{"a", 2.0}}, "a").at(0) == 0.0);

  const ResidualBlock a2("a2", param("a") * param("a") + 0.0 * u(), one, grids);
  CHECK(eval_param_gradient(a2, {{"u", Field(g, 1.0)}}, {{"a", 3.0}}, "a").at(0) == doctest::Approx(6.0));

  CHECK_THROWS_AS(eval_param_gradient(lin, {{"u", Field(g, 5.0)}}, {{"a", 2.0}}, "b"), Error);
}

TEST_CASE("weights scale residuals and derivatives") {
  const Grid g = point_grid();
  const ResidualBlock b("w", unknown_field("u")() * 3.0, IndexSet::interior(g, 0), {{"u", g}}, 0.5);
  CHECK(eval_residuals(b, {{"u", Field(g, 2.0)}}).at(0) == doctest::Approx(3.0));
  CHECK(eval_jacobian(b, {{"u", Field(g, 2.0)}}).vals.at(0) == doctest::Approx(1.5));
  CHECK_THROWS_AS(ResidualBlock("neg", unknown_field("u")(), IndexSet::interior(g, 0), {{"u", g}}, -1.0),
                  Error);
}

TEST_CASE("unbound names are reported") {
  const Grid g = point_grid();
  const ResidualBlock b("b", param("k") * unknown_field("u")(), IndexSet::interior(g, 0), {{"u", g}});
  try {
    eval_residuals(b, {{"u", Field(g, 1.0)}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'k'") != std::string::npos);
  }
  CHECK_THROWS_AS(eval_residuals(b, {}, {{"k", 1.0}}), Error);
  CHECK_THROWS_AS(ResidualBlock("c", unknown_field("v")(), IndexSet::interior(g, 0), {{"u", g}}), Error);
}

TEST_CASE("out-of-grid stencils are rejected or clipped") {
  const Grid g = xt_grid(5, 5);
  const Expr e = unknown_field("u")(0, 1) - unknown_field("u")(0, -1);
  CHECK_THROWS_AS(ResidualBlock("x", e, IndexSet::box(g, {0, 0, 0}, {4, 4, 0}), {{"u", g}}), Error);
  const ResidualBlock clipped("x", e, IndexSet::box(g, {0, 0, 0}, {4, 4, 0}), {{"u", g}}, 1.0, true);
  CHECK(clipped.rows() == 5 * 3);
}

TEST_CASE("one-sided derivatives at kinks come from the positive side") {
  const Grid g = point_grid();
  const GridMap grids{{"u", g}, {"w", g}};
  const auto u = unknown_field("u");
  const auto w = unknown_field("w");
  const IndexSet one = IndexSet::interior(g, 0);
  const FieldMap at_zero{{"u", Field(g, 0.0)}, {"w", Field(g, 2.0)}};

  const auto abs_j = eval_jacobian(ResidualBlock("abs", abs(u()), one, grids), at_zero);
  CHECK(abs_j.vals.at(0) == 1.0);

  // upwind: u >= 0 picks the first branch (here 3 w), otherwise 5 w
  const ResidualBlock up("up", select_by_sign(u(), 3.0 * w(), 5.0 * w()), one, grids);
  const auto j = eval_jacobian(up, at_zero);
  double dw = 0.0;
  for (std::size_t k = 0; k < j.vals.size(); ++k)
    if (j.cols[k] == 1) dw = j.vals[k];  // columns: u then w
  CHECK(dw == 3.0);
  CHECK(eval_residuals(up, at_zero).at(0) == 6.0);
  const FieldMap negative{{"u", Field(g, -1.0)}, {"w", Field(g, 2.0)}};
  CHECK(eval_residuals(up, negative).at(0) == 10.0);
}

TEST_CASE("lower-rank fields broadcast over leading axes") {
  const Grid st({3, 4}, {0.0, 0.0}, {1.0, 1.0}, Centering::node);
  const Grid sp({4}, {0.0}, {1.0}, Centering::node);
  Field vel(sp, std::vector<double>{1.0, 2.0, 3.0, 4.0});
  const ResidualBlock b("bc", known_field("c")() * unknown_field("v")(1), IndexSet::box(st, {0, 0, 0}, {2, 2, 0}),
                        {{"c", st}, {"v", sp}});
  Field c(st, 1.0);
  const auto r = eval_residuals(b, {{"c", c}, {"v", vel}});
  REQUIRE(r.size() == 9);
  CHECK(r[0] == 2.0);
  CHECK(r[4] == 3.0);
  CHECK(r[8] == 4.0);
}

namespace {

// Random smooth expression over a small set of stencil references.
Expr random_expr(std::mt19937& rng, int depth, const std::vector<Expr>& leaves) {
  std::uniform_int_distribution<int> pick(0, 11);
  std::uniform_int_distribution<int> leaf(0, static_cast<int>(leaves.size()) - 1);
  std::uniform_real_distribution<double> cst(-2.0, 2.0);
  if (depth == 0) return leaves[leaf(rng)];
  const Expr a = random_expr(rng, depth - 1, leaves);
  const Expr b = random_expr(rng, depth - 1, leaves);
  switch (pick(rng)) {
    case 0: return a + b;
    case 1: return a - b;
    case 2: return a * b;
    case 3: return a / (1.5 + b * b);
    case 4: return sin(a);
    case 5: return cos(a) * b;
    case 6: return exp(0.3 * a);
    case 7: return sqrt(1.0 + a * a);
    case 8: return pow(1.0 + a * a, Expr(cst(rng)));
    case 9: return -a + cst(rng);
    case 10: return a * param("k");
    default: return pow(2.0 + sin(b), 0.5 * a);
  }
}

}  // namespace

TEST_CASE("Jacobian matches central finite differences on random expressions") {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  const Grid g({6, 7}, {0.0, 0.0}, {1.0, 1.0}, Centering::node);
  const auto u = unknown_field("u");
  const auto v = unknown_field("v");
  const std::vector<Expr> leaves{u(0, 0), u(1, 0), u(-1, 0), u(0, 1), v(0, 0), v(0, -1), known_field("c")(), param("k")};
  const GridMap grids{{"u", g}, {"v", g}, {"c", g}};
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const Expr e = random_expr(rng, 4, leaves);
    const ResidualBlock b("rand", e, IndexSet::interior(g), grids);
    FieldMap f{{"u", Field(g)}, {"v", Field(g)}, {"c", Field(g)}};
    for (auto& [name, fld] : f)
      for (auto& x : fld.values) x = val(rng);
    const ParamMap prm{{"k", 0.7}};
    const auto jac = eval_jacobian(b, f, prm);
    auto names = b.unknown_names();
    std::sort(names.begin(), names.end());
    for (std::size_t k = 0; k < jac.vals.size(); k += 3) {
      const auto col = jac.cols[k];
      const std::string name = names.at(col / g.size());
      const auto idx = col % g.size();
      const double h = 1e-6;
      FieldMap fp = f, fm = f;
      fp[name].values[idx] += h;
      fm[name].values[idx] -= h;
      const double rp = eval_residuals(b, fp, prm)[jac.rows[k]];
      const double rm = eval_residuals(b, fm, prm)[jac.rows[k]];
      const double fd = (rp - rm) / (2 * h);
      const double err = std::abs(fd - jac.vals[k]) / std::max(1.0, std::abs(jac.vals[k]));
      worst = std::max(worst, err);
    }
    // parameter column
    const auto pg = eval_param_gradient(b, f, prm, "k");
    const auto rp = eval_residuals(b, f, {{"k", 0.7 + 1e-6}});
    const auto rm = eval_residuals(b, f, {{"k", 0.7 - 1e-6}});
    for (std::size_t r = 0; r < pg.size(); ++r) {
      const double fd = (rp[r] - rm[r]) / 2e-6;
      worst = std::max(worst, std::abs(fd - pg[r]) / std::max(1.0, std::abs(pg[r])));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("locality: a perturbation only touches rows whose footprint contains it") {
  const Grid g = xt_grid(8, 8);
  const ResidualBlock b("wave", wave_stencil(g.spacing(0), g.spacing(1)), IndexSet::interior(g), {{"u", g}});
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  Field u(g);
  for (auto& x : u.values) x = val(rng);
  const auto base = eval_residuals(b, {{"u", u}});
  const MultiIndex target{3, 4, 0};
  Field up = u;
  up.at(target) += 0.25;
  const auto pert = eval_residuals(b, {{"u", up}});
  const auto& pts = b.index_set().points();
  for (std::size_t r = 0; r < pts.size(); ++r) {
    const int dt = std::abs(pts[r][0] - target[0]), dx = std::abs(pts[r][1] - target[1]);
    const bool in_footprint = (dt + dx <= 1);
    CHECK((pert[r] != base[r]) == in_footprint);
  }
}

TEST_CASE("affine expressions have point-independent Jacobians") {
  const Grid g = xt_grid(6, 6);
  const auto u = unknown_field("u");
  const Expr e = 2.0 * u(1, 0) - 3.0 * u(0, -1) + known_field("c")() + 0.5;
  const ResidualBlock b("aff", e, IndexSet::interior(g), {{"u", g}, {"c", g}});
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> val(-3.0, 3.0);
  auto random_fields = [&] {
    FieldMap f{{"u", Field(g)}, {"c", Field(g)}};
    for (auto& [n, fld] : f)
      for (auto& x : fld.values) x = val(rng);
    return f;
  };
  CHECK(eval_jacobian(b, random_fields()).vals == eval_jacobian(b, random_fields()).vals);
}

TEST_CASE("chunked evaluation is bit-identical to sequential") {
  const Grid g = xt_grid(80, 90);
  const auto u = unknown_field("u");
  const Expr e = sin(u(1, 0)) * u(0, 1) + exp(u(-1, 0)) / (2.0 + u(0, -1) * u(0, -1));
  const ResidualBlock b("nl", e, IndexSet::interior(g), {{"u", g}});
  Field f(g);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  for (auto& x : f.values) x = val(rng);
  const auto in = b.bind({{"u", f}}, {});
  std::vector<double> r1(b.rows()), j1(b.rows() * b.slot_count());
  std::vector<double> r4(b.rows()), j4(b.rows() * b.slot_count());
  set_thread_count(1);
  b.evaluate(in, r1, j1);
  set_thread_count(4);
  b.evaluate(in, r4, j4);
  set_thread_count(0);
  CHECK(r1 == r4);
  CHECK(j1 == j4);
}
