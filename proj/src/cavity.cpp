#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "odil/error.hpp"
#include "odil/problems.hpp"

namespace odil {

namespace {

const FieldRef U = unknown_field("u");
const FieldRef V = unknown_field("v");
const FieldRef P = unknown_field("p");

IndexSet interior_cells(const Grid& g) { return IndexSet::interior(g, 1); }

struct Side {
  const char* name;
  int axis;  // axis normal to the wall
  int dx, dy;  // offset from a ghost cell to its interior neighbour
};

constexpr Side kSides[4] = {
    {"w", 0, 1, 0},
    {"e", 0, -1, 0},
    {"s", 1, 0, 1},
    {"n", 1, 0, -1},
};

IndexSet ghost_edge(const Grid& g, const Side& s) {
  const int n = g.dim(0) - 2;
  if (s.axis == 0) {
    const int i = s.dx > 0 ? 0 : n + 1;
    return IndexSet::box(g, {i, 1, 0}, {i, n, 0});
  }
  const int j = s.dy > 0 ? 0 : n + 1;
  return IndexSet::box(g, {1, j, 0}, {n, j, 0});
}

// Upwind (or central) convective flux divergence of phi for the velocity
// field, divided by the cell volume.
Expr convection(const FieldRef& phi, double h, bool central) {
  const Expr fe = 0.5 * (U(0, 0) + U(1, 0));
  const Expr fw = 0.5 * (U(-1, 0) + U(0, 0));
  const Expr fn = 0.5 * (V(0, 0) + V(0, 1));
  const Expr fs = 0.5 * (V(0, -1) + V(0, 0));
  if (central) {
    return (fe * 0.5 * (phi(0, 0) + phi(1, 0)) - fw * 0.5 * (phi(-1, 0) + phi(0, 0)) +
            fn * 0.5 * (phi(0, 0) + phi(0, 1)) - fs * 0.5 * (phi(0, -1) + phi(0, 0))) /
           h;
  }
  return (fe * select_by_sign(fe, phi(0, 0), phi(1, 0)) - fw * select_by_sign(fw, phi(-1, 0), phi(0, 0)) +
          fn * select_by_sign(fn, phi(0, 0), phi(0, 1)) - fs * select_by_sign(fs, phi(0, -1), phi(0, 0))) /
         h;
}

Expr laplacian(const FieldRef& phi, double h) {
  return (phi(1, 0) + phi(-1, 0) + phi(0, 1) + phi(0, -1) - 4.0 * phi(0, 0)) / (h * h);
}

// Momentum-interpolated face velocity with the pressure correction, for the
// face between the cell at `a` and its neighbour at `a + dir` along `axis`.
Expr rhie_chow(const FieldRef& vel, int axis, int a, double h, double d) {
  auto off = [axis](int k) { return axis == 0 ? std::array<int, 2>{k, 0} : std::array<int, 2>{0, k}; };
  auto at = [&](const FieldRef& f, int k) {
    const auto o = off(k);
    return f(o[0], o[1]);
  };
  // a = 0 for the east/north face, a = -1 for west/south.
  const int l = a, r = a + 1;
  const Expr grad_face = (at(P, r) - at(P, l)) / h;
  const Expr grad_l = (at(P, l + 1) - at(P, l - 1)) / (2 * h);
  const Expr grad_r = (at(P, r + 1) - at(P, r - 1)) / (2 * h);
  return 0.5 * (at(vel, l) + at(vel, r)) - d * (grad_face - 0.5 * (grad_l + grad_r));
}

Expr plain_face(const FieldRef& vel, int axis, int a) {
  return axis == 0 ? 0.5 * (vel(a, 0) + vel(a + 1, 0)) : 0.5 * (vel(0, a) + vel(0, a + 1));
}

// Continuity with Rhie-Chow faces; faces on a wall use the plain average
// with the ghost value.
Expr continuity(bool west, bool east, bool south, bool north, double h, double d) {
  const Expr ue = east ? plain_face(U, 0, 0) : rhie_chow(U, 0, 0, h, d);
  const Expr uw = west ? plain_face(U, 0, -1) : rhie_chow(U, 0, -1, h, d);
  const Expr vn = north ? plain_face(V, 1, 0) : rhie_chow(V, 1, 0, h, d);
  const Expr vs = south ? plain_face(V, 1, -1) : rhie_chow(V, 1, -1, h, d);
  return (ue - uw + vn - vs) / h;
}

void add_continuity(Problem& p, const Grid& g, double h, double d) {
  const int n = g.dim(0) - 2;
  std::map<int, std::vector<MultiIndex>> groups;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= n; ++j) {
      const int key = (i == 1) | (i == n) << 1 | (j == 1) << 2 | (j == n) << 3;
      groups[key].push_back({i, j, 0});
    }
  }
  for (auto& [key, cells] : groups) {
    std::string name = "continuity";
    if (key) {
      name += "_";
      const char* tags = "wesn";
      for (int b = 0; b < 4; ++b)
        if (key >> b & 1) name += tags[b];
    }
    p.add_block(name, continuity(key & 1, key & 2, key & 4, key & 8, h, d),
                IndexSet::explicit_list(g, std::move(cells)));
  }
}

void add_walls(Problem& p, const Grid& g, WallCondition wall, double lid) {
  const int n = g.dim(0) - 2;
  for (const Side& s : kSides) {
    const IndexSet cells = ghost_edge(g, s);
    const std::string sfx = std::string("_") + s.name;
    auto in = [&](const FieldRef& f, int k) { return f(k * s.dx, k * s.dy); };
    for (const FieldRef* f : {&U, &V}) {
      const bool normal = (f == &U) == (s.axis == 0);
      Expr r = 0.0;
      switch (wall) {
        case WallCondition::no_slip: {
          const double target = (f == &U && std::string(s.name) == "n") ? lid : 0.0;
          r = (*f)() + in(*f, 1) - 2.0 * target;
          break;
        }
        case WallCondition::free_slip:
          r = normal ? (*f)() + in(*f, 1) : (*f)() - in(*f, 1);
          break;
        case WallCondition::extrapolate:
          r = (*f)() - (3.0 * in(*f, 1) - 3.0 * in(*f, 2) + in(*f, 3));
          break;
      }
      p.add_block("wall_" + f->name() + sfx, r, cells);
    }
    const Expr rp = wall == WallCondition::extrapolate
                        ? P() - (3.0 * in(P, 1) - 3.0 * in(P, 2) + in(P, 3))
                        : P() - in(P, 1);
    p.add_block("wall_p" + sfx, rp, cells);
  }
  const std::vector<std::array<int, 4>> corners = {
      {0, 0, 1, 1}, {n + 1, 0, -1, 1}, {0, n + 1, 1, -1}, {n + 1, n + 1, -1, -1}};
  for (const FieldRef* f : {&U, &V, &P}) {
    for (std::size_t c = 0; c < corners.size(); ++c) {
      const auto [i, j, sx, sy] = corners[c];
      p.add_block("corner_" + f->name() + std::to_string(c), (*f)() - 0.5 * ((*f)(sx, 0) + (*f)(0, sy)),
                  IndexSet::explicit_list(g, {{i, j, 0}}));
    }
  }
}

// Navier-Stokes blocks shared by the forward and reconstruction problems.
void add_navier_stokes(Problem& p, const CavitySpec& spec) {
  const Grid g = cavity_grid(spec.n);
  const double h = 1.0 / spec.n;
  const double re = spec.re;
  const IndexSet cells = interior_cells(g);

  Expr mx = convection(U, h, false) - laplacian(U, h) / re + (P(1, 0) - P(-1, 0)) / (2 * h);
  Expr my = convection(V, h, false) - laplacian(V, h) / re + (P(0, 1) - P(0, -1)) / (2 * h);
  if (spec.deferred_correction) {
    p.set_known("dc_u", Field(g, 0.0));
    p.set_known("dc_v", Field(g, 0.0));
    mx = mx + known_field("dc_u")();
    my = my + known_field("dc_v")();
    const GridMap grids = p.grids();
    auto corr_u = std::make_shared<ResidualBlock>(
        "dc_u", convection(U, h, true) - convection(U, h, false), cells, grids);
    auto corr_v = std::make_shared<ResidualBlock>(
        "dc_v", convection(V, h, true) - convection(V, h, false), cells, grids);
    p.refresh = [corr_u, corr_v, g](Problem& prob, std::span<const double> x) {
      const FieldMap f = prob.fields(x);
      for (const auto& blk : {corr_u, corr_v}) {
        const auto r = eval_residuals(*blk, f);
        Field dc(g, 0.0);
        const auto& pts = blk->index_set().points();
        for (std::size_t k = 0; k < pts.size(); ++k) dc.at(pts[k]) = r[k];
        prob.set_known(blk->name(), std::move(dc));
      }
    };
  }
  p.add_block("momentum_x", mx, cells);
  p.add_block("momentum_y", my, cells);
  // Momentum diagonal from the diffusive coefficient, 4 / (Re h^2).
  add_continuity(p, g, h, re * h * h / 4.0);
  p.add_block("gauge", P(), IndexSet::explicit_list(g, {{1, 1, 0}}));
}

void validate(const CavitySpec& spec) {
  if (spec.n < 8) throw Error("cavity: n must be at least 8");
  if (!(spec.re > 0)) throw Error("cavity: Re must be positive");
  if (!(spec.k_reg >= 0)) throw Error("cavity: k_reg must be nonnegative");
  if (!(spec.data_weight > 0)) throw Error("cavity: data_weight must be positive");
}

Problem cavity_base(const CavitySpec& spec, WallCondition default_wall) {
  validate(spec);
  const Grid g = cavity_grid(spec.n);
  Problem p;
  p.add_unknown("u", g);
  p.add_unknown("v", g);
  p.add_unknown("p", g);
  add_navier_stokes(p, spec);
  add_walls(p, g, spec.walls.value_or(default_wall), spec.lid_velocity);
  return p;
}

std::array<int, 2> nearest_cell(int n, double x, double y) {
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
    throw Error("cavity: data point (" + std::to_string(x) + ", " + std::to_string(y) + ") outside the domain");
  auto idx = [n](double c) { return std::clamp(static_cast<int>(std::floor(c * n)) + 1, 1, n); };
  return {idx(x), idx(y)};
}

template <class F>
double over_interior(const Grid& g, F&& f) {
  const int n = g.dim(0) - 2;
  double s = 0.0;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j) s += f(g.flat_index({i, j, 0}));
  return s;
}

}  // namespace

Grid cavity_grid(int n) {
  const double h = 1.0 / n;
  return Grid({n + 2, n + 2}, {-h, -h}, {1.0 + h, 1.0 + h}, Centering::cell);
}

Problem build_cavity_forward(const CavitySpec& spec) {
  if (spec.mode != CavityMode::forward) throw Error("build_cavity_forward: mode must be forward");
  return cavity_base(spec, WallCondition::no_slip);
}

Problem build_cavity_reconstruct(const CavitySpec& spec) {
  if (spec.mode != CavityMode::reconstruct) throw Error("build_cavity_reconstruct: mode must be reconstruct");
  Problem p = cavity_base(spec, WallCondition::free_slip);
  const Grid g = cavity_grid(spec.n);
  const double h = 1.0 / spec.n;

  if (!spec.data_points.empty()) {
    Field ud(g, 0.0), vd(g, 0.0), count(g, 0.0);
    std::vector<MultiIndex> cells;
    double mean_u = 0.0, mean_v = 0.0;
    for (const auto& d : spec.data_points) {
      const auto c = nearest_cell(spec.n, d.x, d.y);
      const MultiIndex idx{c[0], c[1], 0};
      if (count.at(idx) == 0.0) cells.push_back(idx);
      count.at(idx) += 1.0;
      ud.at(idx) += d.u;
      vd.at(idx) += d.v;
      mean_u += d.u;
      mean_v += d.v;
    }
    for (const auto& idx : cells) {
      ud.at(idx) /= count.at(idx);
      vd.at(idx) /= count.at(idx);
    }
    p.set_known("u_data", ud);
    p.set_known("v_data", vd);
    const IndexSet data = IndexSet::explicit_list(g, cells);
    p.add_block("data_u", U() - known_field("u_data")(), data, spec.data_weight);
    p.add_block("data_v", V() - known_field("v_data")(), data, spec.data_weight);
    const double k = static_cast<double>(spec.data_points.size());
    p.set_initial("u", Field(g, mean_u / k));
    p.set_initial("v", Field(g, mean_v / k));
  }

  const IndexSet cells = interior_cells(g);
  for (const FieldRef* f : {&U, &V}) {
    p.add_block("reg_" + f->name() + "xx", ((*f)(1, 0) - 2.0 * (*f)() + (*f)(-1, 0)) / (h * h), cells, spec.k_reg);
    p.add_block("reg_" + f->name() + "yy", ((*f)(0, 1) - 2.0 * (*f)() + (*f)(0, -1)) / (h * h), cells, spec.k_reg);
  }
  return p;
}

FieldMap solve_cavity_reference(const CavitySpec& spec, int max_epochs) {
  CavitySpec fwd = spec;
  fwd.mode = CavityMode::forward;
  Problem p = build_cavity_forward(fwd);
  OptConfig c;
  c.method = Method::newton;
  c.max_epochs = max_epochs;
  c.loss_tol = 1e-24;  // the roundoff floor at 64x64 is near 2e-26
  const RunReport r = minimize_newton(p, p.initial_vector(), c);
  if (!r.ok()) throw Error("cavity reference solve failed: " + r.termination);
  return p.fields(r.x);
}

double max_divergence(const Problem& problem, std::span<const double> x) {
  double m = 0.0;
  for (const auto& b : problem.blocks()) {
    if (b.name().rfind("continuity", 0) != 0) continue;
    for (double r : problem.block_residuals(x, b.name())) m = std::max(m, std::abs(r) / b.weight());
  }
  return m;
}

double velocity_error_l2(const FieldMap& fields, const FieldMap& reference) {
  const Field &u = fields.at("u"), &v = fields.at("v");
  const Field &ur = reference.at("u"), &vr = reference.at("v");
  const double num = over_interior(u.grid, [&](std::int64_t k) {
    return (u[k] - ur[k]) * (u[k] - ur[k]) + (v[k] - vr[k]) * (v[k] - vr[k]);
  });
  const double den = over_interior(u.grid, [&](std::int64_t k) { return ur[k] * ur[k] + vr[k] * vr[k]; });
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

double velocity_error_l1(const FieldMap& fields, const FieldMap& reference) {
  const Field &u = fields.at("u"), &v = fields.at("v");
  const Field &ur = reference.at("u"), &vr = reference.at("v");
  const double num = over_interior(u.grid, [&](std::int64_t k) { return std::hypot(u[k] - ur[k], v[k] - vr[k]); });
  const double den = over_interior(u.grid, [&](std::int64_t k) { return std::hypot(ur[k], vr[k]); });
  return den > 0 ? num / den : num;
}

std::vector<std::array<int, 2>> sample_cells(int n, int count, std::uint64_t seed) {
  const int total = n * n;
  if (count < 0 || count > total) throw Error("sample_cells: count out of range");
  std::vector<int> idx(total);
  for (int k = 0; k < total; ++k) idx[k] = k;
  std::mt19937_64 rng(seed);
  std::vector<std::array<int, 2>> out;
  for (int k = 0; k < count; ++k) {
    std::uniform_int_distribution<int> pick(k, total - 1);
    std::swap(idx[k], idx[pick(rng)]);
    out.push_back({idx[k] / n + 1, idx[k] % n + 1});
  }
  return out;
}

std::vector<DataPoint> data_from_fields(const FieldMap& fields, const std::vector<std::array<int, 2>>& cells) {
  const Field &u = fields.at("u"), &v = fields.at("v");
  std::vector<DataPoint> out;
  for (const auto& c : cells) {
    const MultiIndex idx{c[0], c[1], 0};
    out.push_back({u.grid.coord(0, c[0]), u.grid.coord(1, c[1]), u.at(idx), v.at(idx)});
  }
  return out;
}

}  // namespace odil
