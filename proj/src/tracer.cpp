#include <cmath>

#include "odil/error.hpp"
#include "odil/problems.hpp"

namespace odil {

Grid tracer_space_grid(int nx, int ny) { return Grid({ny, nx}, {0.0, 0.0}, {1.0, 1.0}, Centering::node); }

Grid tracer_grid(int nx, int ny, int nt) {
  return Grid({nt, ny, nx}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, Centering::node);
}

Problem build_tracer(const TracerSpec& spec) {
  if (spec.nx < 3 || spec.ny < 3 || spec.nt < 2) throw Error("tracer: grid too small");
  const Grid space = tracer_space_grid(spec.nx, spec.ny);
  const Grid g = tracer_grid(spec.nx, spec.ny, spec.nt);
  if (spec.c0.grid != space || spec.c1.grid != space) throw Error("tracer: c0 and c1 must be on the spatial grid");
  const double dt = g.spacing(0), hy = g.spacing(1), hx = g.spacing(2);

  Problem p;
  p.add_unknown("c", g);
  const Grid& vel_grid = spec.unsteady_velocity ? g : space;
  p.add_unknown("u", vel_grid);
  p.add_unknown("v", vel_grid);
  p.set_known("c0", spec.c0);
  p.set_known("c1", spec.c1);

  Field init(g);
  for (int n = 0; n < spec.nt; ++n) {
    const double t = static_cast<double>(n) / (spec.nt - 1);
    for (std::int64_t k = 0; k < space.size(); ++k)
      init[n * space.size() + k] = (1 - t) * spec.c0[k] + t * spec.c1[k];
  }
  p.set_initial("c", init);

  const auto c = unknown_field("c");
  const auto U = unknown_field("u");
  const auto V = unknown_field("v");
  const Expr u = spec.unsteady_velocity ? U(0, 0, 0) : U();
  const Expr v = spec.unsteady_velocity ? V(0, 0, 0) : V();
  const Expr cx = select_by_sign(u, (c(0, 0, 0) - c(0, 0, -1)) / hx, (c(0, 0, 1) - c(0, 0, 0)) / hx);
  const Expr cy = select_by_sign(v, (c(0, 0, 0) - c(0, -1, 0)) / hy, (c(0, 1, 0) - c(0, 0, 0)) / hy);
  p.add_block("advection", (c(1, 0, 0) - c(0, 0, 0)) / dt + u * cx + v * cy,
              IndexSet::box(g, {0, 1, 1}, {spec.nt - 2, spec.ny - 2, spec.nx - 2}));

  p.add_block("initial", c() - known_field("c0")(),
              IndexSet::box(g, {0, 0, 0}, {0, spec.ny - 1, spec.nx - 1}));
  p.add_block("final", c() - known_field("c1")(),
              IndexSet::box(g, {spec.nt - 1, 0, 0}, {spec.nt - 1, spec.ny - 1, spec.nx - 1}));

  for (const FieldRef* f : {&U, &V}) {
    const std::string name = f->name();
    if (spec.unsteady_velocity) {
      const FieldRef& w = *f;
      const Expr lap = (w(0, 0, 1) - 2.0 * w(0, 0, 0) + w(0, 0, -1)) / (hx * hx) +
                       (w(0, 1, 0) - 2.0 * w(0, 0, 0) + w(0, -1, 0)) / (hy * hy);
      p.add_block("smooth_" + name, spec.smooth_coef * lap,
                  IndexSet::box(g, {0, 1, 1}, {spec.nt - 1, spec.ny - 2, spec.nx - 2}));
      p.add_block("steady_" + name, (w(1, 0, 0) - w(0, 0, 0)) / dt,
                  IndexSet::box(g, {0, 0, 0}, {spec.nt - 2, spec.ny - 1, spec.nx - 1}));
    } else {
      const FieldRef& w = *f;
      const Expr lap = (w(0, 1) - 2.0 * w(0, 0) + w(0, -1)) / (hx * hx) +
                       (w(1, 0) - 2.0 * w(0, 0) + w(-1, 0)) / (hy * hy);
      p.add_block("smooth_" + name, spec.smooth_coef * lap, IndexSet::interior(space));
    }
  }
  return p;
}

Field advect_upwind(const Field& c0, int nt, double u, double v) {
  const Grid& g = c0.grid;
  if (g.rank() != 2 || nt < 2) throw Error("advect_upwind: expects a 2D field and nt >= 2");
  const int ny = g.dim(0), nx = g.dim(1);
  const double dt = 1.0 / (nt - 1), hy = g.spacing(0), hx = g.spacing(1);
  Field c = c0, next = c0;
  for (int n = 0; n + 1 < nt; ++n) {
    for (int j = 1; j < ny - 1; ++j) {
      for (int i = 1; i < nx - 1; ++i) {
        const double ccur = c.at({j, i, 0});
        const double dx = u >= 0 ? ccur - c.at({j, i - 1, 0}) : c.at({j, i + 1, 0}) - ccur;
        const double dy = v >= 0 ? ccur - c.at({j - 1, i, 0}) : c.at({j + 1, i, 0}) - ccur;
        next.at({j, i, 0}) = ccur - dt * (u * dx / hx + v * dy / hy);
      }
    }
    c = next;
  }
  return c;
}

Field tracer_blob(int nx, int ny, double cx, double cy, double width) {
  return eval_on_grid(tracer_space_grid(nx, ny), [&](std::span<const double> q) {
    const double r2 = (q[1] - cx) * (q[1] - cx) + (q[0] - cy) * (q[0] - cy);
    return std::exp(-r2 / (width * width));
  });
}

std::array<double, 2> tracer_mean_velocity(const Problem& problem, std::span<const double> x) {
  const Field& c0 = problem.known("c0");
  const Field& c1 = problem.known("c1");
  const Field u = problem.field(x, "u"), v = problem.field(x, "v");
  const std::int64_t ns = c0.grid.size();
  const std::int64_t layers = u.grid.size() / ns;
  double su = 0.0, sv = 0.0, sw = 0.0;
  for (std::int64_t l = 0; l < layers; ++l) {
    for (std::int64_t k = 0; k < ns; ++k) {
      const double w = c0[k] + c1[k];
      su += w * u[l * ns + k];
      sv += w * v[l * ns + k];
      sw += w;
    }
  }
  return {su / sw, sv / sw};
}

}  // namespace odil
