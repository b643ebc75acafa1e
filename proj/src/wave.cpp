#include <cmath>
#include <numbers>

#include "odil/error.hpp"
#include "odil/problems.hpp"

namespace odil {

double wave_exact(double x, double t) {
  constexpr double pi = std::numbers::pi;
  double s = 0.0;
  for (int k = 1; k <= 5; ++k) s += std::cos((x - t + 0.5) * pi * k) + std::cos((x + t + 0.5) * pi * k);
  return s / 10.0;
}

double wave_exact_dt(double x, double t) {
  constexpr double pi = std::numbers::pi;
  double s = 0.0;
  for (int k = 1; k <= 5; ++k)
    s += pi * k * (std::sin((x - t + 0.5) * pi * k) - std::sin((x + t + 0.5) * pi * k));
  return s / 10.0;
}

Problem build_wave(const WaveSpec& spec) {
  if (spec.nx < 3 || spec.nt < 3) throw Error("wave: nx and nt must be at least 3");
  const Grid g({spec.nt, spec.nx}, {0.0, -1.0}, {1.0, 1.0}, Centering::node);
  const double dt = g.spacing(0), dx = g.spacing(1);

  Problem p;
  p.add_unknown("u", g);
  const Field exact = eval_on_grid(g, [](std::span<const double> q) { return wave_exact(q[1], q[0]); });
  p.set_known("g", exact);
  p.set_known("g_t", eval_on_grid(g, [](std::span<const double> q) { return wave_exact_dt(q[1], q[0]); }));

  const auto u = unknown_field("u");
  const Expr uxx = (u(0, 1) - 2.0 * u(0, 0) + u(0, -1)) / (dx * dx);
  const Expr utt = (u(1, 0) - 2.0 * u(0, 0) + u(-1, 0)) / (dt * dt);
  p.add_block("interior", utt - uxx, IndexSet::interior(g));

  std::vector<MultiIndex> bnd;
  for (int i = 0; i < spec.nx; ++i) bnd.push_back({0, i, 0});
  for (int n = 1; n < spec.nt; ++n) {
    bnd.push_back({n, 0, 0});
    bnd.push_back({n, spec.nx - 1, 0});
  }
  p.add_block("boundary", u() - known_field("g")(), IndexSet::explicit_list(g, std::move(bnd)));

  // Second layer from the initial velocity with the Taylor term
  // dt/2 u_tt = dt/2 u_xx, keeping the start second-order accurate.
  p.add_block("initial_velocity", (u(1, 0) - u(0, 0)) / dt - 0.5 * dt * uxx - known_field("g_t")(),
              IndexSet::box(g, {0, 1, 0}, {0, spec.nx - 2, 0}));

  p.set_reference({{"u", exact}});
  return p;
}

}  // namespace odil
