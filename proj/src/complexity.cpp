#include <algorithm>
#include <cmath>
#include <numbers>

#include "odil/error.hpp"
#include "odil/parallel.hpp"
#include "odil/problems.hpp"

namespace odil {

namespace {

std::uint64_t sample_seed(std::uint64_t seed, int sample) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(sample) + 1;
}

// Velocity e * f(s) with s the coordinate across the flow direction e.
FieldMap shear_flow(int n, double angle_deg, double (*profile)(double)) {
  const Grid g = cavity_grid(n);
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double ex = std::cos(th), ey = std::sin(th);
  // s = normal . (x, y), normalised to [0, 1] over the unit square
  const double nx = -ey, ny = ex;
  const double corners[4] = {0.0, nx, ny, nx + ny};
  const double smin = *std::min_element(corners, corners + 4);
  const double smax = *std::max_element(corners, corners + 4);
  Field u(g), v(g);
  double peak = 0.0;
  for (std::int64_t k = 0; k < g.size(); ++k) {
    const auto idx = g.unflatten(k);
    const double x = g.coord(0, idx[0]), y = g.coord(1, idx[1]);
    const double f = profile((nx * x + ny * y - smin) / (smax - smin));
    u[k] = f * ex;
    v[k] = f * ey;
    if (idx[0] >= 1 && idx[0] <= n && idx[1] >= 1 && idx[1] <= n) peak = std::max(peak, std::abs(f));
  }
  for (std::int64_t k = 0; k < g.size(); ++k) {
    u[k] /= peak;
    v[k] /= peak;
  }
  return {{"u", u}, {"v", v}};
}

}  // namespace

OptConfig ComplexitySpec::default_complexity_optimizer() {
  OptConfig c;
  c.method = Method::newton;
  c.max_epochs = 20;
  c.newton.damping = 1e-6;
  c.grad_inf_tol = 1e-10;
  return c;
}

FieldMap complexity_reference(const ComplexitySpec& spec) {
  switch (spec.flow) {
    case FlowKind::uniform:
      return shear_flow(spec.n, spec.angle_deg, [](double) { return 1.0; });
    case FlowKind::couette:
      return shear_flow(spec.n, spec.angle_deg, [](double s) { return s; });
    case FlowKind::poiseuille:
      return shear_flow(spec.n, spec.angle_deg, [](double s) { return 4.0 * s * (1.0 - s); });
    case FlowKind::cavity: {
      CavitySpec c;
      c.n = spec.n;
      c.re = spec.re;
      FieldMap f = solve_cavity_reference(c);
      f.erase("p");
      return f;
    }
  }
  throw Error("unknown flow kind");
}

Problem build_complexity_problem(const ComplexitySpec& spec, const FieldMap& reference,
                                 const std::vector<std::array<int, 2>>& cells) {
  CavitySpec c;
  c.n = spec.n;
  c.re = spec.re;
  c.mode = CavityMode::reconstruct;
  c.k_reg = spec.k_reg;
  c.walls = WallCondition::extrapolate;
  c.data_points = data_from_fields(reference, cells);
  Problem p = build_cavity_reconstruct(c);
  p.set_error_metric([reference](const Problem& prob, std::span<const double> x) {
    return velocity_error_l1(prob.fields(x), reference);
  });
  return p;
}

ComplexityResult complexity_E(const ComplexitySpec& spec, int k) {
  return complexity_E(spec, k, complexity_reference(spec));
}

ComplexityResult complexity_E(const ComplexitySpec& spec, int k, const FieldMap& reference) {
  if (k < 1) throw Error("complexity: K must be at least 1");
  if (spec.n_samples < 1) throw Error("complexity: n_samples must be at least 1");
  ComplexityResult res;
  res.sample_errors.assign(spec.n_samples, 0.0);
  std::vector<RunReport> reports(spec.n_samples);
  parallel_for(spec.n_samples, 1, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t s = b; s < e; ++s) {
      const auto cells = sample_cells(spec.n, k, sample_seed(spec.seed, static_cast<int>(s)));
      Problem p = build_complexity_problem(spec, reference, cells);
      reports[s] = minimize(p, p.initial_vector(), spec.optimizer);
      res.sample_errors[s] = p.error(reports[s].x);
    }
  });
  res.best_sample = static_cast<int>(std::min_element(res.sample_errors.begin(), res.sample_errors.end()) -
                                     res.sample_errors.begin());
  res.estimate = res.sample_errors[res.best_sample];
  res.best_report = std::move(reports[res.best_sample]);
  return res;
}

KminResult complexity_Kmin(const ComplexitySpec& spec, double eps) {
  if (!(eps > 0)) throw Error("complexity: eps must be positive");
  const FieldMap reference = complexity_reference(spec);
  KminResult out;
  for (int k = 1; k <= spec.k_max; ++k) {
    out.estimates.push_back(complexity_E(spec, k, reference).estimate);
    if (out.estimates.back() < eps) {
      out.k = k;
      return out;
    }
  }
  out.k = spec.k_max;
  out.capped = true;
  return out;
}

}  // namespace odil
