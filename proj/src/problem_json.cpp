#include <algorithm>
#include <cmath>
#include <set>

#include "odil/error.hpp"
#include "odil/field_io.hpp"
#include "odil/problems.hpp"

namespace odil {

namespace {

using nlohmann::json;

// Typed access to a JSON object that rejects keys nobody asked about.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw Error(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    if (!has(key)) throw Error(where_ + ": missing key '" + key + "'");
    return j_.at(key);
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw Error(where_ + ": key '" + key + "' must be an integer");
    return v.get<int>();
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) throw Error(where_ + ": key '" + key + "' must be a number");
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw Error(where_ + ": key '" + key + "' must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) throw Error(where_ + ": key '" + key + "' must be a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::size_t size) {
    const json& v = raw(key);
    if (!v.is_array() || v.size() != size) throw Error(where_ + ": key '" + key + "' must be an array of " + std::to_string(size) + " numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw Error(where_ + ": key '" + key + "' must contain numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  /// Throws on the first key that was never requested.
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw Error(where_ + ": unknown key '" + k + "'");
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

CavitySpec cavity_spec(Reader& r, CavityMode mode) {
  CavitySpec s;
  s.mode = mode;
  s.n = r.integer("n", s.n);
  s.re = r.number("Re", s.re);
  s.deferred_correction = r.boolean("deferred_correction", false);
  if (r.has("walls")) {
    const std::string w = r.string("walls", "");
    if (w == "no_slip") s.walls = WallCondition::no_slip;
    else if (w == "free_slip") s.walls = WallCondition::free_slip;
    else if (w == "extrapolate") s.walls = WallCondition::extrapolate;
    else throw Error(r.where() + ": key 'walls' must be no_slip, free_slip or extrapolate");
  }
  if (mode == CavityMode::forward) {
    s.lid_velocity = r.number("lid_velocity", 1.0);
  } else {
    s.k_reg = r.number("k_reg", 1e-4);
    s.data_weight = r.number("data_weight", 1.0);
  }
  return s;
}

WaveSpec wave_spec(Reader& r) {
  WaveSpec s;
  s.nx = r.integer("nx", s.nx);
  s.nt = r.integer("nt", s.nx);
  return s;
}

OptConfig newton_defaults(int epochs, double damping) {
  OptConfig c;
  c.method = Method::newton;
  c.max_epochs = epochs;
  c.newton.damping = damping;
  return c;
}

ProblemSetup reconstruct_setup(Reader& r) {
  CavitySpec s = cavity_spec(r, CavityMode::reconstruct);
  std::optional<FieldMap> reference;
  if (r.has("data_points")) {
    const json& pts = r.raw("data_points");
    if (!pts.is_array()) throw Error(r.where() + ": key 'data_points' must be an array of [x, y, u, v]");
    for (const auto& e : pts) {
      if (!e.is_array() || e.size() != 4) throw Error(r.where() + ": key 'data_points' entries must be [x, y, u, v]");
      s.data_points.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>(), e[3].get<double>()});
    }
  } else if (r.has("sample")) {
    Reader sr(r.raw("sample"), r.where() + ".sample");
    const int count = sr.integer("n_points", 32);
    const auto seed = static_cast<std::uint64_t>(sr.integer("seed", 0));
    CavitySpec fwd;
    fwd.n = s.n;
    fwd.re = sr.number("Re", s.re);
    sr.finish();
    reference = solve_cavity_reference(fwd);
    s.data_points = data_from_fields(*reference, sample_cells(s.n, count, seed));
  }
  ProblemSetup out{"cavity_reconstruct", build_cavity_reconstruct(s), {}, newton_defaults(30, 1e-8)};
  if (reference) {
    FieldMap ref = *reference;
    out.problem.set_error_metric([ref](const Problem& p, std::span<const double> x) {
      return velocity_error_l2(p.fields(x), ref);
    });
  }
  return out;
}

Field load_or_blob(Reader& r, const std::string& key, int nx, int ny) {
  const Field f = load_field(r.string(key, ""));
  if (f.grid != tracer_space_grid(nx, ny)) throw Error(r.where() + ": field '" + key + "' does not match nx, ny");
  return f;
}

ProblemSetup tracer_setup(Reader& r) {
  TracerSpec s;
  s.nx = r.integer("nx", 32);
  s.ny = r.integer("ny", s.nx);
  s.nt = r.integer("nt", s.nx);
  s.smooth_coef = r.number("smooth_coef", s.smooth_coef);
  s.unsteady_velocity = r.boolean("unsteady_velocity", false);
  if (r.has("synthetic")) {
    Reader sr(r.raw("synthetic"), r.where() + ".synthetic");
    const auto vel = sr.numbers("velocity", 2);
    const auto center = sr.has("center") ? sr.numbers("center", 2) : std::vector<double>{0.35, 0.5};
    const double width = sr.number("width", 0.2);
    sr.finish();
    s.c0 = tracer_blob(s.nx, s.ny, center[0], center[1], width);
    s.c1 = advect_upwind(s.c0, s.nt, vel[0], vel[1]);
    ProblemSetup out{"tracer", build_tracer(s), {}, newton_defaults(40, 1e-4)};
    // Relative error of the recovered mean velocity.
    out.problem.set_error_metric([vel](const Problem& p, std::span<const double> x) {
      const auto m = tracer_mean_velocity(p, x);
      return std::hypot(m[0] - vel[0], m[1] - vel[1]) / std::max(std::hypot(vel[0], vel[1]), 1e-300);
    });
    return out;
  }
  s.c0 = load_or_blob(r, "c0", s.nx, s.ny);
  s.c1 = load_or_blob(r, "c1", s.nx, s.ny);
  return {"tracer", build_tracer(s), {}, newton_defaults(40, 1e-4)};
}

}  // namespace

ProblemSetup build_from_json(const nlohmann::json& spec) {
  Reader r(spec, "problem spec");
  const std::string kind = r.string("problem", "");
  ProblemSetup out;
  if (kind == "wave") {
    out = {kind, build_wave(wave_spec(r)), {}, newton_defaults(5, 0.0)};
    out.default_optimizer.grad_inf_tol = 1e-8;
  } else if (kind == "cavity") {
    const CavitySpec s = cavity_spec(r, CavityMode::forward);
    out = {kind, build_cavity_forward(s), {}, newton_defaults(30, 0.0)};
    out.default_optimizer.loss_tol = 1e-24;
  } else if (kind == "cavity_reconstruct") {
    out = reconstruct_setup(r);
  } else if (kind == "tracer") {
    out = tracer_setup(r);
  } else if (kind == "complexity") {
    throw Error("problem spec: 'complexity' is not a single problem; use complexity_from_json");
  } else {
    throw Error("problem spec: key 'problem' must be one of wave, cavity, cavity_reconstruct, complexity, tracer");
  }
  r.finish();
  out.x0 = out.problem.initial_vector();
  return out;
}

ComplexitySpec complexity_from_json(const nlohmann::json& spec) {
  Reader r(spec, "problem spec");
  if (r.string("problem", "") != "complexity") throw Error("problem spec: expected problem 'complexity'");
  ComplexitySpec s;
  const std::string flow = r.string("flow", "uniform");
  if (flow == "uniform") s.flow = FlowKind::uniform;
  else if (flow == "couette") s.flow = FlowKind::couette;
  else if (flow == "poiseuille") s.flow = FlowKind::poiseuille;
  else if (flow == "cavity") s.flow = FlowKind::cavity;
  else throw Error("problem spec: key 'flow' must be uniform, couette, poiseuille or cavity");
  s.n = r.integer("n", s.n);
  s.k_reg = r.number("k_reg", s.k_reg);
  s.n_samples = r.integer("n_samples", s.n_samples);
  s.eps = r.number("eps", s.eps);
  s.seed = static_cast<std::uint64_t>(r.integer("seed", 0));
  s.re = r.number("Re", s.re);
  s.angle_deg = r.number("angle_deg", s.angle_deg);
  s.k_max = r.integer("K_max", s.k_max);
  if (r.has("K")) s.k_fixed = r.integer("K", 1);
  r.finish();
  if (s.n_samples < 1) throw Error("problem spec: key 'n_samples' must be at least 1");
  if (s.k_fixed && *s.k_fixed < 1) throw Error("problem spec: key 'K' must be at least 1");
  if (!(s.eps > 0)) throw Error("problem spec: key 'eps' must be positive");
  return s;
}

}  // namespace odil
