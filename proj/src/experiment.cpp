#include "odil/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "odil/field_io.hpp"
#include "odil/problems.hpp"

namespace odil {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Typed reads from one JSON object; `done` rejects keys that were not read.
class Keys {
 public:
  Keys(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  double number(const std::string& key, double fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(where_ + ": key '" + key + "' must be a number");
    return v->get<double>();
  }

  int integer(const std::string& key, int fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(where_ + ": key '" + key + "' must be an integer");
    return v->get<int>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(where_ + ": key '" + key + "' must be true or false");
    return v->get<bool>();
  }

  std::optional<std::string> string(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) throw ConfigError(where_ + ": key '" + key + "' must be a string");
    return v->get<std::string>();
  }

  void done() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

FieldMap load_reference(const json& ref, const Problem& problem) {
  FieldMap out;
  auto load = [](const std::string& path) {
    try {
      return load_field(path);
    } catch (const Error& e) {
      throw ConfigError("reference: " + std::string(e.what()));
    }
  };
  const auto& names = problem.field_order();
  if (ref.is_string()) {
    if (names.size() != 1)
      throw ConfigError("reference: problem has several unknowns; give an object {field: path}");
    out[names.front()] = load(ref.get<std::string>());
  } else if (ref.is_object()) {
    for (const auto& [name, path] : ref.items()) {
      if (std::find(names.begin(), names.end(), name) == names.end())
        throw ConfigError("reference: '" + name + "' is not an unknown of this problem");
      if (!path.is_string()) throw ConfigError("reference: path for '" + name + "' must be a string");
      out[name] = load(path.get<std::string>());
    }
  } else {
    throw ConfigError("key 'reference' must be a path or an object of paths");
  }
  for (const auto& [name, f] : out)
    if (f.grid != problem.unknown_grid(name)) throw ConfigError("reference: grid of '" + name + "' does not match");
  return out;
}

void save_solution(const fs::path& dir, const Problem& problem, std::span<const double> x) {
  for (const auto& [name, f] : problem.fields(x)) save_field(dir / ("solution_" + name), f);
}

ExperimentResult run_complexity(const ExperimentConfig& config, std::ostream& log) {
  ComplexitySpec spec;
  try {
    spec = complexity_from_json(config.problem);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  spec.optimizer = optimizer_from_json(config.optimizer, spec.optimizer);
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  json& s = res.summary;
  s["problem"] = "complexity";
  if (spec.k_fixed) {
    const auto r = complexity_E(spec, *spec.k_fixed);
    log << "K=" << *spec.k_fixed << " E=" << r.estimate << " (best sample " << r.best_sample << ")\n";
    write_history_csv(r.best_report, config.output_dir / "history.csv");
    s["K"] = *spec.k_fixed;
    s["estimate"] = r.estimate;
    s["sample_errors"] = r.sample_errors;
    s["best_sample"] = r.best_sample;
    s["final_loss"] = finite_or_null(r.best_report.final_loss());
    s["final_error"] = finite_or_null(r.estimate);
    s["epochs"] = r.best_report.epochs();
    s["termination"] = r.best_report.termination;
  } else {
    const auto r = complexity_Kmin(spec, spec.eps);
    std::ofstream csv(config.output_dir / "complexity.csv");
    csv << "K,estimate\n" << std::setprecision(17);
    for (std::size_t k = 0; k < r.estimates.size(); ++k) {
      csv << k + 1 << "," << r.estimates[k] << "\n";
      log << "K=" << k + 1 << " E=" << r.estimates[k] << "\n";
    }
    s["k_min"] = r.k;
    s["capped"] = r.capped;
    s["estimates"] = r.estimates;
    s["final_loss"] = nullptr;
    s["final_error"] = finite_or_null(r.estimates.empty() ? NAN : r.estimates.back());
    s["epochs"] = static_cast<int>(r.estimates.size());
    s["termination"] = r.capped ? "k_max" : "eps";
  }
  s["wall_time_s"] = seconds_since(t0);
  write_json(config.output_dir / "summary.json", s);
  return res;
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ExperimentConfig c;
  c.problem = j;
  if (j.contains("optimizer")) {
    if (!j["optimizer"].is_object()) throw ConfigError("config: key 'optimizer' must be an object");
    c.optimizer = j["optimizer"];
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("config: key 'output_dir' must be a string");
    c.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<std::int64_t>() < 0) throw ConfigError("config: key 'seed' must be a nonnegative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("reference")) c.reference = j["reference"];
  if (j.contains("dump_every")) {
    if (!j["dump_every"].is_number_integer() || j["dump_every"].get<int>() < 0)
      throw ConfigError("config: key 'dump_every' must be a nonnegative integer");
    c.dump_every = j["dump_every"].get<int>();
  }
  for (const char* k : {"optimizer", "output_dir", "seed", "reference", "dump_every"}) c.problem.erase(k);
  if (!c.problem.contains("problem")) throw ConfigError("config: missing key 'problem'");
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

OptConfig optimizer_from_json(const json& j, OptConfig base) {
  Keys k(j, "optimizer");
  try {
    if (auto m = k.string("method")) base.method = method_from_string(*m);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("optimizer: key 'method': ") + e.what());
  }
  base.max_epochs = k.integer("max_epochs", base.max_epochs);
  base.grad_inf_tol = k.number("grad_inf_tol", base.grad_inf_tol);
  base.loss_tol = k.number("loss_tol", base.loss_tol);
  base.error_tol = k.number("error_tol", base.error_tol);
  if (const json* a = k.get("adam")) {
    Keys s(*a, "optimizer.adam");
    base.adam.lr = s.number("lr", base.adam.lr);
    base.adam.beta1 = s.number("beta1", base.adam.beta1);
    base.adam.beta2 = s.number("beta2", base.adam.beta2);
    base.adam.eps = s.number("eps", base.adam.eps);
    s.done();
  }
  if (const json* l = k.get("lbfgs")) {
    Keys s(*l, "optimizer.lbfgs");
    base.lbfgs.history = s.integer("history", base.lbfgs.history);
    base.lbfgs.c1 = s.number("c1", base.lbfgs.c1);
    base.lbfgs.c2 = s.number("c2", base.lbfgs.c2);
    base.lbfgs.max_line_search = s.integer("max_line_search", base.lbfgs.max_line_search);
    s.done();
  }
  if (const json* n = k.get("newton")) {
    Keys s(*n, "optimizer.newton");
    base.newton.damping = s.number("damping", base.newton.damping);
    base.newton.inner_tol = s.number("inner_tol", base.newton.inner_tol);
    base.newton.backtracking = s.boolean("backtracking", base.newton.backtracking);
    if (auto solver = s.string("solver")) {
      if (*solver == "direct") base.newton.solver = InnerSolver::direct;
      else if (*solver == "cg") base.newton.solver = InnerSolver::cg;
      else throw ConfigError("optimizer.newton: key 'solver' must be direct or cg");
    }
    if (auto ord = s.string("ordering")) {
      if (*ord == "automatic") base.newton.ordering = Ordering::automatic;
      else if (*ord == "rcm") base.newton.ordering = Ordering::rcm;
      else if (*ord == "nested_dissection") base.newton.ordering = Ordering::nested_dissection;
      else if (*ord == "natural") base.newton.ordering = Ordering::natural;
      else throw ConfigError("optimizer.newton: key 'ordering' must be automatic, rcm, nested_dissection or natural");
    }
    s.done();
  }
  k.done();
  try {
    base.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("optimizer: ") + e.what());
  }
  return base;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream& log) {
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw ConfigError("output_dir '" + config.output_dir.string() + "': " + ec.message());

  json spec = config.problem;
  const std::string kind = spec.value("problem", "");
  if (kind == "complexity") {
    if (!spec.contains("seed")) spec["seed"] = config.seed;
    ExperimentConfig c = config;
    c.problem = spec;
    return run_complexity(c, log);
  }
  if (kind == "cavity_reconstruct" && spec.contains("sample") && spec["sample"].is_object() &&
      !spec["sample"].contains("seed"))
    spec["sample"]["seed"] = config.seed;

  ProblemSetup setup;
  try {
    setup = build_from_json(spec);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  Problem& problem = setup.problem;
  OptConfig opt = optimizer_from_json(config.optimizer, setup.default_optimizer);
  if (config.reference) problem.set_reference(load_reference(*config.reference, problem));

  const int stride = std::max(1, opt.max_epochs / 20);
  opt.on_epoch = [&](const EpochRecord& r, std::span<const double> x) {
    if (r.epoch % stride == 0 || r.epoch == opt.max_epochs)
      log << "epoch " << r.epoch << " loss " << r.loss << " grad_inf " << r.grad_inf << " error " << r.error << "\n";
    if (config.dump_every > 0 && r.epoch % config.dump_every == 0) {
      std::ostringstream name;
      name << "dump_" << std::setw(6) << std::setfill('0') << r.epoch;
      const fs::path dir = config.output_dir / name.str();
      fs::create_directories(dir);
      save_solution(dir, problem, x);
    }
  };

  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  json& s = res.summary;
  s["problem"] = setup.kind;
  RunReport report;
  try {
    report = minimize(problem, setup.x0, opt);
  } catch (const Error& e) {
    s["final_loss"] = nullptr;
    s["final_error"] = nullptr;
    s["epochs"] = 0;
    s["termination"] = std::string("error: ") + e.what();
    s["wall_time_s"] = seconds_since(t0);
    write_json(config.output_dir / "summary.json", s);
    res.exit_code = 2;
    return res;
  }
  const double wall = seconds_since(t0);
  write_history_csv(report, config.output_dir / "history.csv");
  save_solution(config.output_dir, problem, report.x);
  s["final_loss"] = finite_or_null(report.final_loss());
  s["final_error"] = finite_or_null(report.final_error());
  s["epochs"] = report.epochs();
  s["termination"] = report.termination;
  s["wall_time_s"] = wall;
  if (!problem.param_names().empty()) s["params"] = problem.params(report.x);
  if (setup.kind == "cavity") s["max_divergence"] = max_divergence(problem, report.x);
  if (setup.kind == "tracer") {
    const auto m = tracer_mean_velocity(problem, report.x);
    s["mean_velocity"] = {m[0], m[1]};
  }
  write_json(config.output_dir / "summary.json", s);
  log << "termination " << report.termination << " after " << report.epochs() << " epochs, loss "
      << report.final_loss() << ", " << wall << " s\n";
  res.exit_code = report.ok() ? 0 : 2;
  return res;
}

}  // namespace odil
