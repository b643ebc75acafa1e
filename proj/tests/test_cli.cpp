#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "odil/experiment.hpp"
#include "odil/field_io.hpp"
#include "odil/problems.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("odil_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }

  fs::path write(const std::string& name, const json& j) const {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }
};

struct Outcome {
  int code = -1;
  std::string err;
};

Outcome odil_cli(const std::string& args, const fs::path& scratch) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(ODIL_CLI) + " " + args + " > " + (scratch / "stdout.txt").string() + " 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  o.err = ss.str();
  return o;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Drops the trailing time_s column of a history row.
std::string without_time(const std::string& row) { return row.substr(0, row.rfind(',')); }

}  // namespace

TEST_CASE("run: wave with Newton stops after one epoch") {
  Scratch s("wave");
  const auto cfg = s.write("c.json", {{"problem", "wave"}, {"nx", 17}});
  const auto o = odil_cli(cfg.string() + " --out " + (s.dir / "out").string(), s.dir);
  // The first token must be the subcommand; without it CLI11 rejects the call.
  CHECK(o.code == 1);
  const auto r = odil_cli("run " + cfg.string() + " --out " + (s.dir / "out").string(), s.dir);
  REQUIRE(r.code == 0);
  const json sum = read_json(s.dir / "out" / "summary.json");
  CHECK(sum["epochs"] == 1);
  CHECK(sum["termination"] == "grad_inf_tol");
  for (const char* k : {"final_loss", "final_error", "epochs", "termination", "wall_time_s"}) CHECK(sum.contains(k));

  // The reported error is the discretization error against the exact solution.
  const odil::Field u = odil::load_field(s.dir / "out" / "solution_u");
  REQUIRE(u.grid.dim(0) == 17);
  double num = 0, den = 0;
  for (int it = 0; it < u.grid.dim(0); ++it)
    for (int ix = 0; ix < u.grid.dim(1); ++ix) {
      const double e = odil::wave_exact(u.grid.coord(1, ix), u.grid.coord(0, it));
      const double d = u.at({it, ix, 0}) - e;
      num += d * d;
      den += e * e;
    }
  CHECK(sum["final_error"].get<double>() == doctest::Approx(std::sqrt(num / den)).epsilon(1e-12));
  CHECK(lines(s.dir / "out" / "history.csv").size() == 2);
}

TEST_CASE("run: adam history has one row per epoch plus the header") {
  Scratch s("adam");
  const auto cfg = s.write("c.json", {{"problem", "cavity"},
                                      {"n", 12},
                                      {"Re", 100},
                                      {"output_dir", (s.dir / "out").string()},
                                      {"optimizer", {{"method", "adam"}, {"max_epochs", 50}, {"adam", {{"lr", 1e-3}}}}}});
  const auto r = odil_cli("run " + cfg.string(), s.dir);
  REQUIRE(r.code == 0);
  const auto rows = lines(s.dir / "out" / "history.csv");
  CHECK(rows.size() == 51);
  CHECK(read_json(s.dir / "out" / "summary.json")["termination"] == "max_epochs");
  for (const char* f : {"u", "v", "p"}) {
    CHECK(fs::exists(s.dir / "out" / ("solution_" + std::string(f) + ".json")));
    CHECK(fs::exists(s.dir / "out" / ("solution_" + std::string(f) + ".raw")));
  }
}

TEST_CASE("run: configuration errors exit with 1 and name the problem") {
  Scratch s("errors");
  SUBCASE("invalid optimizer lists the valid methods") {
    const auto cfg = s.write("c.json", {{"problem", "wave"}, {"optimizer", {{"method", "sgd"}}}});
    const auto r = odil_cli("run " + cfg.string() + " --out " + (s.dir / "o").string(), s.dir);
    CHECK(r.code == 1);
    CHECK(r.err.find("adam, lbfgs, newton") != std::string::npos);
  }
  SUBCASE("unknown problem key") {
    const auto cfg = s.write("c.json", {{"problem", "wave"}, {"nxx", 9}});
    const auto r = odil_cli("run " + cfg.string() + " --out " + (s.dir / "o").string(), s.dir);
    CHECK(r.code == 1);
    CHECK(r.err.find("'nxx'") != std::string::npos);
  }
  SUBCASE("unknown optimizer key") {
    const auto cfg = s.write("c.json", {{"problem", "wave"}, {"optimizer", {{"newton", {{"dampng", 1}}}}}});
    const auto r = odil_cli("run " + cfg.string() + " --out " + (s.dir / "o").string(), s.dir);
    CHECK(r.code == 1);
    CHECK(r.err.find("'dampng'") != std::string::npos);
  }
  SUBCASE("missing reference file") {
    const auto cfg = s.write("c.json", {{"problem", "wave"}, {"reference", (s.dir / "nope").string()}});
    const auto r = odil_cli("run " + cfg.string() + " --out " + (s.dir / "o").string(), s.dir);
    CHECK(r.code == 1);
    CHECK(r.err.find("reference") != std::string::npos);
  }
  SUBCASE("malformed JSON") {
    std::ofstream(s.dir / "c.json") << "{\"problem\": ";
    CHECK(odil_cli("run " + (s.dir / "c.json").string(), s.dir).code == 1);
  }
}

TEST_CASE("run: a stored solution used as reference gives zero error") {
  Scratch s("reference");
  const auto cfg = s.write("c.json", {{"problem", "wave"}, {"nx", 9}});
  REQUIRE(odil_cli("run " + cfg.string() + " --out " + (s.dir / "a").string(), s.dir).code == 0);
  const auto cfg2 = s.write("d.json", {{"problem", "wave"}, {"nx", 9}, {"reference", (s.dir / "a" / "solution_u").string()}});
  REQUIRE(odil_cli("run " + cfg2.string() + " --out " + (s.dir / "b").string(), s.dir).code == 0);
  CHECK(read_json(s.dir / "b" / "summary.json")["final_error"].get<double>() < 1e-12);
}

TEST_CASE("run: identical config and seed give identical histories") {
  Scratch s("determinism");
  const json cfg = {{"problem", "cavity_reconstruct"},
                    {"n", 12},
                    {"sample", {{"n_points", 8}}},
                    {"optimizer", {{"max_epochs", 4}}}};
  const auto path = s.write("c.json", cfg);
  REQUIRE(odil_cli("run " + path.string() + " --seed 3 --out " + (s.dir / "a").string(), s.dir).code <= 2);
  REQUIRE(odil_cli("run " + path.string() + " --seed 3 --out " + (s.dir / "b").string(), s.dir).code <= 2);
  REQUIRE(odil_cli("run " + path.string() + " --seed 4 --out " + (s.dir / "c").string(), s.dir).code <= 2);
  const auto a = lines(s.dir / "a" / "history.csv"), b = lines(s.dir / "b" / "history.csv"),
             c = lines(s.dir / "c" / "history.csv");
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() > 1);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(without_time(a[k]) == without_time(b[k]));
  CHECK(without_time(a[1]) != without_time(c[1]));
}

TEST_CASE("run: solution files round-trip to the in-memory result exactly") {
  Scratch s("roundtrip");
  const json cfg = {{"problem", "tracer"}, {"nx", 6}, {"nt", 4}, {"synthetic", {{"velocity", {0.2, 0.1}}}},
                    {"optimizer", {{"max_epochs", 2}}}, {"output_dir", (s.dir / "out").string()}};
  std::ostringstream log;
  const auto res = odil::run_experiment(odil::experiment_from_json(cfg), log);
  CHECK(res.exit_code <= 2);

  // Same run in memory.
  auto setup = odil::build_from_json({{"problem", "tracer"}, {"nx", 6}, {"nt", 4}, {"synthetic", {{"velocity", {0.2, 0.1}}}}});
  auto opt = setup.default_optimizer;
  opt.max_epochs = 2;
  const auto report = odil::minimize(setup.problem, setup.x0, opt);
  for (const auto& [name, f] : setup.problem.fields(report.x)) {
    const odil::Field g = odil::load_field(s.dir / "out" / ("solution_" + name));
    REQUIRE(g.grid == f.grid);
    for (std::int64_t k = 0; k < f.grid.size(); ++k) REQUIRE(g[k] == f[k]);
  }
}

TEST_CASE("run: dump_every writes intermediate fields") {
  Scratch s("dumps");
  const json cfg = {{"problem", "cavity"}, {"n", 8}, {"dump_every", 2}, {"optimizer", {{"max_epochs", 4}, {"loss_tol", 0}}}};
  const auto path = s.write("c.json", cfg);
  REQUIRE(odil_cli("run " + path.string() + " --out " + (s.dir / "o").string(), s.dir).code <= 2);
  const auto epochs = read_json(s.dir / "o" / "summary.json")["epochs"].get<int>();
  for (int e = 2; e <= epochs; e += 2) {
    char name[32];
    std::snprintf(name, sizeof name, "dump_%06d", e);
    CHECK(fs::exists(s.dir / "o" / name / "solution_u.raw"));
  }
  CHECK_FALSE(fs::exists(s.dir / "o" / "dump_000001"));
}

TEST_CASE("run: complexity at fixed K reports the estimate") {
  Scratch s("complexity");
  const json cfg = {{"problem", "complexity"}, {"flow", "uniform"}, {"n", 12}, {"n_samples", 2}, {"K", 1}};
  const auto path = s.write("c.json", cfg);
  REQUIRE(odil_cli("run " + path.string() + " --out " + (s.dir / "o").string(), s.dir).code == 0);
  const json sum = read_json(s.dir / "o" / "summary.json");
  CHECK(sum["K"] == 1);
  CHECK(sum["estimate"].get<double>() <= 0.05);
  CHECK(sum["sample_errors"].size() == 2);
  CHECK(fs::exists(s.dir / "o" / "history.csv"));
}

TEST_CASE("sweep: one row per value, NaN for a failed entry") {
  Scratch s("sweep");
  const auto path = s.write("c.json", {{"problem", "wave"}});
  const auto r = odil_cli("sweep " + path.string() + " --axis nx --values 9,17,2 --jobs 2 --out " + (s.dir / "o").string(), s.dir);
  CHECK(r.code == 2);
  const auto rows = lines(s.dir / "o" / "sweep.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "value,final_loss,final_error,epochs,time_s");
  CHECK(rows[1].rfind("9,", 0) == 0);
  CHECK(rows[2].rfind("17,", 0) == 0);
  CHECK(rows[3] == "2,nan,nan,nan,nan");
  CHECK(fs::exists(s.dir / "o" / "nx=9" / "summary.json"));
  CHECK(fs::exists(s.dir / "o" / "nx=17" / "log.txt"));
}

TEST_CASE("sweep: a single value matches run") {
  Scratch s("sweep1");
  const auto path = s.write("c.json", {{"problem", "wave"}, {"nx", 5}});
  REQUIRE(odil_cli("sweep " + path.string() + " --axis nx --values 11 --out " + (s.dir / "s").string(), s.dir).code == 0);
  const auto p2 = s.write("d.json", {{"problem", "wave"}, {"nx", 11}});
  REQUIRE(odil_cli("run " + p2.string() + " --out " + (s.dir / "r").string(), s.dir).code == 0);
  const json a = read_json(s.dir / "s" / "nx=11" / "summary.json"), b = read_json(s.dir / "r" / "summary.json");
  CHECK(a["final_loss"] == b["final_loss"]);
  CHECK(a["final_error"] == b["final_error"]);
  CHECK(a["epochs"] == b["epochs"]);
}

TEST_CASE("sweep: nested axis reaches optimizer keys") {
  Scratch s("sweep_nested");
  const auto path = s.write("c.json", {{"problem", "cavity"}, {"n", 8}, {"optimizer", {{"method", "adam"}}}});
  REQUIRE(odil_cli("sweep " + path.string() + " --axis optimizer.max_epochs --values 3,5 --out " + (s.dir / "o").string(), s.dir).code == 0);
  CHECK(lines(s.dir / "o" / "optimizer.max_epochs=3" / "history.csv").size() == 4);
  CHECK(lines(s.dir / "o" / "optimizer.max_epochs=5" / "history.csv").size() == 6);
}

TEST_CASE("optimizer_from_json overlays keys on the base settings") {
  odil::OptConfig base;
  base.max_epochs = 7;
  const auto c = odil::optimizer_from_json(
      {{"method", "lbfgs"}, {"lbfgs", {{"history", 5}}}, {"newton", {{"solver", "cg"}, {"ordering", "rcm"}}}}, base);
  CHECK(c.method == odil::Method::lbfgs);
  CHECK(c.max_epochs == 7);
  CHECK(c.lbfgs.history == 5);
  CHECK(c.newton.solver == odil::InnerSolver::cg);
  CHECK(c.newton.ordering == odil::Ordering::rcm);
  CHECK_THROWS_AS(odil::optimizer_from_json({{"max_epochs", "ten"}}, base), odil::ConfigError);
  CHECK_THROWS_AS(odil::optimizer_from_json({{"newton", {{"solver", "lu"}}}}, base), odil::ConfigError);
  CHECK_THROWS_AS(odil::optimizer_from_json({{"max_epochs", -1}}, base), odil::ConfigError);
}

TEST_CASE("experiment_from_json separates experiment keys from the problem spec") {
  const auto c = odil::experiment_from_json(
      {{"problem", "wave"}, {"nx", 9}, {"seed", 5}, {"dump_every", 3}, {"output_dir", "x"}, {"optimizer", json::object()}});
  CHECK(c.problem == json({{"problem", "wave"}, {"nx", 9}}));
  CHECK(c.seed == 5);
  CHECK(c.dump_every == 3);
  CHECK(c.output_dir == fs::path("x"));
  CHECK_THROWS_AS(odil::experiment_from_json({{"nx", 9}}), odil::ConfigError);
  CHECK_THROWS_AS(odil::experiment_from_json({{"problem", "wave"}, {"seed", -1}}), odil::ConfigError);
  CHECK_THROWS_AS(odil::experiment_from_json(json::array()), odil::ConfigError);
}
