// Command-line front end: `odil run` and `odil sweep`.

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "odil/experiment.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kConfigExit = 1;
constexpr int kFailureExit = 2;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw odil::ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw odil::ConfigError("config " + path.string() + ": " + e.what());
  }
}

int run_guarded(const odil::ExperimentConfig& config, std::ostream& log) {
  try {
    return odil::run_experiment(config, log).exit_code;
  } catch (const odil::ConfigError& e) {
    std::cerr << "odil: config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "odil: " << e.what() << "\n";
    return kFailureExit;
  }
}

// "17" -> 17, "0.5" -> 0.5, anything else stays a string.
json parse_value(const std::string& s) {
  std::size_t used = 0;
  try {
    const long long i = std::stoll(s, &used);
    if (used == s.size()) return i;
  } catch (const std::exception&) {
  }
  try {
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (const std::exception&) {
  }
  return s;
}

// Sets `value` at a dotted key path such as "sample.n_points".
void set_path(json& j, const std::string& path, const json& value) {
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw odil::ConfigError("sweep: empty --axis");
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    if (!node->contains(parts[k])) (*node)[parts[k]] = json::object();
    node = &(*node)[parts[k]];
    if (!node->is_object()) throw odil::ConfigError("sweep: '" + parts[k] + "' in --axis is not an object");
  }
  (*node)[parts.back()] = value;
}

struct SweepRow {
  double final_loss = NAN, final_error = NAN, epochs = NAN, time_s = NAN;
};

SweepRow read_row(const fs::path& dir) {
  SweepRow row;
  std::ifstream in(dir / "summary.json");
  if (!in) return row;
  json s;
  try {
    s = json::parse(in);
  } catch (const json::parse_error&) {
    return row;
  }
  auto num = [&](const char* key) {
    return s.contains(key) && s[key].is_number() ? s[key].get<double>() : NAN;
  };
  row = {num("final_loss"), num("final_error"), num("epochs"), num("wall_time_s")};
  return row;
}

int cmd_run(const fs::path& config_path, const std::optional<fs::path>& out, const std::optional<std::uint64_t>& seed) {
  odil::ExperimentConfig config;
  try {
    config = odil::experiment_from_json(read_json(config_path));
  } catch (const odil::ConfigError& e) {
    std::cerr << "odil: config error: " << e.what() << "\n";
    return kConfigExit;
  }
  if (out) config.output_dir = *out;
  if (seed) config.seed = *seed;
  return run_guarded(config, std::cout);
}

int cmd_sweep(const fs::path& config_path, const std::string& axis, const std::vector<std::string>& values,
              const std::optional<fs::path>& out, int jobs) {
  json base;
  std::vector<odil::ExperimentConfig> configs;
  fs::path root;
  try {
    base = read_json(config_path);
    root = out ? *out : fs::path(base.value("output_dir", std::string("out")));
    for (const auto& v : values) {
      json j = base;
      set_path(j, axis, parse_value(v));
      odil::ExperimentConfig c = odil::experiment_from_json(j);
      c.output_dir = root / (axis + "=" + v);
      configs.push_back(std::move(c));
    }
    fs::create_directories(root);
  } catch (const odil::ConfigError& e) {
    std::cerr << "odil: config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "odil: config error: " << e.what() << "\n";
    return kConfigExit;
  }

  // Each entry runs in its own forked worker and logs to its subdirectory.
  std::map<pid_t, std::size_t> running;
  std::vector<int> codes(configs.size(), kFailureExit);
  auto reap_one = [&] {
    int status = 0;
    const pid_t pid = ::wait(&status);
    if (pid <= 0) return;
    const std::size_t k = running.at(pid);
    running.erase(pid);
    codes[k] = WIFEXITED(status) ? WEXITSTATUS(status) : kFailureExit;
    std::cout << axis << "=" << values[k] << " exit " << codes[k] << "\n";
  };
  for (std::size_t k = 0; k < configs.size(); ++k) {
    while (static_cast<int>(running.size()) >= jobs) reap_one();
    std::cout.flush();  // the child must not inherit pending output
    const pid_t pid = ::fork();
    if (pid < 0) {
      std::cerr << "odil: fork failed\n";
      return kFailureExit;
    }
    if (pid == 0) {
      std::error_code ec;
      fs::create_directories(configs[k].output_dir, ec);
      std::ofstream log(configs[k].output_dir / "log.txt");
      const int code = run_guarded(configs[k], log);
      log.flush();
      std::_Exit(code);
    }
    running[pid] = k;
  }
  while (!running.empty()) reap_one();

  std::ofstream csv(root / "sweep.csv");
  csv << "value,final_loss,final_error,epochs,time_s\n" << std::setprecision(17);
  bool all_ok = true;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    SweepRow row;
    if (codes[k] == 0) row = read_row(configs[k].output_dir);
    else all_ok = false;
    csv << values[k] << "," << row.final_loss << "," << row.final_error << "," << row.epochs << "," << row.time_s
        << "\n";
  }
  std::cout << "wrote " << (root / "sweep.csv").string() << "\n";
  return all_ok ? 0 : kFailureExit;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-loss PDE optimization experiments"};
  app.require_subcommand(1);

  fs::path run_config;
  std::optional<fs::path> run_out;
  std::optional<std::uint64_t> run_seed;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", run_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_out, "Output directory (overrides output_dir)");
  run->add_option("--seed", run_seed, "Random seed (overrides seed)");

  fs::path sweep_config;
  std::string axis;
  std::vector<std::string> values;
  std::optional<fs::path> sweep_out;
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run one experiment per value of a config key");
  sweep->add_option("config", sweep_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", axis, "Config key to vary; dots reach nested keys")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
  sweep->add_option("--out", sweep_out, "Root output directory");
  sweep->add_option("--jobs", jobs, "Parallel worker processes")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }
  if (*run) return cmd_run(run_config, run_out, run_seed);
  return cmd_sweep(sweep_config, axis, values, sweep_out, jobs);
}
