#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "json.hpp"

#include "odil/error.hpp"
#include "odil/optimizers.hpp"

namespace odil {

/// Raised for malformed configuration; the CLI maps it to exit code 1.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Experiment file: problem spec keys at the top level plus
/// `optimizer`, `output_dir`, `seed`, `reference` and `dump_every`.
struct ExperimentConfig {
  nlohmann::json problem;
  nlohmann::json optimizer = nlohmann::json::object();
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  /// A path to a field pair (single-unknown problems) or {field: path}.
  std::optional<nlohmann::json> reference;
  int dump_every = 0;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Overlays the keys of `j` on `base`. Nested `adam`, `lbfgs` and `newton`
/// objects hold the method-specific settings.
OptConfig optimizer_from_json(const nlohmann::json& j, OptConfig base);

struct ExperimentResult {
  int exit_code = 0;  // 0 normal, 2 solver failure
  nlohmann::json summary;
};

/// Runs one experiment and writes history.csv, summary.json and the
/// solution fields under `output_dir`. Progress lines go to `log`.
/// Throws ConfigError on configuration problems.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream& log);

}  // namespace odil
