#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "odil/optimizers.hpp"
#include "odil/problem.hpp"

namespace odil {

// ---------------------------------------------------------------- wave

struct WaveSpec {
  int nx = 33;
  int nt = 33;
};

/// Exact solution used for boundary and initial data.
double wave_exact(double x, double t);
double wave_exact_dt(double x, double t);

/// Unknown `u` on an (nt, nx) node grid over t in [0, 1], x in [-1, 1].
/// Blocks: `interior`, `boundary` (u - g on the x-boundaries and t = 0) and
/// `initial_velocity` (second time layer from u_t). The reference is the
/// exact solution sampled on the grid; `g` is the known boundary data.
Problem build_wave(const WaveSpec& spec);

// ---------------------------------------------------------------- cavity

enum class CavityMode { forward, reconstruct };
enum class WallCondition { no_slip, free_slip, extrapolate };

struct DataPoint {
  double x, y, u, v;
};

struct CavitySpec {
  int n = 64;
  double re = 100.0;
  CavityMode mode = CavityMode::forward;
  double lid_velocity = 1.0;
  bool deferred_correction = false;
  std::vector<DataPoint> data_points;
  double k_reg = 1e-4;
  /// Weight on the data residuals (reconstruct mode).
  double data_weight = 1.0;
  /// Defaults to no-slip for the forward mode and free-slip otherwise.
  std::optional<WallCondition> walls;
};

/// Cell-centered grid of n x n cells on the unit square padded with one
/// ghost layer; axis 0 is x, axis 1 is y.
Grid cavity_grid(int n);

/// Unknowns `u`, `v`, `p` on `cavity_grid(n)`. Interior cells carry
/// `momentum_x`, `momentum_y` and `continuity*` blocks (the latter split by
/// how many faces lie on a wall); ghost cells carry the wall conditions and
/// `gauge` pins p in the first interior cell.
Problem build_cavity_forward(const CavitySpec& spec);
Problem build_cavity_reconstruct(const CavitySpec& spec);

/// Converges the forward problem with Newton to roundoff and returns the
/// fields; used as the reference for error tracking.
FieldMap solve_cavity_reference(const CavitySpec& spec, int max_epochs = 40);

/// Largest |continuity residual| over all interior cells.
double max_divergence(const Problem& problem, std::span<const double> x);

/// Relative L2 error of (u, v) over interior cells.
double velocity_error_l2(const FieldMap& fields, const FieldMap& reference);
/// Relative L1 error of the velocity magnitude over interior cells.
double velocity_error_l1(const FieldMap& fields, const FieldMap& reference);

/// `count` distinct interior cells drawn uniformly with `seed`, returned in
/// draw order so that prefixes of one draw are nested.
std::vector<std::array<int, 2>> sample_cells(int n, int count, std::uint64_t seed);
std::vector<DataPoint> data_from_fields(const FieldMap& fields, const std::vector<std::array<int, 2>>& cells);

// ---------------------------------------------------------------- complexity

enum class FlowKind { uniform, couette, poiseuille, cavity };

struct ComplexitySpec {
  FlowKind flow = FlowKind::uniform;
  int n = 64;
  double k_reg = 1e-3;
  int n_samples = 64;
  double eps = 0.05;
  std::uint64_t seed = 0;
  double re = 100.0;
  double angle_deg = 30.0;
  int k_max = 64;
  std::optional<int> k_fixed;  // evaluate E(K) at this K instead of scanning
  OptConfig optimizer = default_complexity_optimizer();

  static OptConfig default_complexity_optimizer();
};

/// Reference velocity (u, v over the padded cavity grid) for a flow kind.
FieldMap complexity_reference(const ComplexitySpec& spec);

struct ComplexityResult {
  double estimate = 0.0;             // min over samples
  std::vector<double> sample_errors;  // by sample index
  int best_sample = 0;
  RunReport best_report;
};

ComplexityResult complexity_E(const ComplexitySpec& spec, int k);
ComplexityResult complexity_E(const ComplexitySpec& spec, int k, const FieldMap& reference);

struct KminResult {
  int k = 0;
  bool capped = false;
  std::vector<double> estimates;  // E(1), E(2), ...
};

KminResult complexity_Kmin(const ComplexitySpec& spec, double eps);

/// Reconstruction problem used by the complexity measure: walls extrapolated,
/// error metric = relative L1 of velocity magnitude against `reference`.
Problem build_complexity_problem(const ComplexitySpec& spec, const FieldMap& reference,
                                 const std::vector<std::array<int, 2>>& cells);

// ---------------------------------------------------------------- tracer

struct TracerSpec {
  int nx = 64, ny = 64, nt = 64;
  Field c0, c1;  // on tracer_space_grid(nx, ny)
  double smooth_coef = 1e-3;
  bool unsteady_velocity = false;
};

/// Node grid on the unit square, axis 0 = y, axis 1 = x.
Grid tracer_space_grid(int nx, int ny);
/// Node grid (nt, ny, nx) over t in [0, 1].
Grid tracer_grid(int nx, int ny, int nt);

/// Unknowns `c` (space-time) and `u`, `v` (steady, or space-time with
/// `unsteady_velocity`). Blocks: `advection`, `initial`, `final`,
/// `smooth_u`, `smooth_v`, and `steady_u`, `steady_v` when unsteady.
Problem build_tracer(const TracerSpec& spec);

/// Marches c0 forward with the same upwind scheme under a constant velocity.
Field advect_upwind(const Field& c0, int nt, double u, double v);

/// Gaussian blob on the tracer space grid.
Field tracer_blob(int nx, int ny, double cx, double cy, double width);

/// Velocity averaged with weights c0 + c1 (the region the tracer visits).
std::array<double, 2> tracer_mean_velocity(const Problem& problem, std::span<const double> x);

// ---------------------------------------------------------------- config

/// A problem built from JSON together with the settings needed to run it.
struct ProblemSetup {
  std::string kind;
  Problem problem;
  std::vector<double> x0;
  OptConfig default_optimizer;
};

/// Builds a problem from a JSON object with a "problem" key
/// (wave, cavity, cavity_reconstruct, complexity, tracer). Throws
/// Error naming the offending key.
ProblemSetup build_from_json(const nlohmann::json& spec);
ComplexitySpec complexity_from_json(const nlohmann::json& spec);

}  // namespace odil
