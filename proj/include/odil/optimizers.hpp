#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "odil/problem.hpp"

namespace odil {

enum class Method { adam, lbfgs, newton };
enum class InnerSolver { direct, cg };

std::string to_string(Method m);
/// Throws listing the valid names.
Method method_from_string(const std::string& s);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double grad_inf = 0.0;
  double error = 0.0;  // NaN when the problem has no error metric
  double time_s = 0.0;
};

struct OptConfig {
  Method method = Method::newton;
  int max_epochs = 100;

  struct Adam {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  } adam;

  struct Lbfgs {
    int history = 10;
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_line_search = 20;
  } lbfgs;

  struct Newton {
    double damping = 0.0;
    InnerSolver solver = InnerSolver::direct;
    double inner_tol = 1e-8;
    bool backtracking = true;
    Ordering ordering = Ordering::automatic;
  } newton;

  // A criterion is active when its tolerance is positive; the run stops
  // once the recorded value drops below it.
  double grad_inf_tol = 0.0;
  double loss_tol = 0.0;
  double error_tol = 0.0;

  /// Invoked on the calling thread after each recorded epoch.
  std::function<void(const EpochRecord&, std::span<const double>)> on_epoch;

  void validate() const;
};

struct RunReport {
  double initial_loss = 0.0;
  double initial_grad_inf = 0.0;
  double initial_error = 0.0;
  std::vector<EpochRecord> history;  // epochs 1..n
  std::vector<double> x;
  std::string termination;

  int epochs() const { return static_cast<int>(history.size()); }
  double final_loss() const { return history.empty() ? initial_loss : history.back().loss; }
  double final_error() const { return history.empty() ? initial_error : history.back().error; }
  /// True unless the run stopped on a numerical failure.
  bool ok() const;
};

RunReport minimize_adam(Problem& problem, std::span<const double> x0, const OptConfig& config);
RunReport minimize_lbfgs(Problem& problem, std::span<const double> x0, const OptConfig& config);
RunReport minimize_newton(Problem& problem, std::span<const double> x0, const OptConfig& config);
/// Dispatches on config.method.
RunReport minimize(Problem& problem, std::span<const double> x0, const OptConfig& config);

/// Header `epoch,loss,grad_inf,error,time_s`, one row per recorded epoch.
void write_history_csv(const RunReport& report, const std::filesystem::path& path);

}  // namespace odil
