#include "odil/optimizers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>

#include "odil/error.hpp"

namespace odil {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::abs(e));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// Records epochs and applies the stopping rules shared by all methods.
class Tracker {
 public:
  Tracker(Problem& p, const OptConfig& c, std::span<const double> x0) : problem_(p), config_(c) {
    c.validate();
    if (static_cast<std::int64_t>(x0.size()) != p.total_dofs())
      throw Error("x0 has length " + std::to_string(x0.size()) + ", expected " +
                  std::to_string(p.total_dofs()));
    report.x.assign(x0.begin(), x0.end());
  }

  /// Returns true when the starting point already meets a tolerance.
  bool initial(double loss, std::span<const double> grad) {
    report.initial_loss = loss;
    report.initial_grad_inf = inf_norm(grad);
    report.initial_error = error(report.x);
    if (config_.grad_inf_tol > 0 && report.initial_grad_inf < config_.grad_inf_tol) return stop("grad_inf_tol");
    if (config_.loss_tol > 0 && loss < config_.loss_tol) return stop("loss_tol");
    if (config_.error_tol > 0 && report.initial_error < config_.error_tol) return stop("error_tol");
    if (config_.max_epochs == 0) return stop("max_epochs");
    return false;
  }

  /// Records the current iterate; returns true when the run should stop.
  bool record(double loss, std::span<const double> grad) {
    EpochRecord r;
    r.epoch = report.epochs() + 1;
    r.loss = loss;
    r.grad_inf = inf_norm(grad);
    r.error = error(report.x);
    r.time_s = std::chrono::duration<double>(Clock::now() - start_).count();
    report.history.push_back(r);
    if (config_.on_epoch) config_.on_epoch(r, report.x);
    if (config_.grad_inf_tol > 0 && r.grad_inf < config_.grad_inf_tol) return stop("grad_inf_tol");
    if (config_.loss_tol > 0 && r.loss < config_.loss_tol) return stop("loss_tol");
    if (config_.error_tol > 0 && r.error < config_.error_tol) return stop("error_tol");
    if (r.epoch >= config_.max_epochs) return stop("max_epochs");
    return false;
  }

  bool stop(const std::string& reason) {
    report.termination = reason;
    return true;
  }

  bool refresh() {
    if (!problem_.refresh) return false;
    problem_.refresh(problem_, report.x);
    return true;
  }

  RunReport report;

 private:
  double error(std::span<const double> x) const {
    return problem_.has_error_metric() ? problem_.error(x) : std::nan("");
  }

  Problem& problem_;
  const OptConfig& config_;
  Clock::time_point start_ = Clock::now();
};

// Loss that maps a non-finite evaluation to +inf so line searches back off.
double safe_loss(const Problem& p, std::span<const double> x) {
  try {
    return p.loss(x);
  } catch (const NonFiniteError&) {
    return kInf;
  }
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::adam: return "adam";
    case Method::lbfgs: return "lbfgs";
    case Method::newton: return "newton";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "adam") return Method::adam;
  if (s == "lbfgs") return Method::lbfgs;
  if (s == "newton") return Method::newton;
  throw Error("unknown optimizer '" + s + "' (valid: adam, lbfgs, newton)");
}

void OptConfig::validate() const {
  if (max_epochs < 0) throw Error("max_epochs must be nonnegative");
  if (!(adam.lr > 0)) throw Error("adam.lr must be positive");
  if (!(0 < adam.beta1 && adam.beta1 < adam.beta2 && adam.beta2 < 1))
    throw Error("adam betas must satisfy 0 < beta1 < beta2 < 1");
  if (!(adam.eps > 0)) throw Error("adam.eps must be positive");
  if (lbfgs.history < 1) throw Error("lbfgs.history must be at least 1");
  if (!(0 < lbfgs.c1 && lbfgs.c1 < lbfgs.c2 && lbfgs.c2 < 1))
    throw Error("lbfgs constants must satisfy 0 < c1 < c2 < 1");
  if (lbfgs.max_line_search < 1) throw Error("lbfgs.max_line_search must be at least 1");
  if (!(newton.damping >= 0)) throw Error("newton.damping must be nonnegative");
  if (!(newton.inner_tol > 0)) throw Error("newton.inner_tol must be positive");
}

bool RunReport::ok() const { return termination != "singular" && termination != "non_finite"; }

RunReport minimize_adam(Problem& problem, std::span<const double> x0, const OptConfig& config) {
  Tracker t(problem, config, x0);
  auto& x = t.report.x;
  const auto& c = config.adam;
  const std::size_t n = x.size();
  std::vector<double> g, m(n, 0.0), v(n, 0.0);
  try {
    t.refresh();
    double loss = problem.loss_and_gradient(x, g);
    if (t.initial(loss, g)) return t.report;
    double b1t = 1.0, b2t = 1.0;
    for (;;) {
      b1t *= c.beta1;
      b2t *= c.beta2;
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
        const double mhat = m[i] / (1 - b1t);
        const double vhat = v[i] / (1 - b2t);
        x[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
      }
      t.refresh();
      loss = problem.loss_and_gradient(x, g);
      if (t.record(loss, g)) break;
    }
  } catch (const NonFiniteError&) {
    t.stop("non_finite");
  }
  return t.report;
}

namespace {

struct LineSearchResult {
  bool ok = false;
  double alpha = 0.0;
  double loss = 0.0;
  std::vector<double> x, g;
};

// Strong Wolfe line search along p from x (loss f0, slope d0 < 0).
LineSearchResult strong_wolfe(const Problem& problem, std::span<const double> x, double f0, double d0,
                              std::span<const double> p, double alpha0, const OptConfig::Lbfgs& c) {
  LineSearchResult best;
  int evals = 0;
  struct Pt {
    double a, f, d;
  };
  auto eval = [&](double a) {
    ++evals;
    LineSearchResult r;
    r.alpha = a;
    r.x.assign(x.begin(), x.end());
    for (std::size_t i = 0; i < r.x.size(); ++i) r.x[i] += a * p[i];
    try {
      r.loss = problem.loss_and_gradient(r.x, r.g);
    } catch (const NonFiniteError&) {
      r.loss = kInf;
      r.g.assign(x.size(), std::nan(""));
    }
    return r;
  };
  auto slope = [&](const LineSearchResult& r) { return std::isfinite(r.loss) ? dot(r.g, p) : kInf; };
  auto armijo_fails = [&](const LineSearchResult& r) {
    return !(r.loss <= f0 + c.c1 * r.alpha * d0);
  };
  auto curvature_holds = [&](double d) { return std::abs(d) <= -c.c2 * d0; };

  auto zoom = [&](Pt lo, Pt hi) -> LineSearchResult {
    while (evals < c.max_line_search) {
      // cubic interpolation, safeguarded towards bisection
      double a = 0.5 * (lo.a + hi.a);
      if (std::isfinite(hi.f) && std::isfinite(hi.d)) {
        const double d1 = lo.d + hi.d - 3 * (lo.f - hi.f) / (lo.a - hi.a);
        const double disc = d1 * d1 - lo.d * hi.d;
        if (disc >= 0) {
          const double d2 = std::copysign(std::sqrt(disc), hi.a - lo.a);
          const double ac = hi.a - (hi.a - lo.a) * (hi.d + d2 - d1) / (hi.d - lo.d + 2 * d2);
          const double lo_b = std::min(lo.a, hi.a), hi_b = std::max(lo.a, hi.a);
          const double margin = 0.1 * (hi_b - lo_b);
          if (std::isfinite(ac) && ac > lo_b + margin && ac < hi_b - margin) a = ac;
        }
      }
      auto r = eval(a);
      const double d = slope(r);
      if (armijo_fails(r) || r.loss >= lo.f) {
        hi = {a, r.loss, d};
      } else {
        if (curvature_holds(d)) {
          r.ok = true;
          return r;
        }
        if (d * (hi.a - lo.a) >= 0) hi = lo;
        lo = {a, r.loss, d};
        best = std::move(r);
      }
    }
    return best;
  };

  Pt prev{0.0, f0, d0};
  double a = alpha0;
  while (evals < c.max_line_search) {
    auto r = eval(a);
    const double d = slope(r);
    if (armijo_fails(r) || (evals > 1 && r.loss >= prev.f)) return zoom(prev, {a, r.loss, d});
    if (curvature_holds(d)) {
      r.ok = true;
      return r;
    }
    if (d >= 0) {
      const Pt cur{a, r.loss, d};
      best = std::move(r);
      return zoom(cur, prev);
    }
    prev = {a, r.loss, d};
    best = std::move(r);
    a *= 2.0;
  }
  return best;
}

}  // namespace

RunReport minimize_lbfgs(Problem& problem, std::span<const double> x0, const OptConfig& config) {
  Tracker t(problem, config, x0);
  auto& x = t.report.x;
  const auto& c = config.lbfgs;
  const std::size_t n = x.size();
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> g;
  try {
    t.refresh();
    double loss = problem.loss_and_gradient(x, g);
    if (t.initial(loss, g)) return t.report;
    for (;;) {
      if (t.refresh()) {
        loss = problem.loss_and_gradient(x, g);
        s_hist.clear(), y_hist.clear(), rho_hist.clear();
      }
      // two-loop recursion
      std::vector<double> q = g;
      const std::size_t k = s_hist.size();
      std::vector<double> alpha(k);
      for (std::size_t i = k; i-- > 0;) {
        alpha[i] = rho_hist[i] * dot(s_hist[i], q);
        for (std::size_t j = 0; j < n; ++j) q[j] -= alpha[i] * y_hist[i][j];
      }
      const double gamma = k > 0 ? dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back()) : 1.0;
      for (auto& e : q) e *= gamma;
      for (std::size_t i = 0; i < k; ++i) {
        const double beta = rho_hist[i] * dot(y_hist[i], q);
        for (std::size_t j = 0; j < n; ++j) q[j] += (alpha[i] - beta) * s_hist[i][j];
      }
      std::vector<double> p(n);
      for (std::size_t j = 0; j < n; ++j) p[j] = -q[j];
      double d0 = dot(g, p);
      if (!(d0 < 0)) {
        // not a descent direction: restart from steepest descent
        s_hist.clear(), y_hist.clear(), rho_hist.clear();
        for (std::size_t j = 0; j < n; ++j) p[j] = -g[j];
        d0 = dot(g, p);
      }
      if (d0 == 0.0) {
        if (t.record(loss, g)) break;
        continue;
      }
      const double alpha0 = k > 0 ? 1.0 : std::min(1.0, 1.0 / norm2(g));
      auto ls = strong_wolfe(problem, x, loss, d0, p, alpha0, c);
      if (!ls.ok && !(ls.alpha > 0 && ls.loss < loss)) {
        // steepest-descent backtracking fallback
        s_hist.clear(), y_hist.clear(), rho_hist.clear();
        ls = LineSearchResult{};
        double a = std::min(1.0, 1.0 / norm2(g));
        const double gg = dot(g, g);
        for (int it = 0; it < 60 && !ls.ok; ++it, a *= 0.5) {
          std::vector<double> xt(x);
          for (std::size_t j = 0; j < n; ++j) xt[j] -= a * g[j];
          const double f = safe_loss(problem, xt);
          if (f <= loss - c.c1 * a * gg) {
            ls.ok = true;
            ls.alpha = a;
            ls.x = std::move(xt);
            ls.loss = problem.loss_and_gradient(ls.x, ls.g);
          }
        }
        if (!ls.ok) {
          t.stop("line_search_failed");
          break;
        }
      }
      std::vector<double> s(n), y(n);
      for (std::size_t j = 0; j < n; ++j) {
        s[j] = ls.x[j] - x[j];
        y[j] = ls.g[j] - g[j];
      }
      const double sy = dot(s, y);
      if (sy > 1e-10 * norm2(s) * norm2(y)) {
        s_hist.push_back(std::move(s));
        y_hist.push_back(std::move(y));
        rho_hist.push_back(1.0 / sy);
        if (static_cast<int>(s_hist.size()) > c.history) {
          s_hist.pop_front(), y_hist.pop_front(), rho_hist.pop_front();
        }
      }
      x = std::move(ls.x);
      g = std::move(ls.g);
      loss = ls.loss;
      if (t.record(loss, g)) break;
    }
  } catch (const NonFiniteError&) {
    t.stop("non_finite");
  }
  return t.report;
}

RunReport minimize_newton(Problem& problem, std::span<const double> x0, const OptConfig& config) {
  Tracker t(problem, config, x0);
  auto& x = t.report.x;
  const auto& c = config.newton;
  const std::size_t n = x.size();
  SparseCholesky chol;
  std::vector<double> g;
  try {
    t.refresh();
    double loss = problem.loss_and_gradient(x, g);
    if (t.initial(loss, g)) return t.report;
    for (;;) {
      t.refresh();
      loss = problem.loss(x);
      std::vector<double> delta;
      double damping = c.damping;
      NormalSystem sys = problem.normal_system(x, damping);
      for (int attempt = 0;; ++attempt) {
        try {
          if (c.solver == InnerSolver::direct) {
            if (!chol.analyzed() || !chol.matches(sys.a)) chol.analyze(sys.a, c.ordering);
            chol.factorize(sys.a);
            delta = chol.solve(sys.b);
            // iterative refinement against the normal-matrix conditioning
            double prev = kInf;
            for (int it = 0; it < 3; ++it) {
              auto res = sys.a.matvec(delta);
              for (std::size_t j = 0; j < n; ++j) res[j] = sys.b[j] - res[j];
              const double rn = norm2(res);
              if (!(rn < 0.5 * prev)) break;
              prev = rn;
              const auto corr = chol.solve(res);
              for (std::size_t j = 0; j < n; ++j) delta[j] += corr[j];
            }
          } else {
            delta = solve_cg(sys.a, sys.b, c.inner_tol, static_cast<int>(std::max<std::size_t>(100, 10 * n)))
                        .x;
          }
          break;
        } catch (const SingularMatrixError&) {
          if (attempt > 0) throw;
          // one retry with stronger damping
          const auto diag = sys.a.diagonal();
          const double mean = std::accumulate(diag.begin(), diag.end(), 0.0) / std::max<std::size_t>(1, n);
          const double extra = std::max(10.0 * damping, 1e-10 * std::max(mean, 1.0)) - damping;
          damping += extra;
          for (std::int64_t i = 0; i < sys.a.n_rows(); ++i) {
            for (auto k = sys.a.row_ptr()[i]; k < sys.a.row_ptr()[i + 1]; ++k)
              if (sys.a.col_idx()[k] == i) sys.a.vals()[k] += extra;
          }
        }
      }
      double alpha = 1.0;
      std::vector<double> xt(n);
      double ft = 0.0;
      for (;;) {
        for (std::size_t j = 0; j < n; ++j) xt[j] = x[j] + alpha * delta[j];
        if (!c.backtracking) break;
        ft = safe_loss(problem, xt);
        if (ft <= loss || alpha < std::ldexp(1.0, -20)) break;
        alpha *= 0.5;
      }
      if (c.backtracking && !(ft <= loss)) {
        t.stop("line_search_failed");
        break;
      }
      x = xt;
      loss = problem.loss_and_gradient(x, g);
      if (t.record(loss, g)) break;
    }
  } catch (const SingularMatrixError&) {
    t.stop("singular");
  } catch (const NonFiniteError&) {
    t.stop("non_finite");
  }
  return t.report;
}

RunReport minimize(Problem& problem, std::span<const double> x0, const OptConfig& config) {
  switch (config.method) {
    case Method::adam: return minimize_adam(problem, x0, config);
    case Method::lbfgs: return minimize_lbfgs(problem, x0, config);
    case Method::newton: return minimize_newton(problem, x0, config);
  }
  throw Error("unknown optimizer");
}

void write_history_csv(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "epoch,loss,grad_inf,error,time_s\n";
  for (const auto& r : report.history)
    out << r.epoch << ',' << r.loss << ',' << r.grad_inf << ',' << r.error << ',' << r.time_s << '\n';
}

}  // namespace odil
