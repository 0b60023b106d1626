#pragma once

// G-CG-LS: block coordinate descent on F(u, z) alternating J scale-variable
// steps with one Tikhonov update of u, plus convergence diagnostics.

#include "common.hpp"
#include "covariance.hpp"
#include "regularizer.hpp"
#include "scale_step.hpp"
#include "sensing.hpp"
#include "tikhonov.hpp"

#include <algorithm>
#include <chrono>
#include <optional>
#include <ostream>
#include <vector>

namespace cginvert {

struct SolverConfig {
  int K = 50;
  int J = 1;
  double b = 10.0;  // z0 clamp bound
  TikhonovMode tikhonov = TikhonovMode::Exact;
  NagdConfig nagd;
  ZStepMethod method = ZStepMethod::Ista;
  LinesearchConfig linesearch;
  double stop_tol = 0.0;  // 0 runs exactly K iterations
  std::optional<double> max_wall;
  bool monotone_guard = true;
  double guard_tol = 1e-10;
  double eta_probe = 1.0;  // step size for the final z stationarity residual

  void validate() const {
    if (K < 1) throw ConfigError("solver.K must be >= 1");
    if (J < 1) throw ConfigError("solver.J must be >= 1");
    if (!(b > 0.0)) throw ConfigError("solver.b must be positive");
    if (stop_tol < 0.0) throw ConfigError("solver.stop_tol must be nonnegative");
    linesearch.validate();
  }
};

/// One accepted scale-variable step.
struct ZStepRecord {
  int k = 0;
  int j = 0;
  double eta = 0.0;
  double decrease = 0.0;       // F before minus F after
  double step_sq = 0.0;        // ||z' - z||^2
  double decrease_const = 0.0; // c in F(z) - F(z') >= c ||z' - z||^2
};

struct SolveReport {
  Vec c_star;
  CGState state;
  bool converged = false;
  int iterations = 0;
  double stationarity_u = 0.0;  // ||grad_u F||_2 at the final iterate
  StationarityResidual stationarity_z;
  double initial_cost = 0.0;
  int z0_lifted = 0;  // zero entries of z0 raised to the domain floor
  std::vector<ZStepRecord> zsteps;
};

namespace detail {

/// c in the per-step sufficient-decrease bound for the configured step rule.
inline double decrease_constant(const SolverConfig& cfg, const ScaleRegularizer& r, double eta) {
  if (cfg.linesearch.mode == LinesearchMode::Backtrack)
    return cfg.method == ZStepMethod::Pgd ? cfg.linesearch.alpha : 0.5 * (1.0 / eta - r.weak_convexity());
  // fixed step at eta = 1/L: PGD gives 1/eta - L/2, ISTA gives 1/(2 eta)
  return 1.0 / (2.0 * eta);
}

}  // namespace detail

/// z0 = clamp_[0,b](A^T y / ||A||_2)
inline Vec initial_scale(const SensingModel& model, const Vec& y, double b) {
  require_size(y.size(), model.rows(), "initial_scale");
  const double nrm = model.a_norm();
  Vec aty = model.adjoint(y);
  if (nrm > 0.0) aty /= nrm;
  return clamp_box(aty, 0.0, b);
}

inline SolveReport solve(const SensingModel& model, const Vec& y, const CovarianceParam& p,
                         const ScaleRegularizer& r, const SolverConfig& cfg) {
  cfg.validate();
  require_size(y.size(), model.rows(), "solve(y)");
  require_size(p.size(), model.cols(), "solve(P)");
  const auto start = std::chrono::steady_clock::now();
  const Index n = model.cols();

  SolveReport rep;
  Vec z = initial_scale(model, y, cfg.b);
  if (r.open_domain()) {
    for (Index i = 0; i < n; ++i)
      if (z[i] < r.domain_floor) {
        z[i] = r.domain_floor;
        ++rep.z0_lifted;
      }
  }
  Vec u = cfg.tikhonov == TikhonovMode::Exact ? tikhonov_solve(z, model, y, p)
                                              : tikhonov_nagd(Vec::Zero(n), z, model, y, p, cfg.nagd);

  auto& trace = rep.state.trace;
  double f_prev = cost(u, z, model, y, p, r);
  rep.initial_cost = f_prev;
  trace.push_back({0, "init", f_prev, 0.0, 0.0});

  auto guard = [&](double f_new, int k, const char* block) {
    if (cfg.monotone_guard && f_new > f_prev + cfg.guard_tol)
      throw NumericalError("cost increased during " + std::string(block) + " block of iteration " +
                           std::to_string(k) + " (" + std::to_string(f_prev) + " -> " + std::to_string(f_new) + ")");
  };

  for (int k = 1; k <= cfg.K; ++k) {
    const Vec z_start = z;
    const double uterm = 0.5 * u.dot(p.solve(u));
    for (int j = 1; j <= cfg.J; ++j) {
      ZStepResult st = scale_step(z, u, model, y, r, cfg.linesearch, cfg.method);
      const double step_norm = (st.z - z).norm();
      const double f_new = st.cost_after + uterm;
      guard(f_new, k, "z");
      rep.zsteps.push_back({k, j, st.eta, st.cost_before - st.cost_after, step_norm * step_norm,
                            detail::decrease_constant(cfg, r, st.eta)});
      trace.push_back({k, "z", f_new, step_norm, st.eta});
      z = std::move(st.z);
      f_prev = f_new;
    }
    const Vec u_prev = u;
    u = cfg.tikhonov == TikhonovMode::Exact ? tikhonov_solve(z, model, y, p)
                                            : tikhonov_nagd(u, z, model, y, p, cfg.nagd);
    const double f_new = cost(u, z, model, y, p, r);
    guard(f_new, k, "u");
    const double du = (u - u_prev).norm();
    trace.push_back({k, "u", f_new, du, 0.0});
    f_prev = f_new;
    rep.iterations = k;

    if (cfg.stop_tol > 0.0) {
      const double dz = (z - z_start).norm();
      if (std::sqrt(dz * dz + du * du) < cfg.stop_tol) {
        rep.converged = true;
        break;
      }
    }
    if (cfg.max_wall) {
      const std::chrono::duration<double> el = std::chrono::steady_clock::now() - start;
      if (el.count() > *cfg.max_wall) break;
    }
  }

  rep.c_star = z.cwiseProduct(u);
  rep.stationarity_u = grad_u(u, z, model, y, p).norm();
  rep.stationarity_z = stationarity_residual(z, u, model, y, r, cfg.method, cfg.eta_probe);
  rep.state.u = std::move(u);
  rep.state.z = std::move(z);
  return rep;
}

struct SolveDiagnostics {
  std::vector<double> margins;  // decrease - c ||dz||^2 per z-step
  double min_margin = kInf;
  bool monotone = true;          // no trace increase beyond the slack
  double max_increase = 0.0;     // largest F increase between consecutive blocks
  double final_cost = 0.0;
  double grad_u_norm = 0.0;
  StationarityResidual z_residual;
  double telescoping_lhs = 0.0;  // sum_k sum_j c ||dz||^2
  double telescoping_rhs = 0.0;  // F(u0, z0) - F_final
  bool telescoping_holds = false;
  double tail_spread = 0.0;      // max - min over the last 10 iterates' costs
  std::size_t zstep_count = 0;
};

/// `slack` is the absolute cost increase tolerated as rounding when judging monotonicity.
inline SolveDiagnostics diagnostics(const SolveReport& rep, double slack = 1e-10) {
  SolveDiagnostics d;
  for (const auto& s : rep.zsteps) {
    const double m = s.decrease - s.decrease_const * s.step_sq;
    d.margins.push_back(m);
    d.min_margin = std::min(d.min_margin, m);
    d.telescoping_lhs += s.decrease_const * s.step_sq;
  }
  d.zstep_count = rep.zsteps.size();
  const auto& tr = rep.state.trace;
  for (std::size_t i = 1; i < tr.size(); ++i) {
    const double inc = tr[i].cost - tr[i - 1].cost;
    d.max_increase = std::max(d.max_increase, inc);
    if (inc > slack) d.monotone = false;
  }
  d.final_cost = tr.empty() ? 0.0 : tr.back().cost;
  d.telescoping_rhs = rep.initial_cost - d.final_cost;
  d.telescoping_holds = d.telescoping_lhs <= d.telescoping_rhs + 1e-12 * (1.0 + std::abs(rep.initial_cost));
  // last 10 iterate costs: the "u" records close each outer iteration
  std::vector<double> tail;
  for (auto it = tr.rbegin(); it != tr.rend() && tail.size() < 10; ++it)
    if (it->block == "u") tail.push_back(it->cost);
  if (!tail.empty()) {
    auto [lo, hi] = std::minmax_element(tail.begin(), tail.end());
    d.tail_spread = *hi - *lo;
  }
  d.grad_u_norm = rep.stationarity_u;
  d.z_residual = rep.stationarity_z;
  return d;
}

/// Trace as CSV with columns iter,block,F,step_norm,eta.
inline void write_trace_csv(std::ostream& os, const CGState& state) {
  os.precision(17);
  os << "iter,block,F,step_norm,eta\n";
  for (const auto& t : state.trace)
    os << t.iter << ',' << t.block << ',' << t.cost << ',' << t.step_norm << ',' << t.eta << '\n';
}

}  // namespace cginvert
