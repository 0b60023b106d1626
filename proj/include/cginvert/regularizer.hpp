#pragma once

// Scale-variable regularizer R(z), the cost
//   F(u, z) = 1/2 ||y - A(z . u)||^2 + 1/2 u^T P^{-1} u + R(z),
// and a grid check of the cost against the posterior it is the negative log of.

#include "common.hpp"
#include "covariance.hpp"
#include "sensing.hpp"

#include <string>
#include <vector>

namespace cginvert {

enum class RegKind { LogSquared, Zero, External };

inline constexpr double kDefaultDomainFloor = 1e-8;

struct ScaleRegularizer {
  RegKind kind = RegKind::Zero;
  double mu = 1.0;
  /// Lower bound of the closed domain used for projection. Zero for the
  /// Zero regularizer (domain [0, inf)^n).
  double domain_floor = 0.0;

  static ScaleRegularizer zero() { return {RegKind::Zero, 0.0, 0.0}; }
  static ScaleRegularizer log_squared(double mu, double floor = kDefaultDomainFloor) {
    if (!(mu > 0.0)) throw ConfigError("reg.mu must be positive");
    if (!(floor > 0.0)) throw ConfigError("log-squared regularizer needs a positive domain floor");
    return {RegKind::LogSquared, mu, floor};
  }

  bool open_domain() const { return kind == RegKind::LogSquared; }

  bool in_domain(const Vec& z) const {
    for (Index i = 0; i < z.size(); ++i) {
      if (!std::isfinite(z[i])) return false;
      if (open_domain() ? !(z[i] > 0.0) : z[i] < 0.0) return false;
    }
    return true;
  }

  void check_domain(const Vec& z, const char* where) const {
    if (kind == RegKind::External)
      throw ConfigError(std::string(where) + ": external regularizer has no explicit form");
    if (!in_domain(z)) throw DataError(std::string(where) + ": z outside the regularizer domain");
  }

  /// mu * sum log^2 z_i
  double value(const Vec& z) const {
    check_domain(z, "reg_value");
    if (kind == RegKind::Zero) return 0.0;
    double s = 0.0;
    for (Index i = 0; i < z.size(); ++i) {
      const double l = std::log(z[i]);
      s += l * l;
    }
    return mu * s;
  }

  /// 2 mu log(z_i) / z_i
  Vec grad(const Vec& z) const {
    check_domain(z, "reg_grad");
    if (kind == RegKind::Zero) return Vec::Zero(z.size());
    Vec g(z.size());
    for (Index i = 0; i < z.size(); ++i) g[i] = 2.0 * mu * std::log(z[i]) / z[i];
    return g;
  }

  /// Second derivative of the per-coordinate penalty.
  double curvature(double zi) const {
    if (kind != RegKind::LogSquared) return 0.0;
    return 2.0 * mu * (1.0 - std::log(zi)) / (zi * zi);
  }

  /// Largest |R''| over [lo, hi]; the extremes sit at an endpoint or at z = e^{3/2}.
  double curvature_bound(double lo, double hi) const {
    if (kind != RegKind::LogSquared) return 0.0;
    lo = std::max(lo, domain_floor);
    double best = std::max(std::abs(curvature(lo)), std::abs(curvature(hi)));
    const double crit = std::exp(1.5);
    if (crit > lo && crit < hi) best = std::max(best, std::abs(curvature(crit)));
    return best;
  }

  /// rho such that R + rho/2 ||z||^2 is convex: mu log^2 z bottoms out in
  /// curvature at z = e^{3/2} with value -mu / e^3.
  double weak_convexity() const { return kind == RegKind::LogSquared ? mu * std::exp(-3.0) : 0.0; }

  /// Projection onto the closed domain [floor, inf)^n.
  Vec project(const Vec& z) const {
    const double lo = domain_floor;
    return z.unaryExpr([lo](double v) { return v > lo ? v : lo; });
  }

  /// prox_{eta R}(v) over the closed domain, coordinate-wise.
  Vec prox(const Vec& v, double eta) const;
};

/// Minimizes 1/2 (x - v)^2 + eta*mu*log^2 x over x >= floor. Safeguarded Newton
/// on the stationarity equation with a bisection fallback.
inline double prox_log_squared_scalar(double v, double eta_mu, double floor) {
  auto f = [&](double x) { return x - v + 2.0 * eta_mu * std::log(x) / x; };
  auto df = [&](double x) { return 1.0 + 2.0 * eta_mu * (1.0 - std::log(x)) / (x * x); };
  if (eta_mu == 0.0) return std::max(v, floor);
  if (v == 1.0) return 1.0;
  // The root lies between v and 1 when v > 0; otherwise below 1.
  double lo, hi;
  if (v > 1.0) {
    lo = 1.0;
    hi = v;
  } else {
    hi = 1.0;
    lo = v > 0.0 ? v : 0.5;
    while (f(lo) > 0.0 && lo > 1e-300) lo *= 0.5;
  }
  if (f(lo) >= 0.0) return std::max(lo, floor);  // root below representable range
  double x = v > 0.0 ? v : 0.5 * (lo + hi);
  x = std::clamp(x, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double fx = f(x);
    if (std::abs(fx) < 1e-12) break;
    if (fx < 0.0)
      lo = x;
    else
      hi = x;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
    const double d = df(x);
    double nx = d > 0.0 ? x - fx / d : 0.5 * (lo + hi);
    if (!(nx > lo && nx < hi) || it >= 100) nx = 0.5 * (lo + hi);
    x = nx;
  }
  return std::max(x, floor);
}

inline Vec ScaleRegularizer::prox(const Vec& v, double eta) const {
  if (!(eta > 0.0)) throw ConfigError("prox step size must be positive");
  switch (kind) {
    case RegKind::Zero: return v.unaryExpr([](double x) { return relu(x); });
    case RegKind::LogSquared: {
      Vec out(v.size());
      for (Index i = 0; i < v.size(); ++i) out[i] = prox_log_squared_scalar(v[i], eta * mu, domain_floor);
      return out;
    }
    case RegKind::External: break;
  }
  throw ConfigError("prox: external regularizer has no explicit form");
}

/// A_u^T (A_u z - y) with A_u = A Diag(u).
inline Vec grad_z_datafit(const Vec& z, const Vec& u, const SensingModel& model, const Vec& y) {
  require_size(z.size(), model.cols(), "grad_z_datafit(z)");
  require_size(u.size(), model.cols(), "grad_z_datafit(u)");
  require_size(y.size(), model.rows(), "grad_z_datafit(y)");
  const Vec res = model.apply(u.cwiseProduct(z)) - y;
  return u.cwiseProduct(model.adjoint(res));
}

/// 1/2 ||y - A(z . u)||^2
inline double datafit(const Vec& u, const Vec& z, const SensingModel& model, const Vec& y) {
  return 0.5 * (y - model.apply(z.cwiseProduct(u))).squaredNorm();
}

inline double cost(const Vec& u, const Vec& z, const SensingModel& model, const Vec& y, const CovarianceParam& p,
                   const ScaleRegularizer& r) {
  require_size(u.size(), model.cols(), "cost(u)");
  require_size(y.size(), model.rows(), "cost(y)");
  const double reg = r.value(z);
  return datafit(u, z, model, y) + 0.5 * u.dot(p.solve(u)) + reg;
}

/// Per-iteration record of the block coordinate descent.
struct TraceRecord {
  int iter = 0;
  std::string block;  // "init", "z" or "u"
  double cost = 0.0;
  double step_norm = 0.0;
  double eta = 0.0;
};

/// Iterate pair (u, z) with its trace.
struct CGState {
  Vec u;
  Vec z;
  std::vector<TraceRecord> trace;
};

// ---------------------------------------------------------------------------
// Posterior correspondence on a grid.

struct MapGrid {
  std::vector<double> u_values;
  std::vector<double> z_values;  // strictly positive for the log-squared prior
};

struct MapCheckReport {
  std::vector<Index> cost_argmin;       // per coordinate: (u index, z index) interleaved
  std::vector<Index> posterior_argmax;  // same layout
  double cost_min = 0.0;
  double log_posterior_max = 0.0;
  bool agree = false;
  bool on_boundary = false;  // grid too coarse: optimum on the grid edge
};

/// Gaussian noise with standard deviation sigma, u ~ N(0, sigma^2 P_u), and
/// log z ~ N(0, sigma^2 / (2 mu)) (flat prior on z for R = Zero). The
/// posterior is taken w.r.t. the log-scale coordinate of z, so
/// -sigma^2 log posterior = F + const. `posterior_scale` multiplies the log
/// posterior (a monotone transform) for invariance checks.
inline MapCheckReport map_equivalence_check(const SensingModel& model, const Vec& y, const CovarianceParam& p,
                                            const ScaleRegularizer& r, const MapGrid& grid, double sigma,
                                            double posterior_scale = 1.0) {
  const Index n = model.cols();
  if (n > 3) throw ConfigError("map_equivalence_check is limited to n <= 3");
  if (!(sigma > 0.0) || !(posterior_scale > 0.0)) throw ConfigError("sigma and posterior scale must be positive");
  const Index gu = static_cast<Index>(grid.u_values.size());
  const Index gz = static_cast<Index>(grid.z_values.size());
  if (gu == 0 || gz == 0) throw ConfigError("empty grid");
  const Mat a = model.dense();
  const Mat sigma_u_inv = p.inverse_dense() / (sigma * sigma);
  const double log_prior_var = r.kind == RegKind::LogSquared ? sigma * sigma / (2.0 * r.mu) : kInf;

  Index cells = 1;
  for (Index i = 0; i < n; ++i) cells *= gu * gz;

  MapCheckReport rep;
  rep.cost_min = kInf;
  rep.log_posterior_max = -kInf;
  Index best_cost = -1, best_post = -1;
  Vec u(n), z(n);
  for (Index cell = 0; cell < cells; ++cell) {
    Index rest = cell;
    bool valid = true;
    for (Index i = 0; i < n; ++i) {
      const Index ui = rest % gu;
      rest /= gu;
      const Index zi = rest % gz;
      rest /= gz;
      u[i] = grid.u_values[ui];
      z[i] = grid.z_values[zi];
      if (!r.in_domain(z.segment(i, 1))) valid = false;
    }
    if (!valid) continue;
    const double f = cost(u, z, model, y, p, r);
    // independent evaluation of the log posterior
    const Vec res = y - a * z.cwiseProduct(u);
    double logp = -res.squaredNorm() / (2.0 * sigma * sigma) - 0.5 * u.dot(sigma_u_inv * u);
    if (std::isfinite(log_prior_var))
      for (Index i = 0; i < n; ++i) {
        const double l = std::log(z[i]);
        logp -= l * l / (2.0 * log_prior_var);
      }
    logp *= posterior_scale;
    if (f < rep.cost_min) {
      rep.cost_min = f;
      best_cost = cell;
    }
    if (logp > rep.log_posterior_max) {
      rep.log_posterior_max = logp;
      best_post = cell;
    }
  }
  if (best_cost < 0) throw ConfigError("grid has no point inside the regularizer domain");
  auto decode = [&](Index cell, std::vector<Index>& out) {
    out.clear();
    for (Index i = 0; i < n; ++i) {
      out.push_back(cell % gu);
      cell /= gu;
      out.push_back(cell % gz);
      cell /= gz;
    }
  };
  decode(best_cost, rep.cost_argmin);
  decode(best_post, rep.posterior_argmax);
  rep.agree = best_cost == best_post;
  for (std::size_t i = 0; i < rep.cost_argmin.size(); ++i) {
    const Index last = (i % 2 == 0 ? gu : gz) - 1;
    if (rep.cost_argmin[i] == 0 || rep.cost_argmin[i] == last) rep.on_boundary = true;
  }
  return rep;
}

}  // namespace cginvert
