#pragma once

// One descent step in z for fixed u on
//   f(z) + R(z),  f(z) = 1/2 ||A_u z - y||^2,  A_u = A Diag(u).
// PGD:  z' = P(z - eta (grad f + grad R))
// ISTA: z' = prox_{eta R}(z - eta grad f)
// with a fixed step or a backtracking linesearch on eta <= 1.

#include "common.hpp"
#include "regularizer.hpp"
#include "sensing.hpp"

#include <string>

namespace cginvert {

enum class ZStepMethod { Pgd, Ista };
enum class LinesearchMode { Fixed, Backtrack };

inline ZStepMethod zstep_method_from_string(const std::string& s) {
  if (s == "pgd") return ZStepMethod::Pgd;
  if (s == "ista") return ZStepMethod::Ista;
  throw ConfigError("unknown zstep.method '" + s + "'");
}

inline LinesearchMode linesearch_from_string(const std::string& s) {
  if (s == "fixed") return LinesearchMode::Fixed;
  if (s == "backtrack") return LinesearchMode::Backtrack;
  throw ConfigError("unknown zstep.linesearch '" + s + "'");
}

struct LinesearchConfig {
  LinesearchMode mode = LinesearchMode::Backtrack;
  double alpha = 0.3;   // sufficient-decrease constant, (0, 1/2]
  double shrink = 0.5;  // (0, 1)
  double eta_init = 1.0;
  int max_halvings = 50;
  double eta = 0.0;  // fixed step; 0 selects 1/L

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 0.5)) throw ConfigError("zstep.alpha must lie in (0, 0.5]");
    if (!(shrink > 0.0 && shrink < 1.0)) throw ConfigError("linesearch shrink must lie in (0, 1)");
    if (!(eta_init > 0.0 && eta_init <= 1.0)) throw ConfigError("linesearch eta_init must lie in (0, 1]");
    if (max_halvings < 0) throw ConfigError("linesearch max_halvings must be >= 0");
    if (eta < 0.0) throw ConfigError("zstep.eta must be nonnegative");
  }
};

struct ZStepResult {
  Vec z;
  double eta = 0.0;
  double cost_before = 0.0;  // f(z) + R(z)
  double cost_after = 0.0;   // f(z') + R(z')
  int halvings = 0;
};

/// ||A_u||_2^2 by power iteration.
inline double datafit_lipschitz(const Vec& u, const SensingModel& model) {
  const double s = spectral_norm(
      u.size(), [&](const Vec& v) { return model.apply(u.cwiseProduct(v)); },
      [&](const Vec& w) { return Vec(u.cwiseProduct(model.adjoint(w))); }, 200, 1e-10);
  return s * s;
}

/// Step-size constant for fixed steps: ||A_u||^2 plus, for PGD, the regularizer
/// curvature bound over [min z / 2, 2 max z], and for ISTA the weak-convexity
/// modulus of R (so that eta = 1/L keeps the prox objective strongly convex).
inline double zstep_lipschitz(const Vec& z, const Vec& u, const SensingModel& model, const ScaleRegularizer& r,
                              ZStepMethod method) {
  double l = datafit_lipschitz(u, model);
  if (method == ZStepMethod::Pgd && z.size() > 0)
    l += r.curvature_bound(0.5 * z.minCoeff(), 2.0 * z.maxCoeff());
  if (method == ZStepMethod::Ista) l += r.weak_convexity();
  return l;
}

namespace detail {

inline double zcost(const Vec& z, const Vec& u, const SensingModel& model, const Vec& y, const ScaleRegularizer& r) {
  return datafit(u, z, model, y) + r.value(z);
}

inline Vec zmap(const Vec& z, const Vec& gf, const Vec& gr, const ScaleRegularizer& r, ZStepMethod method,
                double eta) {
  if (method == ZStepMethod::Pgd) {
    if (r.kind == RegKind::Zero) return r.project(gradient_step(z, gf, eta));
    return r.project(gradient_step(z, gf + gr, eta));
  }
  return r.prox(gradient_step(z, gf, eta), eta);
}

inline double resolve_fixed_eta(const Vec& z, const Vec& u, const SensingModel& model, const ScaleRegularizer& r,
                                ZStepMethod method, const LinesearchConfig& ls) {
  if (ls.eta > 0.0) return ls.eta;
  const double l = zstep_lipschitz(z, u, model, r, method);
  return l > 0.0 ? 1.0 / l : 1.0;
}

inline ZStepResult zstep(const Vec& z, const Vec& u, const SensingModel& model, const Vec& y,
                         const ScaleRegularizer& r, const LinesearchConfig& ls, ZStepMethod method) {
  ls.validate();
  require_size(z.size(), model.cols(), "scale step(z)");
  r.check_domain(z, "scale step");
  const Vec gf = grad_z_datafit(z, u, model, y);
  const Vec gr = method == ZStepMethod::Pgd ? r.grad(z) : Vec();
  const double f0 = datafit(u, z, model, y);
  const double r0 = r.value(z);

  ZStepResult out;
  out.cost_before = f0 + r0;
  if (ls.mode == LinesearchMode::Fixed) {
    out.eta = resolve_fixed_eta(z, u, model, r, method, ls);
    out.z = zmap(z, gf, gr, r, method, out.eta);
    out.cost_after = zcost(out.z, u, model, y, r);
    return out;
  }

  double eta = ls.eta_init;
  for (int h = 0; h <= ls.max_halvings; ++h) {
    Vec cand = zmap(z, gf, gr, r, method, eta);
    const Vec diff = z - cand;
    const double fc = datafit(u, cand, model, y);
    bool ok;
    if (method == ZStepMethod::Pgd) {
      const double rc = r.value(cand);
      ok = fc + rc <= out.cost_before - ls.alpha * (gf + gr).dot(diff);
      if (ok) out.cost_after = fc + rc;
    } else {
      ok = fc <= f0 - gf.dot(diff) + diff.squaredNorm() / (2.0 * eta);
      if (ok) out.cost_after = fc + r.value(cand);
    }
    if (ok) {
      out.z = std::move(cand);
      out.eta = eta;
      out.halvings = h;
      return out;
    }
    eta *= ls.shrink;
  }
  throw NumericalError("scale step linesearch failed after " + std::to_string(ls.max_halvings) + " reductions");
}

}  // namespace detail

inline ZStepResult pgd_step(const Vec& z, const Vec& u, const SensingModel& model, const Vec& y,
                            const ScaleRegularizer& r, const LinesearchConfig& ls) {
  return detail::zstep(z, u, model, y, r, ls, ZStepMethod::Pgd);
}

inline ZStepResult ista_step(const Vec& z, const Vec& u, const SensingModel& model, const Vec& y,
                             const ScaleRegularizer& r, const LinesearchConfig& ls) {
  return detail::zstep(z, u, model, y, r, ls, ZStepMethod::Ista);
}

inline ZStepResult scale_step(const Vec& z, const Vec& u, const SensingModel& model, const Vec& y,
                              const ScaleRegularizer& r, const LinesearchConfig& ls, ZStepMethod method) {
  return detail::zstep(z, u, model, y, r, ls, method);
}

struct StationarityResidual {
  double absolute = 0.0;  // ||z - step(z)||_inf
  double relative = 0.0;  // absolute / max(||z||_inf, tiny)
};

/// Fixed-point residual of the configured step map at step size eta_probe.
/// Zero exactly at fixed points, which are stationary points of F(u, .).
inline StationarityResidual stationarity_residual(const Vec& z, const Vec& u, const SensingModel& model, const Vec& y,
                                                  const ScaleRegularizer& r, ZStepMethod method, double eta_probe) {
  if (!(eta_probe > 0.0)) throw ConfigError("stationarity probe step must be positive");
  const Vec gf = grad_z_datafit(z, u, model, y);
  const Vec gr = method == ZStepMethod::Pgd ? r.grad(z) : Vec();
  const Vec step = detail::zmap(z, gf, gr, r, method, eta_probe);
  StationarityResidual s;
  s.absolute = z.size() ? (z - step).cwiseAbs().maxCoeff() : 0.0;
  const double zn = z.size() ? z.cwiseAbs().maxCoeff() : 0.0;
  s.relative = s.absolute / std::max(zn, std::numeric_limits<double>::min());
  return s;
}

}  // namespace cginvert
