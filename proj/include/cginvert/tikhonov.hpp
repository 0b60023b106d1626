#pragma once

// Minimizers of F over u for fixed z:
//   exact      u = (A_z^T A_z + P^{-1})^{-1} A_z^T y
//   Woodbury   u = P A_z^T (I + A_z P A_z^T)^{-1} y      (m x m solve)
//   NAGD       Nesterov steps on F(., z) with momentum 1 - 3/(6 + j)
// where A_z = A Diag(z).

#include "common.hpp"
#include "covariance.hpp"
#include "sensing.hpp"

#include <Eigen/Cholesky>

#include <optional>
#include <vector>

namespace cginvert {

enum class TikhonovMode { Exact, Nagd };

struct NagdConfig {
  int steps = 100;
  /// Step size; 0 selects 1/L with L the power-iteration estimate of ||A_z^T A_z + P^{-1}||.
  double eta = 0.0;
};

inline Mat scaled_columns(const Mat& a, const Vec& z) { return a * z.asDiagonal(); }

/// Symmetric system H = A_z^T A_z + P^{-1} for one z, factored once. Routes to
/// the Woodbury form when m < n.
class TikhonovSystem {
public:
  TikhonovSystem(const Vec& z, const SensingModel& model, const CovarianceParam& p)
      : p_(p), az_(scaled_columns(model.dense(), z)) {
    require_size(z.size(), model.cols(), "TikhonovSystem");
    require_size(p.size(), model.cols(), "TikhonovSystem(P)");
    woodbury_ = az_.rows() < az_.cols();
    if (woodbury_) {
      pat_ = p.apply(Mat(az_.transpose()));  // P A_z^T, n x m
      Mat m = az_ * pat_;
      m.diagonal().array() += 1.0;
      llt_.compute(m);
    } else {
      Mat h = az_.transpose() * az_ + p.inverse_dense();
      llt_.compute(h);
    }
    if (llt_.info() != Eigen::Success) throw NumericalError("Tikhonov system is not positive definite");
  }

  bool woodbury() const { return woodbury_; }
  const Mat& az() const { return az_; }

  /// Tikhonov solution for measurements y.
  Vec solution(const Vec& y) const {
    if (woodbury_) return pat_ * llt_.solve(y);
    return llt_.solve(az_.transpose() * y);
  }

  /// H^{-1} g
  Vec solve(const Vec& g) const {
    if (woodbury_) {
      const Vec pg = p_.apply(g);
      return pg - pat_ * llt_.solve(az_ * pg);
    }
    return llt_.solve(g);
  }

private:
  CovarianceParam p_;  // owned: systems outlive the caller's covariance on network tapes
  Mat az_;
  Mat pat_;
  bool woodbury_ = false;
  Eigen::LLT<Mat> llt_;
};

/// Direct n x n Cholesky solve of the normal equations.
inline Vec tikhonov_exact(const Vec& z, const SensingModel& model, const Vec& y, const CovarianceParam& p) {
  require_size(z.size(), model.cols(), "tikhonov_exact(z)");
  require_size(y.size(), model.rows(), "tikhonov_exact(y)");
  const Mat az = scaled_columns(model.dense(), z);
  Mat h = az.transpose() * az + p.inverse_dense();
  Eigen::LLT<Mat> llt(h);
  if (llt.info() != Eigen::Success) throw NumericalError("tikhonov_exact: system is not positive definite");
  return llt.solve(az.transpose() * y);
}

/// Woodbury form, m x m Cholesky solve.
inline Vec tikhonov_woodbury(const Vec& z, const SensingModel& model, const Vec& y, const CovarianceParam& p) {
  require_size(z.size(), model.cols(), "tikhonov_woodbury(z)");
  require_size(y.size(), model.rows(), "tikhonov_woodbury(y)");
  const Mat az = scaled_columns(model.dense(), z);
  const Mat pat = p.apply(Mat(az.transpose()));
  Mat m = az * pat;
  m.diagonal().array() += 1.0;
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("tikhonov_woodbury: system is not positive definite");
  return pat * llt.solve(y);
}

/// Exact Tikhonov solution, Woodbury when m < n and direct otherwise.
inline Vec tikhonov_solve(const Vec& z, const SensingModel& model, const Vec& y, const CovarianceParam& p) {
  return TikhonovSystem(z, model, p).solution(y);
}

/// grad_u F(u, z) = A_z^T (A_z u - y) + P^{-1} u
inline Vec grad_u(const Vec& u, const Vec& z, const SensingModel& model, const Vec& y, const CovarianceParam& p) {
  const Vec res = model.apply(z.cwiseProduct(u)) - y;
  return z.cwiseProduct(model.adjoint(res)) + p.solve(u);
}

/// u - eta grad_u F(u, z)
inline Vec r_u_step(const Vec& u, const Vec& z, const SensingModel& model, const Vec& y, const CovarianceParam& p,
                    double eta) {
  require_size(u.size(), model.cols(), "r_u_step(u)");
  if (eta < 0.0) throw ConfigError("r_u_step: eta must be nonnegative");
  return gradient_step(u, grad_u(u, z, model, y, p), eta);
}

/// Power-iteration estimate of ||A_z^T A_z + P^{-1}||_2.
inline double tikhonov_lipschitz(const Vec& z, const SensingModel& model, const CovarianceParam& p) {
  auto op = [&](const Vec& v) -> Vec {
    return z.cwiseProduct(model.adjoint(model.apply(z.cwiseProduct(v)))) + p.solve(v);
  };
  // op is symmetric, so its spectral norm is the square root of the top eigenvalue of op^2
  return spectral_norm(z.size(), op, op, 200, 1e-10);
}

inline double nagd_momentum(int step) { return 1.0 - 3.0 / (6.0 + step); }

/// J_u Nesterov steps from u0 (with u^{(-1)} = u0). Optionally records
/// F(u^{(j)}, z) - R(z) (the u-dependent part of the cost) in `costs`.
inline Vec tikhonov_nagd(const Vec& u0, const Vec& z, const SensingModel& model, const Vec& y,
                         const CovarianceParam& p, const NagdConfig& cfg, std::vector<double>* costs = nullptr) {
  require_size(u0.size(), model.cols(), "tikhonov_nagd(u0)");
  if (cfg.steps < 1) throw ConfigError("tikhonov.nagd_steps must be >= 1");
  const double eta = cfg.eta > 0.0 ? cfg.eta : 1.0 / tikhonov_lipschitz(z, model, p);
  auto ucost = [&](const Vec& u) {
    return 0.5 * (y - model.apply(z.cwiseProduct(u))).squaredNorm() + 0.5 * u.dot(p.solve(u));
  };
  Vec r_prev = r_u_step(u0, z, model, y, p, eta);  // r(u^{(-1)})
  Vec u = u0;
  double last = ucost(u);
  if (costs) costs->push_back(last);
  int increases = 0;
  for (int j = 1; j <= cfg.steps; ++j) {
    const Vec r_cur = j == 1 ? r_prev : r_u_step(u, z, model, y, p, eta);
    const double beta = nagd_momentum(j);
    u = r_cur + beta * (r_cur - r_prev);
    r_prev = r_cur;
    const double c = ucost(u);
    if (costs) costs->push_back(c);
    increases = c > last ? increases + 1 : 0;
    if (increases >= 10) throw NumericalError("tikhonov_nagd: cost increased for 10 consecutive steps (step size too large)");
    last = c;
  }
  return u;
}

}  // namespace cginvert
