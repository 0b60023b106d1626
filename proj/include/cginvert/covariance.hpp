#pragma once

// Structured covariance P_u, kept symmetric positive definite by construction:
//   scaled identity  max(lambda, eps) I
//   diagonal         Diag(max(lambda_i, eps))
//   tridiagonal      L_tri L_tri^T + eps I   (lambda_1 on the diagonal, lambda_2 below it)
//   full             L L^T + eps I           (L lower triangular, packed row-major)

#include "common.hpp"

#include <Eigen/Cholesky>

#include <memory>
#include <string>

namespace cginvert {

enum class CovKind { ScaledIdentity, Diagonal, Tridiagonal, Full };

inline std::string to_string(CovKind k) {
  switch (k) {
    case CovKind::ScaledIdentity: return "scaled";
    case CovKind::Diagonal: return "diagonal";
    case CovKind::Tridiagonal: return "tridiagonal";
    case CovKind::Full: return "full";
  }
  return "?";
}

inline CovKind cov_kind_from_string(const std::string& s) {
  if (s == "scaled" || s == "scaled_identity" || s == "identity") return CovKind::ScaledIdentity;
  if (s == "diagonal" || s == "diag") return CovKind::Diagonal;
  if (s == "tridiagonal" || s == "tri") return CovKind::Tridiagonal;
  if (s == "full") return CovKind::Full;
  throw ConfigError("unknown covariance kind '" + s + "'");
}

/// Number of learned scalars for a covariance structure.
inline Index cov_param_count(CovKind kind, Index n) {
  switch (kind) {
    case CovKind::ScaledIdentity: return 1;
    case CovKind::Diagonal: return n;
    case CovKind::Tridiagonal: return 2 * n - 1;
    case CovKind::Full: return n * (n + 1) / 2;
  }
  return 0;
}

inline constexpr double kDefaultCovEps = 1e-4;

class CovarianceParam {
public:
  CovarianceParam(CovKind kind, Index n, Vec params, double eps = kDefaultCovEps)
      : kind_(kind), n_(n), params_(std::move(params)), eps_(eps) {
    if (!(eps_ > 0.0)) throw ConfigError("covariance floor eps must be positive");
    require_size(params_.size(), cov_param_count(kind_, n_), "CovarianceParam");
    realize();
  }

  /// P = value * I expressed in the requested structure.
  static CovarianceParam initial(CovKind kind, Index n, double value, double eps = kDefaultCovEps) {
    if (!(value > eps)) throw ConfigError("initial covariance value must exceed eps");
    Vec p = Vec::Zero(cov_param_count(kind, n));
    const double root = std::sqrt(value - eps);
    switch (kind) {
      case CovKind::ScaledIdentity: p[0] = value; break;
      case CovKind::Diagonal: p.setConstant(value); break;
      case CovKind::Tridiagonal: p.head(n).setConstant(root); break;
      case CovKind::Full:
        for (Index i = 0; i < n; ++i) p[full_index(i, i)] = root;
        break;
    }
    return CovarianceParam(kind, n, std::move(p), eps);
  }

  CovKind kind() const { return kind_; }
  Index size() const { return n_; }
  double eps() const { return eps_; }
  const Vec& params() const { return params_; }

  /// Position of L(i, j), j <= i, in the packed full parameterization.
  static Index full_index(Index i, Index j) { return i * (i + 1) / 2 + j; }

  bool is_diagonal() const { return kind_ == CovKind::ScaledIdentity || kind_ == CovKind::Diagonal; }
  /// Diagonal of P for the diagonal structures.
  const Vec& diagonal() const { return diag_; }

  Vec apply(const Vec& v) const {
    require_size(v.size(), n_, "CovarianceParam::apply");
    if (is_diagonal()) return diag_.cwiseProduct(v);
    return dense_ * v;
  }

  /// P M, column-wise.
  Mat apply(const Mat& m) const {
    if (is_diagonal()) return diag_.asDiagonal() * m;
    return dense_ * m;
  }

  /// P^{-1} v
  Vec solve(const Vec& v) const {
    require_size(v.size(), n_, "CovarianceParam::solve");
    if (is_diagonal()) return v.cwiseQuotient(diag_);
    return llt_->solve(v);
  }

  Mat dense() const {
    if (is_diagonal()) return Mat(diag_.asDiagonal());
    return dense_;
  }

  Mat inverse_dense() const {
    if (is_diagonal()) return Mat(diag_.cwiseInverse().asDiagonal());
    return llt_->solve(Mat::Identity(n_, n_));
  }

  /// Lower-triangular factor L of the tridiagonal/full structures.
  Mat factor() const {
    Mat l = Mat::Zero(n_, n_);
    if (kind_ == CovKind::Tridiagonal) {
      for (Index i = 0; i < n_; ++i) l(i, i) = params_[i];
      for (Index i = 0; i + 1 < n_; ++i) l(i + 1, i) = params_[n_ + i];
    } else if (kind_ == CovKind::Full) {
      for (Index i = 0; i < n_; ++i)
        for (Index j = 0; j <= i; ++j) l(i, j) = params_[full_index(i, j)];
    }
    return l;
  }

  /// grad += weight * d(a^T P b) / d(params).
  void accumulate_grad(const Vec& a, const Vec& b, double weight, Eigen::Ref<Vec> grad) const {
    require_size(grad.size(), params_.size(), "CovarianceParam::accumulate_grad");
    switch (kind_) {
      case CovKind::ScaledIdentity:
        if (params_[0] > eps_) grad[0] += weight * a.dot(b);
        break;
      case CovKind::Diagonal:
        for (Index i = 0; i < n_; ++i)
          if (params_[i] > eps_) grad[i] += weight * a[i] * b[i];
        break;
      case CovKind::Tridiagonal: {
        // d(a^T L L^T b) / dL = a (L^T b)^T + b (L^T a)^T
        const Vec ltb = lt_apply(b), lta = lt_apply(a);
        for (Index i = 0; i < n_; ++i) grad[i] += weight * (a[i] * ltb[i] + b[i] * lta[i]);
        for (Index i = 0; i + 1 < n_; ++i)
          grad[n_ + i] += weight * (a[i + 1] * ltb[i] + b[i + 1] * lta[i]);
        break;
      }
      case CovKind::Full: {
        const Vec ltb = lt_apply(b), lta = lt_apply(a);
        for (Index i = 0; i < n_; ++i)
          for (Index j = 0; j <= i; ++j)
            grad[full_index(i, j)] += weight * (a[i] * ltb[j] + b[i] * lta[j]);
        break;
      }
    }
  }

private:
  Vec lt_apply(const Vec& v) const {
    if (kind_ == CovKind::Tridiagonal) {
      Vec out(n_);
      for (Index i = 0; i < n_; ++i) {
        out[i] = params_[i] * v[i];
        if (i + 1 < n_) out[i] += params_[n_ + i] * v[i + 1];
      }
      return out;
    }
    return factor_.transpose() * v;
  }

  void realize() {
    switch (kind_) {
      case CovKind::ScaledIdentity: diag_ = Vec::Constant(n_, std::max(params_[0], eps_)); break;
      case CovKind::Diagonal: diag_ = params_.cwiseMax(eps_); break;
      case CovKind::Tridiagonal:
      case CovKind::Full: {
        factor_ = factor();
        dense_ = factor_ * factor_.transpose();
        dense_.diagonal().array() += eps_;
        llt_ = std::make_shared<Eigen::LLT<Mat>>(dense_);
        if (llt_->info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
        break;
      }
    }
  }

  CovKind kind_;
  Index n_;
  Vec params_;
  double eps_;
  Vec diag_;
  Mat factor_;
  Mat dense_;
  std::shared_ptr<const Eigen::LLT<Mat>> llt_;
};

}  // namespace cginvert
