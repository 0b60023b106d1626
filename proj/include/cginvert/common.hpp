#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace cginvert {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error categories map onto the CLI exit codes (2 config, 3 data, 4 numerical).
enum class ErrorKind { Config = 2, Data = 3, Numerical = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::Data, w) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorKind::Numerical, w) {}
};

inline void require_size(Index got, Index want, const char* what) {
  if (got != want)
    throw DataError(std::string("dimension mismatch in ") + what + ": got " + std::to_string(got) +
                    ", expected " + std::to_string(want));
}

using Rng = std::mt19937_64;

inline Vec random_normal(Index n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

inline Vec random_uniform(Index n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

/// Largest singular value of a linear map given forward/adjoint callables.
/// Power iteration on the normal operator; deterministic start vector.
template <class Fwd, class Adj>
double spectral_norm(Index n, Fwd&& fwd, Adj&& adj, int max_iter = 100, double tol = 1e-8) {
  if (n == 0) return 0.0;
  Vec v = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
  // perturb away from symmetric subspaces that a constant vector may miss
  for (Index i = 0; i < n; ++i) v[i] += 1e-3 * std::sin(1.0 + static_cast<double>(i));
  v.normalize();
  double sigma2 = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vec w = adj(fwd(v));
    double norm = w.norm();
    if (norm == 0.0) return 0.0;
    double prev = sigma2;
    sigma2 = norm;
    v = w / norm;
    if (std::abs(sigma2 - prev) <= tol * sigma2) break;
  }
  return std::sqrt(sigma2);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline Vec clamp_box(const Vec& x, double lo, double hi) {
  return x.unaryExpr([lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); });
}

/// One explicit gradient step x - eta * g. Shared by the iterative solver and
/// the unrolled network so both paths use identical floating-point arithmetic.
inline Vec gradient_step(const Vec& x, const Vec& g, double eta) {
  Vec out(x.size());
  for (Index i = 0; i < x.size(); ++i) out[i] = x[i] - eta * g[i];
  return out;
}

// FNV-1a, used for dataset and model fingerprints.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace cginvert
