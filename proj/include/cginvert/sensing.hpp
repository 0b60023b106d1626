#pragma once

// Sensing operators A = Psi * Phi and measurement synthesis y = A c + noise.

#include "common.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <variant>
#include <vector>

namespace cginvert {

using SparseRowMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Immutable sensing model. Copies share the underlying matrices.
class SensingModel {
public:
  using Psi = std::variant<Mat, SparseRowMat>;

  SensingModel(Psi psi, std::optional<Mat> phi, int side, std::string description)
      : data_(std::make_shared<Data>()) {
    data_->psi = std::move(psi);
    data_->phi = std::move(phi);
    data_->side = side;
    data_->description = std::move(description);
    const Index n = cols();
    if (data_->phi) {
      if (data_->phi->rows() != psi_cols() || data_->phi->cols() != psi_cols())
        throw DataError("dictionary must be square with as many rows as the measurement matrix has columns");
    }
    data_->a_norm = spectral_norm(
        n, [this](const Vec& x) { return apply(x); }, [this](const Vec& w) { return adjoint(w); }, 500, 1e-12);
  }

  Index rows() const {
    return std::visit([](const auto& p) -> Index { return p.rows(); }, data_->psi);
  }
  Index cols() const { return psi_cols(); }
  int side() const { return data_->side; }
  double a_norm() const { return data_->a_norm; }
  bool has_dictionary() const { return data_->phi.has_value(); }
  const std::optional<Mat>& phi() const { return data_->phi; }
  const Psi& psi() const { return data_->psi; }
  const std::string& description() const { return data_->description; }
  bool is_sparse() const { return std::holds_alternative<SparseRowMat>(data_->psi); }

  /// A x
  Vec apply(const Vec& x) const {
    require_size(x.size(), cols(), "SensingModel::apply");
    const Vec c = data_->phi ? Vec(*data_->phi * x) : x;
    return std::visit([&c](const auto& p) -> Vec { return p * c; }, data_->psi);
  }

  /// A^T w
  Vec adjoint(const Vec& w) const {
    require_size(w.size(), rows(), "SensingModel::adjoint");
    Vec v = std::visit([&w](const auto& p) -> Vec { return p.transpose() * w; }, data_->psi);
    if (data_->phi) return data_->phi->transpose() * v;
    return v;
  }

  /// Dense A, materialized once on first use.
  const Mat& dense() const {
    std::call_once(data_->dense_once, [this] {
      Mat a = std::visit([](const auto& p) -> Mat { return Mat(p); }, data_->psi);
      if (data_->phi) a = a * *data_->phi;
      data_->dense = std::move(a);
    });
    return data_->dense;
  }

  /// Maps coefficients to the image domain (Phi c, or c when Phi = I).
  Vec synthesize(const Vec& c) const { return data_->phi ? Vec(*data_->phi * c) : c; }
  /// Maps an image to coefficients (Phi^T s for orthonormal Phi).
  Vec analyze(const Vec& s) const { return data_->phi ? Vec(data_->phi->transpose() * s) : s; }

private:
  Index psi_cols() const {
    return std::visit([](const auto& p) -> Index { return p.cols(); }, data_->psi);
  }

  struct Data {
    Psi psi;
    std::optional<Mat> phi;
    int side = 0;
    double a_norm = 0.0;
    std::string description;
    std::once_flag dense_once;
    Mat dense;
  };
  std::shared_ptr<Data> data_;
};

struct Measurement {
  Vec y;
  double snr_db = kInf;
  std::uint64_t noise_seed = 0;
};

inline int radon_detector_count(int side) {
  return static_cast<int>(std::ceil(std::numbers::sqrt2 * side));
}

namespace detail {

struct PixelWeight {
  Index pixel;
  double length;
};

// Exact intersection lengths of the line {t e_t + s e_r} with the pixel grid
// covering [-h, h]^2, pixels in row-major order with row 0 at the top.
inline std::vector<PixelWeight> ray_pixel_lengths(double t, double cos_t, double sin_t, int side) {
  std::vector<PixelWeight> out;
  const double h = 0.5 * side;
  auto pixel_of = [side](int r, int c) { return static_cast<Index>(r) * side + c; };

  // Axis-aligned rays: direction is exactly vertical (theta = 0) or horizontal (theta = 90 deg).
  if (sin_t == 0.0 || cos_t == 0.0) {
    const bool vertical = sin_t == 0.0;  // ray runs along y at x = +-t
    const double coord = vertical ? t * cos_t : t * sin_t;
    if (coord < -h || coord > h) return out;
    // position in grid units along the axis perpendicular to the ray
    const double g = vertical ? coord + h : h - coord;
    const double fl = std::floor(g);
    std::vector<std::pair<int, double>> lines;
    if (g == fl) {
      // ray lies on a grid line: split the weight between both neighbours
      int hi = static_cast<int>(fl), lo = hi - 1;
      if (lo >= 0) lines.emplace_back(lo, 0.5);
      if (hi < side) lines.emplace_back(hi, 0.5);
    } else {
      lines.emplace_back(static_cast<int>(fl), 1.0);
    }
    for (auto [idx, w] : lines)
      for (int k = 0; k < side; ++k)
        out.push_back({vertical ? pixel_of(k, idx) : pixel_of(idx, k), w});
    return out;
  }

  // Points: x = t cos - s sin, y = t sin + s cos.
  std::vector<double> params;
  params.reserve(2 * side + 2);
  double s_lo = -kInf, s_hi = kInf;
  auto clip = [&](double a, double b) {  // a <= coordinate(s) <= b with coordinate affine
    s_lo = std::max(s_lo, std::min(a, b));
    s_hi = std::min(s_hi, std::max(a, b));
  };
  clip((t * cos_t + h) / sin_t, (t * cos_t - h) / sin_t);
  clip((-h - t * sin_t) / cos_t, (h - t * sin_t) / cos_t);
  if (!(s_hi > s_lo)) return out;
  params.push_back(s_lo);
  params.push_back(s_hi);
  for (int k = 0; k <= side; ++k) {
    const double edge = -h + k;
    const double sx = (t * cos_t - edge) / sin_t;
    const double sy = (edge - t * sin_t) / cos_t;
    if (sx > s_lo && sx < s_hi) params.push_back(sx);
    if (sy > s_lo && sy < s_hi) params.push_back(sy);
  }
  std::sort(params.begin(), params.end());
  for (std::size_t i = 0; i + 1 < params.size(); ++i) {
    const double len = params[i + 1] - params[i];
    if (len <= 0.0) continue;
    const double sm = 0.5 * (params[i] + params[i + 1]);
    const double x = t * cos_t - sm * sin_t;
    const double y = t * sin_t + sm * cos_t;
    int c = static_cast<int>(std::floor(x + h));
    int r = static_cast<int>(std::floor(h - y));
    c = std::clamp(c, 0, side - 1);
    r = std::clamp(r, 0, side - 1);
    out.push_back({pixel_of(r, c), len});
  }
  return out;
}

inline void angle_trig(int i, int n_angles, double& cos_t, double& sin_t) {
  if (i == 0) {
    cos_t = 1.0;
    sin_t = 0.0;
  } else if (2 * i == n_angles) {
    cos_t = 0.0;
    sin_t = 1.0;
  } else {
    const double theta = std::numbers::pi * static_cast<double>(i) / n_angles;
    cos_t = std::cos(theta);
    sin_t = std::sin(theta);
  }
}

}  // namespace detail

/// Parallel-beam Radon matrix: n_angles uniformly spaced angles in [0, 180),
/// ceil(sqrt(2) * side) unit-spaced detector bins centred on the image, exact
/// ray/pixel intersection-length weights. Rows are angle-major.
inline SensingModel build_radon(int side, int n_angles) {
  if (side < 1 || n_angles < 1) throw ConfigError("build_radon requires side >= 1 and n_angles >= 1");
  const int nd = radon_detector_count(side);
  const Index m = static_cast<Index>(nd) * n_angles;
  const Index n = static_cast<Index>(side) * side;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(m) * 2 * side);
  for (int a = 0; a < n_angles; ++a) {
    double ct, st;
    detail::angle_trig(a, n_angles, ct, st);
    for (int d = 0; d < nd; ++d) {
      const double t = d - 0.5 * (nd - 1);
      const Index row = static_cast<Index>(a) * nd + d;
      for (const auto& pw : detail::ray_pixel_lengths(t, ct, st, side))
        triplets.emplace_back(row, pw.pixel, pw.length);
    }
  }
  SparseRowMat psi(m, n);
  psi.setFromTriplets(triplets.begin(), triplets.end());
  psi.makeCompressed();
  return SensingModel(std::move(psi), std::nullopt, side,
                      "radon side=" + std::to_string(side) + " angles=" + std::to_string(n_angles));
}

inline int perfect_square_side(Index n) {
  const auto s = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n))));
  return s * s == n ? static_cast<int>(s) : 0;
}

/// Dense m x n matrix with i.i.d. standard normal entries from a seeded generator.
inline SensingModel build_gaussian(Index m, Index n, std::uint64_t seed) {
  if (m < 1 || n < 1 || m > n)
    throw ConfigError("build_gaussian requires 1 <= m <= n (got m=" + std::to_string(m) +
                      ", n=" + std::to_string(n) + ")");
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat psi(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) psi(i, j) = dist(rng);
  return SensingModel(std::move(psi), std::nullopt, perfect_square_side(n),
                      "gaussian m=" + std::to_string(m) + " n=" + std::to_string(n) +
                          " seed=" + std::to_string(seed));
}

/// Orthonormal 2-D DCT-II synthesis basis (columns are basis images in raster order).
inline Mat build_dct(Index n) {
  const int side = perfect_square_side(n);
  if (side == 0) throw ConfigError("build_dct requires a perfect-square n, got " + std::to_string(n));
  Mat d(side, side);  // d(i, k): sample i of 1-D basis vector k
  for (int i = 0; i < side; ++i)
    for (int k = 0; k < side; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / side) : std::sqrt(2.0 / side);
      d(i, k) = a * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * side));
    }
  Mat phi(n, n);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      for (int p = 0; p < side; ++p)
        for (int q = 0; q < side; ++q) phi(r * side + c, p * side + q) = d(r, p) * d(c, q);
  return phi;
}

/// Attach a dictionary: A = Psi * Phi.
inline SensingModel with_dictionary(const SensingModel& model, Mat phi, const std::string& tag = "dct") {
  return SensingModel(model.psi(), std::move(phi), model.side(), model.description() + " dict=" + tag);
}

/// y = A c + noise, with white Gaussian noise rescaled to hit snr_db exactly.
/// snr_db = +inf gives noiseless measurements.
inline Measurement measure(const SensingModel& model, const Vec& c, double snr_db, std::uint64_t seed) {
  require_size(c.size(), model.cols(), "measure");
  Measurement out;
  out.snr_db = snr_db;
  out.noise_seed = seed;
  out.y = model.apply(c);
  if (std::isinf(snr_db) && snr_db > 0) return out;
  const double signal = out.y.squaredNorm();
  if (signal == 0.0) throw DataError("measure: zero signal power with finite SNR");
  Rng rng(seed);
  Vec noise = random_normal(out.y.size(), rng);
  const double target = signal * std::pow(10.0, -snr_db / 10.0);
  noise *= std::sqrt(target / noise.squaredNorm());
  out.y += noise;
  return out;
}

/// Nonzero entries of A as "row,col,value" lines.
inline void export_triplets(const SensingModel& model, std::ostream& os) {
  os.precision(17);
  os << "row,col,value\n";
  if (!model.has_dictionary() && model.is_sparse()) {
    const auto& p = std::get<SparseRowMat>(model.psi());
    for (Index r = 0; r < p.outerSize(); ++r)
      for (SparseRowMat::InnerIterator it(p, r); it; ++it)
        os << it.row() << ',' << it.col() << ',' << it.value() << '\n';
    return;
  }
  const Mat& a = model.dense();
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c)
      if (a(r, c) != 0.0) os << r << ',' << c << ',' << a(r, c) << '\n';
}

}  // namespace cginvert
