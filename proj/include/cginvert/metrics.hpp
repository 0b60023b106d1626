#pragma once

// Reconstruction quality: PSNR and mean SSIM over sliding windows.

#include "common.hpp"

#include <algorithm>

namespace cginvert {

/// 10 log10(peak^2 / MSE); +inf when x == ref.
inline double psnr(const Vec& x, const Vec& ref, double peak = 1.0) {
  require_size(x.size(), ref.size(), "psnr");
  if (!(peak > 0.0)) throw ConfigError("psnr peak must be positive");
  const double mse = (x - ref).squaredNorm() / static_cast<double>(x.size());
  if (mse == 0.0) return kInf;
  return 10.0 * std::log10(peak * peak / mse);
}

/// Mean SSIM over all win x win windows at stride 1 (win = min(8, width, height)),
/// C1 = (0.01 peak)^2, C2 = (0.03 peak)^2, sample (N - 1) variances.
inline double ssim(const Vec& x, const Vec& ref, int width, int height, double peak = 1.0) {
  require_size(x.size(), ref.size(), "ssim");
  require_size(x.size(), static_cast<Index>(width) * height, "ssim(shape)");
  const int win = std::min({8, width, height});
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const double npx = static_cast<double>(win) * win;
  const double cov_norm = npx > 1 ? npx / (npx - 1.0) : 1.0;
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + win <= height; ++r)
    for (int c = 0; c + win <= width; ++c) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const Index k = static_cast<Index>(r + i) * width + (c + j);
          const double a = x[k], b = ref[k];
          sx += a;
          sy += b;
          sxx += a * a;
          syy += b * b;
          sxy += a * b;
        }
      const double mx = sx / npx, my = sy / npx;
      const double vx = cov_norm * (sxx / npx - mx * mx);
      const double vy = cov_norm * (syy / npx - my * my);
      const double vxy = cov_norm * (sxy / npx - mx * my);
      total += ((2 * mx * my + c1) * (2 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

inline double ssim(const Vec& x, const Vec& ref, double peak = 1.0) {
  const auto side = static_cast<int>(std::llround(std::sqrt(static_cast<double>(x.size()))));
  if (static_cast<Index>(side) * side != x.size()) throw DataError("ssim: image is not square; pass its shape");
  return ssim(x, ref, side, side, peak);
}

}  // namespace cginvert
