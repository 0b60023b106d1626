#pragma once

// Bias-free same-size 2-D convolution stack used as the learned subnetwork.
// Activations are channel-major, each channel a row-major side x side raster.
// Kernels are stored k x k x f_in x f_out (HWIO) and applied as a
// cross-correlation with zero padding.

#include "common.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace cginvert {

struct ConvShape {
  int kernel = 3;
  int in_channels = 1;
  int out_channels = 1;

  Index size() const { return static_cast<Index>(kernel) * kernel * in_channels * out_channels; }
  Index index(int a, int b, int c, int o) const {
    return ((static_cast<Index>(a) * kernel + b) * in_channels + c) * out_channels + o;
  }
};

/// out (f_out x S x S) = conv(in (f_in x S x S), w)
inline Vec conv2d_forward(const Vec& in, std::span<const double> w, const ConvShape& sh, int side) {
  const Index plane = static_cast<Index>(side) * side;
  require_size(in.size(), plane * sh.in_channels, "conv2d_forward");
  Vec out = Vec::Zero(plane * sh.out_channels);
  const int pad = (sh.kernel - 1) / 2;
  for (int o = 0; o < sh.out_channels; ++o) {
    double* dst = out.data() + o * plane;
    for (int c = 0; c < sh.in_channels; ++c) {
      const double* src = in.data() + c * plane;
      for (int a = 0; a < sh.kernel; ++a)
        for (int b = 0; b < sh.kernel; ++b) {
          const double wv = w[sh.index(a, b, c, o)];
          if (wv == 0.0) continue;
          const int di = a - pad, dj = b - pad;
          const int i0 = std::max(0, -di), i1 = std::min(side, side - di);
          const int j0 = std::max(0, -dj), j1 = std::min(side, side - dj);
          for (int i = i0; i < i1; ++i) {
            const double* s = src + (i + di) * side + dj;
            double* d = dst + i * side;
            for (int j = j0; j < j1; ++j) d[j] += wv * s[j];
          }
        }
    }
  }
  return out;
}

/// Given dL/dout, accumulates dL/dw into gw and returns dL/din.
inline Vec conv2d_backward(const Vec& in, std::span<const double> w, const ConvShape& sh, int side, const Vec& gout,
                           std::span<double> gw) {
  const Index plane = static_cast<Index>(side) * side;
  Vec gin = Vec::Zero(plane * sh.in_channels);
  const int pad = (sh.kernel - 1) / 2;
  for (int o = 0; o < sh.out_channels; ++o) {
    const double* g = gout.data() + o * plane;
    for (int c = 0; c < sh.in_channels; ++c) {
      const double* src = in.data() + c * plane;
      double* gi = gin.data() + c * plane;
      for (int a = 0; a < sh.kernel; ++a)
        for (int b = 0; b < sh.kernel; ++b) {
          const Index wi = sh.index(a, b, c, o);
          const double wv = w[wi];
          const int di = a - pad, dj = b - pad;
          const int i0 = std::max(0, -di), i1 = std::min(side, side - di);
          const int j0 = std::max(0, -dj), j1 = std::min(side, side - dj);
          double acc = 0.0;
          for (int i = i0; i < i1; ++i) {
            const double* s = src + (i + di) * side + dj;
            double* gd = gi + (i + di) * side + dj;
            const double* gr = g + i * side;
            for (int j = j0; j < j1; ++j) {
              acc += s[j] * gr[j];
              gd[j] += wv * gr[j];
            }
          }
          gw[wi] += acc;
        }
    }
  }
  return gin;
}

/// Layer shapes of a depth-D stack with channels f_1..f_D and f_0 = 1.
inline std::vector<ConvShape> subnet_shapes(int kernel, const std::vector<int>& channels) {
  std::vector<ConvShape> out;
  int prev = 1;
  for (int f : channels) {
    out.push_back({kernel, prev, f});
    prev = f;
  }
  return out;
}

/// Per-layer inputs recorded for the reverse pass.
struct SubnetTape {
  std::vector<Vec> inputs;  // inputs[d] is the input of layer d (0-based); inputs.back() is the output
};

/// mat -> D convolutions (ReLU after all but the last) -> vec.
inline Vec subnet_apply(const Vec& x, std::span<const double> weights, const std::vector<ConvShape>& shapes, int side,
                        SubnetTape* tape = nullptr) {
  Vec act = x;
  Index off = 0;
  if (tape) tape->inputs.clear();
  for (std::size_t d = 0; d < shapes.size(); ++d) {
    if (tape) tape->inputs.push_back(act);
    Vec out = conv2d_forward(act, weights.subspan(off, shapes[d].size()), shapes[d], side);
    off += shapes[d].size();
    if (d + 1 < shapes.size()) out = out.unaryExpr([](double v) { return relu(v); });
    act = std::move(out);
  }
  if (tape) tape->inputs.push_back(act);
  return act;
}

/// Reverse pass of subnet_apply: accumulates weight gradients, returns dL/dx.
inline Vec subnet_backward(const SubnetTape& tape, std::span<const double> weights,
                           const std::vector<ConvShape>& shapes, int side, const Vec& gout, std::span<double> gw) {
  std::vector<Index> offs(shapes.size() + 1, 0);
  for (std::size_t d = 0; d < shapes.size(); ++d) offs[d + 1] = offs[d] + shapes[d].size();
  Vec g = gout;
  for (std::size_t d = shapes.size(); d-- > 0;) {
    if (d + 1 < shapes.size()) {
      const Vec& post = tape.inputs[d + 1];
      for (Index i = 0; i < g.size(); ++i)
        if (!(post[i] > 0.0)) g[i] = 0.0;
    }
    g = conv2d_backward(tape.inputs[d], weights.subspan(offs[d], shapes[d].size()), shapes[d], side, g,
                        gw.subspan(offs[d], shapes[d].size()));
  }
  return g;
}

}  // namespace cginvert
