#pragma once

// Gaussian scale-space over feature tensors: three octaves of six layers
// each, built by smoothing the octave base with absolute widths k^(l-1)*sigma,
// and the difference-of-Gaussian stacks between adjacent layers. Smoothing is
// a fixed (non-learned) separable convolution, differentiable w.r.t. the
// input features.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ssia/tensor.hpp"

namespace ssia {

inline constexpr int kOctaveCount = 3;
inline constexpr int kOctaveLayers = 6;
inline constexpr int kDogLayers = 5;
inline constexpr std::array<int, kOctaveCount> kOctaveScales{1, 2, 4};

struct ScaleSpaceParams {
  double sigma = 1.6;
  double sigma_prime = 1.52;
  double k = std::pow(2.0, 1.0 / 3.0);
};

// Pointwise Gaussian of Eq.-form (1 / 2*pi*sigma^2) * exp(-(x^2+y^2)/2sigma^2).
inline double gaussian_sample(double x, double y, double sigma) {
  return std::exp(-(x * x + y * y) / (2.0 * sigma * sigma)) /
         (2.0 * M_PI * sigma * sigma);
}

struct GaussianKernel {
  double sigma = 0.0;
  int radius = 0;
  std::vector<double> weights;     // (2r+1)^2, row-major, sums to 1
  std::vector<double> weights_1d;  // (2r+1), sums to 1; outer product gives weights

  double at(int dy, int dx) const {
    return weights[static_cast<std::size_t>(dy + radius) * (2 * radius + 1) +
                   (dx + radius)];
  }
};

// Truncation radius ceil(3*sigma); samples renormalized to unit mass.
inline GaussianKernel gaussian_kernel(double sigma) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  GaussianKernel k;
  k.sigma = sigma;
  k.radius = static_cast<int>(std::ceil(3.0 * sigma));
  const int n = 2 * k.radius + 1;

  std::vector<double> raw(n);
  double s1 = 0.0;
  for (int i = 0; i < n; ++i) {
    raw[i] = gaussian_sample(i - k.radius, 0.0, sigma);
    s1 += raw[i];
  }
  k.weights_1d.resize(n);
  for (int i = 0; i < n; ++i) k.weights_1d[i] = raw[i] / s1;

  k.weights.resize(static_cast<std::size_t>(n) * n);
  double s2 = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double v = gaussian_sample(x - k.radius, y - k.radius, sigma);
      k.weights[static_cast<std::size_t>(y) * n + x] = v;
      s2 += v;
    }
  for (double& v : k.weights) v /= s2;
  return k;
}

namespace detail {

// One zero-padded same-size 1-D pass along rows. Full-window positions use
// the centered form out = x_c + sum_d k_d (x_d - x_c), which preserves
// constants bit-exactly (every difference is exactly zero) and is an equally
// valid rounding of the same convolution; partial windows at the borders use
// the plain dot product. Both forms give an exactly symmetric operator, so
// the pass is its own adjoint.
inline void smooth_rows(const double* src, double* dst, int h, int w,
                        const std::vector<double>& k1) {
  const int r = (static_cast<int>(k1.size()) - 1) / 2;
  const int ilo = std::min(r, w), ihi = std::max(ilo, w - r);
  for (int y = 0; y < h; ++y) {
    const double* row = src + static_cast<std::size_t>(y) * w;
    double* out = dst + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < ilo; ++x) {
      const int lo = std::max(-r, -x), hi = std::min(r, w - 1 - x);
      double s = 0.0;
      for (int d = lo; d <= hi; ++d) s += row[x + d] * k1[r + d];
      out[x] = s;
    }
    for (int x = ilo; x < ihi; ++x) {
      const double c = row[x];
      double s = c;
      for (int d = 1; d <= r; ++d)
        s += k1[r + d] * (row[x + d] - c) + k1[r - d] * (row[x - d] - c);
      out[x] = s;
    }
    for (int x = ihi; x < w; ++x) {
      const int lo = std::max(-r, -x), hi = std::min(r, w - 1 - x);
      double s = 0.0;
      for (int d = lo; d <= hi; ++d) s += row[x + d] * k1[r + d];
      out[x] = s;
    }
  }
}

// Same pass along columns, swept row-block-wise.
inline void smooth_cols(const double* src, double* dst, int h, int w,
                        const std::vector<double>& k1) {
  const int r = (static_cast<int>(k1.size()) - 1) / 2;
  for (int y = 0; y < h; ++y) {
    double* out = dst + static_cast<std::size_t>(y) * w;
    const double* center = src + static_cast<std::size_t>(y) * w;
    if (y >= r && y + r < h) {
      std::copy(center, center + w, out);
      for (int d = -r; d <= r; ++d) {
        if (d == 0) continue;
        const double kv = k1[r + d];
        const double* nrow = src + static_cast<std::size_t>(y + d) * w;
        for (int x = 0; x < w; ++x) out[x] += kv * (nrow[x] - center[x]);
      }
    } else {
      std::fill(out, out + w, 0.0);
      const int lo = std::max(-r, -y), hi = std::min(r, h - 1 - y);
      for (int d = lo; d <= hi; ++d) {
        const double kv = k1[r + d];
        const double* nrow = src + static_cast<std::size_t>(y + d) * w;
        for (int x = 0; x < w; ++x) out[x] += kv * nrow[x];
      }
    }
  }
}

// Separable smoothing over `planes` contiguous h*w planes. The forward runs
// rows then columns; the adjoint of that composition is columns then rows.
inline void smooth_planes(const double* src, double* dst, int planes, int h,
                          int w, const std::vector<double>& k1,
                          bool adjoint = false) {
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int p = 0; p < planes; ++p) {
    const double* sp = src + static_cast<std::size_t>(p) * h * w;
    double* dp = dst + static_cast<std::size_t>(p) * h * w;
    if (!adjoint) {
      smooth_rows(sp, tmp.data(), h, w, k1);
      smooth_cols(tmp.data(), dp, h, w, k1);
    } else {
      smooth_cols(sp, tmp.data(), h, w, k1);
      smooth_rows(tmp.data(), dp, h, w, k1);
    }
  }
}

}  // namespace detail

// Gaussian smoothing of every channel plane, shape preserving. sigma is a
// fixed constant; the op is differentiable w.r.t. f only. The kernel is
// symmetric, so the adjoint is the same smoothing applied to the gradient.
inline Tensor smooth(const Tensor& f, double sigma) {
  const GaussianKernel kern = gaussian_kernel(sigma);
  const Shape s = f.shape();
  Tensor out = Tensor::zeros(s);
  detail::smooth_planes(f.data(), out.data(), s.b * s.c, s.h, s.w,
                        kern.weights_1d);
  auto fn = [s, k1 = kern.weights_1d](
                const std::vector<double>& g,
                const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    std::vector<double> dg(g.size());
    detail::smooth_planes(g.data(), dg.data(), s.b * s.c, s.h, s.w, k1,
                          /*adjoint=*/true);
    std::vector<double>& dx = *pg[0];
    for (std::size_t i = 0; i < dg.size(); ++i) dx[i] += dg[i];
  };
  return detail::make_op(std::move(out), {f.node_sp()}, std::move(fn));
}

struct Octave {
  int scale = 1;  // s in {1, 2, 4}
  Tensor base;    // f_(s)
  std::array<Tensor, kOctaveLayers> layers;  // L(f_(s), s k^(l-1) sigma)
};

struct DoGPyramid {
  // diffs[o][l] = layers[l+1] - layers[l] of octave o
  std::array<std::array<Tensor, kDogLayers>, kOctaveCount> diffs;
};

// Octave bases: f_(1) = smooth(F, sigma'); each next base is the max-pooled
// layer 4 ("last third layer", absolute scale k^3*sigma = 2*sigma) of the
// previous octave. Layers smooth the base with k^(l-1)*sigma.
inline std::array<Octave, kOctaveCount> build_octaves(
    const Tensor& features, const ScaleSpaceParams& p = {}) {
  const Shape s = features.shape();
  if (s.h % 4 != 0 || s.w % 4 != 0)
    throw shape_error("build_octaves: spatial dims of " + s.str() +
                      " must be divisible by 4; pad the input first");

  std::array<Octave, kOctaveCount> octaves;
  Tensor base = smooth(features, p.sigma_prime);
  for (int o = 0; o < kOctaveCount; ++o) {
    octaves[o].scale = kOctaveScales[o];
    octaves[o].base = base;
    for (int l = 0; l < kOctaveLayers; ++l)
      octaves[o].layers[l] = smooth(base, p.sigma * std::pow(p.k, l));
    if (o + 1 < kOctaveCount)
      base = pool2d(octaves[o].layers[3], 2, PoolMode::kMax);
  }
  return octaves;
}

inline DoGPyramid build_dog(const std::array<Octave, kOctaveCount>& octaves) {
  DoGPyramid dog;
  for (int o = 0; o < kOctaveCount; ++o)
    for (int l = 0; l < kDogLayers; ++l)
      dog.diffs[o][l] = sub(octaves[o].layers[l + 1], octaves[o].layers[l]);
  return dog;
}

}  // namespace ssia
