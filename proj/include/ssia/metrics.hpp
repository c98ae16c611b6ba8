#pragma once

// SSIM (differentiable, Gaussian-windowed), PSNR, BT.601 luminance, and the
// accumulated per-stage training loss with negative-SSIM / MAE / MSE
// variants.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ssia/tensor.hpp"

namespace ssia {

struct SsimParams {
  int window = 11;
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

namespace detail {

// Depthwise Gaussian windowing expressed as one conv2d: block-diagonal
// weight (C, C, win, win) whose off-diagonal kernels are zero.
inline Tensor ssim_window_weight(int channels, const SsimParams& p) {
  const int n = p.window;
  const int r = n / 2;
  std::vector<double> w1(n);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    w1[i] = std::exp(-(i - r) * (i - r) / (2.0 * p.window_sigma * p.window_sigma));
    s += w1[i];
  }
  for (double& v : w1) v /= s;

  Tensor w = Tensor::zeros({channels, channels, n, n});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) w.at(c, c, y, x) = w1[y] * w1[x];
  return w;
}

}  // namespace detail

// Mean of the local SSIM map over valid window positions (no padding).
// Differentiable w.r.t. both images.
inline Tensor ssim(const Tensor& a, const Tensor& b,
                   const SsimParams& p = {}) {
  if (!(a.shape() == b.shape()))
    throw shape_error("ssim: shape mismatch " + a.shape().str() + " vs " +
                      b.shape().str());
  if (a.shape().h < p.window || a.shape().w < p.window)
    throw shape_error("ssim: image " + a.shape().str() +
                      " smaller than the " + std::to_string(p.window) +
                      "-tap window");

  const int c = a.shape().c;
  const Tensor win = detail::ssim_window_weight(c, p);
  const Tensor zb = Tensor::zeros({1, c, 1, 1});

  const Tensor mu_a = conv2d(a, win, zb);
  const Tensor mu_b = conv2d(b, win, zb);
  const Tensor var_a = conv2d(a * a, win, zb) - mu_a * mu_a;
  const Tensor var_b = conv2d(b * b, win, zb) - mu_b * mu_b;
  const Tensor cov = conv2d(a * b, win, zb) - mu_a * mu_b;

  const Tensor num = (2.0 * (mu_a * mu_b) + p.c1()) * (2.0 * cov + p.c2());
  const Tensor den =
      (mu_a * mu_a + mu_b * mu_b + p.c1()) * (var_a + var_b + p.c2());
  return mean(num / den);
}

inline double ssim_value(const Tensor& a, const Tensor& b,
                         const SsimParams& p = {}) {
  return ssim(a, b, p).data()[0];
}

// 10*log10(max^2 / MSE); identical images report +infinity.
inline double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0) {
  if (!(a.shape() == b.shape()))
    throw shape_error("psnr: shape mismatch " + a.shape().str() + " vs " +
                      b.shape().str());
  double mse = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  const std::size_t n = a.values().size();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pa[i] - pb[i];
    mse += d * d;
  }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

// ITU-R BT.601: Y = 0.299 R + 0.587 G + 0.114 B.
inline Tensor luminance(const Tensor& rgb) {
  if (rgb.shape().c != 3)
    throw shape_error("luminance expects 3 channels, got " +
                      rgb.shape().str());
  return 0.299 * slice_channels(rgb, 0, 1) +
         0.587 * slice_channels(rgb, 1, 1) +
         0.114 * slice_channels(rgb, 2, 1);
}

enum class LossKind { kNegSsim, kMae, kMse };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::kNegSsim: return "neg_ssim";
    case LossKind::kMae: return "mae";
    case LossKind::kMse: return "mse";
  }
  return "?";
}

// Accumulated loss over all stage outputs against one target:
// neg_ssim gives -sum_k SSIM(X_k, Y); mae/mse sum the per-stage means.
inline Tensor stage_loss(const std::vector<Tensor>& outputs,
                         const Tensor& target,
                         LossKind kind = LossKind::kNegSsim,
                         const SsimParams& p = {}) {
  if (outputs.empty())
    throw std::invalid_argument("stage_loss: no stage outputs");
  Tensor total;
  for (const Tensor& x : outputs) {
    Tensor term;
    switch (kind) {
      case LossKind::kNegSsim:
        term = -1.0 * ssim(x, target, p);
        break;
      case LossKind::kMae:
        term = mean(ssia::abs(x - target));
        break;
      case LossKind::kMse: {
        const Tensor d = x - target;
        term = mean(d * d);
        break;
      }
    }
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace ssia
