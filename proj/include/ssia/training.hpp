#pragma once

// ADAM optimizer, the Algorithm-1 training loop over stage-accumulated
// losses, patch extraction with horizontal-flip augmentation, and synthetic
// rain/clean pair generation for desk-scale experiments.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ssia/derain_net.hpp"
#include "ssia/detail/rng.hpp"
#include "ssia/image_io.hpp"
#include "ssia/metrics.hpp"
#include "ssia/tensor.hpp"

namespace ssia {

// ---------------------------------------------------------------------------
// ADAM

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

// Bias-corrected update: m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
// theta <- theta - lr * m^ / (sqrt(v^) + eps).
inline void adam_step(std::map<std::string, Tensor>& params,
                      const std::map<std::string, Tensor>& grads,
                      AdamState& state) {
  state.t += 1;
  const AdamConfig& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (auto& [name, param] : params) {
    auto git = grads.find(name);
    if (git == grads.end())
      throw std::invalid_argument("adam_step: missing gradient for parameter '" +
                                  name + "'");
    const std::vector<double>& g = git->second.values();
    std::vector<double>& m = state.m[name];
    std::vector<double>& v = state.v[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    if (m.size() != g.size())
      throw std::invalid_argument("adam_step: gradient size changed for '" +
                                  name + "'");
    double* th = param.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      th[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

inline void adam_step(NetworkParams& params,
                      const std::map<std::string, Tensor>& grads,
                      AdamState& state) {
  adam_step(params.tensors(), grads, state);
}

// ---------------------------------------------------------------------------
// Patch pipeline

struct PatchPair {
  Tensor rainy;
  Tensor clean;
};

// Regular aligned grid of patches; `flip` appends horizontally mirrored
// duplicates of the whole grid.
inline std::vector<PatchPair> extract_patches(const Tensor& rainy,
                                              const Tensor& clean, int size,
                                              int stride, bool flip) {
  if (!(rainy.shape() == clean.shape()))
    throw shape_error("extract_patches: pair shapes differ, " +
                      rainy.shape().str() + " vs " + clean.shape().str());
  const Shape s = rainy.shape();
  if (size < 1 || stride < 1)
    throw std::invalid_argument("extract_patches: size and stride must be >= 1");
  if (s.h < size || s.w < size)
    throw std::invalid_argument("extract_patches: image " + s.str() +
                                " smaller than patch size " +
                                std::to_string(size));
  std::vector<PatchPair> out;
  for (int y = 0; y + size <= s.h; y += stride)
    for (int x = 0; x + size <= s.w; x += stride)
      out.push_back({crop(rainy, y, x, size, size),
                     crop(clean, y, x, size, size)});
  if (flip) {
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i)
      out.push_back({flip_horizontal(out[i].rainy),
                     flip_horizontal(out[i].clean)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct RainSynthesisParams {
  int count_min = 25;
  int count_max = 70;
  double length_min = 8.0;   // px
  double length_max = 22.0;  // px
  double width_min = 0.7;    // px
  double width_max = 1.5;    // px
  double angle_max_deg = 20.0;   // tilt from vertical, symmetric
  double intensity_min = 0.25;
  double intensity_max = 0.85;
  double blur_sigma = 0.5;
  std::uint64_t seed = 1;
};

// Additive rain model: R is a field of anti-aliased bright line segments
// (optionally blurred), X = clamp(Y + R, 0, 1). Deterministic per seed.
inline std::pair<Tensor, Tensor> synthesize_rain(const Tensor& clean,
                                                 const RainSynthesisParams& p) {
  const Shape s = clean.shape();
  detail::Rng rng(p.seed);
  std::vector<double> plane(static_cast<std::size_t>(s.h) * s.w, 0.0);

  const int count = static_cast<int>(rng.uniform_int(p.count_min, p.count_max));
  for (int i = 0; i < count; ++i) {
    const double cx = rng.uniform(0.0, s.w);
    const double cy = rng.uniform(0.0, s.h);
    const double len = rng.uniform(p.length_min, p.length_max);
    const double width = rng.uniform(p.width_min, p.width_max);
    const double angle =
        rng.uniform(-p.angle_max_deg, p.angle_max_deg) * M_PI / 180.0;
    const double intensity = rng.uniform(p.intensity_min, p.intensity_max);

    const double dx = std::sin(angle), dy = std::cos(angle);
    const double x0 = cx - dx * len / 2, y0 = cy - dy * len / 2;
    const double x1 = cx + dx * len / 2, y1 = cy + dy * len / 2;

    const int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - width - 1)));
    const int yhi = std::min(s.h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + width + 1)));
    const int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - width - 1)));
    const int xhi = std::min(s.w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + width + 1)));

    const double vx = x1 - x0, vy = y1 - y0;
    const double vv = vx * vx + vy * vy;
    for (int y = ylo; y <= yhi; ++y)
      for (int x = xlo; x <= xhi; ++x) {
        // distance from pixel center to the segment
        double t = vv > 0.0 ? ((x - x0) * vx + (y - y0) * vy) / vv : 0.0;
        t = std::min(1.0, std::max(0.0, t));
        const double px = x0 + t * vx, py = y0 + t * vy;
        const double d = std::hypot(x - px, y - py);
        const double cov = std::min(1.0, std::max(0.0, width / 2 + 0.5 - d));
        if (cov > 0.0)
          plane[static_cast<std::size_t>(y) * s.w + x] += intensity * cov;
      }
  }

  Tensor rain = Tensor::zeros(s);
  for (int c = 0; c < s.c; ++c)
    std::copy(plane.begin(), plane.end(),
              rain.data() + static_cast<std::size_t>(c) * s.h * s.w);
  if (count > 0 && p.blur_sigma > 0.0) rain = smooth(rain, p.blur_sigma);

  Tensor rainy = Tensor::zeros(s);
  for (std::size_t i = 0; i < rainy.values().size(); ++i)
    rainy.values()[i] =
        std::min(1.0, std::max(0.0, clean.values()[i] + rain.values()[i]));
  return {rainy, rain};
}

// Procedural clean scene: smooth color gradient plus a handful of soft
// ellipses, lightly blurred. Gives SSIM-meaningful structure without any
// dataset dependency.
inline Tensor synth_clean_image(int h, int w, std::uint64_t seed) {
  detail::Rng rng(seed);
  Tensor img = Tensor::zeros({1, 3, h, w});
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.15, 0.6);
    gx[c] = rng.uniform(-0.25, 0.25);
    gy[c] = rng.uniform(-0.25, 0.25);
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(0, c, y, x) = base[c] + gx[c] * x / w + gy[c] * y / h;

  const int shapes = 6;
  for (int i = 0; i < shapes; ++i) {
    const double cx = rng.uniform(0.1 * w, 0.9 * w);
    const double cy = rng.uniform(0.1 * h, 0.9 * h);
    const double rx = rng.uniform(0.08 * w, 0.3 * w);
    const double ry = rng.uniform(0.08 * h, 0.3 * h);
    double color[3] = {rng.uniform(0.05, 0.9), rng.uniform(0.05, 0.9),
                       rng.uniform(0.05, 0.9)};
    const double edge = rng.uniform(2.0, 8.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const double d = std::sqrt(dx * dx + dy * dy);
        const double alpha = 1.0 / (1.0 + std::exp((d - 1.0) * edge));
        if (alpha < 1e-4) continue;
        for (int c = 0; c < 3; ++c)
          img.at(0, c, y, x) = (1 - alpha) * img.at(0, c, y, x) + alpha * color[c];
      }
  }
  img = smooth(img, 0.8).clone();
  for (double& v : img.values()) v = std::min(1.0, std::max(0.0, v));
  return img;
}

// ---------------------------------------------------------------------------
// Dataset loading

struct Sample {
  std::string name;
  Tensor rainy;
  Tensor clean;
};

// Two directories `rain/` and `norain/` with filename-matched images.
inline std::vector<Sample> load_paired_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path rain_dir = fs::path(dir) / "rain";
  const fs::path clean_dir = fs::path(dir) / "norain";
  if (!fs::is_directory(rain_dir) || !fs::is_directory(clean_dir))
    throw io_error("dataset " + dir + " must contain rain/ and norain/");

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(rain_dir))
    if (e.is_regular_file()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw io_error("dataset " + dir + ": rain/ is empty");

  std::vector<Sample> out;
  for (const std::string& n : names) {
    const fs::path clean_path = clean_dir / n;
    if (!fs::exists(clean_path))
      throw io_error("dataset " + dir + ": no norain/ match for '" + n + "'");
    out.push_back({n, read_image((rain_dir / n).string()),
                   read_image(clean_path.string())});
  }
  for (const auto& e : fs::directory_iterator(clean_dir))
    if (e.is_regular_file() &&
        !fs::exists(rain_dir / e.path().filename()))
      throw io_error("dataset " + dir + ": no rain/ match for '" +
                     e.path().filename().string() + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainPlan {
  int epochs = 100;
  int batch_size = 18;
  int patch_size = 120;
  int patch_stride = 80;
  bool flip = false;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kNegSsim;
  double lr = 2e-4;
  int max_steps = 0;  // 0 = bounded by epochs only

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainPlan: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("TrainPlan: epochs must be >= 1");
    if (patch_size % 4 != 0)
      throw std::invalid_argument("TrainPlan: patch_size must be divisible by 4");
  }
};

struct TrainResult {
  std::vector<double> step_loss;   // batch-mean loss per optimizer step
  std::vector<double> epoch_loss;  // mean of step losses per epoch
  int steps = 0;
};

namespace detail {

inline int thread_budget(int jobs) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("SSIA_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) hw = std::min(hw, cap);
  }
  return std::max(1, std::min(hw, jobs));
}

}  // namespace detail

// Algorithm-1 training: per batch, each sample runs all n stages and
// accumulates the per-stage loss; gradients are averaged over the batch and
// applied in one ADAM update. Batch members may be processed in parallel
// (capped by SSIA_THREADS); the reduction order is fixed by sample index, so
// results are bit-identical for a given seed regardless of thread count.
inline TrainResult train(NetworkParams& params,
                         const std::vector<Sample>& dataset,
                         const TrainPlan& plan, const NetConfig& cfg) {
  plan.validate();
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

  std::vector<PatchPair> pool;
  for (const Sample& s : dataset) {
    auto ps = extract_patches(s.rainy, s.clean, plan.patch_size,
                              plan.patch_stride, plan.flip);
    pool.insert(pool.end(), ps.begin(), ps.end());
  }

  AdamState adam;
  adam.cfg.lr = plan.lr;
  detail::Rng rng(plan.seed);
  TrainResult result;

  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    // Fisher-Yates with the pinned engine
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);

    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(plan.batch_size));
      const int count = static_cast<int>(end - start);

      std::vector<double> losses(count);
      std::vector<std::map<std::string, Tensor>> grads(count);
      auto run_sample = [&](int j) {
        const PatchPair& pp = pool[order[start + j]];
        ForwardResult fr = forward_all_stages(pp.rainy, params, cfg);
        Tensor loss = stage_loss(fr.outputs, pp.clean, plan.loss);
        losses[j] = loss.data()[0];
        grads[j] = backward(loss, params.tensors());
      };

      const int threads = detail::thread_budget(count);
      if (threads <= 1) {
        for (int j = 0; j < count; ++j) run_sample(j);
      } else {
        std::atomic<int> next{0};
        std::vector<std::thread> workers;
        workers.reserve(threads);
        for (int t = 0; t < threads; ++t)
          workers.emplace_back([&] {
            for (int j = next.fetch_add(1); j < count; j = next.fetch_add(1))
              run_sample(j);
          });
        for (auto& w : workers) w.join();
      }

      // fixed-order reduction
      std::map<std::string, Tensor> batch_grad = std::move(grads[0]);
      double loss_sum = losses[0];
      for (int j = 1; j < count; ++j) {
        loss_sum += losses[j];
        for (auto& [name, g] : batch_grad) {
          const std::vector<double>& add = grads[j].at(name).values();
          std::vector<double>& dst = g.values();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += add[i];
        }
      }
      const double inv = 1.0 / count;
      for (auto& [name, g] : batch_grad)
        for (double& v : g.values()) v *= inv;

      adam_step(params, batch_grad, adam);
      result.step_loss.push_back(loss_sum * inv);
      epoch_sum += loss_sum * inv;
      ++epoch_steps;
      ++result.steps;
      if (plan.max_steps > 0 && result.steps >= plan.max_steps) {
        result.epoch_loss.push_back(epoch_sum / epoch_steps);
        return result;
      }
    }
    result.epoch_loss.push_back(epoch_sum / epoch_steps);
  }
  return result;
}

}  // namespace ssia
