#pragma once

// One cross-scale feature aggregation stage (entry conv, pooled multi-scale
// features, DoG attention masks, per-scale ConvLSTM, fusion, residual group)
// and the n-stage recurrence that reuses the same parameters in every stage.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssia/detail/rng.hpp"
#include "ssia/metrics.hpp"
#include "ssia/scale_space.hpp"
#include "ssia/sian.hpp"
#include "ssia/tensor.hpp"

namespace ssia {

struct NetConfig {
  int channels = 32;  // C_f
  int stages = 6;     // n
  bool use_sian = true;
  bool use_lstm = true;
  bool sian_single_conv = false;
  bool share_sian_heads = false;
  bool lstm_pre_convs = false;
  double sigma = 1.6;
  double sigma_prime = 1.52;
  double k = std::pow(2.0, 1.0 / 3.0);

  void validate() const {
    if (stages < 1) throw std::invalid_argument("NetConfig: stages must be >= 1");
    if (channels < 1)
      throw std::invalid_argument("NetConfig: channels must be >= 1");
    if (!(sigma > 0.0) || !(sigma_prime > 0.0) || !(k > 1.0))
      throw std::invalid_argument("NetConfig: invalid scale-space constants");
  }

  ScaleSpaceParams scale_space() const { return {sigma, sigma_prime, k}; }
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// All learnable kernels and biases, addressable by stable names. The set of
// names depends only on the flags, never on the stage count (weight sharing).
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(std::map<std::string, Tensor> tensors)
      : tensors_(std::move(tensors)) {}

  // Fan-in-scaled uniform init for every convolution except the final
  // ResGroup conv, which starts at zero so the untrained network is the
  // identity map. Each tensor is seeded by (seed, name), so parameters
  // shared between ablation configs get identical values.
  static NetworkParams init(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    NetworkParams p;
    const int cf = cfg.channels;

    p.add_conv("entry", cf, 6, 3, seed);
    for (int s : kOctaveScales)
      p.add_conv("pyr.s" + std::to_string(s), cf, cf, 3, seed);

    if (cfg.use_sian) {
      auto add_head = [&](const std::string& prefix) {
        p.add_conv(prefix + ".c1", cf, kDogLayers * cf, 3, seed);
        if (!cfg.sian_single_conv) p.add_conv(prefix + ".c2", cf, cf, 3, seed);
      };
      if (cfg.share_sian_heads) {
        add_head("sian");
      } else {
        for (int s : kOctaveScales) add_head("sian.s" + std::to_string(s));
      }
    }

    if (cfg.use_lstm) {
      for (int s : kOctaveScales) {
        const std::string prefix = "lstm.s" + std::to_string(s);
        if (cfg.lstm_pre_convs) {
          p.add_conv(prefix + ".pre1", cf, cf, 3, seed);
          p.add_conv(prefix + ".pre2", cf, cf, 3, seed);
        }
        // four gate kernels stacked on the output axis, order i, f, o, g
        p.add_conv(prefix + ".gates", 4 * cf, 2 * cf, 3, seed);
      }
    }

    p.add_conv("fuse", cf, 3 * cf, 3, seed);
    p.add_conv("res.b1.c1", cf, cf, 3, seed);
    p.add_conv("res.b1.c2", cf, cf, 3, seed);
    p.add_conv("res.b2.c1", cf, cf, 3, seed);
    p.add_conv("res.b2.c2", cf, cf, 3, seed);
    p.add_conv("res.final", 3, cf, 3, seed, /*zero_init=*/true);
    return p;
  }

  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end())
      throw std::out_of_range("NetworkParams: no parameter named '" + name +
                              "'");
    return it->second;
  }
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }

  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  std::size_t count() const { return tensors_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.numel();
    return n;
  }

 private:
  void add_conv(const std::string& name, int out_c, int in_c, int k,
                std::uint64_t seed, bool zero_init = false) {
    Tensor w = Tensor::zeros({out_c, in_c, k, k}, /*requires_grad=*/true);
    Tensor b = Tensor::zeros({1, out_c, 1, 1}, /*requires_grad=*/true);
    if (!zero_init) {
      detail::Rng rng(seed ^ detail::fnv1a(name));
      const double bound = 1.0 / std::sqrt(static_cast<double>(in_c) * k * k);
      for (double& v : w.values()) v = rng.uniform(-bound, bound);
    }
    tensors_.emplace(name + ".w", std::move(w));
    tensors_.emplace(name + ".b", std::move(b));
  }

  std::map<std::string, Tensor> tensors_;
};

// ConvLSTM hidden/cell memories per scale, threaded across stages.
struct StageState {
  std::array<Tensor, kOctaveCount> hidden;
  std::array<Tensor, kOctaveCount> cell;

  static StageState zeros(const NetConfig& cfg, const Shape& input) {
    StageState st;
    for (int o = 0; o < kOctaveCount; ++o) {
      const int s = kOctaveScales[o];
      const Shape sh{input.b, cfg.channels, input.h / s, input.w / s};
      st.hidden[o] = Tensor::zeros(sh);
      st.cell[o] = Tensor::zeros(sh);
    }
    return st;
  }
};

// F = relu(Conv(X (+) X_prev)); inputs are 3-channel images in [0,1].
inline Tensor extract_features(const Tensor& x, const Tensor& x_prev,
                               const NetworkParams& params) {
  if (x.shape().c != 3 || x_prev.shape().c != 3)
    throw shape_error("extract_features expects 3-channel inputs, got " +
                      x.shape().str() + " and " + x_prev.shape().str());
  if (!(x.shape() == x_prev.shape()))
    throw shape_error("extract_features: shape mismatch " + x.shape().str() +
                      " vs " + x_prev.shape().str());
  return relu(conv2d(concat(x, x_prev), params.at("entry.w"),
                     params.at("entry.b"), 1, 1));
}

// F_(s) = relu(Conv(AvgPool(F, s))) for s = 1, 2, 4.
inline std::array<Tensor, kOctaveCount> multi_scale_features(
    const Tensor& features, const NetworkParams& params) {
  const Shape s = features.shape();
  if (s.h % 4 != 0 || s.w % 4 != 0)
    throw shape_error("multi_scale_features: spatial dims of " + s.str() +
                      " must be divisible by 4; pad the input first");
  std::array<Tensor, kOctaveCount> out;
  for (int o = 0; o < kOctaveCount; ++o) {
    const int scale = kOctaveScales[o];
    const std::string prefix = "pyr.s" + std::to_string(scale);
    out[o] = relu(conv2d(pool2d(features, scale, PoolMode::kAvg),
                         params.at(prefix + ".w"), params.at(prefix + ".b"),
                         1, 1));
  }
  return out;
}

// F^a_(s) = F_(s) + F_(s) (.) M_(s)
inline Tensor apply_attention(const Tensor& f, const Tensor& mask) {
  if (!(f.shape() == mask.shape()))
    throw shape_error("apply_attention: feature " + f.shape().str() +
                      " vs mask " + mask.shape().str());
  return f + f * mask;
}

struct LstmStep {
  Tensor output;
  Tensor hidden;
  Tensor cell;
};

// Standard ConvLSTM cell on concat([x, h]): i,f,o = sigmoid, g = tanh,
// c' = f(.)c + i(.)g, h' = o(.)tanh(c'); the stage feature becomes h'.
// Disabled (use_lstm=false) it is the identity and leaves the state alone.
inline LstmStep convlstm_step(const Tensor& x, const Tensor& hidden,
                              const Tensor& cell, const NetworkParams& params,
                              int scale, const NetConfig& cfg) {
  if (!cfg.use_lstm) return {x, hidden, cell};
  if (!(x.shape() == hidden.shape()) || !(x.shape() == cell.shape()))
    throw shape_error("convlstm_step: state shape mismatch, input " +
                      x.shape().str() + " vs h " + hidden.shape().str() +
                      " vs c " + cell.shape().str());

  const std::string prefix = "lstm.s" + std::to_string(scale);
  Tensor inp = x;
  if (cfg.lstm_pre_convs) {
    inp = relu(conv2d(inp, params.at(prefix + ".pre1.w"),
                      params.at(prefix + ".pre1.b"), 1, 1));
    inp = relu(conv2d(inp, params.at(prefix + ".pre2.w"),
                      params.at(prefix + ".pre2.b"), 1, 1));
  }

  const int cf = cfg.channels;
  const Tensor gates = conv2d(concat(inp, hidden), params.at(prefix + ".gates.w"),
                              params.at(prefix + ".gates.b"), 1, 1);
  const Tensor gi = sigmoid(slice_channels(gates, 0, cf));
  const Tensor gf = sigmoid(slice_channels(gates, cf, cf));
  const Tensor go = sigmoid(slice_channels(gates, 2 * cf, cf));
  const Tensor gg = ssia::tanh(slice_channels(gates, 3 * cf, cf));

  const Tensor c_next = gf * cell + gi * gg;
  const Tensor h_next = go * ssia::tanh(c_next);
  return {h_next, h_next, c_next};
}

// F^a = F^a_(1) (+) Up(F^a_(2) (+) Up(F^a_(4)))
inline Tensor fuse_cross_scale(const Tensor& a1, const Tensor& a2,
                               const Tensor& a4) {
  return concat(a1, upsample2x(concat(a2, upsample2x(a4))));
}

// Fusion conv+ReLU (3*C_f -> C_f), two Resblocks (conv-ReLU-conv plus skip),
// final conv C_f -> 3 producing the rain-layer estimate.
inline Tensor res_group(const Tensor& fused, const NetworkParams& params) {
  Tensor t = relu(conv2d(fused, params.at("fuse.w"), params.at("fuse.b"), 1, 1));
  for (const char* block : {"res.b1", "res.b2"}) {
    const std::string b(block);
    Tensor u = relu(conv2d(t, params.at(b + ".c1.w"), params.at(b + ".c1.b"), 1, 1));
    u = conv2d(u, params.at(b + ".c2.w"), params.at(b + ".c2.b"), 1, 1);
    t = t + u;
  }
  return conv2d(t, params.at("res.final.w"), params.at("res.final.b"), 1, 1);
}

struct StageResult {
  Tensor output;      // X_k = X - R_k
  Tensor rain;        // R_k
  StageState state;   // updated LSTM memories
  std::array<Tensor, kOctaveCount> masks;  // M_(s); zeros when SIAN is off
};

namespace detail {

inline AttentionHead head_for_scale(const NetworkParams& params,
                                    const NetConfig& cfg, int scale) {
  const std::string prefix =
      cfg.share_sian_heads ? std::string("sian") : "sian.s" + std::to_string(scale);
  AttentionHead head;
  head.conv1_w = params.at(prefix + ".c1.w");
  head.conv1_b = params.at(prefix + ".c1.b");
  head.single_conv = cfg.sian_single_conv;
  if (!head.single_conv) {
    head.conv2_w = params.at(prefix + ".c2.w");
    head.conv2_b = params.at(prefix + ".c2.b");
  }
  return head;
}

}  // namespace detail

// One CFA stage (Eqs. 1-6): features, pooled pyramid, DoG attention over F,
// gating, per-scale ConvLSTM, cross-scale fusion, residual prediction,
// X_k = X - R_k.
inline StageResult run_stage(const Tensor& x, const Tensor& x_prev,
                             const StageState& state,
                             const NetworkParams& params,
                             const NetConfig& cfg) {
  const Tensor features = extract_features(x, x_prev, params);
  const auto pyramid = multi_scale_features(features, params);

  StageResult res;
  std::array<Tensor, kOctaveCount> gated;
  if (cfg.use_sian) {
    const auto octaves = build_octaves(features, cfg.scale_space());
    const DoGPyramid dog = build_dog(octaves);
    for (int o = 0; o < kOctaveCount; ++o) {
      res.masks[o] = attention_mask(
          dog, o, detail::head_for_scale(params, cfg, kOctaveScales[o]));
      gated[o] = apply_attention(pyramid[o], res.masks[o]);
    }
  } else {
    // Table V baseline: {M_(s)} = 0, so F^a_(s) = F_(s) exactly.
    for (int o = 0; o < kOctaveCount; ++o) {
      res.masks[o] = Tensor::zeros(pyramid[o].shape());
      gated[o] = pyramid[o];
    }
  }

  for (int o = 0; o < kOctaveCount; ++o) {
    LstmStep step = convlstm_step(gated[o], state.hidden[o], state.cell[o],
                                  params, kOctaveScales[o], cfg);
    gated[o] = step.output;
    res.state.hidden[o] = step.hidden;
    res.state.cell[o] = step.cell;
  }

  res.rain = res_group(fuse_cross_scale(gated[0], gated[1], gated[2]), params);
  res.output = x - res.rain;
  return res;
}

struct ForwardResult {
  std::vector<Tensor> outputs;      // X_1 .. X_n
  std::vector<Tensor> rain_layers;  // R_1 .. R_n
  std::vector<std::array<Tensor, kOctaveCount>> masks;  // per stage
};

// Algorithm-1 recurrence: n stages with the same parameters, X_0 = X,
// ConvLSTM state threaded through.
inline ForwardResult forward_all_stages(const Tensor& x,
                                        const NetworkParams& params,
                                        const NetConfig& cfg) {
  cfg.validate();
  const Shape s = x.shape();
  if (s.h % 4 != 0 || s.w % 4 != 0)
    throw shape_error("forward_all_stages: input " + s.str() +
                      " must have spatial dims divisible by 4");

  ForwardResult result;
  Tensor x_prev = x;  // X_0 = X
  StageState state = StageState::zeros(cfg, s);
  for (int k = 0; k < cfg.stages; ++k) {
    StageResult stage = run_stage(x, x_prev, state, params, cfg);
    result.outputs.push_back(stage.output);
    result.rain_layers.push_back(stage.rain);
    result.masks.push_back(stage.masks);
    state = stage.state;
    x_prev = stage.output;
  }
  return result;
}

}  // namespace ssia
