#pragma once

// Dense 4-D tensors (batch, channel, height, width) of doubles with
// define-by-run reverse-mode differentiation. Each op that has a
// differentiable input records its parents and a backward closure on the
// produced node; backward() topologically sorts the reachable subgraph from
// a scalar root and replays it in reverse.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ssia/detail/gemm.hpp"

namespace ssia {

struct Shape {
  int b = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(b) * c * h * w;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(b) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

class shape_error : public std::invalid_argument {
 public:
  explicit shape_error(const std::string& what) : std::invalid_argument(what) {}
};

namespace detail {

struct Node;
using BackwardFn = std::function<void(
    const std::vector<double>& grad_out,
    const std::vector<std::vector<double>*>& parent_grads)>;

struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;  // empty for leaves
  BackwardFn backward;                         // unset for leaves
};

inline std::shared_ptr<Node> make_node(Shape s, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->values.assign(static_cast<std::size_t>(s.numel()), 0.0);
  n->requires_grad = requires_grad;
  return n;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    check_shape(s);
    return Tensor(detail::make_node(s, requires_grad));
  }

  static Tensor full(Shape s, double value, bool requires_grad = false) {
    Tensor t = zeros(s, requires_grad);
    std::fill(t.node_->values.begin(), t.node_->values.end(), value);
    return t;
  }

  static Tensor from_values(Shape s, std::vector<double> values,
                            bool requires_grad = false) {
    check_shape(s);
    if (static_cast<std::int64_t>(values.size()) != s.numel())
      throw shape_error("value count " + std::to_string(values.size()) +
                        " does not match shape " + s.str());
    auto n = std::make_shared<detail::Node>();
    n->shape = s;
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->shape.numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  double* data() { return node_->values.data(); }
  const double* data() const { return node_->values.data(); }
  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }

  double& at(int b, int c, int y, int x) {
    return node_->values[offset(b, c, y, x)];
  }
  double at(int b, int c, int y, int x) const {
    return node_->values[offset(b, c, y, x)];
  }

  // Detached copy sharing nothing with this tensor's graph.
  Tensor clone(bool requires_grad = false) const {
    return from_values(shape(), node_->values, requires_grad);
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_sp() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  static void check_shape(const Shape& s) {
    if (s.b < 1 || s.c < 0 || s.h < 1 || s.w < 1)
      throw shape_error("invalid tensor shape " + s.str());
  }

  std::size_t offset(int b, int c, int y, int x) const {
    const Shape& s = node_->shape;
    return ((static_cast<std::size_t>(b) * s.c + c) * s.h + y) * s.w + x;
  }

  std::shared_ptr<detail::Node> node_;
};

inline bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Graph and backward pass

// Topologically ordered list of the differentiable ops reachable from a root;
// every node's parents precede it, and a reverse sweep visits each exactly
// once.
class Graph {
 public:
  static Graph from_root(const Tensor& root) {
    Graph g;
    if (!root.defined() || !root.node()->requires_grad) return g;
    std::unordered_set<const detail::Node*> seen;
    // iterative post-order DFS over requires_grad parents
    struct Frame {
      std::shared_ptr<detail::Node> node;
      std::size_t next_parent = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({root.node_sp()});
    seen.insert(root.node());
    while (!stack.empty()) {
      Frame& f = stack.back();
      bool descended = false;
      while (f.next_parent < f.node->parents.size()) {
        const auto& p = f.node->parents[f.next_parent++];
        if (p->requires_grad && !seen.count(p.get())) {
          seen.insert(p.get());
          stack.push_back({p});
          descended = true;
          break;
        }
      }
      if (!descended && f.next_parent >= f.node->parents.size()) {
        g.nodes_.push_back(f.node);
        stack.pop_back();
      }
    }
    return g;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<detail::Node>>& nodes() const {
    return nodes_;
  }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Gradient buffers produced by one backward pass, addressable by tensor.
class Gradients {
 public:
  bool has(const Tensor& t) const { return grads_.count(t.node()) > 0; }

  // Gradient of the root w.r.t. t; zeros when t was unreachable (or did not
  // require grad).
  Tensor at(const Tensor& t) const {
    auto it = grads_.find(t.node());
    if (it == grads_.end()) return Tensor::zeros(t.shape());
    return Tensor::from_values(t.shape(), it->second);
  }

 private:
  friend Gradients backward(const Tensor&);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
  std::vector<std::shared_ptr<detail::Node>> keepalive_;
};

// Reverse-mode sweep from a scalar root. Leaf gradients are retained in the
// returned object; intermediate buffers are released as soon as consumed.
inline Gradients backward(const Tensor& root) {
  if (root.shape() != Shape{1, 1, 1, 1})
    throw std::invalid_argument("backward() requires a scalar (1x1x1x1) root, got " +
                                root.shape().str());
  Gradients out;
  Graph graph = Graph::from_root(root);
  if (graph.size() == 0) return out;

  std::unordered_map<const detail::Node*, std::vector<double>> buf;
  buf[root.node()] = {1.0};

  const auto& order = graph.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = it->get();
    auto bit = buf.find(n);
    if (bit == buf.end()) continue;  // not an ancestor of the root
    if (n->backward) {
      std::vector<std::vector<double>*> pgrads(n->parents.size(), nullptr);
      for (std::size_t i = 0; i < n->parents.size(); ++i) {
        detail::Node* p = n->parents[i].get();
        if (!p->requires_grad) continue;
        auto [pit, fresh] = buf.try_emplace(p);
        if (fresh) pit->second.assign(p->values.size(), 0.0);
        pgrads[i] = &pit->second;
      }
      n->backward(bit->second, pgrads);
      buf.erase(bit);  // interior buffer no longer needed
    } else {
      out.grads_.emplace(n, std::move(bit->second));
      out.keepalive_.push_back(*it);
      buf.erase(bit);
    }
  }
  return out;
}

// Named-parameter form: every entry receives a gradient tensor, zeros when
// the parameter is unreachable from the root.
inline std::map<std::string, Tensor> backward(
    const Tensor& root, const std::map<std::string, Tensor>& params) {
  Gradients g = backward(root);
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params) out.emplace(name, g.at(p));
  return out;
}

// ---------------------------------------------------------------------------
// Op helpers

namespace detail {

// Attaches parents and a backward closure to an already-computed tensor;
// no-op when nothing upstream requires gradients.
inline Tensor make_op(Tensor out, std::vector<std::shared_ptr<Node>> parents,
                      BackwardFn fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    Node* n = out.node();
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(fn);
  }
  return out;
}

// col is (inC*kh*kw) x (outH*outW), one batch item
inline void im2col(const double* img, int c, int h, int w, int kh, int kw,
                   int stride, int pad, int oh, int ow, double* col) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = col + ((static_cast<std::size_t>(ci) * kh + ky) * kw + kx) *
                              (static_cast<std::size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            std::fill(row + static_cast<std::size_t>(oy) * ow,
                      row + static_cast<std::size_t>(oy + 1) * ow, 0.0);
            continue;
          }
          const double* src = img + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[static_cast<std::size_t>(oy) * ow + ox] =
                (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* col, int c, int h, int w, int kh, int kw,
                       int stride, int pad, int oh, int ow, double* img) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* row =
            col + ((static_cast<std::size_t>(ci) * kh + ky) * kw + kx) *
                      (static_cast<std::size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          double* dst = img + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w)
              dst[ix] += row[static_cast<std::size_t>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

// weight is (outC, inC, kh, kw); bias is (outC) stored as 1 x outC x 1 x 1 or
// any shape with numel == outC. Zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride = 1, int padding = 0) {
  const Shape in = input.shape();
  const Shape ws = weight.shape();
  if (in.c != ws.c)
    throw shape_error("conv2d channel mismatch: input " + in.str() +
                      " vs weight " + ws.str());
  if (bias.numel() != ws.b)
    throw shape_error("conv2d bias size " + std::to_string(bias.numel()) +
                      " does not match out channels of weight " + ws.str());
  if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d padding must be >= 0");
  if (in.h + 2 * padding < ws.h || in.w + 2 * padding < ws.w)
    throw shape_error("conv2d kernel " + ws.str() +
                      " does not fit padded input " + in.str());

  const int oc = ws.b, ic = ws.c, kh = ws.h, kw = ws.w;
  const int oh = (in.h + 2 * padding - kh) / stride + 1;
  const int ow = (in.w + 2 * padding - kw) / stride + 1;
  const Shape os{in.b, oc, oh, ow};

  const std::size_t K = static_cast<std::size_t>(ic) * kh * kw;
  const std::size_t N = static_cast<std::size_t>(oh) * ow;

  Tensor out = Tensor::zeros(os);
  {
    std::vector<double> col(K * N);
    for (int b = 0; b < in.b; ++b) {
      const double* img = input.data() + static_cast<std::size_t>(b) * in.c * in.h * in.w;
      detail::im2col(img, ic, in.h, in.w, kh, kw, stride, padding, oh, ow,
                     col.data());
      double* dst = out.data() + static_cast<std::size_t>(b) * oc * N;
      detail::gemm(false, false, oc, static_cast<int>(N), static_cast<int>(K),
                   1.0, weight.data(), static_cast<int>(K), col.data(),
                   static_cast<int>(N), 0.0, dst, static_cast<int>(N));
      for (int o = 0; o < oc; ++o) {
        const double bv = bias.data()[o];
        if (bv == 0.0) continue;
        double* row = dst + static_cast<std::size_t>(o) * N;
        for (std::size_t i = 0; i < N; ++i) row[i] += bv;
      }
    }
  }

  auto xn = input.node_sp();
  auto wn = weight.node_sp();
  auto bn = bias.node_sp();
  auto fn = [xn, wn, bn, in, ws, os, stride, padding, K, N](
                const std::vector<double>& g,
                const std::vector<std::vector<double>*>& pg) {
    const int oc = ws.b, ic = ws.c, kh = ws.h, kw = ws.w;
    std::vector<double> col(K * N);
    std::vector<double> dcol;
    if (pg[0]) dcol.resize(K * N);
    for (int b = 0; b < in.b; ++b) {
      const double* gout = g.data() + static_cast<std::size_t>(b) * oc * N;
      if (pg[1]) {  // weight grad needs the col matrix again
        const double* img =
            xn->values.data() + static_cast<std::size_t>(b) * in.c * in.h * in.w;
        detail::im2col(img, ic, in.h, in.w, kh, kw, stride, padding, os.h,
                       os.w, col.data());
        detail::gemm(false, true, oc, static_cast<int>(K), static_cast<int>(N),
                     1.0, gout, static_cast<int>(N), col.data(),
                     static_cast<int>(N), 1.0, pg[1]->data(),
                     static_cast<int>(K));
      }
      if (pg[0]) {
        detail::gemm(true, false, static_cast<int>(K), static_cast<int>(N), oc,
                     1.0, wn->values.data(), static_cast<int>(K), gout,
                     static_cast<int>(N), 0.0, dcol.data(),
                     static_cast<int>(N));
        double* dimg =
            pg[0]->data() + static_cast<std::size_t>(b) * in.c * in.h * in.w;
        detail::col2im_add(dcol.data(), ic, in.h, in.w, kh, kw, stride,
                           padding, os.h, os.w, dimg);
      }
      if (pg[2]) {
        for (int o = 0; o < oc; ++o) {
          const double* row = gout + static_cast<std::size_t>(o) * N;
          double s = 0.0;
          for (std::size_t i = 0; i < N; ++i) s += row[i];
          (*pg[2])[o] += s;
        }
      }
    }
  };

  detail::Node* on = out.node();
  bool rg = xn->requires_grad || wn->requires_grad || bn->requires_grad;
  if (rg) {
    on->requires_grad = true;
    on->parents = {xn, wn, bn};
    on->backward = std::move(fn);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling and resampling

enum class PoolMode { kAvg, kMax };

inline Tensor pool2d(const Tensor& input, int size, PoolMode mode) {
  const Shape in = input.shape();
  if (size != 1 && size != 2 && size != 4)
    throw std::invalid_argument("pool2d size must be 1, 2 or 4");
  if (in.h % size != 0 || in.w % size != 0)
    throw shape_error("pool2d: spatial dims of " + in.str() +
                      " not divisible by " + std::to_string(size) +
                      "; pad the input first");

  const Shape os{in.b, in.c, in.h / size, in.w / size};
  Tensor out = Tensor::zeros(os);
  std::vector<std::int32_t> argmax;
  if (mode == PoolMode::kMax) argmax.resize(static_cast<std::size_t>(os.numel()));

  const double inv = 1.0 / (size * size);
  const double* src = input.data();
  double* dst = out.data();
  std::size_t oi = 0;
  for (int b = 0; b < in.b; ++b)
    for (int c = 0; c < in.c; ++c) {
      const double* plane =
          src + (static_cast<std::size_t>(b) * in.c + c) * in.h * in.w;
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox, ++oi) {
          if (mode == PoolMode::kAvg) {
            double s = 0.0;
            for (int dy = 0; dy < size; ++dy)
              for (int dx = 0; dx < size; ++dx)
                s += plane[(oy * size + dy) * in.w + ox * size + dx];
            dst[oi] = size == 1 ? plane[oy * in.w + ox] : s * inv;
          } else {
            int best = (oy * size) * in.w + ox * size;
            double bv = plane[best];
            for (int dy = 0; dy < size; ++dy)
              for (int dx = 0; dx < size; ++dx) {
                const int idx = (oy * size + dy) * in.w + ox * size + dx;
                if (plane[idx] > bv) {
                  bv = plane[idx];
                  best = idx;
                }
              }
            dst[oi] = bv;
            argmax[oi] = static_cast<std::int32_t>(
                (static_cast<std::size_t>(b) * in.c + c) * in.h * in.w + best);
          }
        }
    }

  auto xn = input.node_sp();
  auto fn = [in, os, size, mode, inv, argmax = std::move(argmax)](
                const std::vector<double>& g,
                const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    std::vector<double>& dx = *pg[0];
    if (mode == PoolMode::kMax) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
      return;
    }
    std::size_t oi = 0;
    for (int b = 0; b < in.b; ++b)
      for (int c = 0; c < in.c; ++c) {
        double* plane =
            dx.data() + (static_cast<std::size_t>(b) * in.c + c) * in.h * in.w;
        for (int oy = 0; oy < os.h; ++oy)
          for (int ox = 0; ox < os.w; ++ox, ++oi) {
            const double gv = size == 1 ? g[oi] : g[oi] * inv;
            for (int dy = 0; dy < size; ++dy)
              for (int dx2 = 0; dx2 < size; ++dx2)
                plane[(oy * size + dy) * in.w + ox * size + dx2] += gv;
          }
      }
  };
  return detail::make_op(std::move(out), {xn}, std::move(fn));
}

// Nearest-neighbor: each pixel becomes a 2x2 block; backward sums the block.
inline Tensor upsample2x(const Tensor& input) {
  const Shape in = input.shape();
  const Shape os{in.b, in.c, in.h * 2, in.w * 2};
  Tensor out = Tensor::zeros(os);
  const double* src = input.data();
  double* dst = out.data();
  for (int bc = 0; bc < in.b * in.c; ++bc) {
    const double* sp = src + static_cast<std::size_t>(bc) * in.h * in.w;
    double* dp = dst + static_cast<std::size_t>(bc) * os.h * os.w;
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        const double v = sp[y * in.w + x];
        dp[(2 * y) * os.w + 2 * x] = v;
        dp[(2 * y) * os.w + 2 * x + 1] = v;
        dp[(2 * y + 1) * os.w + 2 * x] = v;
        dp[(2 * y + 1) * os.w + 2 * x + 1] = v;
      }
  }
  auto fn = [in, os](const std::vector<double>& g,
                     const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    double* dx = pg[0]->data();
    for (int bc = 0; bc < in.b * in.c; ++bc) {
      const double* gp = g.data() + static_cast<std::size_t>(bc) * os.h * os.w;
      double* dp = dx + static_cast<std::size_t>(bc) * in.h * in.w;
      for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x)
          dp[y * in.w + x] += gp[(2 * y) * os.w + 2 * x] +
                              gp[(2 * y) * os.w + 2 * x + 1] +
                              gp[(2 * y + 1) * os.w + 2 * x] +
                              gp[(2 * y + 1) * os.w + 2 * x + 1];
    }
  };
  return detail::make_op(std::move(out), {input.node_sp()}, std::move(fn));
}

// ---------------------------------------------------------------------------
// Concatenation / channel slicing

inline Tensor concat(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.b != sb.b || sa.h != sb.h || sa.w != sb.w)
    throw shape_error("concat: batch/spatial mismatch between " + sa.str() +
                      " and " + sb.str());
  const Shape os{sa.b, sa.c + sb.c, sa.h, sa.w};
  Tensor out = Tensor::zeros(os);
  const std::size_t plane = static_cast<std::size_t>(sa.h) * sa.w;
  for (int n = 0; n < sa.b; ++n) {
    std::copy_n(a.data() + static_cast<std::size_t>(n) * sa.c * plane,
                static_cast<std::size_t>(sa.c) * plane,
                out.data() + static_cast<std::size_t>(n) * os.c * plane);
    std::copy_n(b.data() + static_cast<std::size_t>(n) * sb.c * plane,
                static_cast<std::size_t>(sb.c) * plane,
                out.data() + (static_cast<std::size_t>(n) * os.c + sa.c) * plane);
  }
  auto fn = [sa, sb, os, plane](const std::vector<double>& g,
                                const std::vector<std::vector<double>*>& pg) {
    for (int n = 0; n < sa.b; ++n) {
      const double* gp = g.data() + static_cast<std::size_t>(n) * os.c * plane;
      if (pg[0]) {
        double* da = pg[0]->data() + static_cast<std::size_t>(n) * sa.c * plane;
        for (std::size_t i = 0; i < static_cast<std::size_t>(sa.c) * plane; ++i)
          da[i] += gp[i];
      }
      if (pg[1]) {
        double* db = pg[1]->data() + static_cast<std::size_t>(n) * sb.c * plane;
        const double* gb = gp + static_cast<std::size_t>(sa.c) * plane;
        for (std::size_t i = 0; i < static_cast<std::size_t>(sb.c) * plane; ++i)
          db[i] += gb[i];
      }
    }
  };
  return detail::make_op(std::move(out), {a.node_sp(), b.node_sp()}, std::move(fn));
}

inline Tensor slice_channels(const Tensor& t, int first, int count) {
  const Shape in = t.shape();
  if (first < 0 || count < 1 || first + count > in.c)
    throw shape_error("slice_channels [" + std::to_string(first) + ", " +
                      std::to_string(first + count) + ") out of range for " +
                      in.str());
  const Shape os{in.b, count, in.h, in.w};
  Tensor out = Tensor::zeros(os);
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  for (int n = 0; n < in.b; ++n)
    std::copy_n(t.data() + (static_cast<std::size_t>(n) * in.c + first) * plane,
                static_cast<std::size_t>(count) * plane,
                out.data() + static_cast<std::size_t>(n) * count * plane);
  auto fn = [in, first, count, plane](
                const std::vector<double>& g,
                const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    for (int n = 0; n < in.b; ++n) {
      double* dst =
          pg[0]->data() + (static_cast<std::size_t>(n) * in.c + first) * plane;
      const double* gp = g.data() + static_cast<std::size_t>(n) * count * plane;
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * plane; ++i)
        dst[i] += gp[i];
    }
  };
  return detail::make_op(std::move(out), {t.node_sp()}, std::move(fn));
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(x.shape());
  const double* src = x.data();
  double* dst = out.data();
  const std::size_t n = x.values().size();
  for (std::size_t i = 0; i < n; ++i) dst[i] = fwd(src[i]);
  auto xn = x.node_sp();
  auto on = out.node_sp();
  auto fn = [xn, ow = std::weak_ptr<Node>(on), bwd](
                const std::vector<double>& g,
                const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    auto self = ow.lock();
    const std::vector<double>& xv = xn->values;
    const std::vector<double>& yv = self->values;
    std::vector<double>& dx = *pg[0];
    for (std::size_t i = 0; i < g.size(); ++i)
      dx[i] += g[i] * bwd(xv[i], yv[i]);
  };
  Node* o = on.get();
  if (xn->requires_grad) {
    o->requires_grad = true;
    o->parents = {xn};
    o->backward = std::move(fn);
  }
  return out;
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 DA da, DB db) {
  if (!(a.shape() == b.shape()))
    throw shape_error(std::string(name) + ": shape mismatch " +
                      a.shape().str() + " vs " + b.shape().str());
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* dst = out.data();
  const std::size_t n = a.values().size();
  for (std::size_t i = 0; i < n; ++i) dst[i] = fwd(pa[i], pb[i]);
  auto an = a.node_sp();
  auto bn = b.node_sp();
  auto fn = [an, bn, da, db](const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& pg) {
    const std::vector<double>& av = an->values;
    const std::vector<double>& bv = bn->values;
    if (pg[0]) {
      std::vector<double>& d = *pg[0];
      for (std::size_t i = 0; i < g.size(); ++i)
        d[i] += g[i] * da(av[i], bv[i]);
    }
    if (pg[1]) {
      std::vector<double>& d = *pg[1];
      for (std::size_t i = 0; i < g.size(); ++i)
        d[i] += g[i] * db(av[i], bv[i]);
    }
  };
  return make_op(std::move(out), {an, bn}, std::move(fn));
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

// Output pinned to the open interval (0, 1) even where exp() saturates.
inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      x,
      [](double v) {
        constexpr double lo = std::numeric_limits<double>::min();
        constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
        const double y = 1.0 / (1.0 + std::exp(-v));
        return std::min(std::max(y, lo), hi);
      },
      [](double, double yv) { return yv * (1.0 - yv); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double yv) { return 1.0 - yv * yv; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double xv, double) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor add_scalar(const Tensor& x, double k) {
  return detail::unary_op(
      x, [k](double v) { return v + k; }, [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& x, double k) {
  return detail::unary_op(
      x, [k](double v) { return v * k; }, [k](double, double) { return k; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double k) { return add_scalar(a, k); }
inline Tensor operator+(double k, const Tensor& a) { return add_scalar(a, k); }
inline Tensor operator-(const Tensor& a, double k) { return add_scalar(a, -k); }
inline Tensor operator*(const Tensor& a, double k) { return mul_scalar(a, k); }
inline Tensor operator*(double k, const Tensor& a) { return mul_scalar(a, k); }
inline Tensor operator-(const Tensor& a) { return mul_scalar(a, -1.0); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({1, 1, 1, 1});
  double s = 0.0;
  for (double v : x.values()) s += v;
  out.data()[0] = s;
  auto fn = [](const std::vector<double>& g,
               const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    for (double& d : *pg[0]) d += g[0];
  };
  return detail::make_op(std::move(out), {x.node_sp()}, std::move(fn));
}

inline Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::zeros({1, 1, 1, 1});
  double s = 0.0;
  for (double v : x.values()) s += v;
  out.data()[0] = s * inv;
  auto fn = [inv](const std::vector<double>& g,
                  const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    const double gv = g[0] * inv;
    for (double& d : *pg[0]) d += gv;
  };
  return detail::make_op(std::move(out), {x.node_sp()}, std::move(fn));
}

// ---------------------------------------------------------------------------
// Data-pipeline helpers (not recorded on the graph)

inline Tensor reflect_pad(const Tensor& t, int top, int bottom, int left,
                          int right) {
  const Shape in = t.shape();
  if (top >= in.h || bottom >= in.h || left >= in.w || right >= in.w)
    throw shape_error("reflect_pad amount exceeds tensor extent " + in.str());
  const Shape os{in.b, in.c, in.h + top + bottom, in.w + left + right};
  Tensor out = Tensor::zeros(os);
  auto mirror = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  for (int b = 0; b < in.b; ++b)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x)
          out.at(b, c, y, x) =
              t.at(b, c, mirror(y - top, in.h), mirror(x - left, in.w));
  return out;
}

inline Tensor crop(const Tensor& t, int top, int left, int h, int w) {
  const Shape in = t.shape();
  if (top < 0 || left < 0 || top + h > in.h || left + w > in.w)
    throw shape_error("crop window out of range for " + in.str());
  Tensor out = Tensor::zeros({in.b, in.c, h, w});
  for (int b = 0; b < in.b; ++b)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(b, c, y, x) = t.at(b, c, top + y, left + x);
  return out;
}

inline Tensor flip_horizontal(const Tensor& t) {
  const Shape s = t.shape();
  Tensor out = Tensor::zeros(s);
  for (int b = 0; b < s.b; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          out.at(b, c, y, x) = t.at(b, c, y, s.w - 1 - x);
  return out;
}

}  // namespace ssia
