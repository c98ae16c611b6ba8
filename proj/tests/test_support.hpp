#pragma once

// Shared helpers for the test suites: seeded random tensors and a central
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "ssia/detail/rng.hpp"
#include "ssia/tensor.hpp"

namespace test_support {

inline ssia::Tensor random_tensor(ssia::Shape shape, std::uint64_t seed,
                                  double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = false) {
  ssia::detail::Rng rng(seed);
  ssia::Tensor t = ssia::Tensor::zeros(shape, requires_grad);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Max relative error between analytic gradients of make_loss() w.r.t. leaf
// and central finite differences, over up to max_coords sampled coordinates.
// make_loss must rebuild the graph from the leaf's current values.
template <typename MakeLoss>
double fd_max_rel_err(MakeLoss make_loss, ssia::Tensor leaf, double eps,
                      int max_coords, std::uint64_t seed) {
  ssia::Gradients grads = ssia::backward(make_loss());
  ssia::Tensor analytic = grads.at(leaf);

  ssia::detail::Rng rng(seed);
  const std::int64_t n = leaf.numel();
  const int coords = static_cast<int>(std::min<std::int64_t>(max_coords, n));
  double worst = 0.0;
  for (int t = 0; t < coords; ++t) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
    const double orig = leaf.values()[i];
    leaf.values()[i] = orig + eps;
    const double fp = make_loss().data()[0];
    leaf.values()[i] = orig - eps;
    const double fm = make_loss().data()[0];
    leaf.values()[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    const double a = analytic.values()[i];
    const double rel =
        std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace test_support
