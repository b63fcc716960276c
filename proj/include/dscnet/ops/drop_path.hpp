// Stochastic depth on a residual branch: per sample, the branch is dropped
// with probability `rate` and otherwise rescaled by 1/(1 - rate).
#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dscnet/tensor.hpp"

namespace dscnet {
using Rng = std::mt19937_64;
}

namespace dscnet::ops {

inline void check_drop_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("drop_path: rate must be in [0, 1), got " + std::to_string(rate));
}

// Applies a precomputed per-sample keep mask (1 = keep).
template <typename T>
BasicTensor<T> drop_path_with_mask(const BasicTensor<T>& x, const std::vector<T>& keep_scale) {
  if (keep_scale.size() != x.dim(0)) throw ShapeError("drop_path: mask length must equal batch size");
  auto y = x;
  const std::size_t per = x.size() / x.dim(0);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t i = 0; i < per; ++i) y[n * per + i] *= keep_scale[n];
  return y;
}

// `scale_out`, when given, receives the per-sample multiplier (0 or
// 1/(1-rate)) for the backward pass.
template <typename T>
BasicTensor<T> drop_path(const BasicTensor<T>& x, double rate, bool training, Rng& rng,
                         std::vector<T>* scale_out = nullptr) {
  check_drop_rate(rate);
  std::vector<T> scale(x.dim(0), T{1});
  if (training && rate > 0.0) {
    std::bernoulli_distribution keep(1.0 - rate);
    for (auto& s : scale) s = keep(rng) ? static_cast<T>(1.0 / (1.0 - rate)) : T{0};
  }
  if (scale_out) *scale_out = scale;
  if (!training || rate == 0.0) return x;
  return drop_path_with_mask(x, scale);
}

template <typename T>
BasicTensor<T> drop_path_backward(const BasicTensor<T>& grad_out, const std::vector<T>& scale) {
  return drop_path_with_mask(grad_out, scale);
}

}  // namespace dscnet::ops
